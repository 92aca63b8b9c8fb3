#include "otrack/train.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "otrack/io.hpp"
#include "otrack/losses.hpp"

namespace otrack {

void save_checkpoint(const std::string& path, const ParamStore<float>& store,
                     const AdamW<float>& opt, int64_t step, const Rng& rng,
                     uint64_t config_hash) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw FormatError("save_checkpoint: cannot open " + tmp);
    io::write_magic(os, "OCKP");
    io::write_u32(os, 1);
    io::write_u64(os, config_hash);
    io::write_u64(os, static_cast<uint64_t>(step));
    io::write_u64(os, static_cast<uint64_t>(opt.step_count()));
    for (uint64_t s : rng.state()) io::write_u64(os, s);
    io::write_u32(os, static_cast<uint32_t>(store.size()));
    auto& mutable_opt = const_cast<AdamW<float>&>(opt);
    for (const auto& name : store.names()) {
      const auto& p = store.get(name);
      io::write_string(os, name);
      io::write_u32(os, static_cast<uint32_t>(p.rank()));
      for (int i = 0; i < p.rank(); ++i) io::write_u32(os, static_cast<uint32_t>(p.dim(i)));
      io::write_f32_array(os, p.data());
      auto& mom = mutable_opt.moments(name);
      if (mom.m.empty()) {
        mom.m.assign(static_cast<size_t>(p.size()), 0.0f);
        mom.v.assign(static_cast<size_t>(p.size()), 0.0f);
      }
      io::write_f32_array(os, mom.m);
      io::write_f32_array(os, mom.v);
    }
    if (!os) throw FormatError("save_checkpoint: short write");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw FormatError("save_checkpoint: cannot move " + tmp + " into place");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("load_checkpoint: cannot open " + path);
  io::check_magic(is, "OCKP", "checkpoint");
  if (io::read_u32(is) != 1) throw FormatError("load_checkpoint: unsupported version");
  Checkpoint c;
  c.config_hash = io::read_u64(is);
  c.step = static_cast<int64_t>(io::read_u64(is));
  c.adam_step = static_cast<int64_t>(io::read_u64(is));
  for (auto& s : c.rng_state) s = io::read_u64(is);
  const uint32_t count = io::read_u32(is);
  if (count > (1u << 20)) throw FormatError("load_checkpoint: implausible parameter count");
  for (uint32_t i = 0; i < count; ++i) {
    c.names.push_back(io::read_string(is, "param name"));
    const uint32_t rank = io::read_u32(is);
    if (rank > 8) throw FormatError("load_checkpoint: implausible rank");
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<int>(io::read_u32(is));
    const size_t n = static_cast<size_t>(shape_numel(shape));
    c.shapes.push_back(shape);
    c.params.emplace_back(n);
    io::read_f32_array(is, c.params.back(), "param payload");
    c.adam_m.emplace_back(n);
    io::read_f32_array(is, c.adam_m.back(), "moment payload");
    c.adam_v.emplace_back(n);
    io::read_f32_array(is, c.adam_v.back(), "moment payload");
  }
  return c;
}

void apply_checkpoint(const Checkpoint& ckpt, ParamStore<float>& store, AdamW<float>& opt,
                      Rng& rng, uint64_t expected_hash, bool force) {
  if (ckpt.config_hash != expected_hash && !force)
    throw FormatError("checkpoint config hash mismatch (use --force to override)");
  if (ckpt.names.size() != store.size())
    throw FormatError("checkpoint parameter count mismatch");
  for (size_t i = 0; i < ckpt.names.size(); ++i) {
    const std::string& name = ckpt.names[i];
    if (!store.contains(name)) throw FormatError("checkpoint has unknown parameter " + name);
    auto& p = store.get(name);
    if (p.shape() != ckpt.shapes[i])
      throw FormatError("checkpoint shape mismatch for " + name);
    auto w = p.raw();
    std::copy(ckpt.params[i].begin(), ckpt.params[i].end(), w.begin());
    auto& mom = opt.moments(name);
    mom.m = ckpt.adam_m[i];
    mom.v = ckpt.adam_v[i];
  }
  opt.set_step_count(ckpt.adam_step);
  rng.set_state(ckpt.rng_state);
}

std::vector<Clip> load_corpus(const std::string& manifest_path) {
  const auto entries = read_manifest(manifest_path);
  if (entries.empty()) throw DataError("empty corpus manifest " + manifest_path);
  const auto base = std::filesystem::path(manifest_path).parent_path();
  std::vector<Clip> clips;
  clips.reserve(entries.size());
  for (const auto& [rel, seed] : entries) {
    std::filesystem::path p(rel);
    if (p.is_relative()) p = base / p;
    clips.push_back(read_clip(p.string()));
    (void)seed;
  }
  return clips;
}

TrackModel<float> build_model(const FullConfig& cfg, ParamStore<float>& store, Rng& rng,
                              InitMode mode) {
  EncoderConfig ec = cfg.enc;
  if (!cfg.train.use_ctx_attention) {
    ec.attn_layers = 0;  // ablation cell: no attention parameters at all
    ec.use_attention = false;
  }
  return init_model<float>(ec, cfg.trk, store, rng, mode);
}

TrackModel<float> model_from_checkpoint(const Checkpoint& ckpt, const FullConfig& cfg,
                                        ParamStore<float>& store) {
  Rng init_rng(cfg.train.seed);
  auto model = build_model(cfg, store, init_rng, InitMode::kTrainDefault);
  AdamW<float> dummy;
  Rng rng_ignored;
  apply_checkpoint(ckpt, store, dummy, rng_ignored, ckpt.config_hash, /*force=*/true);
  return model;
}

namespace {

struct ClipLossInput {
  const Clip* clip = nullptr;
  int start = 0;
  std::vector<int> track_ids;  // tracks visible at the window start
  std::vector<double> queries;
};

ClipLossInput pick_window(const Clip& clip, int window_len, Rng& rng) {
  ClipLossInput in;
  in.clip = &clip;
  if (clip.t < window_len)
    throw DataError("training clip shorter than the tracker window");
  in.start = clip.t == window_len ? 0 : rng.uniform_int(clip.t - window_len + 1);
  for (int i = 0; i < clip.n; ++i) {
    if (!clip.visible(in.start, i)) continue;
    in.track_ids.push_back(i);
    in.queries.push_back(static_cast<double>(clip.track_x(in.start, i)));
    in.queries.push_back(static_cast<double>(clip.track_y(in.start, i)));
  }
  return in;
}

struct ClipLoss {
  Tensor<float> total;
  double l_dist = 0, l_obj = 0, total_v = 0, frac_oob = 0;
  bool empty_visibility = false;
};

ClipLoss window_loss(const ClipLossInput& in, const TrackModel<float>& model,
                     const FullConfig& cfg) {
  const Clip& clip = *in.clip;
  const int t_w = model.trk_cfg.window_len;
  Tensor<float> frames = narrow(clip.frames, 0, in.start, t_w);
  TrackState<float> st = track_window(frames, in.queries, model);

  const int n_tracks = static_cast<int>(in.track_ids.size());
  std::vector<Tensor<float>> dist_terms, obj_terms;
  int oob_total = 0, vis_total = 0;
  std::span<const MaskMap> masks(clip.masks.data() + in.start, static_cast<size_t>(t_w));
  for (int j = 0; j < n_tracks; ++j) {
    const int i = in.track_ids[static_cast<size_t>(j)];
    std::vector<double> gt;
    std::vector<uint8_t> vis;
    for (int t = 0; t < t_w; ++t) {
      gt.push_back(static_cast<double>(clip.track_x(in.start + t, i)));
      gt.push_back(static_cast<double>(clip.track_y(in.start + t, i)));
      vis.push_back(cfg.train.loss_on_occluded ? 1 : (clip.visible(in.start + t, i) ? 1 : 0));
    }
    std::vector<Tensor<float>> preds;
    for (size_t k = 1; k < st.positions.size(); ++k)
      preds.push_back(reshape(narrow(st.positions[k], 1, j, 1), {t_w, 2}));
    dist_terms.push_back(distance_loss(preds, gt, cfg.train.gamma, vis));
    if (cfg.train.use_obj_loss) {
      ObjLossDiag diag;
      obj_terms.push_back(objectness_loss(preds.back(), gt, masks, vis, &diag));
      oob_total += diag.out_of_object;
      vis_total += diag.visible;
    }
  }
  const double alpha = cfg.train.use_obj_loss ? cfg.train.alpha : 0.0;
  auto lb = total_loss<float>(dist_terms, obj_terms, alpha,
                              vis_total > 0 ? static_cast<double>(oob_total) / vis_total : 0.0);
  ClipLoss out;
  out.total = lb.total;
  out.l_dist = lb.l_dist;
  out.l_obj = lb.l_obj;
  out.total_v = lb.total_value;
  out.frac_oob = lb.frac_out_of_object;
  return out;
}

}  // namespace

TrainOutcome train(const std::vector<Clip>& corpus, const FullConfig& cfg,
                   const std::string& out_dir, const std::string& resume_path,
                   bool force_resume) {
  if (corpus.empty()) throw DataError("train: empty corpus");
  std::filesystem::create_directories(out_dir);
  const uint64_t hash = config_hash(cfg);

  ParamStore<float> store;
  Rng init_rng(cfg.train.seed);
  TrackModel<float> model = build_model(cfg, store, init_rng, InitMode::kTrainDefault);
  AdamW<float> opt(0.9, 0.999, 1e-8, cfg.train.weight_decay);
  Rng rng(cfg.train.seed ^ 0x5851f42d4c957f2dull);
  int64_t start_step = 0;
  if (!resume_path.empty()) {
    Checkpoint ckpt = load_checkpoint(resume_path);
    apply_checkpoint(ckpt, store, opt, rng, hash, force_resume);
    start_step = ckpt.step;
  }

  const std::string log_path = out_dir + "/loss_log.txt";
  std::ofstream log(log_path, start_step == 0 ? std::ios::trunc : std::ios::app);
  if (!log) throw FormatError("train: cannot open " + log_path);
  {
    std::ofstream cfg_out(out_dir + "/config.resolved", std::ios::trunc);
    cfg_out << dump_config(cfg);
  }

  TrainOutcome outcome;
  outcome.log_path = log_path;
  const std::string ckpt_path = out_dir + "/model.ckpt";
  char line[256];
  for (int64_t step = start_step; step < cfg.train.steps; ++step) {
    const double lr = lr_at(step, cfg.train.steps, cfg.train.schedule);
    // sample the batch first so the RNG stream is independent of loss math
    std::vector<ClipLossInput> batch;
    for (int b = 0; b < cfg.train.batch_size; ++b) {
      for (int attempt = 0; attempt < 100; ++attempt) {
        const auto& clip = corpus[static_cast<size_t>(rng.uniform_int(
            static_cast<int>(corpus.size())))];
        auto in = pick_window(clip, model.trk_cfg.window_len, rng);
        if (!in.track_ids.empty()) {
          batch.push_back(std::move(in));
          break;
        }
      }
    }
    if (batch.empty()) throw DataError("train: could not sample a batch window");

    store.zero_grads();
    double l_dist = 0, l_obj = 0, total_v = 0, frac_oob = 0;
    try {
      Tape<float> tape;
      TapeScope<float> scope(tape);
      Tensor<float> batch_loss;
      for (const auto& in : batch) {
        ClipLoss cl = window_loss(in, model, cfg);
        l_dist += cl.l_dist;
        l_obj += cl.l_obj;
        total_v += cl.total_v;
        frac_oob += cl.frac_oob;
        if (cfg.train.verbose_loss) {
          std::snprintf(line, sizeof(line), "# clip step=%lld dist=%.9e obj=%.9e total=%.9e\n",
                        static_cast<long long>(step), cl.l_dist, cl.l_obj, cl.total_v);
          log << line;
        }
        batch_loss = batch_loss.defined() ? add(batch_loss, cl.total) : cl.total;
      }
      const float inv_b = 1.0f / static_cast<float>(batch.size());
      batch_loss = mul_scalar(batch_loss, inv_b);
      l_dist /= static_cast<double>(batch.size());
      l_obj /= static_cast<double>(batch.size());
      total_v /= static_cast<double>(batch.size());
      frac_oob /= static_cast<double>(batch.size());
      if (!std::isfinite(total_v)) throw NumericError("train: non-finite loss");
      tape.backward(batch_loss);
    } catch (const NumericError&) {
      // abort with the last periodic checkpoint retained on disk
      std::ofstream marker(out_dir + "/ABORTED", std::ios::trunc);
      marker << "non-finite loss or gradient at step " << step << "\n";
      throw;
    }
    clip_grad_norm(store, cfg.train.clip_norm);
    opt.step(store, lr);

    std::snprintf(line, sizeof(line),
                  "step=%06lld l_dist=%.9e l_obj=%.9e total=%.9e lr=%.9e frac_oob=%.6f\n",
                  static_cast<long long>(step), l_dist, l_obj, total_v, lr, frac_oob);
    log << line;
    outcome.last_total = total_v;
    const int64_t done = step + 1;
    if (done % cfg.train.checkpoint_every == 0 || done == cfg.train.steps) {
      save_checkpoint(ckpt_path, store, opt, done, rng, hash);
      if (done != cfg.train.steps) {
        char stamp[64];
        std::snprintf(stamp, sizeof(stamp), "/ckpt_%06lld.ckpt", static_cast<long long>(done));
        save_checkpoint(out_dir + stamp, store, opt, done, rng, hash);
      }
      log.flush();
    }
    outcome.steps_done = done;
  }
  outcome.final_checkpoint = ckpt_path;
  return outcome;
}

EvalReport evaluate(const std::vector<Clip>& clips, const TrackModel<float>& model,
                    bool mte_all) {
  if (clips.empty()) throw DataError("evaluate: no clips");
  EvalAccumulator acc(mte_all);
  for (const auto& clip : clips) {
    std::vector<double> queries;
    for (int i = 0; i < clip.n; ++i) {
      queries.push_back(static_cast<double>(clip.track_x(0, i)));
      queries.push_back(static_cast<double>(clip.track_y(0, i)));
    }
    TrackResult res = track_video(clip.frames, queries, model);
    TrackArray pred(clip.t, clip.n), gt(clip.t, clip.n);
    for (int t = 0; t < clip.t; ++t)
      for (int i = 0; i < clip.n; ++i) {
        pred.set(t, i, static_cast<double>(res.x(t, i)), static_cast<double>(res.y(t, i)));
        gt.set(t, i, static_cast<double>(clip.track_x(t, i)),
               static_cast<double>(clip.track_y(t, i)));
      }
    acc.add_clip(normalize_tracks(pred, clip.h, clip.w), normalize_tracks(gt, clip.h, clip.w),
                 clip.visibility);
  }
  return acc.finish();
}

}  // namespace otrack
