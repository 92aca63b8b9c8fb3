#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "otrack/ablate.hpp"
#include "otrack/config.hpp"
#include "otrack/io.hpp"
#include "otrack/train.hpp"

namespace {

using namespace otrack;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

KvConfig kv_from(const std::string& config_path, const std::vector<std::string>& overrides) {
  KvConfig kv = config_path.empty() ? KvConfig::from_string("") : KvConfig::from_file(config_path);
  for (const auto& item : overrides) {
    const size_t eq = item.find('=');
    if (eq == std::string::npos)
      throw ConfigError("--set expects key=value, got '" + item + "'");
    kv.set(item.substr(0, eq), item.substr(eq + 1));
  }
  return kv;
}

std::vector<double> read_queries_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open queries file " + path);
  std::vector<double> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    for (auto& c : line)
      if (c == ',') c = ' ';
    std::istringstream ls(line);
    double x, y;
    if (!(ls >> x >> y)) throw FormatError("malformed query line '" + line + "'");
    out.push_back(x);
    out.push_back(y);
  }
  if (out.empty()) throw FormatError("queries file " + path + " has no points");
  return out;
}

TrackModel<float> load_model(const std::string& ckpt_path, const FullConfig& cfg, bool force,
                             ParamStore<float>& store) {
  Checkpoint ckpt = load_checkpoint(ckpt_path);
  if (!force && ckpt.config_hash != config_hash(cfg))
    throw FormatError("checkpoint config hash mismatch (pass --force to override)");
  return model_from_checkpoint(ckpt, cfg, store);
}

int cmd_gen_data(uint64_t seed, int clips, int frames, int size, int tracks, int objects,
                 double occluder_prob, double velocity_scale, const std::string& out,
                 bool verify, const KvConfig& kv) {
  FullConfig cfg = resolve_config(kv);
  SceneSpec spec = cfg.data;
  spec.seed = seed;
  spec.length = frames;
  spec.height = size;
  spec.width = size;
  if (tracks > 0) spec.tracks = tracks;
  if (objects >= 0) spec.n_objects = objects;
  if (occluder_prob >= 0) spec.occluder_prob = occluder_prob;
  if (velocity_scale >= 0) spec.velocity_scale = velocity_scale;

  const std::string manifest = generate_corpus(spec, seed, clips, out);
  if (verify) {
    int violations = 0;
    for (const auto& [path, clip_seed] : read_manifest(manifest)) {
      (void)clip_seed;
      Clip clip = read_clip((std::filesystem::path(out) / path).string());
      for (const auto& v : verify_clip(clip)) {
        std::cerr << "verify: " << path << ": " << v << "\n";
        ++violations;
      }
    }
    if (violations > 0) {
      std::cerr << "gen-data: " << violations << " invariant violations\n";
      return kExitData;
    }
  }
  std::cout << "wrote " << clips << " clips, manifest " << manifest << "\n";
  return kExitOk;
}

int cmd_train(const std::string& config_path, const std::vector<std::string>& overrides,
              const std::string& data, const std::string& out, const std::string& resume,
              bool force) {
  FullConfig cfg = resolve_config(kv_from(config_path, overrides));
  auto corpus = load_corpus(data);
  TrainOutcome outcome = train(corpus, cfg, out, resume, force);
  std::cout << "trained " << outcome.steps_done << " steps, final loss " << outcome.last_total
            << "\ncheckpoint: " << outcome.final_checkpoint << "\nlog: " << outcome.log_path
            << "\n";
  return kExitOk;
}

int cmd_eval(const std::string& config_path, const std::vector<std::string>& overrides,
             const std::string& ckpt, const std::string& data, const std::string& report,
             bool mte_all, bool oracle, bool force) {
  FullConfig cfg = resolve_config(kv_from(config_path, overrides));
  auto clips = load_corpus(data);
  EvalReport rep;
  if (oracle) {
    // feed ground truth as predictions: validates the metric plumbing
    EvalAccumulator acc(mte_all);
    for (const auto& clip : clips) {
      TrackArray gt(clip.t, clip.n);
      for (int t = 0; t < clip.t; ++t)
        for (int i = 0; i < clip.n; ++i)
          gt.set(t, i, static_cast<double>(clip.track_x(t, i)),
                 static_cast<double>(clip.track_y(t, i)));
      auto norm = normalize_tracks(gt, clip.h, clip.w);
      acc.add_clip(norm, norm, clip.visibility);
    }
    rep = acc.finish();
  } else {
    ParamStore<float> store;
    TrackModel<float> model = load_model(ckpt, cfg, force, store);
    rep = evaluate(clips, model, mte_all);
  }
  rep.write(report, report + ".kv");
  std::cout << rep.to_text();
  return kExitOk;
}

int cmd_track(const std::string& config_path, const std::vector<std::string>& overrides,
              const std::string& ckpt, const std::string& clip_path, const std::string& queries,
              const std::string& out_csv, const std::string& out_bin, bool force) {
  FullConfig cfg = resolve_config(kv_from(config_path, overrides));
  Clip clip = read_clip(clip_path);
  std::vector<double> q;
  if (queries == "gt") {
    for (int i = 0; i < clip.n; ++i) {
      q.push_back(static_cast<double>(clip.track_x(0, i)));
      q.push_back(static_cast<double>(clip.track_y(0, i)));
    }
  } else {
    q = read_queries_file(queries);
  }
  ParamStore<float> store;
  TrackModel<float> model = load_model(ckpt, cfg, force, store);
  TrackResult res = track_video(clip.frames, q, model, config_hash(cfg));
  if (!out_bin.empty()) write_track_result(out_bin, res);
  if (!out_csv.empty()) write_track_csv(out_csv, res);
  std::cout << "tracked " << res.n << " points over " << res.t << " frames\n";
  return kExitOk;
}

int cmd_ablate(const std::string& config_path, const std::vector<std::string>& overrides,
               const std::string& data, const std::string& eval_data, const std::string& out,
               int jobs) {
  FullConfig cfg = resolve_config(kv_from(config_path, overrides));
  AblationOutcome outcome = run_ablation(cfg, data, eval_data, out, jobs);
  std::cout << outcome.table;
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale point tracker with objectness regularization"};
  app.require_subcommand(1);

  std::string config_path, data, out, resume, ckpt, report, clip_path, eval_data;
  std::string queries = "gt", out_csv, out_bin;
  std::vector<std::string> overrides;
  uint64_t seed = 1;
  int clips = 16, frames = 8, size = 64, tracks = -1, objects = -1, jobs = 2;
  double occluder_prob = -1, velocity_scale = -1;
  bool no_verify = false, mte_all = false, oracle = false, force = false;

  auto add_config_opts = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "key-value config file");
    cmd->add_option("--set", overrides, "override a config key, e.g. --set train.steps=100");
  };

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic clip corpus");
  gen->add_option("--seed", seed, "corpus seed");
  gen->add_option("--clips", clips, "number of clips");
  gen->add_option("--frames", frames, "frames per clip");
  gen->add_option("--size", size, "square frame size in pixels");
  gen->add_option("--tracks", tracks, "query points per clip");
  gen->add_option("--objects", objects, "objects per scene");
  gen->add_option("--occluder-prob", occluder_prob, "probability of an extra occluder");
  gen->add_option("--velocity-scale", velocity_scale, "motion scale, 0 = static");
  gen->add_option("--out", out, "output directory")->required();
  gen->add_flag("--no-verify", no_verify, "skip the invariant verification pass");
  add_config_opts(gen);

  auto* tr = app.add_subcommand("train", "train a tracker on a clip corpus");
  tr->add_option("--data", data, "corpus manifest")->required();
  tr->add_option("--out", out, "run directory")->required();
  tr->add_option("--resume", resume, "checkpoint to resume from");
  tr->add_flag("--force", force, "ignore config hash mismatch on resume");
  add_config_opts(tr);

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a corpus");
  ev->add_option("--ckpt", ckpt, "model checkpoint");
  ev->add_option("--data", data, "corpus manifest")->required();
  ev->add_option("--report", report, "report path (text; .kv appended for machine form)")
      ->required();
  ev->add_flag("--mte-all", mte_all, "median trajectory error over all points, not only visible");
  ev->add_flag("--oracle", oracle, "feed ground truth as predictions (plumbing check)");
  ev->add_flag("--force", force, "ignore config hash mismatch");
  add_config_opts(ev);

  auto* tk = app.add_subcommand("track", "track query points through one clip");
  tk->add_option("--ckpt", ckpt, "model checkpoint")->required();
  tk->add_option("--clip", clip_path, "clip file")->required();
  tk->add_option("--queries", queries, "queries file (x,y per line) or 'gt'");
  tk->add_option("--out-csv", out_csv, "CSV export path");
  tk->add_option("--out", out_bin, "binary track-result path");
  tk->add_flag("--force", force, "ignore config hash mismatch");
  add_config_opts(tk);

  auto* ab = app.add_subcommand("ablate", "run the component ablation and alpha sweep");
  ab->add_option("--data", data, "training corpus manifest")->required();
  ab->add_option("--eval-data", eval_data, "evaluation corpus manifest (default: generated)");
  ab->add_option("--out", out, "output directory")->required();
  ab->add_option("--jobs", jobs, "parallel training runs");
  add_config_opts(ab);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (gen->parsed())
      return cmd_gen_data(seed, clips, frames, size, tracks, objects, occluder_prob,
                          velocity_scale, out, !no_verify, kv_from(config_path, overrides));
    if (tr->parsed()) return cmd_train(config_path, overrides, data, out, resume, force);
    if (ev->parsed())
      return cmd_eval(config_path, overrides, ckpt, data, report, mte_all, oracle, force);
    if (tk->parsed())
      return cmd_track(config_path, overrides, ckpt, clip_path, queries, out_csv, out_bin, force);
    if (ab->parsed()) return cmd_ablate(config_path, overrides, data, eval_data, out, jobs);
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const ShapeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}
