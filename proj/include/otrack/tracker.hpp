#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "otrack/encoder.hpp"

namespace otrack {

struct TrackerConfig {
  int window_len = 24;  // T_w
  int iters = 3;        // refinement iterations K (unstated in the source method)
  int corr_scales = 4;
  int corr_radius = 1;  // 1 -> 3x3 neighborhood
  std::vector<int> recent_lags = {2, 4};
  int update_blocks = 8;
  int update_hidden = 256;
  bool motion_embedding = false;  // reserved for a sinusoidal variant; raw 2-vector only
  // Re-sampled recent features treat the point estimate as a constant. Keeps
  // the query-feature path from feeding position gradients back into itself;
  // exposed so full-graph finite-difference checks can run with every path live.
  bool detach_recent_feats = true;

  static TrackerConfig desk() {
    TrackerConfig c;
    c.window_len = 8;
    c.iters = 3;
    c.update_blocks = 2;
    c.update_hidden = 64;
    return c;
  }

  int corr_offsets() const { return (2 * corr_radius + 1) * (2 * corr_radius + 1); }
  int query_feats_max() const { return 1 + static_cast<int>(recent_lags.size()); }
  int corr_width() const { return query_feats_max() * corr_scales * corr_offsets(); }
  int input_width() const { return corr_width() + 2; }  // correlation + raw motion vector

  void validate() const {
    if (iters < 1) throw ShapeError("tracker: iters must be >= 1");
    if (corr_scales < 1) throw ShapeError("tracker: corr_scales must be >= 1");
    if (window_len < 2) throw ShapeError("tracker: window_len must be >= 2");
    if (corr_radius < 0) throw ShapeError("tracker: corr_radius must be >= 0");
    for (int lag : recent_lags)
      if (lag <= 0) throw ShapeError("tracker: recent lags must be positive");
    if (update_blocks < 0 || update_hidden < 1) throw ShapeError("tracker: bad update net size");
    if (motion_embedding)
      throw ShapeError("tracker: motion_embedding is reserved and not implemented");
  }
};

// multi-scale stack per frame; level 0 is the feature map itself, each level
// halves spatial extents (floor, clamped at 1)
template <typename S>
struct CorrPyramid {
  std::vector<Tensor<S>> levels;  // each [d, h_l, w_l]
};

template <typename S>
CorrPyramid<S> build_pyramid(Tensor<S> fmap, int scales) {
  if (fmap.rank() != 3) throw ShapeError("build_pyramid: feature map rank != 3");
  CorrPyramid<S> pyr;
  pyr.levels.push_back(fmap);
  for (int l = 1; l < scales; ++l) {
    Tensor<S> prev = pyr.levels.back();
    const int d = prev.dim(0), h = prev.dim(1), w = prev.dim(2);
    if (h == 1 && w == 1) {
      pyr.levels.push_back(prev);
      continue;
    }
    Tensor<S> x = reshape(prev, {1, d, h, w});
    if (h > 1 && h % 2 != 0) x = narrow(x, 2, 0, h - 1);
    if (w > 1 && w % 2 != 0) x = narrow(x, 3, 0, w - 1);
    x = avg_pool2d(x, h > 1 ? 2 : 1, w > 1 ? 2 : 1);
    pyr.levels.push_back(reshape(x, {d, x.dim(2), x.dim(3)}));
  }
  return pyr;
}

template <typename S>
struct UpdateNetParams {
  ConvParams<S> stem;                                   // 1d, k=3
  std::vector<std::pair<ConvParams<S>, ConvParams<S>>> blocks;  // 1d residual blocks
  ConvParams<S> head;                                   // 1d, k=1, zero-initialized
};

template <typename S>
UpdateNetParams<S> init_update_net(const TrackerConfig& cfg, ParamStore<S>& store, Rng& rng,
                                   bool zero_head = true) {
  cfg.validate();
  UpdateNetParams<S> p;
  const int in_w = cfg.input_width(), hid = cfg.update_hidden;
  p.stem.w = store.add("upd.stem.w", fanin_uniform<S>({hid, in_w, 3}, in_w * 3, rng));
  p.stem.b = store.add("upd.stem.b", Tensor<S>::zeros({hid}));
  for (int i = 0; i < cfg.update_blocks; ++i) {
    const std::string base = "upd.b" + std::to_string(i);
    ConvParams<S> c1, c2;
    c1.w = store.add(base + ".c1.w", fanin_uniform<S>({hid, hid, 3}, hid * 3, rng));
    c1.b = store.add(base + ".c1.b", Tensor<S>::zeros({hid}));
    c2.w = store.add(base + ".c2.w", fanin_uniform<S>({hid, hid, 3}, hid * 3, rng));
    c2.b = store.add(base + ".c2.b", Tensor<S>::zeros({hid}));
    p.blocks.emplace_back(std::move(c1), std::move(c2));
  }
  if (zero_head) {
    p.head.w = store.add("upd.head.w", Tensor<S>::zeros({2, hid, 1}));
  } else {
    p.head.w = store.add("upd.head.w", fanin_uniform<S>({2, hid, 1}, hid, rng));
  }
  p.head.b = store.add("upd.head.b", Tensor<S>::zeros({2}));
  return p;
}

// everything needed to run the tracker
template <typename S>
struct TrackModel {
  EncoderConfig enc_cfg;
  TrackerConfig trk_cfg;
  EncoderParams<S> encoder;
  UpdateNetParams<S> update;
};

template <typename S>
TrackModel<S> init_model(const EncoderConfig& ec, const TrackerConfig& tc, ParamStore<S>& store,
                         Rng& rng, InitMode mode = InitMode::kTrainDefault) {
  TrackModel<S> m;
  m.enc_cfg = ec;
  m.trk_cfg = tc;
  m.encoder = init_encoder(ec, store, rng, mode);
  m.update = init_update_net(tc, store, rng, mode == InitMode::kTrainDefault);
  return m;
}

// Per-window tracker state. positions[k] is the [L,N,2] estimate after k
// update iterations (pixel units); positions[0] broadcasts the start points.
template <typename S>
struct TrackState {
  std::vector<Tensor<S>> positions;
  Tensor<S> query_feat;                 // f1, [N, d]
  std::vector<Tensor<S>> recent_feats;  // per window frame, [N, d]
  std::vector<Tensor<S>> prior_feats;   // frames before the window, oldest..newest
  bool anchor_first_frame = false;      // pin frame 0 to the chained seed
};

struct TrackResult {
  int t = 0, n = 0;
  int stride = 1;
  uint64_t config_hash = 0;
  std::vector<float> tracks;            // [T,N,2]
  std::vector<float> iteration_deltas;  // mean |dp| per window iteration

  float x(int ti, int i) const { return tracks[(static_cast<size_t>(ti) * n + i) * 2]; }
  float y(int ti, int i) const { return tracks[(static_cast<size_t>(ti) * n + i) * 2 + 1]; }
};

// carried across windows when chaining long videos
template <typename S>
struct ChainState {
  std::vector<double> seed;             // [N*2] positions at the overlap frame
  Tensor<S> query_feat;                 // f1 from the first video frame
  std::vector<Tensor<S>> prior_feats;   // recent features before the window start
};

template <typename S>
TrackState<S> init_tracks(const std::vector<double>& queries, const FeatureMap<S>& f1_map,
                          int window_len) {
  if (queries.size() % 2 != 0 || queries.empty())
    throw ShapeError("init_tracks: queries must be a flat [N,2] list");
  const int n = static_cast<int>(queries.size() / 2);
  const int s = f1_map.stride;
  const double w_px = static_cast<double>(f1_map.data.dim(2)) * s;
  const double h_px = static_cast<double>(f1_map.data.dim(1)) * s;
  for (int i = 0; i < n; ++i) {
    const double x = queries[static_cast<size_t>(i) * 2], y = queries[static_cast<size_t>(i) * 2 + 1];
    if (!(x >= 0.0 && x <= w_px - 1.0 && y >= 0.0 && y <= h_px - 1.0))
      throw ShapeError("init_tracks: query " + std::to_string(i) + " outside frame bounds");
  }
  TrackState<S> st;
  std::vector<S> pos(static_cast<size_t>(window_len) * n * 2);
  for (int t = 0; t < window_len; ++t)
    for (int i = 0; i < n; ++i) {
      pos[(static_cast<size_t>(t) * n + i) * 2] = static_cast<S>(queries[static_cast<size_t>(i) * 2]);
      pos[(static_cast<size_t>(t) * n + i) * 2 + 1] =
          static_cast<S>(queries[static_cast<size_t>(i) * 2 + 1]);
    }
  st.positions.push_back(Tensor<S>::from({window_len, n, 2}, std::move(pos)));
  std::vector<S> q(static_cast<size_t>(n) * 2);
  for (size_t i = 0; i < q.size(); ++i)
    q[i] = static_cast<S>(queries[i] / static_cast<double>(s));
  st.query_feat = bilinear_sample(f1_map.data, Tensor<S>::from({n, 2}, std::move(q)));
  st.recent_feats.assign(static_cast<size_t>(window_len), st.query_feat);
  return st;
}

// Correlation features at pts (pixel units) against each query feature, over
// all pyramid scales and the (2r+1)^2 integer offset grid. Output layout is
// query-feature major, scale next, offset row-major.
template <typename S>
Tensor<S> sample_correlation(const CorrPyramid<S>& pyr,
                             const std::vector<Tensor<S>>& query_feats, Tensor<S> pts,
                             int stride, int radius) {
  if (pts.rank() != 2 || pts.dim(1) != 2)
    throw ShapeError("sample_correlation: pts must be [N,2]");
  if (query_feats.empty()) throw ShapeError("sample_correlation: no query features");
  const int n = pts.dim(0);
  const int n_off = (2 * radius + 1) * (2 * radius + 1);
  const int scales = static_cast<int>(pyr.levels.size());
  // sampled neighborhoods per scale, shared across query features
  std::vector<Tensor<S>> sampled_per_scale;
  for (int l = 0; l < scales; ++l) {
    const S inv = S(1) / static_cast<S>(stride * (1 << l));
    Tensor<S> pts_lvl = mul_scalar(pts, inv);
    std::vector<Tensor<S>> offset_pts;
    offset_pts.reserve(static_cast<size_t>(n_off));
    for (int dy = -radius; dy <= radius; ++dy)
      for (int dx = -radius; dx <= radius; ++dx) {
        std::vector<S> off(static_cast<size_t>(n) * 2);
        for (int i = 0; i < n; ++i) {
          off[static_cast<size_t>(i) * 2] = static_cast<S>(dx);
          off[static_cast<size_t>(i) * 2 + 1] = static_cast<S>(dy);
        }
        offset_pts.push_back(add(pts_lvl, Tensor<S>::from({n, 2}, std::move(off))));
      }
    Tensor<S> all_pts = concat(offset_pts, 0);  // [n_off*N, 2], offset-major
    sampled_per_scale.push_back(bilinear_sample(pyr.levels[static_cast<size_t>(l)], all_pts));
  }
  std::vector<Tensor<S>> blocks;
  blocks.reserve(query_feats.size() * static_cast<size_t>(scales));
  for (const auto& qf : query_feats) {
    std::vector<Tensor<S>> reps(static_cast<size_t>(n_off), qf);
    Tensor<S> rep = concat(reps, 0);  // [n_off*N, d]
    for (int l = 0; l < scales; ++l) {
      Tensor<S> dots = sum_axis(mul(sampled_per_scale[static_cast<size_t>(l)], rep), 1);
      blocks.push_back(transpose2d(reshape(dots, {n_off, n})));  // [N, n_off]
    }
  }
  return concat(blocks, 1);  // [N, Qf*scales*n_off]
}

namespace detail {

// lag lookup with clamping to the first frame of the available history
template <typename S>
Tensor<S> lag_feature(const TrackState<S>& st, int t, int lag) {
  const int idx = t - lag;
  if (idx >= 0) return st.recent_feats[static_cast<size_t>(idx)];
  const int j = -idx;  // frames before the window start
  const int avail = static_cast<int>(st.prior_feats.size());
  if (avail >= j) return st.prior_feats[static_cast<size_t>(avail - j)];
  if (avail > 0) return st.prior_feats[0];
  return st.recent_feats[0];
}

template <typename S>
Tensor<S> run_update_net(Tensor<S> seq, const UpdateNetParams<S>& p) {
  Tensor<S> x = relu(conv1d(seq, p.stem.w, p.stem.b, 1, 1));
  for (const auto& blk : p.blocks) {
    Tensor<S> y = relu(conv1d(x, blk.first.w, blk.first.b, 1, 1));
    y = conv1d(y, blk.second.w, blk.second.b, 1, 1);
    x = relu(add(x, y));
  }
  return conv1d(x, p.head.w, p.head.b, 1, 0);  // [N, 2, L]
}

}  // namespace detail

// One refinement iteration k (1-based): correlation + motion -> 1D residual
// network over time -> position update; recent features are re-sampled at the
// new positions with gradient stopped into the coordinates.
template <typename S>
void update_iteration(TrackState<S>& st, const std::vector<CorrPyramid<S>>& pyramids, int k,
                      const TrackModel<S>& model) {
  const TrackerConfig& cfg = model.trk_cfg;
  if (k < 1 || k > static_cast<int>(st.positions.size()))
    throw ShapeError("update_iteration: iteration index out of order");
  Tensor<S> cur = st.positions[static_cast<size_t>(k - 1)];
  Tensor<S> prev = k >= 2 ? st.positions[static_cast<size_t>(k - 2)] : st.positions[0];
  const int l_frames = cur.dim(0), n = cur.dim(1);
  const int stride = model.enc_cfg.downsample;
  Tensor<S> motion = sub(cur, prev);

  const int lag_width = static_cast<int>(cfg.recent_lags.size()) * cfg.corr_scales *
                        cfg.corr_offsets();
  std::vector<Tensor<S>> per_frame;
  per_frame.reserve(static_cast<size_t>(l_frames));
  for (int t = 0; t < l_frames; ++t) {
    Tensor<S> pts = reshape(narrow(cur, 0, t, 1), {n, 2});
    std::vector<Tensor<S>> qfs = {st.query_feat};
    if (k >= 2)
      for (int lag : cfg.recent_lags) qfs.push_back(detail::lag_feature(st, t, lag));
    Tensor<S> corr = sample_correlation(pyramids[static_cast<size_t>(t)], qfs, pts, stride,
                                        cfg.corr_radius);
    if (k == 1 && lag_width > 0)  // zero-fill the recent-feature slots: constant input width
      corr = concat<S>({corr, Tensor<S>::zeros({n, lag_width})}, 1);
    Tensor<S> m_t = reshape(narrow(motion, 0, t, 1), {n, 2});
    per_frame.push_back(concat<S>({corr, m_t}, 1));
  }
  Tensor<S> seq = stack_last(per_frame);  // [N, D_in, L]
  Tensor<S> delta = detail::run_update_net(seq, model.update);
  Tensor<S> delta_tnc = permute(delta, {2, 0, 1});  // [L, N, 2]
  if (st.anchor_first_frame) {
    std::vector<S> mask(static_cast<size_t>(l_frames) * n * 2, S(1));
    for (int i = 0; i < n * 2; ++i) mask[static_cast<size_t>(i)] = S(0);
    delta_tnc = mul(delta_tnc, Tensor<S>::from({l_frames, n, 2}, std::move(mask)));
  }
  Tensor<S> new_pos = add(cur, delta_tnc);
  st.positions.push_back(new_pos);

  const S inv_stride = S(1) / static_cast<S>(stride);
  for (int t = 0; t < l_frames; ++t) {
    Tensor<S> pts = reshape(narrow(new_pos, 0, t, 1), {n, 2});
    if (cfg.detach_recent_feats) pts = detach(pts);
    st.recent_feats[static_cast<size_t>(t)] =
        bilinear_sample(pyramids[static_cast<size_t>(t)].levels[0], mul_scalar(pts, inv_stride));
  }
}

// Encode, initialize, run K refinement iterations over one window.
template <typename S>
TrackState<S> track_window(Tensor<S> frames, const std::vector<double>& queries,
                           const TrackModel<S>& model,
                           const ChainState<S>* chain = nullptr,
                           std::vector<CorrPyramid<S>>* pyramids_out = nullptr) {
  model.trk_cfg.validate();
  if (frames.rank() != 4 || frames.dim(1) != model.enc_cfg.in_channels)
    throw ShapeError("track_window: frames must be [L,3,H,W]");
  const int l_frames = frames.dim(0);
  if (l_frames < 2) throw ShapeError("track_window: need at least 2 frames");
  const int h = frames.dim(2), w = frames.dim(3);

  std::vector<CorrPyramid<S>> pyramids;
  pyramids.reserve(static_cast<size_t>(l_frames));
  std::vector<FeatureMap<S>> maps;
  for (int t = 0; t < l_frames; ++t) {
    Tensor<S> frame = reshape(narrow(frames, 0, t, 1), {model.enc_cfg.in_channels, h, w});
    FeatureMap<S> fm = encode_frame(frame, model.enc_cfg, model.encoder);
    fm.frame_index = t;
    pyramids.push_back(build_pyramid(fm.data, model.trk_cfg.corr_scales));
    maps.push_back(std::move(fm));
  }

  TrackState<S> st = init_tracks(queries, maps[0], l_frames);
  if (chain) {
    st.query_feat = chain->query_feat;  // f1 carried unchanged across windows
    st.prior_feats = chain->prior_feats;
    st.anchor_first_frame = true;
  }
  for (int k = 1; k <= model.trk_cfg.iters; ++k) update_iteration(st, pyramids, k, model);
  if (pyramids_out) *pyramids_out = std::move(pyramids);
  return st;
}

// Sliding-window chaining: windows of length T_w with stride T_w-1. Window
// w>1 starts from the previous window's final positions; the frame-1 query
// feature is carried unchanged; recent-feature lags reach back across the
// boundary through stored features.
template <typename S>
TrackResult track_video(Tensor<S> frames, const std::vector<double>& queries,
                        const TrackModel<S>& model, uint64_t config_hash = 0) {
  model.trk_cfg.validate();
  if (frames.rank() != 4) throw ShapeError("track_video: frames must be [T,3,H,W]");
  const int t_total = frames.dim(0);
  if (t_total < 2) throw ShapeError("track_video: need at least 2 frames");
  const int n = static_cast<int>(queries.size() / 2);
  const int t_w = model.trk_cfg.window_len;
  const int max_lag =
      model.trk_cfg.recent_lags.empty()
          ? 0
          : *std::max_element(model.trk_cfg.recent_lags.begin(), model.trk_cfg.recent_lags.end());

  TrackResult result;
  result.t = t_total;
  result.n = n;
  result.stride = model.enc_cfg.downsample;
  result.config_hash = config_hash;
  result.tracks.assign(static_cast<size_t>(t_total) * n * 2, 0.0f);

  std::optional<ChainState<S>> chain;
  std::vector<double> window_queries = queries;
  int start = 0;
  while (true) {
    const int l_frames = std::min(t_w, t_total - start);
    Tensor<S> window = narrow(frames, 0, start, l_frames);
    TrackState<S> st =
        track_window(window, window_queries, model, chain ? &*chain : nullptr);
    const Tensor<S>& final_pos = st.positions.back();
    auto fp = final_pos.data();
    const int emit_from = (start == 0) ? 0 : 1;
    for (int t = emit_from; t < l_frames; ++t)
      for (int i = 0; i < n * 2; ++i)
        result.tracks[(static_cast<size_t>(start + t) * n * 2) + i] =
            static_cast<float>(fp[(static_cast<size_t>(t) * n * 2) + i]);
    // per-iteration mean |dp| diagnostics
    for (size_t k = 1; k < st.positions.size(); ++k) {
      auto a = st.positions[k].data();
      auto b = st.positions[k - 1].data();
      double acc = 0;
      for (size_t i = 0; i < a.size(); ++i) acc += std::abs(static_cast<double>(a[i] - b[i]));
      result.iteration_deltas.push_back(static_cast<float>(acc / static_cast<double>(a.size())));
    }
    if (start + l_frames >= t_total) break;

    ChainState<S> next;
    next.query_feat = chain ? chain->query_feat : st.query_feat;
    next.seed.resize(static_cast<size_t>(n) * 2);
    // drifted-off points are clamped back to the frame for re-seeding
    const double w_px = static_cast<double>(frames.dim(3));
    const double h_px = static_cast<double>(frames.dim(2));
    for (int i = 0; i < n; ++i) {
      const double sx =
          static_cast<double>(fp[(static_cast<size_t>(l_frames - 1) * n + i) * 2]);
      const double sy =
          static_cast<double>(fp[(static_cast<size_t>(l_frames - 1) * n + i) * 2 + 1]);
      next.seed[static_cast<size_t>(i) * 2] = std::min(std::max(sx, 0.0), w_px - 1.0);
      next.seed[static_cast<size_t>(i) * 2 + 1] = std::min(std::max(sy, 0.0), h_px - 1.0);
    }
    // rows strictly before the overlap frame serve the cross-window lags
    const int first_prior = std::max(0, l_frames - 1 - max_lag);
    for (int t = first_prior; t < l_frames - 1; ++t)
      next.prior_feats.push_back(st.recent_feats[static_cast<size_t>(t)]);
    chain = std::move(next);
    window_queries = chain->seed;
    start += l_frames - 1;
  }
  for (float v : result.tracks)
    if (!std::isfinite(v)) throw NumericError("track_video: non-finite track output");
  return result;
}

// serialization (io.cpp)
void write_track_result(const std::string& path, const TrackResult& result);
TrackResult read_track_result(const std::string& path);
void write_track_csv(const std::string& path, const TrackResult& result);

}  // namespace otrack
