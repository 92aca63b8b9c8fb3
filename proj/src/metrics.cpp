#include "otrack/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "otrack/io.hpp"

namespace otrack {

namespace {

const double kThresholds[5] = {1.0, 2.0, 4.0, 8.0, 16.0};
constexpr double kFailureDistance = 50.0;

double l2(const TrackArray& a, const TrackArray& b, int t, int i) {
  const double dx = a.x(t, i) - b.x(t, i);
  const double dy = a.y(t, i) - b.y(t, i);
  return std::sqrt(dx * dx + dy * dy);
}

void require_match(const TrackArray& pred, const TrackArray& gt) {
  if (pred.t != gt.t || pred.n != gt.n)
    throw ShapeError("metrics: track array extents differ");
  if (pred.t < 1 || pred.n < 1) throw ShapeError("metrics: empty track arrays");
}

std::optional<double> median(std::vector<double> v) {
  if (v.empty()) return std::nullopt;
  std::sort(v.begin(), v.end());
  const size_t m = v.size() / 2;
  if (v.size() % 2 == 1) return v[m];
  return 0.5 * (v[m - 1] + v[m]);
}

std::optional<double> delta_from_errors(const std::vector<double>& errs) {
  if (errs.empty()) return std::nullopt;
  double acc = 0;
  for (double th : kThresholds) {
    int64_t within = 0;
    for (double e : errs)
      if (e < th) ++within;
    acc += static_cast<double>(within) / static_cast<double>(errs.size());
  }
  return acc / 5.0 * 100.0;
}

std::string fmt_opt(const std::optional<double>& v) {
  if (!v) return "undefined";
  std::ostringstream os;
  os.precision(6);
  os << std::fixed << *v;
  return os.str();
}

}  // namespace

TrackArray normalize_tracks(const TrackArray& tracks, int from_h, int from_w, int to_h,
                            int to_w) {
  if (from_h <= 0 || from_w <= 0 || to_h <= 0 || to_w <= 0)
    throw ShapeError("normalize_tracks: zero resolution");
  TrackArray out(tracks.t, tracks.n);
  const double sx = static_cast<double>(to_w) / from_w;
  const double sy = static_cast<double>(to_h) / from_h;
  for (int t = 0; t < tracks.t; ++t)
    for (int i = 0; i < tracks.n; ++i) out.set(t, i, tracks.x(t, i) * sx, tracks.y(t, i) * sy);
  return out;
}

std::optional<double> delta_avg(const TrackArray& pred, const TrackArray& gt,
                                std::span<const uint8_t> visibility, DeltaMode mode) {
  require_match(pred, gt);
  if (static_cast<int64_t>(visibility.size()) != static_cast<int64_t>(pred.t) * pred.n)
    throw ShapeError("delta_avg: visibility size mismatch");
  std::vector<double> errs;
  for (int t = 1; t < pred.t; ++t)  // query frame excluded from error accounting
    for (int i = 0; i < pred.n; ++i) {
      const bool vis = visibility[static_cast<size_t>(t) * pred.n + i] != 0;
      if (mode == DeltaMode::kVisible && !vis) continue;
      if (mode == DeltaMode::kOccluded && vis) continue;
      errs.push_back(l2(pred, gt, t, i));
    }
  return delta_from_errors(errs);
}

std::vector<int> survival_lengths(const TrackArray& pred, const TrackArray& gt) {
  require_match(pred, gt);
  std::vector<int> lengths(static_cast<size_t>(pred.n), pred.t);
  for (int i = 0; i < pred.n; ++i)
    for (int t = 0; t < pred.t; ++t)
      if (l2(pred, gt, t, i) > kFailureDistance) {  // strict: exactly 50 survives
        lengths[static_cast<size_t>(i)] = t;
        break;
      }
  return lengths;
}

double survival(const TrackArray& pred, const TrackArray& gt) {
  const auto lengths = survival_lengths(pred, gt);
  double acc = 0;
  for (int l : lengths) acc += static_cast<double>(l) / pred.t;
  return acc / static_cast<double>(pred.n) * 100.0;
}

std::optional<double> mte(const TrackArray& pred, const TrackArray& gt,
                          std::span<const uint8_t> visibility, bool include_occluded) {
  require_match(pred, gt);
  if (static_cast<int64_t>(visibility.size()) != static_cast<int64_t>(pred.t) * pred.n)
    throw ShapeError("mte: visibility size mismatch");
  std::vector<double> errs;
  for (int t = 1; t < pred.t; ++t)
    for (int i = 0; i < pred.n; ++i) {
      if (!include_occluded && visibility[static_cast<size_t>(t) * pred.n + i] == 0) continue;
      errs.push_back(l2(pred, gt, t, i));
    }
  return median(std::move(errs));
}

void EvalAccumulator::add_clip(const TrackArray& pred_norm, const TrackArray& gt_norm,
                               std::span<const uint8_t> visibility) {
  require_match(pred_norm, gt_norm);
  ++clips_;
  for (int t = 1; t < pred_norm.t; ++t)
    for (int i = 0; i < pred_norm.n; ++i) {
      const double e = l2(pred_norm, gt_norm, t, i);
      if (visibility[static_cast<size_t>(t) * pred_norm.n + i])
        err_vis_.push_back(e);
      else
        err_occ_.push_back(e);
    }
  const auto lengths = survival_lengths(pred_norm, gt_norm);
  for (int i = 0; i < pred_norm.n; ++i) {
    track_survival_.push_back(static_cast<double>(lengths[static_cast<size_t>(i)]) /
                              pred_norm.t * 100.0);
    std::vector<double> errs;
    for (int t = 1; t < pred_norm.t; ++t) {
      if (!mte_all_ && !visibility[static_cast<size_t>(t) * pred_norm.n + i]) continue;
      errs.push_back(l2(pred_norm, gt_norm, t, i));
    }
    track_mte_.push_back(median(std::move(errs)));
  }
}

EvalReport EvalAccumulator::finish() const {
  EvalReport r;
  r.clips = clips_;
  r.tracks = static_cast<int>(track_survival_.size());
  r.mte_all = mte_all_;
  std::vector<double> all;
  all.reserve(err_vis_.size() + err_occ_.size());
  all.insert(all.end(), err_vis_.begin(), err_vis_.end());
  all.insert(all.end(), err_occ_.begin(), err_occ_.end());
  r.points_evaluated = static_cast<int64_t>(all.size());
  r.delta_avg = delta_from_errors(all);
  r.delta_vis = delta_from_errors(err_vis_);
  r.delta_occ = delta_from_errors(err_occ_);
  r.mte = median(mte_all_ ? all : err_vis_);
  double acc = 0;
  for (double sv : track_survival_) acc += sv;
  r.survival = track_survival_.empty() ? 0.0 : acc / static_cast<double>(track_survival_.size());
  r.track_survival = track_survival_;
  r.track_mte = track_mte_;
  return r;
}

std::string EvalReport::to_text() const {
  std::ostringstream os;
  os.precision(6);
  os << std::fixed;
  os << "evaluation report\n";
  os << "  clips:            " << clips << "\n";
  os << "  tracks:           " << tracks << "\n";
  os << "  points evaluated: " << points_evaluated << "\n";
  os << "  normalization:    " << norm_w << "x" << norm_h << "\n";
  os << "  delta_avg:        " << fmt_opt(delta_avg) << "\n";
  os << "  delta_vis:        " << fmt_opt(delta_vis) << "\n";
  os << "  delta_occ:        " << fmt_opt(delta_occ) << "\n";
  os << "  survival:         " << survival << "\n";
  os << "  mte:              " << fmt_opt(mte) << (mte_all ? "  (all points)" : "  (visible only)")
     << "\n";
  os << "per-track breakdown (survival %, mte px)\n";
  for (size_t i = 0; i < track_survival.size(); ++i)
    os << "  track " << i << ": " << track_survival[i] << "  "
       << fmt_opt(i < track_mte.size() ? track_mte[i] : std::nullopt) << "\n";
  return os.str();
}

std::string EvalReport::to_kv() const {
  std::ostringstream os;
  os << "clips = " << clips << "\n";
  os << "tracks = " << tracks << "\n";
  os << "points_evaluated = " << points_evaluated << "\n";
  os << "norm_h = " << norm_h << "\n";
  os << "norm_w = " << norm_w << "\n";
  os << "delta_avg = " << fmt_opt(delta_avg) << "\n";
  os << "delta_vis = " << fmt_opt(delta_vis) << "\n";
  os << "delta_occ = " << fmt_opt(delta_occ) << "\n";
  os << "survival = " << fmt_opt(survival) << "\n";
  os << "mte = " << fmt_opt(mte) << "\n";
  os << "mte_mode = " << (mte_all ? "all" : "visible") << "\n";
  return os.str();
}

void EvalReport::write(const std::string& text_path, const std::string& kv_path) const {
  {
    std::ofstream os(text_path, std::ios::trunc);
    if (!os) throw FormatError("EvalReport: cannot open " + text_path);
    os << to_text();
  }
  {
    std::ofstream os(kv_path, std::ios::trunc);
    if (!os) throw FormatError("EvalReport: cannot open " + kv_path);
    os << to_kv();
  }
}

}  // namespace otrack
