#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "otrack/tensor.hpp"

namespace otrack {

// plain [T,N,2] position array, (x,y) per point
struct TrackArray {
  int t = 0, n = 0;
  std::vector<double> xy;

  TrackArray() = default;
  TrackArray(int t_, int n_) : t(t_), n(n_), xy(static_cast<size_t>(t_) * n_ * 2, 0.0) {}

  double x(int ti, int i) const { return xy[(static_cast<size_t>(ti) * n + i) * 2]; }
  double y(int ti, int i) const { return xy[(static_cast<size_t>(ti) * n + i) * 2 + 1]; }
  void set(int ti, int i, double px, double py) {
    xy[(static_cast<size_t>(ti) * n + i) * 2] = px;
    xy[(static_cast<size_t>(ti) * n + i) * 2 + 1] = py;
  }
};

enum class DeltaMode { kAll, kVisible, kOccluded };

// scale to the evaluation resolution (256x256 unless stated otherwise)
TrackArray normalize_tracks(const TrackArray& tracks, int from_h, int from_w, int to_h = 256,
                            int to_w = 256);

// fraction of points within {1,2,4,8,16} px (strict), averaged, x100.
// Evaluation starts at the frame after the query frame. Empty evaluation
// sets are undefined, which is distinct from 0.
std::optional<double> delta_avg(const TrackArray& pred, const TrackArray& gt,
                                std::span<const uint8_t> visibility, DeltaMode mode);

// mean over tracks of (frames before the L2 error first exceeds 50) / T, x100
double survival(const TrackArray& pred, const TrackArray& gt);
std::vector<int> survival_lengths(const TrackArray& pred, const TrackArray& gt);

// median L2 error over evaluated points (visible-only unless include_occluded)
std::optional<double> mte(const TrackArray& pred, const TrackArray& gt,
                          std::span<const uint8_t> visibility, bool include_occluded = false);

struct EvalReport {
  std::optional<double> delta_avg, delta_vis, delta_occ;
  double survival = 0.0;
  std::optional<double> mte;
  int clips = 0;
  int tracks = 0;
  int64_t points_evaluated = 0;
  int norm_h = 256, norm_w = 256;
  bool mte_all = false;
  // per-track breakdown, concatenated in clip order
  std::vector<double> track_survival;
  std::vector<std::optional<double>> track_mte;

  std::string to_text() const;
  std::string to_kv() const;
  void write(const std::string& text_path, const std::string& kv_path) const;
};

// pools per-point errors and per-track survival across clips
class EvalAccumulator {
 public:
  explicit EvalAccumulator(bool mte_all = false) : mte_all_(mte_all) {}
  void add_clip(const TrackArray& pred_norm, const TrackArray& gt_norm,
                std::span<const uint8_t> visibility);
  EvalReport finish() const;

 private:
  bool mte_all_;
  int clips_ = 0;
  std::vector<double> err_vis_, err_occ_;   // per-point L2, eval frames only
  std::vector<double> track_survival_;
  std::vector<std::optional<double>> track_mte_;
};

}  // namespace otrack
