#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "otrack/ops.hpp"
#include "otrack/tensor.hpp"

namespace otrack {

// Per-frame instance-id grid; 0 = background, >=1 = object instances.
struct MaskMap {
  int h = 0, w = 0;
  std::vector<uint16_t> ids;

  MaskMap() = default;
  MaskMap(int h_, int w_) : h(h_), w(w_), ids(static_cast<size_t>(h_) * w_, 0) {}

  uint16_t at(int y, int x) const { return ids[static_cast<size_t>(y) * w + x]; }
  uint16_t& at(int y, int x) { return ids[static_cast<size_t>(y) * w + x]; }
};

// Nearest-pixel lookup: round half away from zero, clamp to bounds.
// Deliberately non-differentiable; masks are categorical.
inline int mask_lookup(const MaskMap& mask, double x, double y) {
  int xi = static_cast<int>(std::llround(x));
  int yi = static_cast<int>(std::llround(y));
  xi = std::min(std::max(xi, 0), mask.w - 1);
  yi = std::min(std::max(yi, 0), mask.h - 1);
  return mask.at(yi, xi);
}

struct ObjLossDiag {
  int visible = 0;
  int out_of_object = 0;
  bool empty_visibility = false;
};

// Objectness regularization for one track: mean over visible frames of
// 1{mask(gt) != mask(pred)} * |gt - pred|_1, using final-iteration positions.
// The indicator is computed from forward values and acts as a constant gate,
// so gradient flows through the L1 term only.
template <typename S>
Tensor<S> objectness_loss(Tensor<S> pred_k, const std::vector<double>& gt,
                          std::span<const MaskMap> masks, std::span<const uint8_t> visibility,
                          ObjLossDiag* diag = nullptr) {
  if (pred_k.rank() != 2 || pred_k.dim(1) != 2)
    throw ShapeError("objectness_loss: predictions must be [T,2], got " +
                     shape_str(pred_k.shape()));
  const int t_len = pred_k.dim(0);
  if (static_cast<int>(gt.size()) != 2 * t_len ||
      static_cast<int>(masks.size()) != t_len ||
      static_cast<int>(visibility.size()) != t_len)
    throw ShapeError("objectness_loss: gt/masks/visibility length mismatch");

  int t_vis = 0;
  std::vector<S> gate(static_cast<size_t>(t_len), S(0));
  int gated = 0;
  auto pv = pred_k.data();
  for (int t = 0; t < t_len; ++t) {
    if (!visibility[static_cast<size_t>(t)]) continue;
    ++t_vis;
    const int m_gt = mask_lookup(masks[static_cast<size_t>(t)], gt[static_cast<size_t>(t) * 2],
                                 gt[static_cast<size_t>(t) * 2 + 1]);
    const int m_pred =
        mask_lookup(masks[static_cast<size_t>(t)], static_cast<double>(pv[static_cast<size_t>(t) * 2]),
                    static_cast<double>(pv[static_cast<size_t>(t) * 2 + 1]));
    if (m_gt != m_pred) {
      gate[static_cast<size_t>(t)] = S(1);
      ++gated;
    }
  }
  if (diag) {
    diag->visible = t_vis;
    diag->out_of_object = gated;
    diag->empty_visibility = (t_vis == 0);
  }
  if (t_vis == 0) return Tensor<S>::scalar(S(0));

  std::vector<S> gtv(static_cast<size_t>(t_len) * 2);
  for (size_t i = 0; i < gtv.size(); ++i) gtv[i] = static_cast<S>(gt[i]);
  auto gt_t = Tensor<S>::from({t_len, 2}, std::move(gtv));
  auto l1 = sum_axis(abs(sub(gt_t, pred_k)), 1);  // [T]
  auto gated_l1 = mul(l1, Tensor<S>::from({t_len}, std::move(gate)));
  return mul_scalar(sum(gated_l1), S(1) / static_cast<S>(t_vis));
}

// Iterative distance loss for one track: sum_k gamma^(K-k) * mean L1 of the
// iteration-k predictions over visible frames, k = 1..K.
template <typename S>
Tensor<S> distance_loss(const std::vector<Tensor<S>>& preds, const std::vector<double>& gt,
                        double gamma, std::span<const uint8_t> visibility) {
  if (preds.empty()) throw ShapeError("distance_loss: need at least one iteration (K >= 1)");
  if (gamma <= 0.0 || gamma > 1.0)
    throw NumericError("distance_loss: gamma must be in (0, 1]");
  const int k_total = static_cast<int>(preds.size());
  const int t_len = preds[0].dim(0);
  for (const auto& p : preds)
    if (p.rank() != 2 || p.dim(0) != t_len || p.dim(1) != 2)
      throw ShapeError("distance_loss: per-iteration predictions must be [T,2]");
  if (static_cast<int>(gt.size()) != 2 * t_len ||
      static_cast<int>(visibility.size()) != t_len)
    throw ShapeError("distance_loss: gt/visibility length mismatch");

  int t_vis = 0;
  std::vector<S> vis_w(static_cast<size_t>(t_len), S(0));
  for (int t = 0; t < t_len; ++t)
    if (visibility[static_cast<size_t>(t)]) {
      vis_w[static_cast<size_t>(t)] = S(1);
      ++t_vis;
    }
  if (t_vis == 0) return Tensor<S>::scalar(S(0));

  std::vector<S> gtv(static_cast<size_t>(t_len) * 2);
  for (size_t i = 0; i < gtv.size(); ++i) gtv[i] = static_cast<S>(gt[i]);
  auto gt_t = Tensor<S>::from({t_len, 2}, std::move(gtv));
  auto vis_t = Tensor<S>::from({t_len}, std::move(vis_w));
  const S inv = S(1) / static_cast<S>(t_vis);

  Tensor<S> total;
  for (int k = 1; k <= k_total; ++k) {
    auto l1 = sum_axis(abs(sub(gt_t, preds[static_cast<size_t>(k - 1)])), 1);
    auto mean_k = mul_scalar(sum(mul(l1, vis_t)), inv);
    const S wk = static_cast<S>(std::pow(gamma, k_total - k));
    auto term = mul_scalar(mean_k, wk);
    total = total.defined() ? add(total, term) : term;
  }
  return total;
}

template <typename S>
struct LossBreakdown {
  Tensor<S> total;  // scalar, on the tape
  double l_dist = 0.0;
  double l_obj = 0.0;
  double total_value = 0.0;
  double frac_out_of_object = 0.0;
};

// Final objective: mean over tracks of (L_dist + alpha * L_obj). With
// alpha == 0 (or no objectness terms) the objectness path is skipped
// entirely, so the result is bit-identical to the averaged distance loss.
template <typename S>
LossBreakdown<S> total_loss(const std::vector<Tensor<S>>& dist_terms,
                            const std::vector<Tensor<S>>& obj_terms, double alpha,
                            double frac_out_of_object = 0.0) {
  if (dist_terms.empty()) throw ShapeError("total_loss: need at least one track");
  if (!obj_terms.empty() && obj_terms.size() != dist_terms.size())
    throw ShapeError("total_loss: objectness term count mismatch");
  const int n = static_cast<int>(dist_terms.size());
  const bool use_obj = alpha != 0.0 && !obj_terms.empty();

  Tensor<S> acc;
  // breakdown accumulated in the same scalar type and order as the tape, so
  // the logged total is bit-identical to the logged l_dist when alpha == 0
  S dist_acc = S(0), obj_acc = S(0);
  for (int i = 0; i < n; ++i) {
    Tensor<S> term = dist_terms[static_cast<size_t>(i)];
    dist_acc += term.value();
    if (!obj_terms.empty()) obj_acc += obj_terms[static_cast<size_t>(i)].value();
    if (use_obj)
      term = add(term, mul_scalar(obj_terms[static_cast<size_t>(i)], static_cast<S>(alpha)));
    acc = acc.defined() ? add(acc, term) : term;
  }
  LossBreakdown<S> out;
  out.total = mul_scalar(acc, S(1) / static_cast<S>(n));
  out.l_dist = static_cast<double>(dist_acc * (S(1) / static_cast<S>(n)));
  out.l_obj = static_cast<double>(obj_acc * (S(1) / static_cast<S>(n)));
  out.total_value = static_cast<double>(out.total.value());
  out.frac_out_of_object = frac_out_of_object;
  return out;
}

}  // namespace otrack
