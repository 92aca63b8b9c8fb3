#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <vector>

#include "otrack/tensor.hpp"

namespace otrack {

namespace detail {

template <typename S>
using MatMap = Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename S>
using CMatMap =
    Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

template <typename S>
inline void require_same_shape(Tensor<S> a, Tensor<S> b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

inline void require_axis(const Shape& s, int axis, const char* op) {
  if (axis < 0 || axis >= static_cast<int>(s.size()))
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " +
                     shape_str(s));
}

// split a shape into [outer, axis_dim, inner] around `axis`
inline void axis_split(const Shape& s, int axis, int64_t& outer, int64_t& mid, int64_t& inner) {
  outer = 1;
  for (int i = 0; i < axis; ++i) outer *= s[static_cast<size_t>(i)];
  mid = s[static_cast<size_t>(axis)];
  inner = 1;
  for (size_t i = static_cast<size_t>(axis) + 1; i < s.size(); ++i) inner *= s[i];
}

}  // namespace detail

// ------------------------------------------------------------------
// elementwise
// ------------------------------------------------------------------

template <typename S>
Tensor<S> add(Tensor<S> a, Tensor<S> b) {
  detail::require_same_shape(a, b, "add");
  std::vector<S> out(static_cast<size_t>(a.size()));
  auto da = a.data(), db = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = da[i] + db[i];
  auto y = Tensor<S>::from(a.shape(), std::move(out));
  detail::autograd<S>({a, b}, y, [a, b, y]() mutable {
    if (!y.has_grad()) return;
    auto gy = y.grad();
    if (a.requires_grad()) {
      auto ga = a.grad_accum();
      for (size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
    }
    if (b.requires_grad()) {
      auto gb = b.grad_accum();
      for (size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i];
    }
  });
  return y;
}

template <typename S>
Tensor<S> sub(Tensor<S> a, Tensor<S> b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<S> out(static_cast<size_t>(a.size()));
  auto da = a.data(), db = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = da[i] - db[i];
  auto y = Tensor<S>::from(a.shape(), std::move(out));
  detail::autograd<S>({a, b}, y, [a, b, y]() mutable {
    if (!y.has_grad()) return;
    auto gy = y.grad();
    if (a.requires_grad()) {
      auto ga = a.grad_accum();
      for (size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
    }
    if (b.requires_grad()) {
      auto gb = b.grad_accum();
      for (size_t i = 0; i < gy.size(); ++i) gb[i] -= gy[i];
    }
  });
  return y;
}

template <typename S>
Tensor<S> mul(Tensor<S> a, Tensor<S> b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<S> out(static_cast<size_t>(a.size()));
  auto da = a.data(), db = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = da[i] * db[i];
  auto y = Tensor<S>::from(a.shape(), std::move(out));
  detail::autograd<S>({a, b}, y, [a, b, y]() mutable {
    if (!y.has_grad()) return;
    auto gy = y.grad();
    auto da = a.data(), db = b.data();
    if (a.requires_grad()) {
      auto ga = a.grad_accum();
      for (size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * db[i];
    }
    if (b.requires_grad()) {
      auto gb = b.grad_accum();
      for (size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i] * da[i];
    }
  });
  return y;
}

template <typename S>
Tensor<S> mul_scalar(Tensor<S> a, S c) {
  std::vector<S> out(static_cast<size_t>(a.size()));
  auto da = a.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = da[i] * c;
  auto y = Tensor<S>::from(a.shape(), std::move(out));
  detail::autograd<S>({a}, y, [a, y, c]() mutable {
    if (!y.has_grad()) return;
    auto gy = y.grad();
    auto ga = a.grad_accum();
    for (size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * c;
  });
  return y;
}

template <typename S>
Tensor<S> add_scalar(Tensor<S> a, S c) {
  std::vector<S> out(static_cast<size_t>(a.size()));
  auto da = a.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = da[i] + c;
  auto y = Tensor<S>::from(a.shape(), std::move(out));
  detail::autograd<S>({a}, y, [a, y]() mutable {
    if (!y.has_grad()) return;
    auto gy = y.grad();
    auto ga = a.grad_accum();
    for (size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
  });
  return y;
}

template <typename S>
Tensor<S> relu(Tensor<S> a) {
  std::vector<S> out(static_cast<size_t>(a.size()));
  auto da = a.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = da[i] > S(0) ? da[i] : S(0);
  auto y = Tensor<S>::from(a.shape(), std::move(out));
  detail::autograd<S>({a}, y, [a, y]() mutable {
    if (!y.has_grad()) return;
    auto gy = y.grad();
    auto da = a.data();
    auto ga = a.grad_accum();
    for (size_t i = 0; i < gy.size(); ++i)
      if (da[i] > S(0)) ga[i] += gy[i];
  });
  return y;
}

// |x| with subgradient 0 at the kink
template <typename S>
Tensor<S> abs(Tensor<S> a) {
  std::vector<S> out(static_cast<size_t>(a.size()));
  auto da = a.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = da[i] < S(0) ? -da[i] : da[i];
  auto y = Tensor<S>::from(a.shape(), std::move(out));
  detail::autograd<S>({a}, y, [a, y]() mutable {
    if (!y.has_grad()) return;
    auto gy = y.grad();
    auto da = a.data();
    auto ga = a.grad_accum();
    for (size_t i = 0; i < gy.size(); ++i) {
      if (da[i] > S(0))
        ga[i] += gy[i];
      else if (da[i] < S(0))
        ga[i] -= gy[i];
    }
  });
  return y;
}

// copy detached from the graph
template <typename S>
Tensor<S> detach(Tensor<S> a) {
  return Tensor<S>::from(a.shape(), std::vector<S>(a.data().begin(), a.data().end()));
}

// ------------------------------------------------------------------
// reductions
// ------------------------------------------------------------------

template <typename S>
Tensor<S> sum(Tensor<S> a) {
  S acc = S(0);
  for (const S v : a.data()) acc += v;
  auto y = Tensor<S>::scalar(acc);
  detail::autograd<S>({a}, y, [a, y]() mutable {
    if (!y.has_grad()) return;
    const S g = y.grad()[0];
    auto ga = a.grad_accum();
    for (size_t i = 0; i < ga.size(); ++i) ga[i] += g;
  });
  return y;
}

template <typename S>
Tensor<S> sum_axis(Tensor<S> a, int axis) {
  detail::require_axis(a.shape(), axis, "sum_axis");
  int64_t outer, mid, inner;
  detail::axis_split(a.shape(), axis, outer, mid, inner);
  Shape oshape = a.shape();
  oshape.erase(oshape.begin() + axis);
  if (oshape.empty()) oshape = {1};
  std::vector<S> out(static_cast<size_t>(outer * inner), S(0));
  auto da = a.data();
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t m = 0; m < mid; ++m) {
      const S* src = da.data() + (o * mid + m) * inner;
      S* dst = out.data() + o * inner;
      for (int64_t i = 0; i < inner; ++i) dst[i] += src[i];
    }
  auto y = Tensor<S>::from(std::move(oshape), std::move(out));
  detail::autograd<S>({a}, y, [a, y, outer, mid, inner]() mutable {
    if (!y.has_grad()) return;
    auto gy = y.grad();
    auto ga = a.grad_accum();
    for (int64_t o = 0; o < outer; ++o)
      for (int64_t m = 0; m < mid; ++m) {
        S* dst = ga.data() + (o * mid + m) * inner;
        const S* src = gy.data() + o * inner;
        for (int64_t i = 0; i < inner; ++i) dst[i] += src[i];
      }
  });
  return y;
}

template <typename S>
Tensor<S> mean(Tensor<S> a) {
  return mul_scalar(sum(a), S(1) / static_cast<S>(a.size()));
}

// ------------------------------------------------------------------
// shape ops
// ------------------------------------------------------------------

template <typename S>
Tensor<S> reshape(Tensor<S> a, Shape shape) {
  if (shape_numel(shape) != a.size())
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  auto y = Tensor<S>::from(std::move(shape), std::vector<S>(a.data().begin(), a.data().end()));
  detail::autograd<S>({a}, y, [a, y]() mutable {
    if (!y.has_grad()) return;
    auto gy = y.grad();
    auto ga = a.grad_accum();
    for (size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
  });
  return y;
}

template <typename S>
Tensor<S> narrow(Tensor<S> a, int axis, int start, int len) {
  detail::require_axis(a.shape(), axis, "narrow");
  const int extent = a.dim(axis);
  if (start < 0 || len < 1 || start + len > extent)
    throw ShapeError("narrow: range [" + std::to_string(start) + "," +
                     std::to_string(start + len) + ") out of extent " + std::to_string(extent));
  int64_t outer, mid, inner;
  detail::axis_split(a.shape(), axis, outer, mid, inner);
  Shape oshape = a.shape();
  oshape[static_cast<size_t>(axis)] = len;
  std::vector<S> out(static_cast<size_t>(outer * len * inner));
  auto da = a.data();
  for (int64_t o = 0; o < outer; ++o)
    std::copy_n(da.data() + (o * mid + start) * inner, len * inner,
                out.data() + o * len * inner);
  auto y = Tensor<S>::from(std::move(oshape), std::move(out));
  detail::autograd<S>({a}, y, [a, y, outer, mid, inner, start, len]() mutable {
    if (!y.has_grad()) return;
    auto gy = y.grad();
    auto ga = a.grad_accum();
    for (int64_t o = 0; o < outer; ++o) {
      S* dst = ga.data() + (o * mid + start) * inner;
      const S* src = gy.data() + o * len * inner;
      for (int64_t i = 0; i < len * inner; ++i) dst[i] += src[i];
    }
  });
  return y;
}

template <typename S>
Tensor<S> concat(const std::vector<Tensor<S>>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  detail::require_axis(parts[0].shape(), axis, "concat");
  Shape oshape = parts[0].shape();
  int total = 0;
  for (const auto& p : parts) {
    if (p.rank() != parts[0].rank()) throw ShapeError("concat: rank mismatch");
    for (int i = 0; i < p.rank(); ++i)
      if (i != axis && p.dim(i) != parts[0].dim(i))
        throw ShapeError("concat: dimension " + std::to_string(i) + " mismatch " +
                         shape_str(p.shape()) + " vs " + shape_str(parts[0].shape()));
    total += p.dim(axis);
  }
  oshape[static_cast<size_t>(axis)] = total;
  int64_t outer, mid_total, inner;
  detail::axis_split(oshape, axis, outer, mid_total, inner);
  std::vector<S> out(static_cast<size_t>(outer * mid_total * inner));
  int64_t off = 0;
  for (const auto& p : parts) {
    const int64_t mid = p.dim(axis);
    auto dp = p.data();
    for (int64_t o = 0; o < outer; ++o)
      std::copy_n(dp.data() + o * mid * inner, mid * inner,
                  out.data() + (o * mid_total + off) * inner);
    off += mid;
  }
  std::vector<int64_t> axis_dims;
  axis_dims.reserve(parts.size());
  for (const auto& p : parts) axis_dims.push_back(p.dim(axis));
  auto y = Tensor<S>::from(std::move(oshape), std::move(out));
  detail::autograd_vec<S>(parts, y, [parts, y, outer, mid_total, inner, axis_dims]() mutable {
    if (!y.has_grad()) return;
    auto gy = y.grad();
    int64_t off = 0;
    for (size_t pi = 0; pi < parts.size(); ++pi) {
      auto p = parts[pi];
      const int64_t mid = axis_dims[pi];
      if (p.requires_grad()) {
        auto gp = p.grad_accum();
        for (int64_t o = 0; o < outer; ++o) {
          const S* src = gy.data() + (o * mid_total + off) * inner;
          S* dst = gp.data() + o * mid * inner;
          for (int64_t i = 0; i < mid * inner; ++i) dst[i] += src[i];
        }
      }
      off += mid;
    }
  });
  return y;
}

// stack a list of [N,D] tensors along a new trailing axis -> [N,D,T]
template <typename S>
Tensor<S> stack_last(const std::vector<Tensor<S>>& parts) {
  if (parts.empty()) throw ShapeError("stack_last: no inputs");
  const Shape base = parts[0].shape();
  for (const auto& p : parts)
    if (p.shape() != base) throw ShapeError("stack_last: shape mismatch");
  const int64_t n = parts[0].size();
  const int64_t t_count = static_cast<int64_t>(parts.size());
  Shape oshape = base;
  oshape.push_back(static_cast<int>(t_count));
  std::vector<S> out(static_cast<size_t>(n * t_count));
  for (int64_t t = 0; t < t_count; ++t) {
    auto dp = parts[static_cast<size_t>(t)].data();
    for (int64_t i = 0; i < n; ++i) out[static_cast<size_t>(i * t_count + t)] = dp[i];
  }
  auto y = Tensor<S>::from(std::move(oshape), std::move(out));
  detail::autograd_vec<S>(parts, y, [parts, y, n, t_count]() mutable {
    if (!y.has_grad()) return;
    auto gy = y.grad();
    for (int64_t t = 0; t < t_count; ++t) {
      auto p = parts[static_cast<size_t>(t)];
      if (!p.requires_grad()) continue;
      auto gp = p.grad_accum();
      for (int64_t i = 0; i < n; ++i) gp[i] += gy[static_cast<size_t>(i * t_count + t)];
    }
  });
  return y;
}

// general permutation for rank <= 4
template <typename S>
Tensor<S> permute(Tensor<S> a, const std::vector<int>& perm) {
  const int r = a.rank();
  if (static_cast<int>(perm.size()) != r || r > 4)
    throw ShapeError("permute: bad permutation for rank " + std::to_string(r));
  Shape oshape(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i) oshape[static_cast<size_t>(i)] = a.dim(perm[static_cast<size_t>(i)]);
  // strides of input in element units
  std::vector<int64_t> istr(static_cast<size_t>(r), 1);
  for (int i = r - 2; i >= 0; --i)
    istr[static_cast<size_t>(i)] = istr[static_cast<size_t>(i + 1)] * a.dim(i + 1);
  std::vector<int64_t> map_str(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i) map_str[static_cast<size_t>(i)] = istr[static_cast<size_t>(perm[static_cast<size_t>(i)])];
  Shape os = oshape;
  while (os.size() < 4) os.push_back(1);
  std::vector<int64_t> ms = map_str;
  while (ms.size() < 4) ms.push_back(0);
  std::vector<S> out(static_cast<size_t>(a.size()));
  auto da = a.data();
  size_t idx = 0;
  for (int i0 = 0; i0 < os[0]; ++i0)
    for (int i1 = 0; i1 < os[1]; ++i1)
      for (int i2 = 0; i2 < os[2]; ++i2)
        for (int i3 = 0; i3 < os[3]; ++i3)
          out[idx++] = da[static_cast<size_t>(i0 * ms[0] + i1 * ms[1] + i2 * ms[2] + i3 * ms[3])];
  auto y = Tensor<S>::from(std::move(oshape), std::move(out));
  detail::autograd<S>({a}, y, [a, y, os, ms]() mutable {
    if (!y.has_grad()) return;
    auto gy = y.grad();
    auto ga = a.grad_accum();
    size_t idx = 0;
    for (int i0 = 0; i0 < os[0]; ++i0)
      for (int i1 = 0; i1 < os[1]; ++i1)
        for (int i2 = 0; i2 < os[2]; ++i2)
          for (int i3 = 0; i3 < os[3]; ++i3)
            ga[static_cast<size_t>(i0 * ms[0] + i1 * ms[1] + i2 * ms[2] + i3 * ms[3])] += gy[idx++];
  });
  return y;
}

template <typename S>
Tensor<S> transpose2d(Tensor<S> a) {
  if (a.rank() != 2) throw ShapeError("transpose2d: rank != 2");
  return permute(a, {1, 0});
}

// ------------------------------------------------------------------
// matmul / linear / softmax
// ------------------------------------------------------------------

template <typename S>
Tensor<S> matmul(Tensor<S> a, Tensor<S> b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw ShapeError("matmul: expects rank-2 inputs, got " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  const int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  if (k != k2)
    throw ShapeError("matmul: inner dimension mismatch " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  std::vector<S> out(static_cast<size_t>(m) * n);
  {
    detail::CMatMap<S> A(a.data().data(), m, k), B(b.data().data(), k, n);
    detail::MatMap<S> C(out.data(), m, n);
    C.noalias() = A * B;
  }
  auto y = Tensor<S>::from({m, n}, std::move(out));
  detail::autograd<S>({a, b}, y, [a, b, y, m, k, n]() mutable {
    if (!y.has_grad()) return;
    detail::CMatMap<S> G(y.grad().data(), m, n);
    if (a.requires_grad()) {
      detail::CMatMap<S> B(b.data().data(), k, n);
      detail::MatMap<S> GA(a.grad_accum().data(), m, k);
      GA.noalias() += G * B.transpose();
    }
    if (b.requires_grad()) {
      detail::CMatMap<S> A(a.data().data(), m, k);
      detail::MatMap<S> GB(b.grad_accum().data(), k, n);
      GB.noalias() += A.transpose() * G;
    }
  });
  return y;
}

// x[n,in] * W[out,in]^T + b[out]; pass undefined bias for a pure projection
template <typename S>
Tensor<S> linear(Tensor<S> x, Tensor<S> w, Tensor<S> bias = {}) {
  if (x.rank() != 2 || w.rank() != 2)
    throw ShapeError("linear: expects rank-2 input and weight");
  const int n = x.dim(0), in = x.dim(1), out_dim = w.dim(0);
  if (w.dim(1) != in)
    throw ShapeError("linear: weight in-dim " + std::to_string(w.dim(1)) +
                     " != input feature dim " + std::to_string(in));
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != out_dim))
    throw ShapeError("linear: bias shape mismatch");
  std::vector<S> out(static_cast<size_t>(n) * out_dim);
  {
    detail::CMatMap<S> X(x.data().data(), n, in), W(w.data().data(), out_dim, in);
    detail::MatMap<S> Y(out.data(), n, out_dim);
    Y.noalias() = X * W.transpose();
    if (bias.defined()) {
      auto db = bias.data();
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < out_dim; ++j) out[static_cast<size_t>(i) * out_dim + j] += db[j];
    }
  }
  auto y = Tensor<S>::from({n, out_dim}, std::move(out));
  std::vector<Tensor<S>> ins = {x, w};
  if (bias.defined()) ins.push_back(bias);
  detail::autograd_vec<S>(ins, y, [x, w, bias, y, n, in, out_dim]() mutable {
    if (!y.has_grad()) return;
    detail::CMatMap<S> G(y.grad().data(), n, out_dim);
    if (x.requires_grad()) {
      detail::CMatMap<S> W(w.data().data(), out_dim, in);
      detail::MatMap<S> GX(x.grad_accum().data(), n, in);
      GX.noalias() += G * W;
    }
    if (w.requires_grad()) {
      detail::CMatMap<S> X(x.data().data(), n, in);
      detail::MatMap<S> GW(w.grad_accum().data(), out_dim, in);
      GW.noalias() += G.transpose() * X;
    }
    if (bias.defined() && bias.requires_grad()) {
      auto gb = bias.grad_accum();
      auto gy = y.grad();
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < out_dim; ++j) gb[j] += gy[static_cast<size_t>(i) * out_dim + j];
    }
  });
  return y;
}

template <typename S>
Tensor<S> softmax(Tensor<S> a, int axis) {
  detail::require_axis(a.shape(), axis, "softmax");
  int64_t outer, mid, inner;
  detail::axis_split(a.shape(), axis, outer, mid, inner);
  std::vector<S> out(static_cast<size_t>(a.size()));
  auto da = a.data();
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t i = 0; i < inner; ++i) {
      const int64_t base = o * mid * inner + i;
      S mx = da[static_cast<size_t>(base)];
      for (int64_t m = 1; m < mid; ++m) mx = std::max(mx, da[static_cast<size_t>(base + m * inner)]);
      S denom = S(0);
      for (int64_t m = 0; m < mid; ++m) {
        const S e = std::exp(da[static_cast<size_t>(base + m * inner)] - mx);
        out[static_cast<size_t>(base + m * inner)] = e;
        denom += e;
      }
      for (int64_t m = 0; m < mid; ++m) out[static_cast<size_t>(base + m * inner)] /= denom;
    }
  auto y = Tensor<S>::from(a.shape(), std::move(out));
  detail::autograd<S>({a}, y, [a, y, outer, mid, inner]() mutable {
    if (!y.has_grad()) return;
    auto gy = y.grad();
    auto dy = y.data();
    auto ga = a.grad_accum();
    for (int64_t o = 0; o < outer; ++o)
      for (int64_t i = 0; i < inner; ++i) {
        const int64_t base = o * mid * inner + i;
        S dot = S(0);
        for (int64_t m = 0; m < mid; ++m) {
          const size_t k = static_cast<size_t>(base + m * inner);
          dot += gy[k] * dy[k];
        }
        for (int64_t m = 0; m < mid; ++m) {
          const size_t k = static_cast<size_t>(base + m * inner);
          ga[k] += (gy[k] - dot) * dy[k];
        }
      }
  });
  return y;
}

}  // namespace otrack
