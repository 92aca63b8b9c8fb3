#pragma once

#include <Eigen/Core>
#include <memory>
#include <vector>

#include "otrack/ops.hpp"
#include "otrack/tensor.hpp"

namespace otrack {

namespace detail {

template <typename S>
void im2col(const S* img, int c_in, int h, int w, int kh, int kw, int stride, int pad, int ho,
            int wo, S* col) {
  for (int c = 0; c < c_in; ++c)
    for (int ky = 0; ky < kh; ++ky)
      for (int kx = 0; kx < kw; ++kx) {
        S* dst = col + ((static_cast<int64_t>(c) * kh + ky) * kw + kx) * (ho * wo);
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            dst[oy * wo + ox] = (iy >= 0 && iy < h && ix >= 0 && ix < w)
                                    ? img[(static_cast<int64_t>(c) * h + iy) * w + ix]
                                    : S(0);
          }
        }
      }
}

template <typename S>
void col2im_add(const S* col, int c_in, int h, int w, int kh, int kw, int stride, int pad, int ho,
                int wo, S* img) {
  for (int c = 0; c < c_in; ++c)
    for (int ky = 0; ky < kh; ++ky)
      for (int kx = 0; kx < kw; ++kx) {
        const S* src = col + ((static_cast<int64_t>(c) * kh + ky) * kw + kx) * (ho * wo);
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= w) continue;
            img[(static_cast<int64_t>(c) * h + iy) * w + ix] += src[oy * wo + ox];
          }
        }
      }
}

}  // namespace detail

template <typename S>
Tensor<S> conv2d(Tensor<S> x, Tensor<S> w, Tensor<S> bias, int stride,
                 int padding) {
  if (x.rank() != 4) throw ShapeError("conv2d: input rank != 4, got " + shape_str(x.shape()));
  if (w.rank() != 4) throw ShapeError("conv2d: weight rank != 4, got " + shape_str(w.shape()));
  const int n = x.dim(0), c_in = x.dim(1), h = x.dim(2), wdt = x.dim(3);
  const int o = w.dim(0), wc = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  if (wc != c_in)
    throw ShapeError("conv2d: input channel dim " + std::to_string(c_in) +
                     " != weight channel dim " + std::to_string(wc));
  if (kh % 2 == 0 || kw % 2 == 0) throw ShapeError("conv2d: kernel extents must be odd");
  if (padding < 0 || stride < 1) throw ShapeError("conv2d: padding >= 0 and stride >= 1 required");
  if (!bias.defined() || bias.rank() != 1 || bias.dim(0) != o)
    throw ShapeError("conv2d: bias must have shape [" + std::to_string(o) + "]");
  if ((h + 2 * padding - kh) % stride != 0)
    throw ShapeError("conv2d: height " + std::to_string(h) + " not exactly divisible by stride");
  if ((wdt + 2 * padding - kw) % stride != 0)
    throw ShapeError("conv2d: width " + std::to_string(wdt) + " not exactly divisible by stride");
  const int ho = (h + 2 * padding - kh) / stride + 1;
  const int wo = (wdt + 2 * padding - kw) / stride + 1;
  if (ho < 1 || wo < 1) throw ShapeError("conv2d: empty output extent");

  const int64_t ckk = static_cast<int64_t>(c_in) * kh * kw;
  const int64_t osp = static_cast<int64_t>(ho) * wo;
  auto cols = std::make_shared<std::vector<std::vector<S>>>();
  cols->reserve(static_cast<size_t>(n));
  std::vector<S> out(static_cast<size_t>(n) * o * osp);
  auto dx = x.data();
  auto dw = w.data();
  auto db = bias.data();
  for (int i = 0; i < n; ++i) {
    cols->emplace_back(static_cast<size_t>(ckk * osp));
    S* col = cols->back().data();
    detail::im2col(dx.data() + static_cast<int64_t>(i) * c_in * h * wdt, c_in, h, wdt, kh, kw,
                   stride, padding, ho, wo, col);
    detail::CMatMap<S> W(dw.data(), o, ckk), C(col, ckk, osp);
    detail::MatMap<S> Y(out.data() + static_cast<int64_t>(i) * o * osp, o, osp);
    Y.noalias() = W * C;
    for (int oc = 0; oc < o; ++oc) {
      S* row = out.data() + (static_cast<int64_t>(i) * o + oc) * osp;
      const S b = db[oc];
      for (int64_t k = 0; k < osp; ++k) row[k] += b;
    }
  }
  auto y = Tensor<S>::from({n, o, ho, wo}, std::move(out));
  detail::autograd<S>(
      {x, w, bias}, y,
      [x, w, bias, y, cols, n, c_in, h, wdt, o, kh, kw, stride, padding, ho, wo, ckk,
       osp]() mutable {
        if (!y.has_grad()) return;
        auto gy = y.grad();
        for (int i = 0; i < n; ++i) {
          detail::CMatMap<S> G(gy.data() + static_cast<int64_t>(i) * o * osp, o, osp);
          if (w.requires_grad()) {
            detail::CMatMap<S> C((*cols)[static_cast<size_t>(i)].data(), ckk, osp);
            detail::MatMap<S> GW(w.grad_accum().data(), o, ckk);
            GW.noalias() += G * C.transpose();
          }
          if (x.requires_grad()) {
            std::vector<S> gcol(static_cast<size_t>(ckk * osp));
            detail::CMatMap<S> W(w.data().data(), o, ckk);
            detail::MatMap<S> GC(gcol.data(), ckk, osp);
            GC.noalias() = W.transpose() * G;
            detail::col2im_add(gcol.data(), c_in, h, wdt, kh, kw, stride, padding, ho, wo,
                               x.grad_accum().data() + static_cast<int64_t>(i) * c_in * h * wdt);
          }
          if (bias.requires_grad()) {
            auto gb = bias.grad_accum();
            for (int oc = 0; oc < o; ++oc) {
              const S* row = gy.data() + (static_cast<int64_t>(i) * o + oc) * osp;
              S acc = S(0);
              for (int64_t k = 0; k < osp; ++k) acc += row[k];
              gb[oc] += acc;
            }
          }
        }
      });
  return y;
}

template <typename S>
Tensor<S> conv1d(Tensor<S> x, Tensor<S> w, Tensor<S> bias, int stride,
                 int padding) {
  if (x.rank() != 3) throw ShapeError("conv1d: input rank != 3, got " + shape_str(x.shape()));
  if (w.rank() != 3) throw ShapeError("conv1d: weight rank != 3, got " + shape_str(w.shape()));
  const int n = x.dim(0), c_in = x.dim(1), l = x.dim(2);
  const int o = w.dim(0), wc = w.dim(1), k = w.dim(2);
  if (wc != c_in)
    throw ShapeError("conv1d: input channel dim " + std::to_string(c_in) +
                     " != weight channel dim " + std::to_string(wc));
  if (k % 2 == 0) throw ShapeError("conv1d: kernel extent must be odd");
  if ((l + 2 * padding - k) % stride != 0)
    throw ShapeError("conv1d: length " + std::to_string(l) + " not exactly divisible by stride");
  if (!bias.defined() || bias.rank() != 1 || bias.dim(0) != o)
    throw ShapeError("conv1d: bias must have shape [" + std::to_string(o) + "]");
  const int lo = (l + 2 * padding - k) / stride + 1;
  if (lo < 1) throw ShapeError("conv1d: empty output extent");

  const int64_t ck = static_cast<int64_t>(c_in) * k;
  auto cols = std::make_shared<std::vector<std::vector<S>>>();
  cols->reserve(static_cast<size_t>(n));
  std::vector<S> out(static_cast<size_t>(n) * o * lo);
  auto dx = x.data();
  auto dw = w.data();
  auto db = bias.data();
  for (int i = 0; i < n; ++i) {
    cols->emplace_back(static_cast<size_t>(ck * lo));
    S* col = cols->back().data();
    const S* img = dx.data() + static_cast<int64_t>(i) * c_in * l;
    for (int c = 0; c < c_in; ++c)
      for (int kk = 0; kk < k; ++kk) {
        S* dst = col + (static_cast<int64_t>(c) * k + kk) * lo;
        for (int ol = 0; ol < lo; ++ol) {
          const int il = ol * stride - padding + kk;
          dst[ol] = (il >= 0 && il < l) ? img[static_cast<int64_t>(c) * l + il] : S(0);
        }
      }
    detail::CMatMap<S> W(dw.data(), o, ck), C(col, ck, lo);
    detail::MatMap<S> Y(out.data() + static_cast<int64_t>(i) * o * lo, o, lo);
    Y.noalias() = W * C;
    for (int oc = 0; oc < o; ++oc) {
      S* row = out.data() + (static_cast<int64_t>(i) * o + oc) * lo;
      for (int ol = 0; ol < lo; ++ol) row[ol] += db[oc];
    }
  }
  auto y = Tensor<S>::from({n, o, lo}, std::move(out));
  detail::autograd<S>(
      {x, w, bias}, y, [x, w, bias, y, cols, n, c_in, l, o, k, stride, padding, lo, ck]() mutable {
        if (!y.has_grad()) return;
        auto gy = y.grad();
        for (int i = 0; i < n; ++i) {
          detail::CMatMap<S> G(gy.data() + static_cast<int64_t>(i) * o * lo, o, lo);
          if (w.requires_grad()) {
            detail::CMatMap<S> C((*cols)[static_cast<size_t>(i)].data(), ck, lo);
            detail::MatMap<S> GW(w.grad_accum().data(), o, ck);
            GW.noalias() += G * C.transpose();
          }
          if (x.requires_grad()) {
            std::vector<S> gcol(static_cast<size_t>(ck * lo));
            detail::CMatMap<S> W(w.data().data(), o, ck);
            detail::MatMap<S> GC(gcol.data(), ck, lo);
            GC.noalias() = W.transpose() * G;
            S* gimg = x.grad_accum().data() + static_cast<int64_t>(i) * c_in * l;
            for (int c = 0; c < c_in; ++c)
              for (int kk = 0; kk < k; ++kk) {
                const S* src = gcol.data() + (static_cast<int64_t>(c) * k + kk) * lo;
                for (int ol = 0; ol < lo; ++ol) {
                  const int il = ol * stride - padding + kk;
                  if (il >= 0 && il < l) gimg[static_cast<int64_t>(c) * l + il] += src[ol];
                }
              }
          }
          if (bias.requires_grad()) {
            auto gb = bias.grad_accum();
            for (int oc = 0; oc < o; ++oc) {
              const S* row = gy.data() + (static_cast<int64_t>(i) * o + oc) * lo;
              S acc = S(0);
              for (int ol = 0; ol < lo; ++ol) acc += row[ol];
              gb[oc] += acc;
            }
          }
        }
      });
  return y;
}

template <typename S>
Tensor<S> avg_pool2d(Tensor<S> x, int win_h, int win_w) {
  if (x.rank() != 4) throw ShapeError("avg_pool2d: input rank != 4, got " + shape_str(x.shape()));
  if (win_h < 1 || win_w < 1) throw ShapeError("avg_pool2d: window must be >= 1");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % win_h != 0)
    throw ShapeError("avg_pool2d: height " + std::to_string(h) + " not divisible by window " +
                     std::to_string(win_h));
  if (w % win_w != 0)
    throw ShapeError("avg_pool2d: width " + std::to_string(w) + " not divisible by window " +
                     std::to_string(win_w));
  const int ho = h / win_h, wo = w / win_w;
  const S inv = S(1) / static_cast<S>(win_h * win_w);
  std::vector<S> out(static_cast<size_t>(n) * c * ho * wo, S(0));
  auto dx = x.data();
  for (int64_t nc = 0; nc < static_cast<int64_t>(n) * c; ++nc) {
    const S* img = dx.data() + nc * h * w;
    S* dst = out.data() + nc * ho * wo;
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox) {
        S acc = S(0);
        for (int ky = 0; ky < win_h; ++ky)
          for (int kx = 0; kx < win_w; ++kx)
            acc += img[(oy * win_h + ky) * w + ox * win_w + kx];
        dst[oy * wo + ox] = acc * inv;
      }
  }
  auto y = Tensor<S>::from({n, c, ho, wo}, std::move(out));
  detail::autograd<S>({x}, y, [x, y, n, c, h, w, ho, wo, win_h, win_w, inv]() mutable {
    if (!y.has_grad()) return;
    auto gy = y.grad();
    auto gx = x.grad_accum();
    for (int64_t nc = 0; nc < static_cast<int64_t>(n) * c; ++nc) {
      S* gimg = gx.data() + nc * h * w;
      const S* gdst = gy.data() + nc * ho * wo;
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
          const S g = gdst[oy * wo + ox] * inv;
          for (int ky = 0; ky < win_h; ++ky)
            for (int kx = 0; kx < win_w; ++kx)
              gimg[(oy * win_h + ky) * w + ox * win_w + kx] += g;
        }
    }
  });
  return y;
}

template <typename S>
Tensor<S> avg_pool2d(Tensor<S> x, int window) {
  return avg_pool2d(std::move(x), window, window);
}

// per-(n,c) normalization to zero mean / unit variance, population statistics
template <typename S>
Tensor<S> instance_norm(Tensor<S> x, S eps) {
  if (x.rank() != 4)
    throw ShapeError("instance_norm: input rank != 4, got " + shape_str(x.shape()));
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int64_t sp = static_cast<int64_t>(h) * w;
  if (sp < 2) throw NumericError("instance_norm: H*W < 2 gives degenerate statistics");
  std::vector<S> out(static_cast<size_t>(x.size()));
  auto rstd = std::make_shared<std::vector<S>>(static_cast<size_t>(n) * c);
  auto dx = x.data();
  for (int64_t nc = 0; nc < static_cast<int64_t>(n) * c; ++nc) {
    const S* img = dx.data() + nc * sp;
    S mu = S(0);
    for (int64_t i = 0; i < sp; ++i) mu += img[i];
    mu /= static_cast<S>(sp);
    S var = S(0);
    for (int64_t i = 0; i < sp; ++i) {
      const S d = img[i] - mu;
      var += d * d;
    }
    var /= static_cast<S>(sp);
    const S r = S(1) / std::sqrt(var + eps);
    (*rstd)[static_cast<size_t>(nc)] = r;
    S* dst = out.data() + nc * sp;
    for (int64_t i = 0; i < sp; ++i) dst[i] = (img[i] - mu) * r;
  }
  auto y = Tensor<S>::from(x.shape(), std::move(out));
  detail::autograd<S>({x}, y, [x, y, rstd, n, c, sp]() mutable {
    if (!y.has_grad()) return;
    auto gy = y.grad();
    auto dy = y.data();
    auto gx = x.grad_accum();
    for (int64_t nc = 0; nc < static_cast<int64_t>(n) * c; ++nc) {
      const S* g = gy.data() + nc * sp;
      const S* xh = dy.data() + nc * sp;  // normalized values
      S* dst = gx.data() + nc * sp;
      S gmean = S(0), gxdot = S(0);
      for (int64_t i = 0; i < sp; ++i) {
        gmean += g[i];
        gxdot += g[i] * xh[i];
      }
      gmean /= static_cast<S>(sp);
      gxdot /= static_cast<S>(sp);
      const S r = (*rstd)[static_cast<size_t>(nc)];
      for (int64_t i = 0; i < sp; ++i) dst[i] += r * (g[i] - gmean - xh[i] * gxdot);
    }
  });
  return y;
}

}  // namespace otrack
