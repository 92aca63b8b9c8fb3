#pragma once

#include <cmath>
#include <memory>
#include <vector>

#include "otrack/ops.hpp"
#include "otrack/tensor.hpp"

namespace otrack {

// Bilinear interpolation of fmap[C,H,W] at pts[P,2] (x,y in cell units).
// Coordinates are clamped to [0,W-1]x[0,H-1]; the gradient w.r.t. a clamped
// coordinate is zero in the clamped direction.
template <typename S>
Tensor<S> bilinear_sample(Tensor<S> fmap, Tensor<S> pts) {
  if (fmap.rank() != 3)
    throw ShapeError("bilinear_sample: feature map rank != 3, got " + shape_str(fmap.shape()));
  if (pts.rank() != 2 || pts.dim(1) != 2)
    throw ShapeError("bilinear_sample: points must be [P,2], got " + shape_str(pts.shape()));
  const int c = fmap.dim(0), h = fmap.dim(1), w = fmap.dim(2);
  const int p = pts.dim(0);
  std::vector<S> out(static_cast<size_t>(p) * c);
  auto df = fmap.data();
  auto dp = pts.data();
  for (int i = 0; i < p; ++i) {
    const S xr = dp[static_cast<size_t>(i) * 2 + 0];
    const S yr = dp[static_cast<size_t>(i) * 2 + 1];
    const S x = std::min(std::max(xr, S(0)), static_cast<S>(w - 1));
    const S y = std::min(std::max(yr, S(0)), static_cast<S>(h - 1));
    const int x0 = w > 1 ? std::min(static_cast<int>(std::floor(x)), w - 2) : 0;
    const int y0 = h > 1 ? std::min(static_cast<int>(std::floor(y)), h - 2) : 0;
    const int x1 = w > 1 ? x0 + 1 : 0;
    const int y1 = h > 1 ? y0 + 1 : 0;
    const S wx = w > 1 ? x - static_cast<S>(x0) : S(0);
    const S wy = h > 1 ? y - static_cast<S>(y0) : S(0);
    for (int ch = 0; ch < c; ++ch) {
      const S* img = df.data() + static_cast<int64_t>(ch) * h * w;
      const S v00 = img[y0 * w + x0], v01 = img[y0 * w + x1];
      const S v10 = img[y1 * w + x0], v11 = img[y1 * w + x1];
      out[static_cast<size_t>(i) * c + ch] =
          (S(1) - wy) * ((S(1) - wx) * v00 + wx * v01) + wy * ((S(1) - wx) * v10 + wx * v11);
    }
  }
  auto y = Tensor<S>::from({p, c}, std::move(out));
  detail::autograd<S>({fmap, pts}, y, [fmap, pts, y, c, h, w, p]() mutable {
    if (!y.has_grad()) return;
    auto gy = y.grad();
    auto df = fmap.data();
    auto dp = pts.data();
    for (int i = 0; i < p; ++i) {
      const S xr = dp[static_cast<size_t>(i) * 2 + 0];
      const S yr = dp[static_cast<size_t>(i) * 2 + 1];
      const S x = std::min(std::max(xr, S(0)), static_cast<S>(w - 1));
      const S y2 = std::min(std::max(yr, S(0)), static_cast<S>(h - 1));
      const int x0 = w > 1 ? std::min(static_cast<int>(std::floor(x)), w - 2) : 0;
      const int y0 = h > 1 ? std::min(static_cast<int>(std::floor(y2)), h - 2) : 0;
      const int x1 = w > 1 ? x0 + 1 : 0;
      const int y1 = h > 1 ? y0 + 1 : 0;
      const S wx = w > 1 ? x - static_cast<S>(x0) : S(0);
      const S wy = h > 1 ? y2 - static_cast<S>(y0) : S(0);
      const bool x_active = (xr >= S(0) && xr <= static_cast<S>(w - 1) && w > 1);
      const bool y_active = (yr >= S(0) && yr <= static_cast<S>(h - 1) && h > 1);
      S gx_acc = S(0), gy_acc = S(0);
      for (int ch = 0; ch < c; ++ch) {
        const S g = gy[static_cast<size_t>(i) * c + ch];
        if (g == S(0)) continue;
        const int64_t base = static_cast<int64_t>(ch) * h * w;
        if (fmap.requires_grad()) {
          auto gf = fmap.grad_accum();
          gf[base + y0 * w + x0] += g * (S(1) - wy) * (S(1) - wx);
          gf[base + y0 * w + x1] += g * (S(1) - wy) * wx;
          gf[base + y1 * w + x0] += g * wy * (S(1) - wx);
          gf[base + y1 * w + x1] += g * wy * wx;
        }
        if (pts.requires_grad()) {
          const S* img = df.data() + base;
          const S v00 = img[y0 * w + x0], v01 = img[y0 * w + x1];
          const S v10 = img[y1 * w + x0], v11 = img[y1 * w + x1];
          gx_acc += g * ((S(1) - wy) * (v01 - v00) + wy * (v11 - v10));
          gy_acc += g * ((S(1) - wx) * (v10 - v00) + wx * (v11 - v01));
        }
      }
      if (pts.requires_grad()) {
        auto gp = pts.grad_accum();
        if (x_active) gp[static_cast<size_t>(i) * 2 + 0] += gx_acc;
        if (y_active) gp[static_cast<size_t>(i) * 2 + 1] += gy_acc;
      }
    }
  });
  return y;
}

// Extract the MxM tile at patch coordinates (py,px) of fmap[d,h,w] as a
// [M*M, d] matrix (raster rows, channel columns). Tiles outside the grid are
// zero, which realizes zero-padded neighborhoods at feature-map borders.
template <typename S>
Tensor<S> patch_matrix(Tensor<S> fmap, int py, int px, int m) {
  if (fmap.rank() != 3)
    throw ShapeError("patch_matrix: feature map rank != 3, got " + shape_str(fmap.shape()));
  const int d = fmap.dim(0), h = fmap.dim(1), w = fmap.dim(2);
  std::vector<S> out(static_cast<size_t>(m) * m * d, S(0));
  auto df = fmap.data();
  for (int dy = 0; dy < m; ++dy) {
    const int yy = py * m + dy;
    if (yy < 0 || yy >= h) continue;
    for (int dx = 0; dx < m; ++dx) {
      const int xx = px * m + dx;
      if (xx < 0 || xx >= w) continue;
      S* row = out.data() + (static_cast<int64_t>(dy) * m + dx) * d;
      for (int ch = 0; ch < d; ++ch) row[ch] = df[(static_cast<int64_t>(ch) * h + yy) * w + xx];
    }
  }
  auto y = Tensor<S>::from({m * m, d}, std::move(out));
  detail::autograd<S>({fmap}, y, [fmap, y, py, px, m, d, h, w]() mutable {
    if (!y.has_grad()) return;
    auto gy = y.grad();
    auto gf = fmap.grad_accum();
    for (int dy = 0; dy < m; ++dy) {
      const int yy = py * m + dy;
      if (yy < 0 || yy >= h) continue;
      for (int dx = 0; dx < m; ++dx) {
        const int xx = px * m + dx;
        if (xx < 0 || xx >= w) continue;
        const S* row = gy.data() + (static_cast<int64_t>(dy) * m + dx) * d;
        for (int ch = 0; ch < d; ++ch) gf[(static_cast<int64_t>(ch) * h + yy) * w + xx] += row[ch];
      }
    }
  });
  return y;
}

// Inverse of patch_matrix over a full tiling: place ph*pw patches (raster
// order, each [M*M, d]) into a [d, ph*M, pw*M] map.
template <typename S>
Tensor<S> assemble_patches(const std::vector<Tensor<S>>& patches, int ph, int pw, int m) {
  if (static_cast<int>(patches.size()) != ph * pw)
    throw ShapeError("assemble_patches: expected " + std::to_string(ph * pw) + " patches, got " +
                     std::to_string(patches.size()));
  const int d = patches[0].dim(1);
  for (const auto& pt : patches)
    if (pt.rank() != 2 || pt.dim(0) != m * m || pt.dim(1) != d)
      throw ShapeError("assemble_patches: patch shape mismatch " + shape_str(pt.shape()));
  const int h = ph * m, w = pw * m;
  std::vector<S> out(static_cast<size_t>(d) * h * w);
  for (int py = 0; py < ph; ++py)
    for (int px = 0; px < pw; ++px) {
      auto dp = patches[static_cast<size_t>(py) * pw + px].data();
      for (int dy = 0; dy < m; ++dy)
        for (int dx = 0; dx < m; ++dx) {
          const S* row = dp.data() + (static_cast<int64_t>(dy) * m + dx) * d;
          const int yy = py * m + dy, xx = px * m + dx;
          for (int ch = 0; ch < d; ++ch)
            out[(static_cast<int64_t>(ch) * h + yy) * w + xx] = row[ch];
        }
    }
  auto y = Tensor<S>::from({d, h, w}, std::move(out));
  detail::autograd_vec<S>(patches, y, [patches, y, ph, pw, m, d, h, w]() mutable {
    if (!y.has_grad()) return;
    auto gy = y.grad();
    for (int py = 0; py < ph; ++py)
      for (int px = 0; px < pw; ++px) {
        auto pt = patches[static_cast<size_t>(py) * pw + px];
        if (!pt.requires_grad()) continue;
        auto gp = pt.grad_accum();
        for (int dy = 0; dy < m; ++dy)
          for (int dx = 0; dx < m; ++dx) {
            S* row = gp.data() + (static_cast<int64_t>(dy) * m + dx) * d;
            const int yy = py * m + dy, xx = px * m + dx;
            for (int ch = 0; ch < d; ++ch)
              row[ch] += gy[(static_cast<int64_t>(ch) * h + yy) * w + xx];
          }
      }
  });
  return y;
}

// reflect-101 padding on the bottom/right of fmap[C,H,W]
template <typename S>
Tensor<S> reflect_pad2d(Tensor<S> x, int pad_bottom, int pad_right) {
  if (x.rank() != 3)
    throw ShapeError("reflect_pad2d: input rank != 3, got " + shape_str(x.shape()));
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (pad_bottom < 0 || pad_right < 0) throw ShapeError("reflect_pad2d: negative padding");
  if (pad_bottom > h - 1 || pad_right > w - 1)
    throw ShapeError("reflect_pad2d: padding exceeds extent-1");
  const int ho = h + pad_bottom, wo = w + pad_right;
  auto mirror = [](int i, int n) { return i < n ? i : 2 * n - 2 - i; };
  std::vector<S> out(static_cast<size_t>(c) * ho * wo);
  auto dx = x.data();
  for (int ch = 0; ch < c; ++ch)
    for (int yy = 0; yy < ho; ++yy) {
      const int sy = mirror(yy, h);
      for (int xx = 0; xx < wo; ++xx)
        out[(static_cast<int64_t>(ch) * ho + yy) * wo + xx] =
            dx[(static_cast<int64_t>(ch) * h + sy) * w + mirror(xx, w)];
    }
  auto y = Tensor<S>::from({c, ho, wo}, std::move(out));
  detail::autograd<S>({x}, y, [x, y, c, h, w, ho, wo]() mutable {
    if (!y.has_grad()) return;
    auto mirror = [](int i, int n) { return i < n ? i : 2 * n - 2 - i; };
    auto gy = y.grad();
    auto gx = x.grad_accum();
    for (int ch = 0; ch < c; ++ch)
      for (int yy = 0; yy < ho; ++yy) {
        const int sy = mirror(yy, h);
        for (int xx = 0; xx < wo; ++xx)
          gx[(static_cast<int64_t>(ch) * h + sy) * w + mirror(xx, w)] +=
              gy[(static_cast<int64_t>(ch) * ho + yy) * wo + xx];
      }
  });
  return y;
}

}  // namespace otrack
