#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "otrack/conv.hpp"
#include "otrack/ops.hpp"
#include "otrack/rng.hpp"
#include "otrack/sampling.hpp"
#include "otrack/tensor.hpp"

namespace otrack {

struct EncoderConfig {
  int in_channels = 3;
  int stem_channels = 64;
  std::vector<int> layer_channels = {64, 96, 128, 128};
  int blocks_per_layer = 2;
  std::vector<int> fuse_channels = {256, 128};
  int out_dim = 128;     // d
  int downsample = 8;    // s, realized by pool-2 stages
  int attn_layers = 6;
  int attn_heads = 8;    // n
  int patch_size = 7;    // M
  bool attn_residual = true;  // deviation flag: residual around each attention layer
  bool use_attention = true;
  double norm_eps = 1e-5;

  static EncoderConfig desk() {
    EncoderConfig c;
    c.stem_channels = 8;
    c.layer_channels = {8, 12, 16, 16};
    c.fuse_channels = {24, 16};
    c.out_dim = 16;
    c.downsample = 4;
    c.attn_layers = 2;
    c.attn_heads = 2;
    c.patch_size = 4;
    return c;
  }

  int head_dim() const { return out_dim / attn_heads; }

  void validate() const {
    if (out_dim % attn_heads != 0)
      throw ShapeError("encoder: out_dim " + std::to_string(out_dim) +
                       " not divisible by attn_heads " + std::to_string(attn_heads));
    if (patch_size < 1) throw ShapeError("encoder: patch_size must be >= 1");
    int s = downsample;
    int stages = 0;
    while (s > 1) {
      if (s % 2 != 0) throw ShapeError("encoder: downsample must be a power of 2");
      s /= 2;
      ++stages;
    }
    if (stages > 1 + static_cast<int>(layer_channels.size()))
      throw ShapeError("encoder: downsample too large for the number of layers");
    if (fuse_channels.size() != 2 || fuse_channels[1] != out_dim)
      throw ShapeError("encoder: fuse_channels must be [mid, out_dim]");
    if (layer_channels.empty() || blocks_per_layer < 1)
      throw ShapeError("encoder: need at least one layer and one block");
  }
};

template <typename S>
struct FeatureMap {
  int frame_index = -1;
  Tensor<S> data;  // [d, H/s, W/s]
  int stride = 1;
};

template <typename S>
struct ConvParams {
  Tensor<S> w, b;
};

template <typename S>
struct BlockParams {
  ConvParams<S> conv1, conv2;
  ConvParams<S> proj;  // 1x1, present when the block changes channel count
  bool has_proj = false;
};

template <typename S>
struct AttentionLayerParams {
  std::vector<Tensor<S>> q_proj;  // per head, [d_proj, d]
  std::vector<Tensor<S>> v_proj;  // per head, [d_proj, d]
  Tensor<S> out_w;                // [d, d]
  Tensor<S> out_b;                // [d]
};

template <typename S>
struct EncoderParams {
  ConvParams<S> stem;
  std::vector<std::vector<BlockParams<S>>> layers;
  ConvParams<S> fuse1, fuse2;
  std::vector<AttentionLayerParams<S>> attn;
};

enum class InitMode {
  kTrainDefault,  // attention output projections start at zero
  kRandomAll,     // everything fan-in scaled (gradient-flow tests)
};

namespace detail {

template <typename S>
ConvParams<S> init_conv(ParamStore<S>& store, const std::string& name, int o, int c, int kh,
                        int kw, Rng& rng) {
  ConvParams<S> p;
  p.w = store.add(name + ".w", fanin_uniform<S>({o, c, kh, kw}, c * kh * kw, rng));
  p.b = store.add(name + ".b", Tensor<S>::zeros({o}));
  return p;
}

}  // namespace detail

template <typename S>
EncoderParams<S> init_encoder(const EncoderConfig& cfg, ParamStore<S>& store, Rng& rng,
                              InitMode mode = InitMode::kTrainDefault) {
  cfg.validate();
  EncoderParams<S> p;
  p.stem = detail::init_conv(store, "enc.stem", cfg.stem_channels, cfg.in_channels, 3, 3, rng);
  int in_c = cfg.stem_channels;
  for (size_t li = 0; li < cfg.layer_channels.size(); ++li) {
    const int out_c = cfg.layer_channels[li];
    std::vector<BlockParams<S>> blocks;
    for (int bi = 0; bi < cfg.blocks_per_layer; ++bi) {
      const std::string base = "enc.l" + std::to_string(li) + ".b" + std::to_string(bi);
      BlockParams<S> blk;
      blk.conv1 = detail::init_conv(store, base + ".c1", out_c, in_c, 3, 3, rng);
      blk.conv2 = detail::init_conv(store, base + ".c2", out_c, out_c, 3, 3, rng);
      if (in_c != out_c) {
        blk.proj = detail::init_conv(store, base + ".proj", out_c, in_c, 1, 1, rng);
        blk.has_proj = true;
      }
      in_c = out_c;
      blocks.push_back(std::move(blk));
    }
    p.layers.push_back(std::move(blocks));
  }
  int cat_c = 0;
  for (int c : cfg.layer_channels) cat_c += c;
  p.fuse1 = detail::init_conv(store, "enc.fuse1", cfg.fuse_channels[0], cat_c, 3, 3, rng);
  p.fuse2 = detail::init_conv(store, "enc.fuse2", cfg.fuse_channels[1], cfg.fuse_channels[0], 1, 1,
                              rng);
  const int d = cfg.out_dim, dp = cfg.head_dim();
  for (int ai = 0; ai < cfg.attn_layers; ++ai) {
    AttentionLayerParams<S> lp;
    const std::string base = "enc.attn" + std::to_string(ai);
    for (int hj = 0; hj < cfg.attn_heads; ++hj) {
      lp.q_proj.push_back(
          store.add(base + ".h" + std::to_string(hj) + ".q", fanin_uniform<S>({dp, d}, d, rng)));
      lp.v_proj.push_back(
          store.add(base + ".h" + std::to_string(hj) + ".v", fanin_uniform<S>({dp, d}, d, rng)));
    }
    if (mode == InitMode::kRandomAll) {
      lp.out_w = store.add(base + ".out.w", fanin_uniform<S>({d, d}, d, rng));
      lp.out_b = store.add(base + ".out.b", fanin_uniform<S>({d}, d, rng));
    } else {
      // zero start: each attention layer begins as the identity (with residual)
      lp.out_w = store.add(base + ".out.w", Tensor<S>::zeros({d, d}));
      lp.out_b = store.add(base + ".out.b", Tensor<S>::zeros({d}));
    }
    p.attn.push_back(std::move(lp));
  }
  return p;
}

namespace detail {

// one MxM patch attending to its 3x3 patch neighborhood
template <typename S>
Tensor<S> attend_patch(const Tensor<S>& padded, const AttentionLayerParams<S>& lp, int py, int px,
                       int m, int n_heads, S scale) {
  Tensor<S> q_mat = patch_matrix(padded, py, px, m);
  std::vector<Tensor<S>> hood;
  hood.reserve(9);
  for (int dy = -1; dy <= 1; ++dy)
    for (int dx = -1; dx <= 1; ++dx) hood.push_back(patch_matrix(padded, py + dy, px + dx, m));
  Tensor<S> v_mat = concat(hood, 0);  // [9*M*M, d]
  std::vector<Tensor<S>> heads;
  heads.reserve(static_cast<size_t>(n_heads));
  for (int j = 0; j < n_heads; ++j) {
    Tensor<S> qp = linear(q_mat, lp.q_proj[static_cast<size_t>(j)], {});
    Tensor<S> vp = linear(v_mat, lp.v_proj[static_cast<size_t>(j)], {});
    Tensor<S> scores = mul_scalar(matmul(qp, transpose2d(vp)), scale);
    Tensor<S> attn = softmax(scores, 1);
    heads.push_back(matmul(attn, vp));
  }
  return linear(concat(heads, 1), lp.out_w, lp.out_b);
}

}  // namespace detail

// Windowed attention over non-overlapping MxM patches, Applied layer by
// layer; each layer reads a frozen snapshot of its input, so the patch
// processing order (exposed for testing) cannot change the result.
template <typename S>
Tensor<S> contextual_attention(Tensor<S> fmap, const std::vector<AttentionLayerParams<S>>& layers,
                               int m, int n_heads, bool residual = true,
                               const std::vector<int>& order = {}) {
  if (fmap.rank() != 3)
    throw ShapeError("contextual_attention: feature map rank != 3, got " +
                     shape_str(fmap.shape()));
  const int d = fmap.dim(0);
  if (d % n_heads != 0)
    throw ShapeError("contextual_attention: d " + std::to_string(d) +
                     " not divisible by heads " + std::to_string(n_heads));
  const S scale = S(1) / static_cast<S>(std::sqrt(static_cast<double>(d / n_heads)));
  Tensor<S> x = fmap;
  for (const auto& lp : layers) {
    const int h = x.dim(1), w = x.dim(2);
    const int pad_b = (m - h % m) % m, pad_r = (m - w % m) % m;
    Tensor<S> padded = (pad_b || pad_r) ? reflect_pad2d(x, pad_b, pad_r) : x;
    const int ph = padded.dim(1) / m, pw = padded.dim(2) / m;
    std::vector<Tensor<S>> outputs(static_cast<size_t>(ph) * pw);
    std::vector<int> idx;
    if (order.empty()) {
      idx.resize(outputs.size());
      for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
    } else {
      if (order.size() != outputs.size())
        throw ShapeError("contextual_attention: order must list every patch");
      idx = order;
    }
    for (int i : idx) {
      const int py = i / pw, px = i % pw;
      outputs[static_cast<size_t>(i)] = detail::attend_patch(padded, lp, py, px, m, n_heads, scale);
    }
    Tensor<S> out = assemble_patches(outputs, ph, pw, m);
    if (pad_b || pad_r) out = narrow(narrow(out, 1, 0, h), 2, 0, w);
    x = residual ? add(x, out) : out;
  }
  return x;
}

namespace detail {

template <typename S>
Tensor<S> residual_block(Tensor<S> x, const BlockParams<S>& blk, S eps) {
  Tensor<S> y = relu(instance_norm(conv2d(x, blk.conv1.w, blk.conv1.b, 1, 1), eps));
  y = instance_norm(conv2d(y, blk.conv2.w, blk.conv2.b, 1, 1), eps);
  Tensor<S> skip = blk.has_proj ? conv2d(x, blk.proj.w, blk.proj.b, 1, 0) : x;
  return relu(add(skip, y));
}

}  // namespace detail

// Residual CNN followed by contextual attention; output [d, H/s, W/s].
template <typename S>
FeatureMap<S> encode_frame(Tensor<S> frame, const EncoderConfig& cfg,
                           const EncoderParams<S>& params) {
  cfg.validate();
  if (frame.rank() != 3 || frame.dim(0) != cfg.in_channels)
    throw ShapeError("encode_frame: expected [" + std::to_string(cfg.in_channels) +
                     ",H,W], got " + shape_str(frame.shape()));
  const int h = frame.dim(1), w = frame.dim(2), s = cfg.downsample;
  if (h % s != 0 || w % s != 0)
    throw ShapeError("encode_frame: extents " + std::to_string(h) + "x" + std::to_string(w) +
                     " not divisible by stride " + std::to_string(s));
  const S eps = static_cast<S>(cfg.norm_eps);

  Tensor<S> x = reshape(frame, {1, cfg.in_channels, h, w});
  x = relu(instance_norm(conv2d(x, params.stem.w, params.stem.b, 1, 1), eps));
  int cum = 1;
  if (cum < s) {
    x = avg_pool2d(x, 2);
    cum *= 2;
  }
  std::vector<Tensor<S>> taps;
  std::vector<int> tap_stride;
  for (size_t li = 0; li < params.layers.size(); ++li) {
    if (cum < s) {
      x = avg_pool2d(x, 2);
      cum *= 2;
    }
    for (const auto& blk : params.layers[li]) x = detail::residual_block(x, blk, eps);
    taps.push_back(x);
    tap_stride.push_back(cum);
  }
  // bring every tap to the final stride by average pooling, then fuse
  std::vector<Tensor<S>> pooled;
  for (size_t i = 0; i < taps.size(); ++i) {
    const int ratio = s / tap_stride[i];
    pooled.push_back(ratio > 1 ? avg_pool2d(taps[i], ratio) : taps[i]);
  }
  Tensor<S> cat = pooled.size() > 1 ? concat(pooled, 1) : pooled[0];
  Tensor<S> z = relu(instance_norm(conv2d(cat, params.fuse1.w, params.fuse1.b, 1, 1), eps));
  z = conv2d(z, params.fuse2.w, params.fuse2.b, 1, 0);
  Tensor<S> fmap = reshape(z, {cfg.out_dim, h / s, w / s});
  if (cfg.use_attention && !params.attn.empty())
    fmap = contextual_attention(fmap, params.attn, cfg.patch_size, cfg.attn_heads,
                                cfg.attn_residual);
  FeatureMap<S> out;
  out.data = fmap;
  out.stride = s;
  return out;
}

}  // namespace otrack
