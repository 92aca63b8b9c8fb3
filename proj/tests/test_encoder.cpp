#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>

#include "otrack/encoder.hpp"
#include "otrack/grad_check.hpp"

using namespace otrack;

namespace {

Tensor<double> rand_t(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor<double>::from(std::move(shape), std::move(v));
}

EncoderConfig tiny_cfg() {
  EncoderConfig c;
  c.in_channels = 2;
  c.stem_channels = 3;
  c.layer_channels = {3, 4};
  c.blocks_per_layer = 1;
  c.fuse_channels = {6, 4};
  c.out_dim = 4;
  c.downsample = 2;
  c.attn_layers = 1;
  c.attn_heads = 1;
  c.patch_size = 2;
  return c;
}

// dense reference: materializes Q, V, the softmax and projections explicitly
std::vector<double> attention_layer_oracle(const Tensor<double>& fmap,
                                           const AttentionLayerParams<double>& lp, int m,
                                           int n_heads, bool residual) {
  const int d = fmap.dim(0), h = fmap.dim(1), w = fmap.dim(2);
  REQUIRE(h % m == 0);
  REQUIRE(w % m == 0);
  const int ph = h / m, pw = w / m, dp = d / n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dp));
  std::vector<double> out(static_cast<size_t>(d) * h * w, 0.0);
  auto cell = [&](int c, int y, int x) -> double {
    if (y < 0 || y >= h || x < 0 || x >= w) return 0.0;
    return fmap.at({c, y, x});
  };
  for (int py = 0; py < ph; ++py)
    for (int px = 0; px < pw; ++px) {
      std::vector<std::vector<double>> q_rows, v_rows;
      for (int dy = 0; dy < m; ++dy)
        for (int dx = 0; dx < m; ++dx) {
          std::vector<double> row(static_cast<size_t>(d));
          for (int c = 0; c < d; ++c)
            row[static_cast<size_t>(c)] = cell(c, py * m + dy, px * m + dx);
          q_rows.push_back(row);
        }
      for (int ny = -1; ny <= 1; ++ny)
        for (int nx = -1; nx <= 1; ++nx)
          for (int dy = 0; dy < m; ++dy)
            for (int dx = 0; dx < m; ++dx) {
              std::vector<double> row(static_cast<size_t>(d));
              for (int c = 0; c < d; ++c)
                row[static_cast<size_t>(c)] = cell(c, (py + ny) * m + dy, (px + nx) * m + dx);
              v_rows.push_back(row);
            }
      const int nq = m * m, nv = 9 * m * m;
      std::vector<double> h_cat(static_cast<size_t>(nq) * d, 0.0);
      for (int j = 0; j < n_heads; ++j) {
        auto project = [&](const std::vector<std::vector<double>>& rows,
                           const Tensor<double>& wmat) {
          std::vector<std::vector<double>> out_r;
          for (const auto& r : rows) {
            std::vector<double> pr(static_cast<size_t>(dp), 0.0);
            for (int a = 0; a < dp; ++a)
              for (int b = 0; b < d; ++b)
                pr[static_cast<size_t>(a)] += wmat.at({a, b}) * r[static_cast<size_t>(b)];
            out_r.push_back(pr);
          }
          return out_r;
        };
        auto qp = project(q_rows, lp.q_proj[static_cast<size_t>(j)]);
        auto vp = project(v_rows, lp.v_proj[static_cast<size_t>(j)]);
        for (int r = 0; r < nq; ++r) {
          std::vector<double> scores(static_cast<size_t>(nv));
          double mx = -1e300;
          for (int cidx = 0; cidx < nv; ++cidx) {
            double acc = 0;
            for (int a = 0; a < dp; ++a)
              acc += qp[static_cast<size_t>(r)][static_cast<size_t>(a)] *
                     vp[static_cast<size_t>(cidx)][static_cast<size_t>(a)];
            scores[static_cast<size_t>(cidx)] = acc * scale;
            mx = std::max(mx, scores[static_cast<size_t>(cidx)]);
          }
          double denom = 0;
          for (auto& sv : scores) {
            sv = std::exp(sv - mx);
            denom += sv;
          }
          double row_sum = 0;
          for (auto& sv : scores) {
            sv /= denom;
            row_sum += sv;
          }
          CHECK(std::abs(row_sum - 1.0) < 1e-6);  // attention weights sum to one
          for (int a = 0; a < dp; ++a) {
            double acc = 0;
            for (int cidx = 0; cidx < nv; ++cidx)
              acc += scores[static_cast<size_t>(cidx)] *
                     vp[static_cast<size_t>(cidx)][static_cast<size_t>(a)];
            h_cat[static_cast<size_t>(r) * d + j * dp + a] = acc;
          }
        }
      }
      for (int r = 0; r < nq; ++r) {
        const int yy = py * m + r / m, xx = px * m + r % m;
        for (int c = 0; c < d; ++c) {
          double acc = lp.out_b.at({c});
          for (int b = 0; b < d; ++b)
            acc += lp.out_w.at({c, b}) * h_cat[static_cast<size_t>(r) * d + b];
          if (residual) acc += fmap.at({c, yy, xx});
          out[(static_cast<size_t>(c) * h + yy) * w + xx] = acc;
        }
      }
    }
  return out;
}

AttentionLayerParams<double> identity_layer(int d) {
  AttentionLayerParams<double> lp;
  std::vector<double> eye(static_cast<size_t>(d) * d, 0.0);
  for (int i = 0; i < d; ++i) eye[static_cast<size_t>(i) * d + i] = 1.0;
  lp.q_proj.push_back(Tensor<double>::from({d, d}, eye));
  lp.v_proj.push_back(Tensor<double>::from({d, d}, eye));
  lp.out_w = Tensor<double>::from({d, d}, eye);
  lp.out_b = Tensor<double>::zeros({d});
  return lp;
}

}  // namespace

TEST_CASE("attention identity-projection fixed point on a constant field") {
  const int d = 3, m = 2;
  const double v = 1.7;
  auto fmap = Tensor<double>::full({d, 3 * m, 3 * m}, v);
  auto out = contextual_attention<double>(fmap, {identity_layer(d)}, m, 1, /*residual=*/false);
  CHECK(out.shape() == fmap.shape());
  // the center patch sees nine identical neighborhood patches
  for (int c = 0; c < d; ++c)
    for (int y = m; y < 2 * m; ++y)
      for (int x = m; x < 2 * m; ++x) CHECK(out.at({c, y, x}) == doctest::Approx(v).epsilon(1e-9));
}

TEST_CASE("contextual_attention matches the dense oracle") {
  Rng rng(91);
  for (int trial = 0; trial < 5; ++trial) {
    const int m = 2;
    auto fmap = rand_t(rng, {4, 4, 4});
    AttentionLayerParams<double> lp;
    lp.q_proj = {rand_t(rng, {4, 4})};
    lp.v_proj = {rand_t(rng, {4, 4})};
    lp.out_w = rand_t(rng, {4, 4});
    lp.out_b = rand_t(rng, {4});
    for (bool residual : {false, true}) {
      auto got = contextual_attention<double>(fmap, {lp}, m, 1, residual);
      auto ref = attention_layer_oracle(fmap, lp, m, 1, residual);
      REQUIRE(got.size() == static_cast<int64_t>(ref.size()));
      for (size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(got.data()[i] - ref[i]) < 1e-5);
    }
  }
}

TEST_CASE("contextual_attention multi-head matches the dense oracle") {
  Rng rng(93);
  const int m = 2, heads = 2;
  auto fmap = rand_t(rng, {4, 6, 4});
  AttentionLayerParams<double> lp;
  lp.q_proj = {rand_t(rng, {2, 4}), rand_t(rng, {2, 4})};
  lp.v_proj = {rand_t(rng, {2, 4}), rand_t(rng, {2, 4})};
  lp.out_w = rand_t(rng, {4, 4});
  lp.out_b = rand_t(rng, {4});
  auto got = contextual_attention<double>(fmap, {lp}, m, heads, false);
  auto ref = attention_layer_oracle(fmap, lp, m, heads, false);
  for (size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(got.data()[i] - ref[i]) < 1e-5);
}

TEST_CASE("attention preserves shape, also for non-divisible extents") {
  Rng rng(95);
  for (auto [h, w] : {std::pair{8, 8}, std::pair{6, 10}, std::pair{5, 7}}) {
    auto fmap = rand_t(rng, {4, h, w});
    AttentionLayerParams<double> lp;
    lp.q_proj = {rand_t(rng, {4, 4})};
    lp.v_proj = {rand_t(rng, {4, 4})};
    lp.out_w = rand_t(rng, {4, 4});
    lp.out_b = rand_t(rng, {4});
    auto out = contextual_attention<double>(fmap, {lp}, 4, 1, true);
    CHECK(out.shape() == fmap.shape());
    out.check_finite("attention");
  }
}

TEST_CASE("patch processing order does not change the result") {
  Rng rng(97);
  auto fmap = rand_t(rng, {4, 8, 8});
  AttentionLayerParams<double> lp;
  lp.q_proj = {rand_t(rng, {4, 4})};
  lp.v_proj = {rand_t(rng, {4, 4})};
  lp.out_w = rand_t(rng, {4, 4});
  lp.out_b = rand_t(rng, {4});
  auto a = contextual_attention<double>(fmap, {lp}, 2, 1, true);
  std::vector<int> order(16);
  std::iota(order.begin(), order.end(), 0);
  Rng shuf(1234);
  for (int i = 15; i > 0; --i)
    std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(shuf.uniform_int(i + 1))]);
  auto b = contextual_attention<double>(fmap, {lp}, 2, 1, true, order);
  for (int64_t i = 0; i < a.size(); ++i)
    CHECK(a.data()[static_cast<size_t>(i)] == b.data()[static_cast<size_t>(i)]);
}

TEST_CASE("encode_frame: desk config shape and finiteness on a zero frame") {
  auto cfg = EncoderConfig::desk();
  ParamStore<float> store;
  Rng rng(3);
  auto params = init_encoder<float>(cfg, store, rng);
  auto frame = Tensor<float>::zeros({3, 32, 32});
  auto fm = encode_frame(frame, cfg, params);
  CHECK(fm.data.shape() == Shape{16, 8, 8});
  CHECK(fm.stride == 4);
  fm.data.check_finite("encode_frame");

  CHECK_THROWS_AS(encode_frame(Tensor<float>::zeros({3, 30, 32}), cfg, params), ShapeError);
}

TEST_CASE("encode_frame purity: identical frames give bit-identical maps") {
  auto cfg = EncoderConfig::desk();
  ParamStore<float> store;
  Rng rng(5);
  auto params = init_encoder<float>(cfg, store, rng, InitMode::kRandomAll);
  Rng drng(7);
  std::vector<float> img(3 * 32 * 32);
  for (auto& v : img) v = static_cast<float>(drng.uniform());
  auto f1 = Tensor<float>::from({3, 32, 32}, img);
  auto f2 = Tensor<float>::from({3, 32, 32}, img);
  auto m1 = encode_frame(f1, cfg, params), m2 = encode_frame(f2, cfg, params);
  for (int64_t i = 0; i < m1.data.size(); ++i)
    CHECK(m1.data.data()[static_cast<size_t>(i)] == m2.data.data()[static_cast<size_t>(i)]);
}

TEST_CASE("encoder gradients pass finite differences on every parameter") {
  auto cfg = tiny_cfg();
  ParamStore<double> store;
  Rng rng(11);
  auto params = init_encoder<double>(cfg, store, rng, InitMode::kRandomAll);
  Rng drng(13);
  auto frame = rand_t(drng, {2, 8, 8}, 0.0, 1.0);
  auto w = rand_t(drng, {4, 4, 4});
  std::vector<Tensor<double>> inputs;
  for (const auto& name : store.names()) inputs.push_back(store.get(name));
  auto rep = grad_check(
      [&](std::vector<Tensor<double>>&) {
        auto fm = encode_frame(frame, cfg, params);
        return sum(mul(fm.data, w));
      },
      inputs, 1e-4, 1e-3);
  CHECK_MESSAGE(rep.pass, rep.worst);
}

TEST_CASE("no dead subgraph: every encoder parameter receives nonzero gradient") {
  auto cfg = tiny_cfg();
  ParamStore<double> store;
  Rng rng(17);
  auto params = init_encoder<double>(cfg, store, rng, InitMode::kRandomAll);
  Rng drng(19);
  auto frame = rand_t(drng, {2, 8, 8}, 0.0, 1.0);
  auto w = rand_t(drng, {4, 4, 4});
  {
    Tape<double> tape;
    TapeScope<double> scope(tape);
    auto fm = encode_frame(frame, cfg, params);
    auto loss = sum(mul(fm.data, w));
    tape.backward(loss);
  }
  for (const auto& name : store.names()) {
    auto g = store.get(name).grad();
    bool nonzero = false;
    for (double v : g)
      if (v != 0.0) {
        nonzero = true;
        break;
      }
    CHECK_MESSAGE(nonzero, "parameter ", name, " has zero gradient");
  }
}

TEST_CASE("translation consistency at stride granularity") {
  // content embedded in a wide zero margin so border effects cancel exactly
  EncoderConfig cfg = tiny_cfg();
  cfg.downsample = 4;
  cfg.in_channels = 3;
  ParamStore<float> store;
  Rng rng(23);
  auto params = init_encoder<float>(cfg, store, rng);  // zero-init attention = identity
  const int hw = 128, blob = 16, s = 4;
  Rng content_rng(29);
  std::vector<float> blob_px(static_cast<size_t>(3 * blob * blob));
  for (auto& v : blob_px) v = static_cast<float>(content_rng.uniform());
  auto make_frame = [&](int x0) {
    std::vector<float> img(static_cast<size_t>(3 * hw * hw), 0.0f);
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < blob; ++y)
        for (int x = 0; x < blob; ++x)
          img[(static_cast<size_t>(c) * hw + 56 + y) * hw + x0 + x] =
              blob_px[(static_cast<size_t>(c) * blob + y) * blob + x];
    return Tensor<float>::from({3, hw, hw}, img);
  };
  auto ma = encode_frame(make_frame(52), cfg, params);
  auto mb = encode_frame(make_frame(52 + s), cfg, params);  // shifted one cell right
  const int cells = hw / s;
  double max_diff = 0;
  for (int c = 0; c < cfg.out_dim; ++c)
    for (int y = 8; y < cells - 8; ++y)
      for (int x = 8; x < cells - 9; ++x)
        max_diff = std::max(max_diff,
                            std::abs(static_cast<double>(ma.data.at({c, y, x})) -
                                     static_cast<double>(mb.data.at({c, y, x + 1}))));
  CHECK(max_diff < 1e-4);
}
