#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "oracles.hpp"
#include "smamba/model.hpp"
#include "test_util.hpp"

using namespace smamba;
using testutil::random_array;

namespace {

ModelConfig tiny_config(VcVariant vc = VcVariant::BiMamba, TdVariant td = TdVariant::Ffn) {
  ModelConfig cfg;
  cfg.lookback = 8;
  cfg.horizon = 4;
  cfg.variates = 3;
  cfg.token_width = 8;
  cfg.n_layers = 1;
  cfg.ssm = SSMConfig{.token_width = 8, .state_dim = 2, .expand = 2, .conv_kernel = 2};
  cfg.ffn_hidden = 16;
  cfg.vc = vc;
  cfg.td = td;
  cfg.n_heads = 2;
  cfg.seed = 99;
  return cfg;
}

template <typename S>
Array<S> forward_plain(SMambaModel<S>& model, const Array<S>& u_in) {
  Tape<S> tape;
  Binder<S> binder(tape, false);
  Var<S> out = model.run(tape, binder, tape.leaf(u_in));
  return out.value();
}

Array<double> permute_variates(const Array<double>& u, const std::vector<std::size_t>& perm) {
  const std::size_t B = u.shape[0], R = u.shape[1], V = u.shape[2];
  Array<double> out(u.shape);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t v = 0; v < V; ++v)
        out[(b * R + r) * V + v] = u[(b * R + r) * V + perm[v]];
  return out;
}

// Full-model reference assembled from the plain-array oracles.
Array<double> model_ref(SMambaModel<double>& m, const Array<double>& u_in) {
  const ModelConfig& cfg = m.config;
  const std::size_t B = u_in.shape[0], L = cfg.lookback, V = u_in.shape[2];
  const std::size_t D = cfg.token_width, T = cfg.horizon;
  SSMConfig ssm = cfg.ssm;
  ssm.token_width = D;

  Array<double> byv({B * V, L});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t v = 0; v < V; ++v)
      for (std::size_t l = 0; l < L; ++l)
        byv[(b * V + v) * L + l] = u_in[(b * L + l) * V + v];
  Array<double> tok = oracles::matmul_ref(byv, m.tokenizer_w);
  Array<double> u({B, V, D});
  for (std::size_t i = 0; i < B * V; ++i)
    for (std::size_t d = 0; d < D; ++d) u[i * D + d] = tok[i * D + d] + m.tokenizer_b[d];

  for (auto& layer : m.layers) {
    if (cfg.vc == VcVariant::BiMamba)
      u = oracles::bidirectional_ref(layer.fwd, layer.bwd, u, ssm);
    if (cfg.td == TdVariant::Ffn) {
      Array<double> h =
          oracles::layer_norm_ref(u, layer.norm1_gain, layer.norm1_bias, kLayerNormEps);
      Array<double> f1 = oracles::matmul_ref(Array<double>({B * V, D}, h.data), layer.ffn_w1);
      const std::size_t H = cfg.ffn_hidden;
      for (std::size_t i = 0; i < B * V; ++i)
        for (std::size_t j = 0; j < H; ++j)
          f1[i * H + j] = oracles::silu_ref(f1[i * H + j] + layer.ffn_b1[j]);
      Array<double> f2 = oracles::matmul_ref(f1, layer.ffn_w2);
      for (std::size_t i = 0; i < B * V; ++i)
        for (std::size_t d = 0; d < D; ++d) f2[i * D + d] += layer.ffn_b2[d];
      Array<double> back({B, V, D}, f2.data);
      if (cfg.ffn_residual)
        for (std::size_t i = 0; i < back.numel(); ++i) back[i] += u[i];
      u = oracles::layer_norm_ref(back, layer.norm2_gain, layer.norm2_bias, kLayerNormEps);
    }
  }

  Array<double> proj =
      oracles::matmul_ref(Array<double>({B * V, D}, u.data), m.projector_w);
  Array<double> out({B, T, V});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t v = 0; v < V; ++v)
      for (std::size_t t = 0; t < T; ++t)
        out[(b * T + t) * V + v] = proj[(b * V + v) * T + t] + m.projector_b[t];
  return out;
}

}  // namespace

TEST_CASE("tokenize hand example and equivariance") {
  Tape<double> t;
  // L=2, D=1, weights [[1],[1]], one variate [3,4] -> token [7]
  auto w = t.leaf(Array<double>({2, 1}, {1, 1}));
  auto b = t.leaf(Array<double>({1}));
  auto u = t.leaf(Array<double>({1, 2, 1}, {3, 4}));
  auto tok = tokenize(u, w, b);
  CHECK(tok.value()[0] == 7.0);

  // permuting variates permutes tokens identically
  std::mt19937_64 rng(21);
  Array<double> x = random_array({2, 5, 4}, rng);
  std::vector<std::size_t> perm{2, 0, 3, 1};
  Tape<double> t2;
  auto w2 = t2.leaf(random_array({5, 3}, rng));
  auto b2 = t2.leaf(random_array({3}, rng));
  auto tok_all = tokenize(t2.leaf(x), w2, b2);
  auto tok_perm = tokenize(t2.leaf(permute_variates(x, perm)), w2, b2);
  for (std::size_t b_ = 0; b_ < 2; ++b_)
    for (std::size_t v = 0; v < 4; ++v)
      for (std::size_t d = 0; d < 3; ++d)
        CHECK(tok_perm.value()[(b_ * 4 + v) * 3 + d] ==
              tok_all.value()[(b_ * 4 + perm[v]) * 3 + d]);

  // zero input, zero bias -> zero tokens
  auto tok0 = tokenize(t2.leaf(Array<double>({1, 5, 2})), w2, b2);
  for (std::size_t v = 0; v < 2; ++v)
    for (std::size_t d = 0; d < 3; ++d)
      CHECK(tok0.value()[v * 3 + d] == b2.value()[d]);
}

TEST_CASE("ffn td layer shape, constant case, and composition oracle") {
  ModelConfig cfg = tiny_config(VcVariant::None, TdVariant::Ffn);
  auto model = SMambaModel<double>::init(cfg);
  std::mt19937_64 rng(5);

  Tape<double> t;
  Binder<double> binder(t, false);
  auto bound = model.bind(binder);
  Array<double> u = random_array({2, 3, 8}, rng);
  auto out = ffn_td_layer(t.leaf(u), bound.layers[0], false);
  CHECK(out.shape() == Shape{2, 3, 8});

  // constant tokens + zero FFN weights: both norms see constant rows
  auto zmodel = SMambaModel<double>::init(cfg);
  zmodel.layers[0].ffn_w1 = Array<double>({8, 16});
  zmodel.layers[0].ffn_w2 = Array<double>({16, 8});
  Tape<double> t2;
  Binder<double> b2(t2, false);
  auto zb = zmodel.bind(b2);
  auto zout = ffn_td_layer(t2.leaf(Array<double>::full({1, 2, 8}, 3.25)), zb.layers[0], false);
  for (double v : zout.value().data) CHECK(v == 0.0);  // gains*0 + zero biases

  // random tiny instance equals the five-stage oracle composition
  Array<double> h = oracles::layer_norm_ref(u, model.layers[0].norm1_gain,
                                            model.layers[0].norm1_bias, kLayerNormEps);
  Array<double> f1 = oracles::matmul_ref(Array<double>({6, 8}, h.data), model.layers[0].ffn_w1);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 16; ++j)
      f1[i * 16 + j] = oracles::silu_ref(f1[i * 16 + j] + model.layers[0].ffn_b1[j]);
  Array<double> f2 = oracles::matmul_ref(f1, model.layers[0].ffn_w2);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t d = 0; d < 8; ++d) f2[i * 8 + d] += model.layers[0].ffn_b2[d];
  Array<double> expect = oracles::layer_norm_ref(Array<double>({2, 3, 8}, f2.data),
                                                 model.layers[0].norm2_gain,
                                                 model.layers[0].norm2_bias, kLayerNormEps);
  for (std::size_t i = 0; i < expect.numel(); ++i)
    CHECK(std::fabs(out.value()[i] - expect[i]) < 1e-12);
}

TEST_CASE("attention layer: single variate reduces to value path plus residual") {
  ModelConfig cfg = tiny_config(VcVariant::Attention, TdVariant::Ffn);
  auto model = SMambaModel<double>::init(cfg);
  std::mt19937_64 rng(11);
  Array<double> u = random_array({1, 1, 8}, rng);

  Tape<double> t;
  Binder<double> binder(t, false);
  auto bound = model.bind(binder);
  auto out = attention_vc_layer(t.leaf(u), bound.layers[0].attn, cfg.n_heads);

  Array<double> vproj = oracles::matmul_ref(Array<double>({1, 8}, u.data),
                                            model.layers[0].attn.w_v);
  Array<double> oproj = oracles::matmul_ref(vproj, model.layers[0].attn.w_o);
  for (std::size_t d = 0; d < 8; ++d)
    CHECK(out.value()[d] == doctest::Approx(u[d] + oproj[d]).epsilon(1e-12));
}

TEST_CASE("attention layer is permutation-equivariant") {
  ModelConfig cfg = tiny_config(VcVariant::Attention, TdVariant::Ffn);
  auto model = SMambaModel<double>::init(cfg);
  std::mt19937_64 rng(13);
  Array<double> u = random_array({2, 5, 8}, rng);
  std::vector<std::size_t> perm{3, 1, 4, 0, 2};

  Tape<double> t;
  Binder<double> binder(t, false);
  auto bound = model.bind(binder);
  auto base = attention_vc_layer(t.leaf(u), bound.layers[0].attn, cfg.n_heads);
  Array<double> up(u.shape);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t v = 0; v < 5; ++v)
      for (std::size_t d = 0; d < 8; ++d)
        up[(b * 5 + v) * 8 + d] = u[(b * 5 + perm[v]) * 8 + d];
  auto permuted = attention_vc_layer(t.leaf(up), bound.layers[0].attn, cfg.n_heads);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t v = 0; v < 5; ++v)
      for (std::size_t d = 0; d < 8; ++d)
        CHECK(std::fabs(permuted.value()[(b * 5 + v) * 8 + d] -
                        base.value()[(b * 5 + perm[v]) * 8 + d]) < 1e-12);
}

TEST_CASE("forward output shape and determinism") {
  for (VcVariant vc : {VcVariant::BiMamba, VcVariant::Attention, VcVariant::None})
    for (TdVariant td : {TdVariant::Ffn, TdVariant::None}) {
      auto model = SMambaModel<double>::init(tiny_config(vc, td));
      std::mt19937_64 rng(3);
      Array<double> u = random_array({2, 8, 3}, rng);
      Array<double> y1 = forward_plain(model, u);
      CHECK(y1.shape == Shape{2, 4, 3});
      Array<double> y2 = forward_plain(model, u);
      CHECK(y1.data == y2.data);
    }
}

TEST_CASE("forward rejects extent mismatch") {
  auto model = SMambaModel<double>::init(tiny_config());
  Tape<double> t;
  Binder<double> binder(t, false);
  CHECK_THROWS_AS((void)model.run(t, binder, t.leaf(Array<double>({2, 5, 3}))), DimError);
}

TEST_CASE("non-finite intermediates raise a compute error naming the layer") {
  auto model = SMambaModel<double>::init(tiny_config(VcVariant::None, TdVariant::None));
  model.tokenizer_w = Array<double>::full({8, 8}, 1e308);
  Tape<double> t;
  Binder<double> binder(t, false);
  Array<double> big = Array<double>::full({1, 8, 3}, 1e10);
  try {
    (void)model.run(t, binder, t.leaf(big));
    FAIL("expected ComputeError");
  } catch (const ComputeError& e) {
    CHECK(std::string(e.what()).find("tokenizer") != std::string::npos);
  }
}

TEST_CASE("vc=none td=none collapses to a per-variate affine map") {
  ModelConfig cfg = tiny_config(VcVariant::None, TdVariant::None);
  auto model = SMambaModel<double>::init(cfg);
  std::mt19937_64 rng(17);
  Array<double> u = random_array({1, 8, 2}, rng);

  Array<double> got = forward_plain(model, u);
  // projector(tokenizer(u)) computed by hand per variate
  for (std::size_t v = 0; v < 2; ++v) {
    std::vector<double> tok(8, 0.0);
    for (std::size_t d = 0; d < 8; ++d) {
      double acc = model.tokenizer_b[d];
      for (std::size_t l = 0; l < 8; ++l)
        acc += u[l * 2 + v] * model.tokenizer_w[l * 8 + d];
      tok[d] = acc;
    }
    for (std::size_t h = 0; h < 4; ++h) {
      double acc = model.projector_b[h];
      for (std::size_t d = 0; d < 8; ++d) acc += tok[d] * model.projector_w[d * 4 + h];
      CHECK(std::fabs(got[h * 2 + v] - acc) < 1e-12);
    }
  }
}

TEST_CASE("vc=none td=none model is linear in its input (superposition)") {
  ModelConfig cfg = tiny_config(VcVariant::None, TdVariant::None);
  auto model = SMambaModel<double>::init(cfg);
  std::mt19937_64 rng(19);
  Array<double> u1 = random_array({1, 8, 3}, rng);
  Array<double> u2 = random_array({1, 8, 3}, rng);
  const double alpha = 1.7, beta = -0.6;
  Array<double> mix({1, 8, 3});
  for (std::size_t i = 0; i < mix.numel(); ++i) mix[i] = alpha * u1[i] + beta * u2[i];

  Array<double> f_mix = forward_plain(model, mix);
  Array<double> f1 = forward_plain(model, u1);
  Array<double> f2 = forward_plain(model, u2);
  Array<double> f0 = forward_plain(model, Array<double>({1, 8, 3}));
  for (std::size_t i = 0; i < f_mix.numel(); ++i) {
    const double expect = alpha * f1[i] + beta * f2[i] - (alpha + beta - 1.0) * f0[i];
    CHECK(std::fabs(f_mix[i] - expect) < 1e-9);
  }
}

TEST_CASE("variate-permutation equivariance by variant") {
  std::mt19937_64 rng(23);
  Array<double> u = random_array({2, 8, 5}, rng);
  std::vector<std::size_t> perm{4, 2, 0, 3, 1};
  Array<double> up = permute_variates(u, perm);

  auto check_equivariant = [&](VcVariant vc, double tol, bool expect_hold) {
    ModelConfig cfg = tiny_config(vc, TdVariant::Ffn);
    cfg.variates = 5;
    auto model = SMambaModel<double>::init(cfg);
    Array<double> y = forward_plain(model, u);
    Array<double> yp = forward_plain(model, up);
    double worst = 0.0;
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t t = 0; t < 4; ++t)
        for (std::size_t v = 0; v < 5; ++v)
          worst = std::max(worst, std::fabs(yp[(b * 4 + t) * 5 + v] -
                                            y[(b * 4 + t) * 5 + perm[v]]));
    if (expect_hold)
      CHECK(worst <= tol);
    else
      CHECK(worst > 1e-6);  // the scan is order-sensitive
  };

  check_equivariant(VcVariant::None, 0.0, true);
  check_equivariant(VcVariant::Attention, 1e-12, true);
  check_equivariant(VcVariant::BiMamba, 0.0, false);
}

TEST_CASE("full forward matches the layer-by-layer oracle composition") {
  ModelConfig cfg = tiny_config(VcVariant::BiMamba, TdVariant::Ffn);
  auto model = SMambaModel<double>::init(cfg);
  std::mt19937_64 rng(43);
  Array<double> u = random_array({2, 8, 3}, rng);
  Array<double> got = forward_plain(model, u);
  Array<double> expect = model_ref(model, u);
  REQUIRE(got.shape == expect.shape);
  for (std::size_t i = 0; i < got.numel(); ++i)
    CHECK(std::fabs(got[i] - expect[i]) < 1e-10);
}

TEST_CASE("linear baseline examples") {
  // identity weights with T == L repeat the lookback
  LinearBaseline<double> ident;
  ident.lookback = 3;
  ident.horizon = 3;
  ident.weight = Array<double>({3, 3});
  for (std::size_t i = 0; i < 3; ++i) ident.weight[i * 3 + i] = 1.0;
  ident.bias = Array<double>({3});
  std::mt19937_64 rng(29);
  Array<double> u = random_array({1, 3, 2}, rng);
  Tape<double> t;
  Binder<double> binder(t, false);
  auto y = ident.run(t, binder, t.leaf(u));
  for (std::size_t i = 0; i < u.numel(); ++i)
    CHECK(y.value()[i] == doctest::Approx(u[i]).epsilon(1e-15));

  // zero weights, bias b -> constant forecast b
  LinearBaseline<double> flat;
  flat.lookback = 3;
  flat.horizon = 2;
  flat.weight = Array<double>({3, 2});
  flat.bias = Array<double>({2}, {5.0, -1.0});
  Tape<double> t2;
  Binder<double> b2(t2, false);
  auto yf = flat.run(t2, b2, t2.leaf(u));
  for (std::size_t tt = 0; tt < 2; ++tt)
    for (std::size_t v = 0; v < 2; ++v)
      CHECK(yf.value()[tt * 2 + v] == flat.bias[tt]);
}

TEST_CASE("least-squares weights recover a noiseless linear trend") {
  // windows of a pure trend s(t) = a + b*t; solve the normal equations for
  // the shared [L+1] -> T map and check the forward extrapolates exactly.
  const std::size_t L = 4, T = 2;
  std::vector<double> series(32);
  for (std::size_t i = 0; i < series.size(); ++i) series[i] = 0.7 + 0.3 * static_cast<double>(i);

  const std::size_t n = series.size() - L - T + 1;
  const std::size_t P = L + 1;  // lookback plus intercept
  // normal equations X^T X w = X^T y per horizon step
  std::vector<double> xtx(P * P, 0.0), xty(P * T, 0.0);
  for (std::size_t w = 0; w < n; ++w) {
    std::vector<double> row(P, 1.0);
    for (std::size_t l = 0; l < L; ++l) row[l] = series[w + l];
    for (std::size_t i = 0; i < P; ++i) {
      for (std::size_t j = 0; j < P; ++j) xtx[i * P + j] += row[i] * row[j];
      for (std::size_t h = 0; h < T; ++h) xty[i * T + h] += row[i] * series[w + L + h];
    }
  }
  // ridge-stabilized Gaussian elimination (trend windows are collinear)
  for (std::size_t i = 0; i < P; ++i) xtx[i * P + i] += 1e-9;
  for (std::size_t col = 0; col < P; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < P; ++r)
      if (std::fabs(xtx[r * P + col]) > std::fabs(xtx[piv * P + col])) piv = r;
    for (std::size_t j = 0; j < P; ++j) std::swap(xtx[col * P + j], xtx[piv * P + j]);
    for (std::size_t h = 0; h < T; ++h) std::swap(xty[col * T + h], xty[piv * T + h]);
    const double d = xtx[col * P + col];
    for (std::size_t r = 0; r < P; ++r) {
      if (r == col) continue;
      const double f = xtx[r * P + col] / d;
      for (std::size_t j = 0; j < P; ++j) xtx[r * P + j] -= f * xtx[col * P + j];
      for (std::size_t h = 0; h < T; ++h) xty[r * T + h] -= f * xty[col * T + h];
    }
  }

  LinearBaseline<double> m;
  m.lookback = L;
  m.horizon = T;
  m.weight = Array<double>({L, T});
  m.bias = Array<double>({T});
  for (std::size_t l = 0; l < L; ++l)
    for (std::size_t h = 0; h < T; ++h)
      m.weight[l * T + h] = xty[l * T + h] / xtx[l * P + l];
  for (std::size_t h = 0; h < T; ++h) m.bias[h] = xty[L * T + h] / xtx[L * P + L];

  Array<double> window({1, L, 1});
  for (std::size_t l = 0; l < L; ++l) window[l] = series[20 + l];
  Tape<double> t;
  Binder<double> binder(t, false);
  auto y = m.run(t, binder, t.leaf(window));
  for (std::size_t h = 0; h < T; ++h)
    CHECK(y.value()[h] == doctest::Approx(series[20 + L + h]).epsilon(1e-6));
}

TEST_CASE("persistence baseline examples") {
  Array<double> constant = Array<double>::full({1, 4, 2}, 3.0);
  Array<double> f = persistence_forecast(constant, 3);
  for (double v : f.data) CHECK(v == 3.0);

  Array<double> u({1, 2, 2}, {0, 0, 1, 2});
  Array<double> rep = persistence_forecast(u, 3);
  CHECK(rep.shape == Shape{1, 3, 2});
  for (std::size_t t = 0; t < 3; ++t) {
    CHECK(rep[t * 2 + 0] == 1.0);
    CHECK(rep[t * 2 + 1] == 2.0);
  }

  // unit-slope trend, T=4: persistence MSE = mean(1,4,9,16) = 7.5
  Array<double> trend({1, 5, 1}, {0, 1, 2, 3, 4});
  Array<double> pred = persistence_forecast(trend, 4);
  double mse = 0;
  for (std::size_t t = 0; t < 4; ++t) {
    const double target = 5.0 + static_cast<double>(t);
    mse += (pred[t] - target) * (pred[t] - target);
  }
  mse /= 4.0;
  CHECK(mse == doctest::Approx(7.5).epsilon(1e-12));
}

TEST_CASE("parameter counting") {
  auto lin = LinearBaseline<double>::init(96, 96, 1);
  CHECK(count_parameters(lin) == 96 * 96 + 96);

  ModelConfig one = tiny_config();
  one.n_layers = 1;
  ModelConfig two = tiny_config();
  two.n_layers = 2;
  auto m1 = SMambaModel<double>::init(one);
  auto m2 = SMambaModel<double>::init(two);
  const std::size_t tok_proj = (8 * 8 + 8) + (8 * 4 + 4);
  CHECK(count_parameters(m2) - tok_proj == 2 * (count_parameters(m1) - tok_proj));
}
