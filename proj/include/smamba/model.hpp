#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "smamba/array.hpp"
#include "smamba/errors.hpp"
#include "smamba/ops.hpp"
#include "smamba/ssm.hpp"
#include "smamba/tape.hpp"

// The forecaster: linear tokenization over the lookback, stacked encoder
// layers (inter-variate-correlation encoding + feed-forward temporal
// encoding), and a linear projection to the horizon. Every weight is shared
// across variates, so a trained model applies to any variate count.

namespace smamba {

inline constexpr double kLayerNormEps = 1e-5;

enum class VcVariant { BiMamba, Attention, None };
enum class TdVariant { Ffn, None };

inline std::string to_string(VcVariant v) {
  switch (v) {
    case VcVariant::BiMamba: return "bi_mamba";
    case VcVariant::Attention: return "attention";
    default: return "none";
  }
}
inline std::string to_string(TdVariant v) {
  return v == TdVariant::Ffn ? "ffn" : "none";
}

inline VcVariant vc_from_string(const std::string& s) {
  if (s == "bi_mamba") return VcVariant::BiMamba;
  if (s == "attention") return VcVariant::Attention;
  if (s == "none") return VcVariant::None;
  throw ConfigError("unknown vc variant '" + s + "' (expected bi_mamba|attention|none)");
}
inline TdVariant td_from_string(const std::string& s) {
  if (s == "ffn") return TdVariant::Ffn;
  if (s == "none") return TdVariant::None;
  throw ConfigError("unknown td variant '" + s + "' (expected ffn|none)");
}

struct ModelConfig {
  std::size_t lookback = 96;     // L
  std::size_t horizon = 12;      // T
  std::size_t variates = 8;      // V, recorded for artifact checks
  std::size_t token_width = 128; // D
  std::size_t n_layers = 2;
  SSMConfig ssm{};               // ssm.token_width is kept in sync with token_width
  std::size_t ffn_hidden = 256;
  VcVariant vc = VcVariant::BiMamba;
  TdVariant td = TdVariant::Ffn;
  std::size_t n_heads = 4;       // attention ablation only
  bool ffn_residual = false;
  std::uint64_t seed = 42;

  void validate() const {
    if (lookback < 1 || horizon < 1 || variates < 1 || token_width < 1 || n_layers < 1)
      throw ConfigError("model extents must all be >= 1");
    if (td == TdVariant::Ffn && ffn_hidden < token_width)
      throw ConfigError("ffn_hidden must be >= token_width");
    if (vc == VcVariant::Attention && (n_heads == 0 || token_width % n_heads != 0))
      throw ConfigError("n_heads must divide token_width, got " + std::to_string(n_heads) +
                        " vs " + std::to_string(token_width));
    SSMConfig s = ssm;
    s.token_width = token_width;
    if (vc == VcVariant::BiMamba) s.validate();
  }
};

// ---------------------------------------------------------------------------
// Parameter storage
// ---------------------------------------------------------------------------

template <typename S>
struct AttentionParams {
  Array<S> w_q, w_k, w_v, w_o;  // [D,D] each

  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) {
    fn(prefix + ".w_q", w_q);
    fn(prefix + ".w_k", w_k);
    fn(prefix + ".w_v", w_v);
    fn(prefix + ".w_o", w_o);
  }
};

template <typename S>
struct EncoderLayerParams {
  // vc sub-layer (one of the two sets, per variant)
  MambaBlockParams<S> fwd, bwd;
  AttentionParams<S> attn;
  // td sub-layer
  Array<S> norm1_gain, norm1_bias;
  Array<S> ffn_w1, ffn_b1, ffn_w2, ffn_b2;  // [D,H], [H], [H,D], [D]
  Array<S> norm2_gain, norm2_bias;

  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) {
    if (fwd.w_in.numel()) fwd.visit(prefix + ".vc.fwd", fn);
    if (bwd.w_in.numel()) bwd.visit(prefix + ".vc.bwd", fn);
    if (attn.w_q.numel()) attn.visit(prefix + ".vc.attn", fn);
    if (norm1_gain.numel()) {
      fn(prefix + ".td.norm1_gain", norm1_gain);
      fn(prefix + ".td.norm1_bias", norm1_bias);
      fn(prefix + ".td.ffn_w1", ffn_w1);
      fn(prefix + ".td.ffn_b1", ffn_b1);
      fn(prefix + ".td.ffn_w2", ffn_w2);
      fn(prefix + ".td.ffn_b2", ffn_b2);
      fn(prefix + ".td.norm2_gain", norm2_gain);
      fn(prefix + ".td.norm2_bias", norm2_bias);
    }
  }
};

template <typename S>
struct BoundAttention {
  Var<S> w_q, w_k, w_v, w_o;
};

template <typename S>
struct BoundLayer {
  BoundMambaBlock<S> fwd, bwd;
  BoundAttention<S> attn;
  Var<S> norm1_gain, norm1_bias, ffn_w1, ffn_b1, ffn_w2, ffn_b2, norm2_gain, norm2_bias;
};

template <typename S>
struct BoundModel {
  const ModelConfig* config = nullptr;
  Var<S> tokenizer_w, tokenizer_b;
  std::vector<BoundLayer<S>> layers;
  Var<S> projector_w, projector_b;
};

template <typename S>
struct SMambaModel {
  ModelConfig config;
  Array<S> tokenizer_w;  // [L,D]
  Array<S> tokenizer_b;  // [D]
  std::vector<EncoderLayerParams<S>> layers;
  Array<S> projector_w;  // [D,T]
  Array<S> projector_b;  // [T]

  static SMambaModel init(ModelConfig cfg) {
    cfg.ssm.token_width = cfg.token_width;
    cfg.validate();
    const std::size_t L = cfg.lookback, T = cfg.horizon, D = cfg.token_width;
    std::mt19937_64 rng(cfg.seed);

    SMambaModel m;
    m.config = cfg;
    m.tokenizer_w = uniform_init<S>({L, D}, L, rng);
    m.tokenizer_b = Array<S>({D});
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
      EncoderLayerParams<S> layer;
      if (cfg.vc == VcVariant::BiMamba) {
        layer.fwd = MambaBlockParams<S>::init(cfg.ssm, rng);
        layer.bwd = MambaBlockParams<S>::init(cfg.ssm, rng);
      } else if (cfg.vc == VcVariant::Attention) {
        layer.attn.w_q = uniform_init<S>({D, D}, D, rng);
        layer.attn.w_k = uniform_init<S>({D, D}, D, rng);
        layer.attn.w_v = uniform_init<S>({D, D}, D, rng);
        layer.attn.w_o = uniform_init<S>({D, D}, D, rng);
      }
      if (cfg.td == TdVariant::Ffn) {
        const std::size_t H = cfg.ffn_hidden;
        layer.norm1_gain = Array<S>::full({D}, S(1));
        layer.norm1_bias = Array<S>({D});
        layer.ffn_w1 = uniform_init<S>({D, H}, D, rng);
        layer.ffn_b1 = Array<S>({H});
        layer.ffn_w2 = uniform_init<S>({H, D}, H, rng);
        layer.ffn_b2 = Array<S>({D});
        layer.norm2_gain = Array<S>::full({D}, S(1));
        layer.norm2_bias = Array<S>({D});
      }
      m.layers.push_back(std::move(layer));
    }
    m.projector_w = uniform_init<S>({D, T}, D, rng);
    m.projector_b = Array<S>({T});
    return m;
  }

  template <typename Fn>
  void visit(Fn&& fn) {
    fn("tokenizer.weight", tokenizer_w);
    fn("tokenizer.bias", tokenizer_b);
    for (std::size_t l = 0; l < layers.size(); ++l)
      layers[l].visit("layers." + std::to_string(l), fn);
    fn("projector.weight", projector_w);
    fn("projector.bias", projector_b);
  }

  BoundModel<S> bind(Binder<S>& binder) {
    BoundModel<S> b;
    b.config = &config;
    b.tokenizer_w = binder.bind("tokenizer.weight", tokenizer_w);
    b.tokenizer_b = binder.bind("tokenizer.bias", tokenizer_b);
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const std::string prefix = "layers." + std::to_string(l);
      BoundLayer<S> bl;
      EncoderLayerParams<S>& p = layers[l];
      if (p.fwd.w_in.numel()) {
        bl.fwd = bind_block(binder, prefix + ".vc.fwd", p.fwd);
        bl.bwd = bind_block(binder, prefix + ".vc.bwd", p.bwd);
      }
      if (p.attn.w_q.numel()) {
        bl.attn.w_q = binder.bind(prefix + ".vc.attn.w_q", p.attn.w_q);
        bl.attn.w_k = binder.bind(prefix + ".vc.attn.w_k", p.attn.w_k);
        bl.attn.w_v = binder.bind(prefix + ".vc.attn.w_v", p.attn.w_v);
        bl.attn.w_o = binder.bind(prefix + ".vc.attn.w_o", p.attn.w_o);
      }
      if (p.norm1_gain.numel()) {
        bl.norm1_gain = binder.bind(prefix + ".td.norm1_gain", p.norm1_gain);
        bl.norm1_bias = binder.bind(prefix + ".td.norm1_bias", p.norm1_bias);
        bl.ffn_w1 = binder.bind(prefix + ".td.ffn_w1", p.ffn_w1);
        bl.ffn_b1 = binder.bind(prefix + ".td.ffn_b1", p.ffn_b1);
        bl.ffn_w2 = binder.bind(prefix + ".td.ffn_w2", p.ffn_w2);
        bl.ffn_b2 = binder.bind(prefix + ".td.ffn_b2", p.ffn_b2);
        bl.norm2_gain = binder.bind(prefix + ".td.norm2_gain", p.norm2_gain);
        bl.norm2_bias = binder.bind(prefix + ".td.norm2_bias", p.norm2_bias);
      }
      b.layers.push_back(bl);
    }
    b.projector_w = binder.bind("projector.weight", projector_w);
    b.projector_b = binder.bind("projector.bias", projector_b);
    return b;
  }

  Var<S> run(Tape<S>& tape, Binder<S>& binder, Var<S> u_in) {
    (void)tape;
    BoundModel<S> bound = bind(binder);
    return model_forward(bound, u_in);
  }
};

// ---------------------------------------------------------------------------
// Layer functions
// ---------------------------------------------------------------------------

// U_in: [B,L,V] -> tokens [B,V,D]; shared linear map applied per variate.
template <typename S>
Var<S> tokenize(Var<S> u_in, Var<S> weight, Var<S> bias) {
  const Shape& s = u_in.shape();
  if (s.size() != 3) throw DimError("tokenize expects [B,L,V], got " + shape_str(s));
  const std::size_t B = s[0], L = s[1], V = s[2];
  if (weight.shape()[0] != L)
    throw DimError("tokenizer weight expects lookback " + std::to_string(weight.shape()[0]) +
                   ", input has " + std::to_string(L));
  const std::size_t D = weight.shape()[1];
  Var<S> by_variate = transpose(u_in, 1, 2);  // [B,V,L]
  Var<S> tok = matmul(reshape(by_variate, {B * V, L}), weight);
  return reshape(add(tok, bias), Shape{B, V, D});
}

// LayerNorm -> Linear(D->H) -> SiLU -> Linear(H->D) -> LayerNorm, applied to
// each variate token. No residual by default (optional behind the flag,
// added before the second normalization).
template <typename S>
Var<S> ffn_td_layer(Var<S> u, const BoundLayer<S>& p, bool residual) {
  const Shape& s = u.shape();
  const std::size_t B = s[0], V = s[1], D = s[2];
  Var<S> h = layer_norm(u, p.norm1_gain, p.norm1_bias, S(kLayerNormEps));
  Var<S> f = matmul(reshape(h, {B * V, D}), p.ffn_w1);
  f = silu(add(f, p.ffn_b1));
  f = add(matmul(f, p.ffn_w2), p.ffn_b2);
  Var<S> back = reshape(f, Shape{B, V, D});
  if (residual) back = add(back, u);
  return layer_norm(back, p.norm2_gain, p.norm2_bias, S(kLayerNormEps));
}

// Multi-head scaled dot-product self-attention over the V variate tokens
// (no mask, no positional encoding; variates are unordered) plus residual.
template <typename S>
Var<S> attention_vc_layer(Var<S> u, const BoundAttention<S>& p, std::size_t n_heads) {
  const Shape& s = u.shape();
  const std::size_t B = s[0], V = s[1], D = s[2];
  if (n_heads == 0 || D % n_heads != 0)
    throw DimError("attention heads must divide token width");
  const std::size_t Dh = D / n_heads;

  Var<S> flat = reshape(u, {B * V, D});
  auto heads = [&](Var<S> proj) {
    // [B*V,D] -> [B,V,H,Dh] -> [B,H,V,Dh] -> [B*H,V,Dh]
    Var<S> t4 = transpose(reshape(proj, Shape{B, V, n_heads, Dh}), 1, 2);
    return reshape(t4, Shape{B * n_heads, V, Dh});
  };
  Var<S> q = heads(matmul(flat, p.w_q));
  Var<S> k = heads(matmul(flat, p.w_k));
  Var<S> v = heads(matmul(flat, p.w_v));

  Var<S> scores = scale(bmm(q, transpose(k, 1, 2)),
                        static_cast<S>(1.0 / std::sqrt(static_cast<double>(Dh))));
  Var<S> weights = softmax_last(scores);     // [B*H,V,V]
  Var<S> ctx = bmm(weights, v);              // [B*H,V,Dh]
  Var<S> merged = reshape(transpose(reshape(ctx, Shape{B, n_heads, V, Dh}), 1, 2),
                          Shape{B * V, D});
  Var<S> out = reshape(matmul(merged, p.w_o), Shape{B, V, D});
  return add(u, out);
}

namespace detail {

template <typename S>
Var<S> checked_layer(const std::string& where, const std::function<Var<S>()>& fn) {
  try {
    return fn();
  } catch (const ComputeError& e) {
    throw ComputeError(where + ": " + e.what());
  }
}

}  // namespace detail

// Full forward pass: [B,L,V] -> [B,T,V].
template <typename S>
Var<S> model_forward(const BoundModel<S>& m, Var<S> u_in) {
  const ModelConfig& cfg = *m.config;
  const Shape& s = u_in.shape();
  if (s.size() != 3 || s[1] != cfg.lookback)
    throw DimError("forward expects [B," + std::to_string(cfg.lookback) + ",V], got " +
                   shape_str(s));
  const std::size_t B = s[0], V = s[2], D = cfg.token_width, T = cfg.horizon;

  SSMConfig ssm = cfg.ssm;
  ssm.token_width = D;

  Var<S> u = detail::checked_layer<S>("tokenizer", [&] {
    return tokenize(u_in, m.tokenizer_w, m.tokenizer_b);
  });
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    const BoundLayer<S>& layer = m.layers[l];
    const std::string tag = "layer " + std::to_string(l);
    if (cfg.vc == VcVariant::BiMamba)
      u = detail::checked_layer<S>(tag + " (vc bi_mamba)", [&] {
        return bidirectional_mamba(u, layer.fwd, layer.bwd, ssm);
      });
    else if (cfg.vc == VcVariant::Attention)
      u = detail::checked_layer<S>(tag + " (vc attention)", [&] {
        return attention_vc_layer(u, layer.attn, cfg.n_heads);
      });
    if (cfg.td == TdVariant::Ffn)
      u = detail::checked_layer<S>(tag + " (td ffn)", [&] {
        return ffn_td_layer(u, layer, cfg.ffn_residual);
      });
  }
  Var<S> proj = detail::checked_layer<S>("projector", [&] {
    return add(matmul(reshape(u, {B * V, D}), m.projector_w), m.projector_b);
  });
  return transpose(reshape(proj, Shape{B, V, T}), 1, 2);  // [B,T,V]
}

// ---------------------------------------------------------------------------
// Reference baselines
// ---------------------------------------------------------------------------

// Shared per-variate linear map L->T.
template <typename S>
struct LinearBaseline {
  std::size_t lookback = 0, horizon = 0;
  Array<S> weight;  // [L,T]
  Array<S> bias;    // [T]

  static LinearBaseline init(std::size_t L, std::size_t T, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    LinearBaseline m;
    m.lookback = L;
    m.horizon = T;
    m.weight = uniform_init<S>({L, T}, L, rng);
    m.bias = Array<S>({T});
    return m;
  }

  template <typename Fn>
  void visit(Fn&& fn) {
    fn("linear.weight", weight);
    fn("linear.bias", bias);
  }

  Var<S> run(Tape<S>& tape, Binder<S>& binder, Var<S> u_in) {
    (void)tape;
    Var<S> w = binder.bind("linear.weight", weight);
    Var<S> b = binder.bind("linear.bias", bias);
    const Shape& s = u_in.shape();
    if (s.size() != 3 || s[1] != lookback)
      throw DimError("linear baseline expects [B," + std::to_string(lookback) + ",V]");
    const std::size_t B = s[0], V = s[2];
    Var<S> by_variate = reshape(transpose(u_in, 1, 2), {B * V, lookback});
    Var<S> out = add(matmul(by_variate, w), b);
    return transpose(reshape(out, Shape{B, V, horizon}), 1, 2);
  }
};

// Repeats the last observed row for all T steps. Not trainable.
template <typename S>
Array<S> persistence_forecast(const Array<S>& u_in, std::size_t horizon) {
  if (u_in.rank() != 3) throw DimError("persistence expects [B,L,V]");
  const std::size_t B = u_in.shape[0], L = u_in.shape[1], V = u_in.shape[2];
  Array<S> out({B, horizon, V});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < horizon; ++t)
      for (std::size_t v = 0; v < V; ++v)
        out[(b * horizon + t) * V + v] = u_in[(b * L + (L - 1)) * V + v];
  return out;
}

template <typename Model>
std::size_t count_parameters(Model& m) {
  std::size_t n = 0;
  m.visit([&](const std::string&, auto& arr) { n += arr.numel(); });
  return n;
}

}  // namespace smamba
