#pragma once

// TCN-AA: causal temporal attention, a stack of dilated causal TCN blocks,
// last-step extraction, a shared FCN head per TR-pair and average pooling of
// the per-pair class distributions.

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "tcnaa/rng.hpp"
#include "tcnaa/tensor.hpp"

namespace tcnaa {

enum class AttentionPlacement { PreTcnOnly, PostTcn, EveryLayer, None };

struct ModelConfig {
  std::size_t input_features = 30;
  std::vector<std::size_t> filters{50, 50, 50};
  std::size_t kernel = 15;
  std::vector<std::size_t> dilations{1, 2, 4};
  double dropout = 0.5;
  AttentionPlacement attention = AttentionPlacement::PreTcnOnly;
  MaskMode mask = MaskMode::NegInf;
  bool residual = true;
  std::size_t d_k = 0;  // 0: use the width of the attended features
  std::size_t n_classes = 12;

  std::size_t layers() const noexcept { return filters.size(); }

  /// Channel width entering layer m (m == layers() gives the TCN output width).
  std::size_t width_before(std::size_t m) const { return m == 0 ? input_features : filters.at(m - 1); }

  std::size_t key_dim(std::size_t width) const { return d_k ? d_k : width; }

  void validate() const {
    if (input_features < 1) throw std::invalid_argument("model.input_features must be >= 1");
    if (kernel < 1) throw std::invalid_argument("model.kernel must be >= 1");
    if (n_classes < 2) throw std::invalid_argument("model.n_classes must be >= 2");
    if (dilations.size() != filters.size())
      throw std::invalid_argument("model.dilations must have one entry per layer");
    for (std::size_t m = 0; m < dilations.size(); ++m)
      if (dilations[m] != (std::size_t{1} << m))
        throw std::invalid_argument("model.dilations[" + std::to_string(m) + "] must equal 2^" + std::to_string(m));
    for (std::size_t f : filters)
      if (f < 1) throw std::invalid_argument("model.filters entries must be >= 1");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("model.dropout must lie in [0, 1)");
    if (attention == AttentionPlacement::EveryLayer && filters.empty())
      throw std::invalid_argument("EveryLayer attention needs at least one TCN layer");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Dilations 1, 2, 4, ... for `layers` layers.
inline std::vector<std::size_t> default_dilations(std::size_t layers) {
  std::vector<std::size_t> d(layers);
  for (std::size_t m = 0; m < layers; ++m) d[m] = std::size_t{1} << m;
  return d;
}

struct AttentionParams {
  Tensor w_q;  // (d_k, F)
  Tensor w_k;  // (d_k, F)
  Tensor w_v;  // (F, F)

  friend bool operator==(const AttentionParams&, const AttentionParams&) = default;
};

struct TcnBlockParams {
  Tensor weight;  // (C_out, C_in, k)
  Tensor bias;    // (C_out)
  std::optional<Tensor> residual_weight;  // (C_out, C_in) when C_in != C_out
  std::optional<Tensor> residual_bias;    // (C_out)

  friend bool operator==(const TcnBlockParams&, const TcnBlockParams&) = default;
};

struct HeadParams {
  Tensor weight;  // (N_c, C_last)
  Tensor bias;    // (N_c)

  friend bool operator==(const HeadParams&, const HeadParams&) = default;
};

struct ModelParams {
  std::vector<AttentionParams> attention;
  std::vector<TcnBlockParams> blocks;
  HeadParams head;

  /// Calls f(name, tensor) for every parameter tensor in a fixed order.
  template <typename Self, typename F>
  static void visit_impl(Self& self, F&& f) {
    for (std::size_t i = 0; i < self.attention.size(); ++i) {
      const std::string p = "attention." + std::to_string(i) + ".";
      f(p + "w_q", self.attention[i].w_q);
      f(p + "w_k", self.attention[i].w_k);
      f(p + "w_v", self.attention[i].w_v);
    }
    for (std::size_t i = 0; i < self.blocks.size(); ++i) {
      const std::string p = "block." + std::to_string(i) + ".";
      f(p + "weight", self.blocks[i].weight);
      f(p + "bias", self.blocks[i].bias);
      if (self.blocks[i].residual_weight) f(p + "residual_weight", *self.blocks[i].residual_weight);
      if (self.blocks[i].residual_bias) f(p + "residual_bias", *self.blocks[i].residual_bias);
    }
    f(std::string("head.weight"), self.head.weight);
    f(std::string("head.bias"), self.head.bias);
  }
  template <typename F>
  void visit(F&& f) {
    visit_impl(*this, std::forward<F>(f));
  }
  template <typename F>
  void visit(F&& f) const {
    visit_impl(*this, std::forward<F>(f));
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    visit([&](const std::string&, const Tensor& t) { n += t.size(); });
    return n;
  }

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

/// Number of attention modules a placement instantiates.
inline std::size_t attention_modules(const ModelConfig& cfg) {
  switch (cfg.attention) {
    case AttentionPlacement::None: return 0;
    case AttentionPlacement::PreTcnOnly:
    case AttentionPlacement::PostTcn: return 1;
    case AttentionPlacement::EveryLayer: return cfg.layers();
  }
  return 0;
}

/// Feature width seen by attention module i.
inline std::size_t attention_width(const ModelConfig& cfg, std::size_t i) {
  switch (cfg.attention) {
    case AttentionPlacement::PostTcn: return cfg.width_before(cfg.layers());
    case AttentionPlacement::EveryLayer: return cfg.width_before(i);
    default: return cfg.input_features;
  }
}

inline bool block_has_projection(const ModelConfig& cfg, std::size_t m) {
  return cfg.residual && cfg.width_before(m) != cfg.filters[m];
}

/// Exact number of trainable scalars implied by a configuration.
inline std::size_t parameter_count(const ModelConfig& cfg) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < attention_modules(cfg); ++i) {
    const std::size_t f = attention_width(cfg, i), dk = cfg.key_dim(f);
    n += 2 * dk * f + f * f;
  }
  for (std::size_t m = 0; m < cfg.layers(); ++m) {
    const std::size_t c_in = cfg.width_before(m), c_out = cfg.filters[m];
    n += c_out * c_in * cfg.kernel + c_out;
    if (block_has_projection(cfg, m)) n += c_out * c_in + c_out;
  }
  n += cfg.n_classes * cfg.width_before(cfg.layers()) + cfg.n_classes;
  return n;
}

/// Trailing input steps that can reach the last output step of the TCN stack.
inline std::size_t receptive_field(const ModelConfig& cfg) {
  std::size_t span = 0;
  for (std::size_t d : cfg.dilations) span += d;
  return 1 + (cfg.kernel - 1) * span;
}

inline Tensor glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  Tensor t(std::move(shape));
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (double& v : t.values()) v = rng.uniform(-limit, limit);
  return t;
}

/// Glorot-uniform weights, zero biases, drawn in visit order from one stream.
inline ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(derive_seed(seed, "init"));
  ModelParams p;
  for (std::size_t i = 0; i < attention_modules(cfg); ++i) {
    const std::size_t f = attention_width(cfg, i), dk = cfg.key_dim(f);
    AttentionParams a;
    a.w_q = glorot_uniform({dk, f}, f, dk, rng);
    a.w_k = glorot_uniform({dk, f}, f, dk, rng);
    a.w_v = glorot_uniform({f, f}, f, f, rng);
    p.attention.push_back(std::move(a));
  }
  for (std::size_t m = 0; m < cfg.layers(); ++m) {
    const std::size_t c_in = cfg.width_before(m), c_out = cfg.filters[m];
    TcnBlockParams b;
    b.weight = glorot_uniform({c_out, c_in, cfg.kernel}, c_in * cfg.kernel, c_out * cfg.kernel, rng);
    b.bias = Tensor(Shape{c_out});
    if (block_has_projection(cfg, m)) {
      b.residual_weight = glorot_uniform({c_out, c_in}, c_in, c_out, rng);
      b.residual_bias = Tensor(Shape{c_out});
    }
    p.blocks.push_back(std::move(b));
  }
  const std::size_t c_last = cfg.width_before(cfg.layers());
  p.head.weight = glorot_uniform({cfg.n_classes, c_last}, c_last, cfg.n_classes, rng);
  p.head.bias = Tensor(Shape{cfg.n_classes});
  return p;
}

// ---------------------------------------------------------------------------
// Tape-bound parameters

struct AttentionVars {
  Var w_q, w_k, w_v;
};

struct TcnBlockVars {
  Var weight, bias;
  std::optional<Var> residual_weight, residual_bias;
};

struct ParamVars {
  std::vector<AttentionVars> attention;
  std::vector<TcnBlockVars> blocks;
  Var head_weight, head_bias;
  std::vector<Var> all;  // visit order
};

/// Creates the tape leaf for the index-th parameter (visit order).
using LeafFactory = std::function<Var(std::size_t index, const Tensor& value)>;

inline ParamVars bind_params(const ModelParams& p, const LeafFactory& make_leaf) {
  std::size_t index = 0;
  auto leaf = [&](const Tensor& t) {
    Var v = make_leaf(index++, t);
    return v;
  };
  ParamVars v;
  for (const AttentionParams& a : p.attention) {
    AttentionVars av;
    av.w_q = leaf(a.w_q);
    av.w_k = leaf(a.w_k);
    av.w_v = leaf(a.w_v);
    v.all.insert(v.all.end(), {av.w_q, av.w_k, av.w_v});
    v.attention.push_back(av);
  }
  for (const TcnBlockParams& b : p.blocks) {
    TcnBlockVars bv;
    bv.weight = leaf(b.weight);
    bv.bias = leaf(b.bias);
    v.all.push_back(bv.weight);
    v.all.push_back(bv.bias);
    if (b.residual_weight) {
      bv.residual_weight = leaf(*b.residual_weight);
      v.all.push_back(*bv.residual_weight);
    }
    if (b.residual_bias) {
      bv.residual_bias = leaf(*b.residual_bias);
      v.all.push_back(*bv.residual_bias);
    }
    v.blocks.push_back(std::move(bv));
  }
  v.head_weight = leaf(p.head.weight);
  v.head_bias = leaf(p.head.bias);
  v.all.push_back(v.head_weight);
  v.all.push_back(v.head_bias);
  return v;
}

/// Places parameters on a tape, as gradient leaves when `trainable`.
inline ParamVars bind_params(Tape& tape, const ModelParams& p, bool trainable) {
  return bind_params(p, [&](std::size_t, const Tensor& t) { return trainable ? tape.parameter(t) : tape.constant(t); });
}

// ---------------------------------------------------------------------------
// Forward pass

/// Causal temporal attention on h (T, F):
///   S = mask(Q K^T / sqrt(d_k)),  A = softmax(S) V,  H' = H (.) A
/// with Q = H W_Q^T, K = H W_K^T, V = H W_V^T and (.) elementwise.
inline Var attention_forward(const Var& h, const AttentionVars& p, MaskMode mask) {
  if (h.value().rank() != 2 || h.shape()[0] < 1) throw ShapeError("attention_forward: expected (T >= 1, F)");
  const Var q = linear(h, p.w_q);
  const Var k = linear(h, p.w_k);
  const Var v = linear(h, p.w_v);
  if (v.shape() != h.shape())
    throw ShapeError("attention_forward: value projection yields " + shape_str(v.shape()) + ", input is " +
                     shape_str(h.shape()));
  const double dk = static_cast<double>(p.w_q.shape()[0]);
  const Var scores = lower_triangular_mask(scale(matmul_nt(q, k), 1.0 / std::sqrt(dk)), mask);
  const Var attended = matmul(softmax_rows(scores), v);
  return mul(h, attended);
}

/// y = dropout(relu(causal_conv(x))) + residual(x); x is (C_in, T).
inline Var tcn_block_forward(const Var& x, const TcnBlockVars& p, std::size_t dilation, double dropout_rate,
                             bool training, Rng* rng, bool residual) {
  Var y = relu(causal_conv1d(x, p.weight, p.bias, dilation));
  if (training && dropout_rate > 0.0) {
    if (!rng) throw std::invalid_argument("tcn_block_forward: training dropout needs an RNG");
    y = dropout(y, dropout_rate, true, *rng);
  }
  if (!residual) return y;
  if (p.residual_weight) {
    // 1x1 projection over channels: (C_out, C_in) applied to each time step.
    const Var projected = transpose(linear(transpose(x), *p.residual_weight, &*p.residual_bias));
    return add(y, projected);
  }
  if (x.shape() != y.shape())
    throw ShapeError("tcn_block_forward: identity residual needs C_in == C_out");
  return add(y, x);
}

struct ForwardOptions {
  bool training = false;
  Rng* dropout_rng = nullptr;
};

/// Time-major (T, width) activations per TR-pair, in layer order.
struct ForwardTrace {
  std::vector<std::vector<Tensor>> pairs;
};

inline Tensor to_time_major(const Tensor& channels_by_time) {
  const std::size_t c = channels_by_time.dim(0), t = channels_by_time.dim(1);
  Tensor out(Shape{t, c});
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t j = 0; j < t; ++j) out[j * c + i] = channels_by_time[i * t + j];
  return out;
}

/// Per-pair class distribution for one (T, F) slice.
inline Var pair_forward(const Var& h_in, const ParamVars& p, const ModelConfig& cfg, const ForwardOptions& opt,
                        std::vector<Tensor>* trace) {
  const std::size_t steps = h_in.shape()[0];
  Var h = h_in;
  if (cfg.attention == AttentionPlacement::PreTcnOnly) {
    h = attention_forward(h, p.attention[0], cfg.mask);
    if (trace) trace->push_back(h.value());
  }
  Var x = transpose(h);
  for (std::size_t m = 0; m < cfg.layers(); ++m) {
    if (cfg.attention == AttentionPlacement::EveryLayer) {
      x = transpose(attention_forward(transpose(x), p.attention[m], cfg.mask));
      if (trace) trace->push_back(to_time_major(x.value()));
    }
    x = tcn_block_forward(x, p.blocks[m], cfg.dilations[m], cfg.dropout, opt.training, opt.dropout_rng,
                          cfg.residual);
    if (trace) trace->push_back(to_time_major(x.value()));
  }
  if (cfg.attention == AttentionPlacement::PostTcn) {
    x = transpose(attention_forward(transpose(x), p.attention[0], cfg.mask));
    if (trace) trace->push_back(to_time_major(x.value()));
  }
  const Var last = time_step(x, steps - 1);
  return softmax_rows(linear(last, p.head_weight, p.head_bias));
}

/// sample: (P, T, F). Returns the mean over pairs of per-pair softmax outputs, shape (N_c,).
inline Var model_forward(const Var& sample, const ParamVars& p, const ModelConfig& cfg,
                         const ForwardOptions& opt = {}, ForwardTrace* trace = nullptr) {
  const Shape& s = sample.shape();
  if (s.size() != 3 || s[0] < 1 || s[1] < 1)
    throw ShapeError("model_forward: expected (pairs, time, features), got " + shape_str(s));
  if (s[2] != cfg.input_features)
    throw ShapeError("model_forward: sample has " + std::to_string(s[2]) + " features, model expects " +
                     std::to_string(cfg.input_features));
  if (trace) trace->pairs.assign(s[0], {});
  std::vector<Var> dists;
  for (std::size_t pair = 0; pair < s[0]; ++pair)
    dists.push_back(pair_forward(select(sample, pair), p, cfg, opt, trace ? &trace->pairs[pair] : nullptr));
  return mean_over_axis(stack(dists), 0);
}

/// Evaluation-mode class distribution for one sample.
inline Tensor predict(const ModelParams& params, const ModelConfig& cfg, const Tensor& sample,
                      ForwardTrace* trace = nullptr) {
  Tape tape;
  const ParamVars pv = bind_params(tape, params, false);
  return model_forward(tape.constant(sample), pv, cfg, {}, trace).value();
}

}  // namespace tcnaa
