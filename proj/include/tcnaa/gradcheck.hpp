#pragma once

// Finite-difference checks for every differentiable primitive and for the
// full model loss.

#include <string>
#include <vector>

#include "tcnaa/model.hpp"
#include "tcnaa/rng.hpp"
#include "tcnaa/tensor.hpp"

namespace tcnaa {

inline constexpr double kPrimitiveTolerance = 1e-6;
inline constexpr double kModelTolerance = 1e-4;
inline constexpr double kGradCheckStep = 1e-5;

struct GradCheckReport {
  std::string name;
  double max_error = 0.0;
  double tolerance = 0.0;
  bool passed() const { return max_error < tolerance; }
};

namespace detail {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

/// Values bounded away from zero, for kinks such as relu.
inline Tensor random_away_from_zero(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = (rng.bernoulli(0.5) ? 1.0 : -1.0) * rng.uniform(0.05, 1.0);
  return t;
}

/// sum(y (.) r) for a fixed random r, turning a tensor-valued op into a scalar.
inline Var project(Tape& tape, const Var& y, std::uint64_t seed) {
  Rng rng(seed);
  return sum(mul(y, tape.constant(random_tensor(y.shape(), rng))));
}

}  // namespace detail

/// One report per primitive (and per differentiable argument where an op has several).
inline std::vector<GradCheckReport> primitive_grad_checks(std::uint64_t seed = 1) {
  using detail::project;
  using detail::random_tensor;
  Rng rng(seed);
  std::vector<GradCheckReport> out;
  auto check = [&](std::string name, const ScalarFunction& f, const Tensor& x) {
    out.push_back({std::move(name), grad_check(f, x, kGradCheckStep), kPrimitiveTolerance});
  };

  const Tensor a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng);
  check("add", [&](Tape& t, const Var& x) { return project(t, add(x, t.constant(b)), 11); }, a);
  check("sub", [&](Tape& t, const Var& x) { return project(t, sub(t.constant(b), x), 12); }, a);
  check("mul", [&](Tape& t, const Var& x) { return project(t, mul(x, t.constant(b)), 13); }, a);
  check("square", [&](Tape& t, const Var& x) { return project(t, square(x), 14); }, a);
  check("scale", [&](Tape& t, const Var& x) { return project(t, scale(x, -2.5), 15); }, a);
  check("relu", [&](Tape& t, const Var& x) { return project(t, relu(x), 16); },
        detail::random_away_from_zero({3, 4}, rng));
  check("sum", [&](Tape&, const Var& x) { return scale(sum(x), 0.7); }, a);

  const Tensor m1 = random_tensor({3, 5}, rng), m2 = random_tensor({5, 2}, rng), m3 = random_tensor({4, 5}, rng);
  check("matmul.lhs", [&](Tape& t, const Var& x) { return project(t, matmul(x, t.constant(m2)), 21); }, m1);
  check("matmul.rhs", [&](Tape& t, const Var& x) { return project(t, matmul(t.constant(m1), x), 22); }, m2);
  check("matmul_nt.lhs", [&](Tape& t, const Var& x) { return project(t, matmul_nt(x, t.constant(m3)), 23); }, m1);
  check("matmul_nt.rhs", [&](Tape& t, const Var& x) { return project(t, matmul_nt(t.constant(m1), x), 24); }, m3);
  check("transpose", [&](Tape& t, const Var& x) { return project(t, transpose(x), 25); }, m1);

  const Tensor lx = random_tensor({4, 5}, rng), lw = random_tensor({3, 5}, rng), lb = random_tensor({3}, rng);
  check("linear.input", [&](Tape& t, const Var& x) {
    return project(t, linear(x, t.constant(lw), t.constant(lb)), 31);
  }, lx);
  check("linear.weight", [&](Tape& t, const Var& x) {
    return project(t, linear(t.constant(lx), x, t.constant(lb)), 32);
  }, lw);
  check("linear.bias", [&](Tape& t, const Var& x) {
    return project(t, linear(t.constant(lx), t.constant(lw), x), 33);
  }, lb);

  const Tensor cx = random_tensor({3, 12}, rng), cw = random_tensor({2, 3, 3}, rng), cb = random_tensor({2}, rng);
  for (std::size_t d : {1u, 2u, 4u}) {
    const std::string tag = ".d" + std::to_string(d);
    check("causal_conv1d.input" + tag, [&, d](Tape& t, const Var& x) {
      return project(t, causal_conv1d(x, t.constant(cw), t.constant(cb), d), 41);
    }, cx);
    check("causal_conv1d.weight" + tag, [&, d](Tape& t, const Var& x) {
      return project(t, causal_conv1d(t.constant(cx), x, t.constant(cb), d), 42);
    }, cw);
    check("causal_conv1d.bias" + tag, [&, d](Tape& t, const Var& x) {
      return project(t, causal_conv1d(t.constant(cx), t.constant(cw), x, d), 43);
    }, cb);
  }

  const Tensor sx = random_tensor({4, 4}, rng, -2.0, 2.0);
  check("softmax_rows", [&](Tape& t, const Var& x) { return project(t, softmax_rows(x), 51); }, sx);
  check("lower_triangular_mask.neg_inf+softmax", [&](Tape& t, const Var& x) {
    return project(t, softmax_rows(lower_triangular_mask(x, MaskMode::NegInf)), 52);
  }, sx);
  check("lower_triangular_mask.zero", [&](Tape& t, const Var& x) {
    return project(t, lower_triangular_mask(x, MaskMode::ZeroLiteral), 53);
  }, sx);

  const Tensor r3 = random_tensor({2, 3, 4}, rng);
  for (std::size_t axis : {0u, 1u, 2u})
    check("mean_over_axis." + std::to_string(axis),
          [&, axis](Tape& t, const Var& x) { return project(t, mean_over_axis(x, axis), 61 + axis); }, r3);
  check("stack", [&](Tape& t, const Var& x) { return project(t, stack({x, scale(x, 2.0), t.constant(a)}), 64); }, a);
  check("select", [&](Tape& t, const Var& x) { return project(t, select(x, 1), 65); }, r3);
  check("time_step", [&](Tape& t, const Var& x) { return project(t, time_step(x, 7), 66); }, cx);
  check("dropout.train", [&](Tape& t, const Var& x) {
    Rng mask_rng(67);
    return project(t, dropout(x, 0.5, true, mask_rng), 68);
  }, a);

  const Tensor logits = random_tensor({12}, rng, -2.0, 2.0);
  check("softmax+cross_entropy", [&](Tape&, const Var& x) { return cross_entropy(softmax_rows(x), 5); }, logits);

  const Tensor h = random_tensor({6, 4}, rng);
  AttentionParams ap{random_tensor({3, 4}, rng), random_tensor({3, 4}, rng), random_tensor({4, 4}, rng)};
  auto attention_with = [&](Tape& t, const Var* input, const Var* wq) {
    AttentionVars av{wq ? *wq : t.constant(ap.w_q), t.constant(ap.w_k), t.constant(ap.w_v)};
    return attention_forward(input ? *input : t.constant(h), av, MaskMode::NegInf);
  };
  check("attention.input", [&](Tape& t, const Var& x) { return project(t, attention_with(t, &x, nullptr), 71); }, h);
  check("attention.w_q", [&](Tape& t, const Var& x) { return project(t, attention_with(t, nullptr, &x), 72); },
        ap.w_q);
  return out;
}

/// Tiny configuration used by the full-model check: T=16, F=4, filters [8,8,8], k=3.
inline ModelConfig tiny_model_config() {
  ModelConfig cfg;
  cfg.input_features = 4;
  cfg.filters = {8, 8, 8};
  cfg.kernel = 3;
  cfg.dilations = {1, 2, 4};
  cfg.dropout = 0.5;
  return cfg;
}

/// Cross-entropy of the pooled distribution w.r.t. every parameter tensor of
/// an evaluation-mode model; reports the worst tensor.
inline GradCheckReport model_grad_check(const ModelConfig& cfg, std::size_t pairs = 2, std::size_t steps = 16,
                                        std::uint64_t seed = 5) {
  Rng rng(seed);
  const ModelParams params = init_params(cfg, seed);
  Tensor sample(Shape{pairs, steps, cfg.input_features});
  for (double& v : sample.values()) v = rng.uniform(-1.0, 1.0);
  const std::size_t label = 3 % cfg.n_classes;
  std::vector<Tensor> tensors;
  params.visit([&](const std::string&, const Tensor& t) { tensors.push_back(t); });

  GradCheckReport report{"model.loss", 0.0, kModelTolerance};
  for (std::size_t target = 0; target < tensors.size(); ++target) {
    auto f = [&, target](Tape& t, const Var& x) {
      const ParamVars pv = bind_params(params, [&](std::size_t i, const Tensor& v) {
        return i == target ? x : t.constant(v);
      });
      return cross_entropy(model_forward(t.constant(sample), pv, cfg), label);
    };
    report.max_error = std::max(report.max_error, grad_check(f, tensors[target], kGradCheckStep));
  }
  return report;
}

}  // namespace tcnaa
