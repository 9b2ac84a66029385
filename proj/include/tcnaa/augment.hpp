#pragma once

// Dataset expansion by value dropout and three-sample mixing
//   D = A (1 - e1) + B e2 + C e3,  label(D) = label(A).

#include <cstdint>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "tcnaa/dsp.hpp"
#include "tcnaa/rng.hpp"

namespace tcnaa {

enum class AugmentMethod { Dropout, MixOther, MixSame };

inline std::string_view to_string(AugmentMethod m) {
  switch (m) {
    case AugmentMethod::Dropout: return "dropout";
    case AugmentMethod::MixOther: return "mix_other";
    case AugmentMethod::MixSame: return "mix_same";
  }
  return "?";
}

struct AugmentConfig {
  double dropout_lambda_max = 0.07;
  double mix_epsilon_max = 0.05;
  std::vector<AugmentMethod> methods{AugmentMethod::Dropout, AugmentMethod::MixOther,
                                     AugmentMethod::MixSame};
  std::size_t copies_per_method = 1;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(dropout_lambda_max > 0.0 && dropout_lambda_max < 1.0))
      throw std::invalid_argument("dropout_lambda_max must lie in (0, 1)");
    if (!(mix_epsilon_max > 0.0 && mix_epsilon_max < 0.5))
      throw std::invalid_argument("mix_epsilon_max must lie in (0, 0.5)");
    std::set<AugmentMethod> seen;
    for (AugmentMethod m : methods)
      if (!seen.insert(m).second) throw std::invalid_argument("augmentation method listed twice");
  }
};

/// Zeroes each scalar independently with probability `lambda`.
inline PreprocessedSample dropout_augment(const PreprocessedSample& s, double lambda, Rng& rng) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw std::invalid_argument("dropout lambda outside [0, 1]");
  PreprocessedSample out = s;
  if (lambda == 0.0) return out;
  for (double& v : out.data.values())
    if (lambda >= 1.0 || rng.bernoulli(lambda)) v = 0.0;
  return out;
}

/// Draws lambda uniformly from (0, dropout_lambda_max), then applies dropout.
inline PreprocessedSample dropout_augment(const PreprocessedSample& s, const AugmentConfig& cfg, Rng& rng) {
  const double lambda = rng.uniform(0.0, cfg.dropout_lambda_max);
  return dropout_augment(s, lambda, rng);
}

inline PreprocessedSample mix_samples(const PreprocessedSample& a, const PreprocessedSample& b,
                                      const PreprocessedSample& c, double e1, double e2, double e3) {
  if (a.data.shape() != b.data.shape() || a.data.shape() != c.data.shape())
    throw ShapeError("mix_samples: shape mismatch " + shape_str(a.data.shape()) + ", " +
                     shape_str(b.data.shape()) + ", " + shape_str(c.data.shape()));
  PreprocessedSample d{Tensor(a.data.shape()), a.label};
  const auto& av = a.data.values();
  const auto& bv = b.data.values();
  const auto& cv = c.data.values();
  auto& dv = d.data.values();
  for (std::size_t i = 0; i < dv.size(); ++i) dv[i] = av[i] * (1.0 - e1) + bv[i] * e2 + cv[i] * e3;
  return d;
}

namespace detail {

inline PreprocessedSample mix_with_donors(const Dataset& data, std::size_t a, const std::vector<std::size_t>& donors,
                                          bool distinct, double eps_max, Rng& rng) {
  const std::size_t ib = donors[rng.index(donors.size())];
  std::size_t ic = donors[rng.index(donors.size())];
  if (distinct)
    while (ic == ib) ic = donors[rng.index(donors.size())];
  const double e1 = rng.uniform(0.0, eps_max);
  const double e2 = rng.uniform(0.0, eps_max);
  const double e3 = rng.uniform(0.0, eps_max);
  return mix_samples(data[a], data[ib], data[ic], e1, e2, e3);
}

}  // namespace detail

/// Mixes data[a] with two donors whose labels differ from a's (the donors may
/// share a label with each other, and may coincide).
inline PreprocessedSample mix_other(const Dataset& data, std::size_t a, const AugmentConfig& cfg, Rng& rng) {
  if (a >= data.size()) throw std::out_of_range("mix_other: sample index out of range");
  std::vector<std::size_t> donors;
  for (std::size_t i = 0; i < data.size(); ++i)
    if (data[i].label != data[a].label) donors.push_back(i);
  if (donors.empty()) throw std::invalid_argument("mix_other: no samples with a different label");
  return detail::mix_with_donors(data, a, donors, false, cfg.mix_epsilon_max, rng);
}

/// Mixes data[a] with two distinct other samples of the same label.
inline PreprocessedSample mix_same(const Dataset& data, std::size_t a, const AugmentConfig& cfg, Rng& rng) {
  if (a >= data.size()) throw std::out_of_range("mix_same: sample index out of range");
  std::vector<std::size_t> donors;
  for (std::size_t i = 0; i < data.size(); ++i)
    if (i != a && data[i].label == data[a].label) donors.push_back(i);
  if (donors.size() < 2) throw std::invalid_argument("mix_same: fewer than two same-label donors");
  return detail::mix_with_donors(data, a, donors, true, cfg.mix_epsilon_max, rng);
}

/// Keeps the originals and appends, for each enabled method and each original
/// sample (in order), copies_per_method augmented samples. Donors are drawn
/// from the originals only. Every output sample has its own RNG stream.
inline Dataset expand_dataset(const Dataset& data, const AugmentConfig& cfg) {
  cfg.validate();
  Dataset out = data;
  for (AugmentMethod method : cfg.methods) {
    const auto method_id = static_cast<std::uint64_t>(method);
    for (std::size_t i = 0; i < data.size(); ++i)
      for (std::size_t copy = 0; copy < cfg.copies_per_method; ++copy) {
        Rng rng(derive_seed(cfg.seed, "augment", {method_id, i, copy}));
        switch (method) {
          case AugmentMethod::Dropout: out.push_back(dropout_augment(data[i], cfg, rng)); break;
          case AugmentMethod::MixOther: out.push_back(mix_other(data, i, cfg, rng)); break;
          case AugmentMethod::MixSame: out.push_back(mix_same(data, i, cfg, rng)); break;
        }
      }
  }
  return out;
}

}  // namespace tcnaa
