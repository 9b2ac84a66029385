#pragma once

// Preprocessing chain: per-TR-pair min-max normalization, Butterworth
// low-pass filtering along time, and cascaded Haar approximation (DWT).

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "tcnaa/binary_io.hpp"
#include "tcnaa/csi_data.hpp"
#include "tcnaa/tensor.hpp"

namespace tcnaa {

struct FilterSpec {
  int order = 5;
  double cutoff = 0.1;      // fraction of Nyquist, in (0, 1)
  bool zero_phase = false;  // forward-backward instead of a single causal pass

  void validate() const {
    if (order < 1) throw std::invalid_argument("filter order must be >= 1");
    if (!(cutoff > 0.0 && cutoff < 1.0))
      throw std::invalid_argument("filter cutoff " + std::to_string(cutoff) + " outside (0, 1)");
  }
};

/// b (numerator) and a (denominator, a[0] == 1) of a discrete-time filter.
struct IirCoefficients {
  std::vector<double> b;
  std::vector<double> a;

  /// H(e^{j*pi*f}) for f a fraction of Nyquist.
  std::complex<double> response(double f) const {
    const std::complex<double> z1 = std::polar(1.0, -std::numbers::pi * f);
    std::complex<double> num = 0.0, den = 0.0, zk = 1.0;
    for (std::size_t k = 0; k < std::max(a.size(), b.size()); ++k) {
      if (k < b.size()) num += b[k] * zk;
      if (k < a.size()) den += a[k] * zk;
      zk *= z1;
    }
    return num / den;
  }

  /// Schur-Cohn step-down test: every denominator root strictly inside the unit circle.
  bool is_stable() const {
    if (a.empty() || a[0] == 0.0) return false;
    std::vector<double> poly(a.begin(), a.end());
    for (double& c : poly) c /= a[0];
    for (std::size_t m = poly.size() - 1; m >= 1; --m) {
      const double k = poly[m];
      if (std::abs(k) >= 1.0) return false;
      std::vector<double> next(m);
      for (std::size_t i = 0; i < m; ++i) next[i] = (poly[i] - k * poly[m - i]) / (1.0 - k * k);
      poly = std::move(next);
    }
    return true;
  }
};

namespace detail {

inline std::vector<std::complex<double>> poly_from_roots(const std::vector<std::complex<double>>& roots) {
  std::vector<std::complex<double>> c{1.0};
  for (const auto& r : roots) {
    std::vector<std::complex<double>> next(c.size() + 1, 0.0);
    for (std::size_t i = 0; i < c.size(); ++i) {
      next[i] += c[i];
      next[i + 1] -= r * c[i];
    }
    c = std::move(next);
  }
  return c;
}

}  // namespace detail

/// Butterworth low-pass via the bilinear transform. The analog prototype's
/// poles sit on the left half of a circle of radius 2*tan(pi*cutoff/2)
/// (pre-warped so the -3 dB point lands exactly on `cutoff`); all zeros map
/// to z = -1. The numerator is scaled for unit DC gain.
inline IirCoefficients design_butterworth_lowpass(const FilterSpec& spec) {
  spec.validate();
  const int n = spec.order;
  const double warped = 2.0 * std::tan(std::numbers::pi * spec.cutoff / 2.0);
  std::vector<std::complex<double>> poles, zeros;
  for (int k = 0; k < n; ++k) {
    const double theta = std::numbers::pi * (2.0 * k + n + 1) / (2.0 * n);
    const std::complex<double> s = warped * std::polar(1.0, theta);
    poles.push_back((2.0 + s) / (2.0 - s));
    zeros.emplace_back(-1.0, 0.0);
  }
  const auto a = detail::poly_from_roots(poles);
  const auto b = detail::poly_from_roots(zeros);
  IirCoefficients out;
  double sum_a = 0.0, sum_b = 0.0;
  for (const auto& c : a) {
    out.a.push_back(c.real());
    sum_a += c.real();
  }
  for (const auto& c : b) {
    out.b.push_back(c.real());
    sum_b += c.real();
  }
  const double gain = sum_a / sum_b;
  for (double& v : out.b) v *= gain;
  return out;
}

/// Causal direct-form (transposed II) recursion with zero initial state.
inline std::vector<double> apply_filter(std::span<const double> signal, const IirCoefficients& c) {
  const std::size_t order = std::max(c.a.size(), c.b.size()) - 1;
  std::vector<double> b(order + 1, 0.0), a(order + 1, 0.0);
  std::copy(c.b.begin(), c.b.end(), b.begin());
  std::copy(c.a.begin(), c.a.end(), a.begin());
  const double a0 = a[0];
  for (double& v : b) v /= a0;
  for (double& v : a) v /= a0;
  std::vector<double> state(order + 1, 0.0);
  std::vector<double> out(signal.size());
  for (std::size_t n = 0; n < signal.size(); ++n) {
    const double x = signal[n];
    const double y = b[0] * x + state[0];
    for (std::size_t i = 0; i < order; ++i) state[i] = b[i + 1] * x - a[i + 1] * y + state[i + 1];
    out[n] = y;
  }
  return out;
}

/// Forward-backward filtering (zero phase, squared magnitude response).
inline std::vector<double> apply_filter_zero_phase(std::span<const double> signal, const IirCoefficients& c) {
  auto y = apply_filter(signal, c);
  std::reverse(y.begin(), y.end());
  y = apply_filter(y, c);
  std::reverse(y.begin(), y.end());
  return y;
}

/// Per-slice min-max scaling to [-1, 1] along the leading axis; constant
/// slices become all zeros.
inline Tensor minmax_normalize(const Tensor& x) {
  if (x.rank() == 0) throw ShapeError("minmax_normalize: need at least one axis");
  const std::size_t groups = x.dim(0);
  const std::size_t block = groups ? x.size() / groups : 0;
  Tensor out(x.shape());
  for (std::size_t g = 0; g < groups; ++g) {
    const double* in = &x.values()[g * block];
    double* o = &out.values()[g * block];
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (std::size_t i = 0; i < block; ++i) {
      if (!std::isfinite(in[i])) throw std::domain_error("minmax_normalize: non-finite input");
      lo = std::min(lo, in[i]);
      hi = std::max(hi, in[i]);
    }
    if (block == 0 || hi == lo) continue;
    const double range = hi - lo;
    for (std::size_t i = 0; i < block; ++i) o[i] = 2.0 * (in[i] - lo) / range - 1.0;
  }
  return out;
}

enum class WaveletFamily { Haar };

struct WaveletSpec {
  WaveletFamily family = WaveletFamily::Haar;
  std::size_t levels = 2;

  void validate() const {
    if (levels < 1) throw std::invalid_argument("wavelet levels must be >= 1");
  }
};

/// Single-level Haar approximation: a[i] = (x[2i] + x[2i+1]) / sqrt(2).
inline std::vector<double> dwt_approx(std::span<const double> x) {
  if (x.size() % 2 != 0)
    throw std::invalid_argument("dwt_approx: odd length " + std::to_string(x.size()));
  std::vector<double> a(x.size() / 2);
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = (x[2 * i] + x[2 * i + 1]) / std::numbers::sqrt2;
  return a;
}

struct HaarCoefficients {
  std::vector<double> approx;
  std::vector<double> detail;
};

/// Full single-level Haar transform; detail d[i] = (x[2i] - x[2i+1]) / sqrt(2).
inline HaarCoefficients dwt_haar(std::span<const double> x) {
  HaarCoefficients out{dwt_approx(x), std::vector<double>(x.size() / 2)};
  for (std::size_t i = 0; i < out.detail.size(); ++i)
    out.detail[i] = (x[2 * i] - x[2 * i + 1]) / std::numbers::sqrt2;
  return out;
}

enum class StageOrder { NormalizeThenFilter, FilterThenNormalize };

struct PreprocessOptions {
  FilterSpec filter;
  WaveletSpec wavelet;
  StageOrder order = StageOrder::NormalizeThenFilter;
};

struct PreprocessedSample {
  Tensor data;  // (pairs, n_p / 2^levels, n_s)
  InteractionLabel label;
};

using Dataset = std::vector<PreprocessedSample>;

/// Filters every (pair, subcarrier) series of a (pairs, time, subcarriers) tensor.
inline Tensor filter_time_axis(const Tensor& x, const FilterSpec& spec) {
  if (x.rank() != 3) throw ShapeError("filter_time_axis: expected (pairs, time, subcarriers)");
  const IirCoefficients coeffs = design_butterworth_lowpass(spec);
  const std::size_t pairs = x.dim(0), steps = x.dim(1), subs = x.dim(2);
  Tensor out(x.shape());
  std::vector<double> series(steps);
  for (std::size_t p = 0; p < pairs; ++p)
    for (std::size_t s = 0; s < subs; ++s) {
      for (std::size_t t = 0; t < steps; ++t) series[t] = x.at(p, t, s);
      const auto y = spec.zero_phase ? apply_filter_zero_phase(series, coeffs) : apply_filter(series, coeffs);
      for (std::size_t t = 0; t < steps; ++t) out.at(p, t, s) = y[t];
    }
  return out;
}

/// Haar approximation along the time axis of a (pairs, time, subcarriers) tensor.
inline Tensor dwt_time_axis(const Tensor& x) {
  if (x.rank() != 3) throw ShapeError("dwt_time_axis: expected (pairs, time, subcarriers)");
  const std::size_t pairs = x.dim(0), steps = x.dim(1), subs = x.dim(2);
  if (steps % 2 != 0) throw std::invalid_argument("dwt_time_axis: odd length " + std::to_string(steps));
  Tensor out(Shape{pairs, steps / 2, subs});
  for (std::size_t p = 0; p < pairs; ++p)
    for (std::size_t i = 0; i < steps / 2; ++i)
      for (std::size_t s = 0; s < subs; ++s)
        out.at(p, i, s) = (x.at(p, 2 * i, s) + x.at(p, 2 * i + 1, s)) / std::numbers::sqrt2;
  return out;
}

/// Normalize/filter/DWT applied to an amplitude tensor (pairs, time, subcarriers).
inline Tensor preprocess_amplitude(const Tensor& amp, const PreprocessOptions& opts) {
  opts.filter.validate();
  opts.wavelet.validate();
  Tensor x = opts.order == StageOrder::NormalizeThenFilter
                 ? filter_time_axis(minmax_normalize(amp), opts.filter)
                 : minmax_normalize(filter_time_axis(amp, opts.filter));
  for (std::size_t level = 0; level < opts.wavelet.levels; ++level) x = dwt_time_axis(x);
  return x;
}

inline PreprocessedSample preprocess(const CsiRecording& rec, InteractionLabel label,
                                     const PreprocessOptions& opts = {}) {
  return {preprocess_amplitude(amplitude(rec), opts), label};
}

// ---------------------------------------------------------------------------
// CSP1 container: "CSP1", u16 pairs, n_p', n_s (LE), then LE float64 payload
// in pair-major / packet / subcarrier order.

inline constexpr std::string_view kSampleMagic = "CSP1";

inline std::vector<std::uint8_t> encode_sample(const Tensor& t) {
  if (t.rank() != 3) throw ShapeError("CSP1 sample must have rank 3");
  ByteWriter w;
  w.raw(kSampleMagic);
  for (std::size_t d : t.shape()) {
    if (d == 0 || d > std::numeric_limits<std::uint16_t>::max())
      throw std::invalid_argument("CSP1 dimension " + std::to_string(d) + " not representable");
    w.u16(static_cast<std::uint16_t>(d));
  }
  for (double v : t.values()) w.f64(v);
  return w.bytes();
}

inline Tensor decode_sample(std::span<const std::uint8_t> bytes, const std::string& context = "CSP1") {
  ByteReader r(bytes, context);
  if (!r.expect_magic(kSampleMagic)) throw FormatError(context + ": bad magic (expected \"CSP1\")");
  const std::size_t pairs = r.u16(), steps = r.u16(), subs = r.u16();
  if (pairs == 0 || steps == 0 || subs == 0) throw FormatError(context + ": zero dimension in header");
  const std::size_t count = pairs * steps * subs;
  if (r.remaining() != 8 * count)
    throw FormatError(context + ": payload is " + std::to_string(r.remaining()) + " bytes, expected " +
                      std::to_string(8 * count));
  Tensor t(Shape{pairs, steps, subs});
  for (double& v : t.values()) v = r.f64();
  return t;
}

inline void save_sample(const std::filesystem::path& path, const Tensor& t) { write_file_bytes(path, encode_sample(t)); }

inline Tensor load_sample(const std::filesystem::path& path) {
  return decode_sample(read_file_bytes(path), path.string());
}

/// Loads every CSP1 sample named by a manifest, labels taken from the manifest.
inline Dataset load_dataset(const std::filesystem::path& manifest_path) {
  const DatasetManifest m = load_manifest(manifest_path);
  Dataset out;
  out.reserve(m.entries.size());
  for (const ManifestEntry& e : m.entries) out.push_back({load_sample(resolve_entry(manifest_path, e)), e.label});
  return out;
}

/// Writes samples as sample_NNNNN.csp plus manifest.csv under `dir`. Pair and
/// trial ids are copied from `origin` when given, else pair_id is the index.
inline std::filesystem::path save_dataset(const std::filesystem::path& dir, const Dataset& data,
                                          const std::vector<ManifestEntry>* origin = nullptr) {
  if (origin && origin->size() != data.size()) throw std::invalid_argument("save_dataset: origin size mismatch");
  std::filesystem::create_directories(dir);
  DatasetManifest m;
  for (std::size_t i = 0; i < data.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "sample_%05zu.csp", i);
    save_sample(dir / name, data[i].data);
    if (origin)
      m.entries.push_back({name, data[i].label, (*origin)[i].pair_id, (*origin)[i].trial_id});
    else
      m.entries.push_back({name, data[i].label, i, 0});
  }
  const auto path = dir / "manifest.csv";
  save_manifest(path, m);
  return path;
}

}  // namespace tcnaa
