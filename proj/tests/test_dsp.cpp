#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <filesystem>
#include <numbers>

#include "tcnaa/dsp.hpp"

using namespace tcnaa;
namespace fs = std::filesystem;

namespace {

constexpr double kPi = std::numbers::pi;

double db(double ratio) { return 20.0 * std::log10(ratio); }

// Squared magnitude of the pre-warped bilinear Butterworth at digital
// frequency f (fraction of Nyquist).
double warped_butterworth_mag(double f, double fc, int n) {
  const double r = std::tan(kPi * f / 2.0) / std::tan(kPi * fc / 2.0);
  return 1.0 / std::sqrt(1.0 + std::pow(r, 2 * n));
}

// Steady-state amplitude ratio of a sinusoid through the filter, read off by
// correlating the second half of the output with sin/cos.
double sinusoid_gain(const IirCoefficients& c, double f, std::size_t n = 8000) {
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = std::sin(kPi * f * static_cast<double>(i));
  const auto y = apply_filter(x, c);
  double s = 0, co = 0;
  const std::size_t start = n / 2;
  for (std::size_t i = start; i < n; ++i) {
    s += y[i] * std::sin(kPi * f * static_cast<double>(i));
    co += y[i] * std::cos(kPi * f * static_cast<double>(i));
  }
  const double m = static_cast<double>(n - start);
  return 2.0 * std::hypot(s, co) / m;
}

Tensor random_tensor(Shape s, std::uint64_t seed, double lo = -5, double hi = 5) {
  Rng rng(seed);
  Tensor t(std::move(s));
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

}  // namespace

TEST(Normalize, SpecExamples) {
  auto one_slice = [](std::vector<double> v) {
    const std::size_t n = v.size();
    return minmax_normalize(Tensor(Shape{1, n}, std::move(v))).values();
  };
  EXPECT_EQ(one_slice({0, 5, 10}), (std::vector<double>{-1, 0, 1}));
  EXPECT_EQ(one_slice({7, 7}), (std::vector<double>{0, 0}));
  EXPECT_EQ(one_slice({-2, 2}), (std::vector<double>{-1, 1}));
}

TEST(Normalize, SlicesAreIndependentAndHitBothEndpoints) {
  Tensor x = random_tensor({6, 50, 30}, 1);
  for (std::size_t k = 0; k < 50; ++k)
    for (std::size_t s = 0; s < 30; ++s) x.at(3, k, s) = 4.25;
  const Tensor y = minmax_normalize(x);
  for (std::size_t p = 0; p < 6; ++p) {
    double lo = 2, hi = -2;
    for (std::size_t i = 0; i < 1500; ++i) {
      lo = std::min(lo, y[p * 1500 + i]);
      hi = std::max(hi, y[p * 1500 + i]);
    }
    if (p == 3) {
      EXPECT_EQ(lo, 0.0);
      EXPECT_EQ(hi, 0.0);
    } else {
      EXPECT_EQ(lo, -1.0);
      EXPECT_EQ(hi, 1.0);
    }
  }
}

TEST(Normalize, RejectsNonFinite) {
  Tensor x(Shape{1, 2}, {1.0, std::nan("")});
  EXPECT_THROW(minmax_normalize(x), std::domain_error);
}

TEST(Butterworth, UnitDcGainAndStability) {
  for (int order : {1, 2, 3, 5, 8})
    for (double fc : {0.02, 0.1, 0.3, 0.7}) {
      const IirCoefficients c = design_butterworth_lowpass({order, fc});
      EXPECT_NEAR(std::abs(c.response(0.0)), 1.0, 1e-9);
      EXPECT_TRUE(c.is_stable()) << order << " " << fc;
      EXPECT_EQ(c.a[0], 1.0);
      EXPECT_EQ(c.a.size(), static_cast<std::size_t>(order + 1));
    }
}

TEST(Butterworth, HalfPowerAtCutoff) {
  const IirCoefficients c = design_butterworth_lowpass({5, 0.1});
  EXPECT_NEAR(std::abs(c.response(0.1)), 1.0 / std::sqrt(2.0), 1e-6);
}

TEST(Butterworth, MatchesWarpedAnalyticMagnitude) {
  const IirCoefficients c = design_butterworth_lowpass({5, 0.1});
  for (double f : {0.01, 0.05, 0.1, 0.2, 0.3, 0.5, 0.8, 0.95})
    EXPECT_NEAR(std::abs(c.response(f)), warped_butterworth_mag(f, 0.1, 5), 1e-9) << f;
}

TEST(Butterworth, AnalogFiveTimesCutoffMapsToAbout3p2e4) {
  // |H|^2 = 1/(1 + (w/wc)^10) at w = 5 wc is 3.2e-4 (-70 dB). Under the
  // bilinear map that analog frequency lands at f = (2/pi) atan(5 tan(pi fc/2)).
  const IirCoefficients c = design_butterworth_lowpass({5, 0.1});
  const double f = 2.0 / kPi * std::atan(5.0 * std::tan(kPi * 0.1 / 2.0));
  const double analog = 1.0 / std::sqrt(1.0 + std::pow(5.0, 10));
  EXPECT_NEAR(analog, 3.2e-4, 0.01e-4);
  EXPECT_NEAR(db(std::abs(c.response(f))), db(analog), 1.0);
  // At digital f = 5 fc the pre-warp compresses the band further.
  EXPECT_LT(db(std::abs(c.response(0.5))), -70.0);
}

TEST(Butterworth, RejectsBadSpecs) {
  EXPECT_THROW(design_butterworth_lowpass({0, 0.1}), std::invalid_argument);
  EXPECT_THROW(design_butterworth_lowpass({5, 0.0}), std::invalid_argument);
  EXPECT_THROW(design_butterworth_lowpass({5, 1.0}), std::invalid_argument);
}

TEST(StabilityTest, FlagsPolesOnOrOutsideUnitCircle) {
  EXPECT_TRUE((IirCoefficients{{1}, {1, -0.5}}.is_stable()));
  EXPECT_FALSE((IirCoefficients{{1}, {1, -1.0}}.is_stable()));
  EXPECT_FALSE((IirCoefficients{{1}, {1, -2.5, 1.0}}.is_stable()));  // roots 2 and 0.5
  EXPECT_TRUE((IirCoefficients{{1}, {1, -0.9, 0.2}}.is_stable()));   // roots 0.5 and 0.4
}

TEST(ApplyFilter, ZeroInStepConvergesAndLengthPreserved) {
  const IirCoefficients c = design_butterworth_lowpass({5, 0.1});
  const std::vector<double> zeros(100, 0.0);
  EXPECT_EQ(apply_filter(zeros, c), zeros);
  const std::vector<double> step(400, 1.0);
  const auto y = apply_filter(step, c);
  ASSERT_EQ(y.size(), 400u);
  for (std::size_t i = 200; i < 400; ++i) EXPECT_NEAR(y[i], 1.0, 1e-3);
}

TEST(ApplyFilter, IsLinear) {
  const IirCoefficients c = design_butterworth_lowpass({5, 0.1});
  const Tensor x = random_tensor({300}, 2), z = random_tensor({300}, 3);
  std::vector<double> combo(300);
  for (std::size_t i = 0; i < 300; ++i) combo[i] = 2.5 * x[i] - 0.75 * z[i];
  const auto yx = apply_filter(x.values(), c), yz = apply_filter(z.values(), c), yc = apply_filter(combo, c);
  for (std::size_t i = 0; i < 300; ++i) {
    const double want = 2.5 * yx[i] - 0.75 * yz[i];
    EXPECT_NEAR(yc[i], want, 1e-9 * std::max(1.0, std::abs(want)));
  }
}

TEST(ApplyFilter, HighComponentAttenuatedFortyDbRelativeToLow) {
  // FFT amplitude ratio of a 0.02 + 0.45 mixture (both exact DFT bins).
  const IirCoefficients c = design_butterworth_lowpass({5, 0.1});
  const std::size_t n = 2000, skip = 1000;
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i)
    x[i] = std::sin(kPi * 0.02 * double(i)) + std::sin(kPi * 0.45 * double(i));
  const auto y = apply_filter(x, c);
  auto bin = [&](double f) {
    std::complex<double> acc = 0;
    for (std::size_t i = skip; i < n; ++i) acc += y[i] * std::polar(1.0, -kPi * f * double(i));
    return std::abs(acc);
  };
  EXPECT_LE(db(bin(0.45) / bin(0.02)), -40.0);
}

TEST(ApplyFilter, SinusoidGainsAtCutoffAndFiveTimesCutoff) {
  const IirCoefficients c = design_butterworth_lowpass({5, 0.1});
  EXPECT_NEAR(db(sinusoid_gain(c, 0.1)), -3.01, 0.05);
  EXPECT_LE(db(sinusoid_gain(c, 0.5)), -40.0);
}

TEST(ApplyFilter, ZeroPhaseSquaresTheMagnitudeAndRemovesLag) {
  const IirCoefficients c = design_butterworth_lowpass({4, 0.2});
  const std::size_t n = 4000;
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = std::sin(kPi * 0.05 * double(i));
  const auto y = apply_filter_zero_phase(x, c);
  const double g = std::abs(c.response(0.05));
  for (std::size_t i = 1000; i < 3000; ++i) EXPECT_NEAR(y[i], g * g * x[i], 1e-6);
}

TEST(Haar, SpecExamples) {
  const std::vector<double> ones{1, 1, 1, 1};
  const auto once = dwt_approx(ones);
  ASSERT_EQ(once.size(), 2u);
  EXPECT_NEAR(once[0], std::numbers::sqrt2, 1e-15);
  const auto twice = dwt_approx(once);
  ASSERT_EQ(twice.size(), 1u);
  EXPECT_NEAR(twice[0], 2.0, 1e-12);
  EXPECT_EQ(dwt_approx(std::vector<double>(1500)).size(), 750u);
  EXPECT_EQ(dwt_approx(dwt_approx(std::vector<double>(1500))).size(), 375u);
  EXPECT_THROW(dwt_approx(std::vector<double>(3)), std::invalid_argument);
}

TEST(Haar, FullTransformPreservesEnergy) {
  const Tensor x = random_tensor({256}, 4);
  const auto h = dwt_haar(x.values());
  double ex = 0, ea = 0, ed = 0;
  for (double v : x.values()) ex += v * v;
  for (double v : h.approx) ea += v * v;
  for (double v : h.detail) ed += v * v;
  EXPECT_NEAR(ea + ed, ex, 1e-9 * ex);
  EXPECT_LE(ea, ex * (1 + 1e-12));
}

TEST(Pipeline, FullSizeShapeAndZeroCases) {
  CsiRecording zero(2, 3, 1500, 30);
  const PreprocessedSample s = preprocess(zero, InteractionLabel(4));
  EXPECT_EQ(s.data.shape(), (Shape{6, 375, 30}));
  EXPECT_EQ(s.label.id(), 4u);
  for (double v : s.data.values()) EXPECT_EQ(v, 0.0);

  CsiRecording constant(2, 3, 1500, 30);
  for (std::size_t p = 0; p < 6; ++p)
    for (std::size_t k = 0; k < 1500; ++k)
      for (std::size_t q = 0; q < 30; ++q) constant.at(p, k, q) = {3, -4};
  const PreprocessedSample c = preprocess(constant, InteractionLabel(0));
  for (double v : c.data.values()) EXPECT_EQ(v, 0.0);
}

TEST(Pipeline, ShapeFollowsLevels) {
  const Tensor amp = random_tensor({2, 96, 5}, 5, 0, 50);
  for (std::size_t levels : {1u, 2u, 3u, 5u}) {
    PreprocessOptions o;
    o.wavelet.levels = levels;
    EXPECT_EQ(preprocess_amplitude(amp, o).shape(), (Shape{2, 96u >> levels, 5}));
  }
  PreprocessOptions bad;
  bad.wavelet.levels = 6;  // 96 / 32 = 3 is odd before the sixth level
  EXPECT_THROW(preprocess_amplitude(amp, bad), std::invalid_argument);
}

TEST(Pipeline, StageOrderMatters) {
  const Tensor amp = random_tensor({2, 64, 3}, 6, 0, 50);
  PreprocessOptions a, b;
  b.order = StageOrder::FilterThenNormalize;
  const Tensor ya = preprocess_amplitude(amp, a), yb = preprocess_amplitude(amp, b);
  EXPECT_EQ(ya.shape(), yb.shape());
  EXPECT_NE(ya, yb);
}

TEST(SampleFormat, RoundTripAndErrors) {
  const Tensor t = random_tensor({6, 375, 30}, 7);
  const auto bytes = encode_sample(t);
  EXPECT_EQ(bytes.size(), 4u + 6u + 8u * 6 * 375 * 30);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "CSP1");
  EXPECT_EQ(bytes[4], 6);
  EXPECT_EQ(bytes[6], 375 & 0xFF);
  EXPECT_EQ(bytes[7], 375 >> 8);
  EXPECT_EQ(decode_sample(bytes), t);
  auto cut = bytes;
  cut.pop_back();
  EXPECT_THROW(decode_sample(cut), FormatError);
  auto magic = bytes;
  magic[0] = 'X';
  EXPECT_THROW(decode_sample(magic), FormatError);
}

TEST(SampleFormat, DatasetDirectoryRoundTrip) {
  const fs::path dir = fs::path(::testing::TempDir()) / "tcnaa_dsp_dataset";
  fs::remove_all(dir);
  Dataset data{{random_tensor({2, 4, 3}, 8), InteractionLabel(1)}, {random_tensor({2, 4, 3}, 9), InteractionLabel(7)}};
  const fs::path manifest = save_dataset(dir, data);
  const Dataset back = load_dataset(manifest);
  ASSERT_EQ(back.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(back[i].data, data[i].data);
    EXPECT_EQ(back[i].label, data[i].label);
  }
}
