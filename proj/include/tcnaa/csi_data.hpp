#pragma once

// CSI data model: raw complex grids, the "CSI1" container, dataset manifests,
// packet-count gating and a deterministic synthetic dataset generator.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "tcnaa/binary_io.hpp"
#include "tcnaa/rng.hpp"
#include "tcnaa/tensor.hpp"

namespace tcnaa {

struct ComplexSample {
  std::int8_t re = 0;
  std::int8_t im = 0;
  friend bool operator==(const ComplexSample&, const ComplexSample&) = default;
};

inline constexpr std::size_t kNumClasses = 12;

inline constexpr std::array<std::string_view, kNumClasses> kInteractionNames{
    "approaching",        "departing",           "handshaking",         "high_five",
    "hugging",            "kicking_left_leg",    "kicking_right_leg",   "pointing_left_hand",
    "pointing_right_hand", "punching_left_hand", "punching_right_hand", "pushing"};

/// Class id in [0, 12).
class InteractionLabel {
 public:
  constexpr InteractionLabel() = default;
  explicit InteractionLabel(std::size_t id) : id_(id) {
    if (id >= kNumClasses) throw std::out_of_range("interaction label " + std::to_string(id) + " out of range");
  }
  constexpr std::size_t id() const noexcept { return id_; }
  std::string_view name() const noexcept { return kInteractionNames[id_]; }
  friend constexpr auto operator<=>(const InteractionLabel&, const InteractionLabel&) = default;

 private:
  std::size_t id_ = 0;
};

/// Raw CSI grid indexed (pair, packet, subcarrier), pair = i * n_r + j for
/// transmit antenna i and receive antenna j.
class CsiRecording {
 public:
  CsiRecording() = default;
  CsiRecording(std::size_t n_t, std::size_t n_r, std::size_t n_p, std::size_t n_s)
      : n_t_(n_t), n_r_(n_r), n_p_(n_p), n_s_(n_s), data_(n_t * n_r * n_p * n_s) {}
  CsiRecording(std::size_t n_t, std::size_t n_r, std::size_t n_p, std::size_t n_s,
               std::vector<ComplexSample> data)
      : n_t_(n_t), n_r_(n_r), n_p_(n_p), n_s_(n_s), data_(std::move(data)) {
    if (data_.size() != n_t * n_r * n_p * n_s)
      throw std::invalid_argument("CSI data length " + std::to_string(data_.size()) +
                                  " does not match dimensions");
  }

  std::size_t n_t() const noexcept { return n_t_; }
  std::size_t n_r() const noexcept { return n_r_; }
  std::size_t n_p() const noexcept { return n_p_; }
  std::size_t n_s() const noexcept { return n_s_; }
  std::size_t pairs() const noexcept { return n_t_ * n_r_; }

  std::size_t pair_index(std::size_t tx, std::size_t rx) const {
    if (tx >= n_t_ || rx >= n_r_) throw std::out_of_range("antenna index out of range");
    return tx * n_r_ + rx;
  }

  ComplexSample& at(std::size_t pair, std::size_t packet, std::size_t sub) {
    return data_[(pair * n_p_ + packet) * n_s_ + sub];
  }
  const ComplexSample& at(std::size_t pair, std::size_t packet, std::size_t sub) const {
    return data_[(pair * n_p_ + packet) * n_s_ + sub];
  }

  const std::vector<ComplexSample>& samples() const noexcept { return data_; }

  friend bool operator==(const CsiRecording&, const CsiRecording&) = default;

 private:
  std::size_t n_t_ = 0, n_r_ = 0, n_p_ = 0, n_s_ = 0;
  std::vector<ComplexSample> data_;
};

// ---------------------------------------------------------------------------
// CSI1 container: "CSI1", u16 n_t, n_r, n_p, n_s (LE), then (re, im) int8
// pairs ordered pair-major, packet next, subcarrier innermost.

inline constexpr std::string_view kCsiMagic = "CSI1";

inline std::vector<std::uint8_t> encode_recording(const CsiRecording& rec) {
  for (std::size_t d : {rec.n_t(), rec.n_r(), rec.n_p(), rec.n_s()})
    if (d == 0 || d > std::numeric_limits<std::uint16_t>::max())
      throw std::invalid_argument("CSI dimension " + std::to_string(d) + " not representable");
  ByteWriter w;
  w.raw(kCsiMagic);
  for (std::size_t d : {rec.n_t(), rec.n_r(), rec.n_p(), rec.n_s()}) w.u16(static_cast<std::uint16_t>(d));
  for (const ComplexSample& s : rec.samples()) {
    w.i8(s.re);
    w.i8(s.im);
  }
  return w.bytes();
}

inline CsiRecording decode_recording(std::span<const std::uint8_t> bytes, const std::string& context = "CSI1") {
  ByteReader r(bytes, context);
  if (!r.expect_magic(kCsiMagic)) throw FormatError(context + ": bad magic (expected \"CSI1\")");
  const std::size_t n_t = r.u16(), n_r = r.u16(), n_p = r.u16(), n_s = r.u16();
  if (n_t == 0 || n_r == 0 || n_p == 0 || n_s == 0)
    throw FormatError(context + ": zero dimension in header");
  const std::size_t count = n_t * n_r * n_p * n_s;
  const std::size_t expected = 2 * count;
  if (r.remaining() != expected)
    throw FormatError(context + ": payload is " + std::to_string(r.remaining()) + " bytes, expected " +
                      std::to_string(expected));
  std::vector<ComplexSample> data(count);
  for (ComplexSample& s : data) {
    s.re = r.i8();
    s.im = r.i8();
  }
  return CsiRecording(n_t, n_r, n_p, n_s, std::move(data));
}

inline void save_recording(const std::filesystem::path& path, const CsiRecording& rec) {
  write_file_bytes(path, encode_recording(rec));
}

inline CsiRecording load_recording(const std::filesystem::path& path) {
  return decode_recording(read_file_bytes(path), path.string());
}

// ---------------------------------------------------------------------------

/// Standardizes the packet count: recordings shorter than target_np are
/// discarded; longer ones lose packets from the front (the initial steady
/// state) and then from the tail if the front cannot absorb the excess.
/// `max_front_trim` bounds the front cut; by default the whole excess is
/// taken from the front.
inline std::optional<CsiRecording> gate_and_trim(
    const CsiRecording& rec, std::size_t target_np = 1500,
    std::size_t max_front_trim = std::numeric_limits<std::size_t>::max()) {
  if (target_np < 1) throw std::invalid_argument("gate_and_trim: target packet count must be >= 1");
  if (rec.n_p() < target_np) return std::nullopt;
  if (rec.n_p() == target_np) return rec;
  const std::size_t excess = rec.n_p() - target_np;
  const std::size_t front = std::min(excess, max_front_trim);
  CsiRecording out(rec.n_t(), rec.n_r(), target_np, rec.n_s());
  for (std::size_t p = 0; p < rec.pairs(); ++p)
    for (std::size_t k = 0; k < target_np; ++k)
      for (std::size_t s = 0; s < rec.n_s(); ++s) out.at(p, k, s) = rec.at(p, k + front, s);
  return out;
}

/// |h| = sqrt(re^2 + im^2), shape (pairs, n_p, n_s).
inline Tensor amplitude(const CsiRecording& rec) {
  Tensor out(Shape{rec.pairs(), rec.n_p(), rec.n_s()});
  const auto& src = rec.samples();
  for (std::size_t i = 0; i < src.size(); ++i) {
    const double re = src[i].re, im = src[i].im;
    out[i] = std::sqrt(re * re + im * im);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Manifest: UTF-8 lines "path,label_id,pair_id,trial_id".

struct ManifestEntry {
  std::string path;
  InteractionLabel label;
  std::size_t pair_id = 0;
  std::size_t trial_id = 0;
  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;

  void validate() const {
    std::set<std::string> seen;
    for (const ManifestEntry& e : entries) {
      if (e.path.empty() || e.path.find_first_of(",\n\r") != std::string::npos)
        throw std::invalid_argument("manifest path is empty or contains a separator: '" + e.path + "'");
      if (!seen.insert(e.path).second) throw std::invalid_argument("duplicate manifest path: " + e.path);
    }
  }

  friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

inline std::string format_manifest(const DatasetManifest& m) {
  m.validate();
  std::string out;
  for (const ManifestEntry& e : m.entries)
    out += e.path + ',' + std::to_string(e.label.id()) + ',' + std::to_string(e.pair_id) + ',' +
           std::to_string(e.trial_id) + '\n';
  return out;
}

inline DatasetManifest parse_manifest(std::string_view text, const std::string& context = "manifest") {
  DatasetManifest m;
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  std::string line;
  auto to_count = [&](const std::string& field) -> std::size_t {
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(field, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != field.size() || field.front() == '-')
      throw FormatError(context + ":" + std::to_string(line_no) + ": bad integer field '" + field + "'");
    return static_cast<std::size_t>(v);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::string field;
    std::istringstream ls(line);
    while (std::getline(ls, field, ',')) fields.push_back(field);
    if (fields.size() != 4)
      throw FormatError(context + ":" + std::to_string(line_no) + ": expected 4 fields, got " +
                        std::to_string(fields.size()));
    const std::size_t label = to_count(fields[1]);
    if (label >= kNumClasses)
      throw FormatError(context + ":" + std::to_string(line_no) + ": label " + fields[1] + " out of range");
    m.entries.push_back({fields[0], InteractionLabel(label), to_count(fields[2]), to_count(fields[3])});
  }
  try {
    m.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError(context + ": " + e.what());
  }
  return m;
}

inline void save_manifest(const std::filesystem::path& path, const DatasetManifest& m) {
  const std::string text = format_manifest(m);
  write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

inline DatasetManifest load_manifest(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return parse_manifest(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()),
                        path.string());
}

/// Entry paths are stored relative to the manifest's directory unless absolute.
inline std::filesystem::path resolve_entry(const std::filesystem::path& manifest_path,
                                           const ManifestEntry& entry) {
  const std::filesystem::path p(entry.path);
  return p.is_absolute() ? p : manifest_path.parent_path() / p;
}

// ---------------------------------------------------------------------------
// Synthetic data

/// Each class c modulates the amplitude of every subcarrier with a sinusoid
/// of `frequency(c)` cycles per recording, weighted across subcarriers by a
/// raised-cosine profile centred on a class-specific subcarrier.
struct SyntheticSpec {
  std::size_t classes = kNumClasses;
  std::size_t samples_per_class = 20;
  std::size_t n_t = 2;
  std::size_t n_r = 3;
  std::size_t n_p = 1500;
  std::size_t n_s = 30;
  double base_amplitude = 40.0;       // ADC units
  double signature_amplitude = 25.0;  // ADC units
  double frequency_base = 5.0;        // cycles per recording, class 0
  double frequency_step = 3.5;        // added per class id
  std::vector<double> class_frequencies;  // overrides base/step when non-empty
  double profile_depth = 0.5;         // 0 = flat across subcarriers
  double phase_jitter = 0.0;          // per-sample random modulation phase, fraction of 2*pi
  double frequency_jitter = 0.0;      // per-sample relative frequency jitter
  double noise_amplitude = 2.0;       // std-dev of Gaussian noise on re and im
  std::uint64_t seed = 7;

  double frequency(std::size_t cls) const {
    return class_frequencies.empty() ? frequency_base + frequency_step * static_cast<double>(cls)
                                     : class_frequencies.at(cls);
  }

  void validate() const {
    if (classes < 2 || classes > kNumClasses)
      throw std::invalid_argument("synthetic classes must lie in [2, 12]");
    if (samples_per_class < 1) throw std::invalid_argument("synthetic samples_per_class must be >= 1");
    if (n_t < 1 || n_r < 1 || n_p < 1 || n_s < 1) throw std::invalid_argument("synthetic dimensions must be >= 1");
    if (!class_frequencies.empty() && class_frequencies.size() != classes)
      throw std::invalid_argument("class_frequencies must have one entry per class");
    if (profile_depth < 0.0 || profile_depth > 1.0) throw std::invalid_argument("profile_depth must lie in [0, 1]");
    if (noise_amplitude < 0.0 || signature_amplitude < 0.0 || base_amplitude < 0.0)
      throw std::invalid_argument("synthetic amplitudes must be non-negative");
    if (base_amplitude + signature_amplitude > 127.0)
      throw std::invalid_argument("signature amplitude " + std::to_string(base_amplitude + signature_amplitude) +
                                  " exceeds the signed 8-bit range");
  }
};

struct SyntheticRecord {
  CsiRecording recording;
  ManifestEntry entry;
};

inline std::int8_t quantize_adc(double v) {
  const double r = std::round(v);
  return static_cast<std::int8_t>(std::clamp(r, -128.0, 127.0));
}

/// Generates classes * samples_per_class recordings, class-major. A pure
/// function of the spec.
inline std::vector<SyntheticRecord> generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  std::vector<SyntheticRecord> out;
  out.reserve(spec.classes * spec.samples_per_class);
  const std::size_t pairs = spec.n_t * spec.n_r;
  constexpr double two_pi = 2.0 * std::numbers::pi;
  for (std::size_t c = 0; c < spec.classes; ++c) {
    const double centre = static_cast<double>(c) / static_cast<double>(spec.classes);
    std::vector<double> profile(spec.n_s);
    for (std::size_t s = 0; s < spec.n_s; ++s) {
      const double pos = static_cast<double>(s) / static_cast<double>(spec.n_s);
      profile[s] = 1.0 - spec.profile_depth + spec.profile_depth * 0.5 * (1.0 + std::cos(two_pi * (pos - centre)));
    }
    for (std::size_t i = 0; i < spec.samples_per_class; ++i) {
      const std::size_t index = c * spec.samples_per_class + i;
      Rng rng(derive_seed(spec.seed, "synth", {c, i}));
      const double phase = spec.phase_jitter * two_pi * rng.uniform();
      const double freq = spec.frequency(c) * (1.0 + spec.frequency_jitter * (2.0 * rng.uniform() - 1.0));
      CsiRecording rec(spec.n_t, spec.n_r, spec.n_p, spec.n_s);
      for (std::size_t p = 0; p < pairs; ++p) {
        const double pair_gain = 1.0 - 0.04 * static_cast<double>(p);
        for (std::size_t k = 0; k < spec.n_p; ++k) {
          const double t = static_cast<double>(k) / static_cast<double>(spec.n_p);
          const double wave = std::sin(two_pi * freq * t + phase + 0.3 * static_cast<double>(p));
          for (std::size_t s = 0; s < spec.n_s; ++s) {
            const double amp =
                spec.base_amplitude * pair_gain + spec.signature_amplitude * profile[s] * wave;
            const double carrier = two_pi * (0.37 * static_cast<double>(s) + 0.011 * static_cast<double>(k * (p + 1)));
            double re = amp * std::cos(carrier);
            double im = amp * std::sin(carrier);
            if (spec.noise_amplitude > 0.0) {
              re += spec.noise_amplitude * rng.normal();
              im += spec.noise_amplitude * rng.normal();
            }
            rec.at(p, k, s) = {quantize_adc(re), quantize_adc(im)};
          }
        }
      }
      char name[32];
      std::snprintf(name, sizeof(name), "rec_%05zu.csi", index);
      out.push_back({std::move(rec), ManifestEntry{name, InteractionLabel(c), index % 40, index / 40}});
    }
  }
  return out;
}

/// Writes recordings plus "manifest.csv" into `dir`; returns the manifest path.
inline std::filesystem::path write_synthetic(const std::filesystem::path& dir,
                                             const std::vector<SyntheticRecord>& records) {
  std::filesystem::create_directories(dir);
  DatasetManifest m;
  for (const SyntheticRecord& r : records) {
    save_recording(dir / r.entry.path, r.recording);
    m.entries.push_back(r.entry);
  }
  const auto manifest_path = dir / "manifest.csv";
  save_manifest(manifest_path, m);
  return manifest_path;
}

}  // namespace tcnaa
