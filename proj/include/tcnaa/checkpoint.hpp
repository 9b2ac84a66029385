#pragma once

// Checkpoint container "TCNK":
//   magic, u32 version, str config JSON, u32 block count,
//   per block: str name, u8 rank, u64 dims..., f64 values (little-endian).

#include <filesystem>
#include <string>

#include "tcnaa/binary_io.hpp"
#include "tcnaa/config.hpp"
#include "tcnaa/model.hpp"

namespace tcnaa {

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::string model_config_echo(const ModelConfig& cfg) { return model_to_json(cfg).dump(); }

inline std::vector<std::uint8_t> encode_checkpoint(const ModelParams& params, const ModelConfig& cfg) {
  ByteWriter w;
  w.raw("TCNK");
  w.u32(kCheckpointVersion);
  w.str(model_config_echo(cfg));
  std::uint32_t blocks = 0;
  params.visit([&](const std::string&, const Tensor&) { ++blocks; });
  w.u32(blocks);
  params.visit([&](const std::string& name, const Tensor& t) {
    w.str(name);
    w.u8(static_cast<std::uint8_t>(t.rank()));
    for (std::size_t d : t.shape()) w.u64(d);
    for (double v : t.values()) w.f64(v);
  });
  return w.bytes();
}

/// Decodes into parameters shaped for `cfg`; the stored config must match it exactly.
inline ModelParams decode_checkpoint(std::span<const std::uint8_t> bytes, const ModelConfig& cfg) {
  ByteReader r(bytes, "checkpoint");
  if (!r.expect_magic("TCNK")) throw FormatError("checkpoint: bad magic (expected \"TCNK\")");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  const std::string stored = r.str();
  const std::string expected = model_config_echo(cfg);
  if (stored != expected)
    throw FormatError("checkpoint: model config mismatch (stored " + stored + ", expected " + expected + ")");
  ModelParams params = init_params(cfg, 0);
  std::uint32_t count = 0;
  params.visit([&](const std::string&, const Tensor&) { ++count; });
  const std::uint32_t blocks = r.u32();
  if (blocks != count)
    throw FormatError("checkpoint: " + std::to_string(blocks) + " blocks, expected " + std::to_string(count));
  params.visit([&](const std::string& name, Tensor& t) {
    const std::string got = r.str();
    if (got != name) throw FormatError("checkpoint: block '" + got + "', expected '" + name + "'");
    Shape shape(r.u8());
    for (std::size_t& d : shape) d = static_cast<std::size_t>(r.u64());
    if (shape != t.shape())
      throw FormatError("checkpoint: block '" + name + "' has shape " + shape_str(shape) + ", expected " +
                        shape_str(t.shape()));
    for (double& v : t.values()) v = r.f64();
  });
  if (r.remaining() != 0) throw FormatError("checkpoint: trailing bytes");
  return params;
}

inline void save_checkpoint(const std::filesystem::path& path, const ModelParams& params, const ModelConfig& cfg) {
  write_file_bytes(path, encode_checkpoint(params, cfg));
}

inline ModelParams load_checkpoint(const std::filesystem::path& path, const ModelConfig& cfg) {
  const auto bytes = read_file_bytes(path);
  return decode_checkpoint(bytes, cfg);
}

/// Reads only the stored model config.
inline ModelConfig peek_checkpoint_config(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  ByteReader r(bytes, "checkpoint");
  if (!r.expect_magic("TCNK")) throw FormatError("checkpoint: bad magic (expected \"TCNK\")");
  if (r.u32() != kCheckpointVersion) throw FormatError("checkpoint: unsupported version");
  const Json j = Json::parse(r.str(), nullptr, false);
  if (j.is_discarded()) throw FormatError("checkpoint: config echo is not JSON");
  ModelConfig cfg;
  try {
    cfg.input_features = j.at("input_features").get<std::size_t>();
    cfg.filters = j.at("filters").get<std::vector<std::size_t>>();
    cfg.kernel = j.at("kernel").get<std::size_t>();
    cfg.dilations = j.at("dilations").get<std::vector<std::size_t>>();
    cfg.dropout = j.at("dropout").get<double>();
    cfg.attention = parse_enum<AttentionPlacement>(j.at("attention").get<std::string>(), "attention");
    cfg.mask = parse_enum<MaskMode>(j.at("mask").get<std::string>(), "mask");
    cfg.residual = j.at("residual").get<bool>();
    cfg.d_k = j.at("d_k").get<std::size_t>();
    cfg.n_classes = j.at("n_classes").get<std::size_t>();
  } catch (const Json::exception& e) {
    throw FormatError(std::string("checkpoint: bad config echo: ") + e.what());
  }
  return cfg;
}

}  // namespace tcnaa
