#pragma once

// RunConfig: every tunable of the pipeline in one JSON document. Unknown keys
// are rejected by name; `--set a.b=value` overrides use the same key paths.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "tcnaa/augment.hpp"
#include "tcnaa/csi_data.hpp"
#include "tcnaa/dsp.hpp"
#include "tcnaa/model.hpp"
#include "tcnaa/rng.hpp"
#include "tcnaa/train.hpp"

namespace tcnaa {

using Json = nlohmann::ordered_json;

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class AugmentStage { PostPipeline, PrePipeline };

struct RunConfig {
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  std::string dataset_dir = "data";
  std::string output_dir = "out";

  SyntheticSpec synth;
  std::size_t target_packets = 1500;
  PreprocessOptions preprocess;
  AugmentConfig augment;
  AugmentStage augment_stage = AugmentStage::PostPipeline;
  ModelConfig model;
  TrainConfig train;
  std::size_t folds = 10;
  bool validate_on_fold0 = true;

  /// Named sub-streams of the global seed.
  SyntheticSpec synth_spec() const {
    SyntheticSpec s = synth;
    s.seed = derive_seed(seed, "synth");
    return s;
  }
  AugmentConfig augment_config() const {
    AugmentConfig a = augment;
    a.seed = derive_seed(seed, "augment");
    return a;
  }
  TrainConfig train_config() const {
    TrainConfig t = train;
    t.seed = derive_seed(seed, "train");
    t.threads = threads;
    return t;
  }
};

// ---------------------------------------------------------------------------
// Enum spellings

template <typename E>
struct EnumNames;

template <>
struct EnumNames<AttentionPlacement> {
  static constexpr std::pair<AttentionPlacement, const char*> table[] = {{AttentionPlacement::PreTcnOnly, "pre"},
                                                                         {AttentionPlacement::PostTcn, "post"},
                                                                         {AttentionPlacement::EveryLayer, "every"},
                                                                         {AttentionPlacement::None, "none"}};
};
template <>
struct EnumNames<MaskMode> {
  static constexpr std::pair<MaskMode, const char*> table[] = {{MaskMode::NegInf, "neg_inf"},
                                                               {MaskMode::ZeroLiteral, "zero"}};
};
template <>
struct EnumNames<AugmentMethod> {
  static constexpr std::pair<AugmentMethod, const char*> table[] = {{AugmentMethod::Dropout, "dropout"},
                                                                    {AugmentMethod::MixOther, "mix_other"},
                                                                    {AugmentMethod::MixSame, "mix_same"}};
};
template <>
struct EnumNames<StageOrder> {
  static constexpr std::pair<StageOrder, const char*> table[] = {{StageOrder::NormalizeThenFilter, "normalize_first"},
                                                                 {StageOrder::FilterThenNormalize, "filter_first"}};
};
template <>
struct EnumNames<AugmentStage> {
  static constexpr std::pair<AugmentStage, const char*> table[] = {{AugmentStage::PostPipeline, "post"},
                                                                   {AugmentStage::PrePipeline, "pre"}};
};
template <>
struct EnumNames<WaveletFamily> {
  static constexpr std::pair<WaveletFamily, const char*> table[] = {{WaveletFamily::Haar, "haar"}};
};

template <typename E>
std::string enum_name(E v) {
  for (const auto& [e, n] : EnumNames<E>::table)
    if (e == v) return n;
  throw ConfigError("unnamed enum value");
}

template <typename E>
E parse_enum(const std::string& s, const std::string& key) {
  std::string options;
  for (const auto& [e, n] : EnumNames<E>::table) {
    if (s == n) return e;
    options += (options.empty() ? "" : ", ") + std::string(n);
  }
  throw ConfigError("config key '" + key + "': unknown value '" + s + "' (expected one of " + options + ")");
}

// ---------------------------------------------------------------------------
// JSON mapping

inline Json model_to_json(const ModelConfig& m) {
  return Json{{"input_features", m.input_features},
              {"filters", m.filters},
              {"kernel", m.kernel},
              {"dilations", m.dilations},
              {"dropout", m.dropout},
              {"attention", enum_name(m.attention)},
              {"mask", enum_name(m.mask)},
              {"residual", m.residual},
              {"d_k", m.d_k},
              {"n_classes", m.n_classes}};
}

inline Json to_json(const RunConfig& c) {
  std::vector<std::string> methods;
  for (AugmentMethod m : c.augment.methods) methods.push_back(enum_name(m));
  Json model = model_to_json(c.model);
  model.erase("input_features");  // taken from the data
  model.erase("dilations");       // 1, 2, 4, ... per layer
  return Json{
      {"seed", c.seed},
      {"threads", c.threads},
      {"paths", {{"dataset", c.dataset_dir}, {"output", c.output_dir}}},
      {"synth",
       {{"classes", c.synth.classes},
        {"samples_per_class", c.synth.samples_per_class},
        {"n_t", c.synth.n_t},
        {"n_r", c.synth.n_r},
        {"n_p", c.synth.n_p},
        {"n_s", c.synth.n_s},
        {"base_amplitude", c.synth.base_amplitude},
        {"signature_amplitude", c.synth.signature_amplitude},
        {"frequency_base", c.synth.frequency_base},
        {"frequency_step", c.synth.frequency_step},
        {"class_frequencies", c.synth.class_frequencies},
        {"profile_depth", c.synth.profile_depth},
        {"phase_jitter", c.synth.phase_jitter},
        {"frequency_jitter", c.synth.frequency_jitter},
        {"noise_amplitude", c.synth.noise_amplitude}}},
      {"preprocess",
       {{"target_packets", c.target_packets},
        {"filter_order", c.preprocess.filter.order},
        {"cutoff", c.preprocess.filter.cutoff},
        {"zero_phase", c.preprocess.filter.zero_phase},
        {"wavelet", enum_name(c.preprocess.wavelet.family)},
        {"levels", c.preprocess.wavelet.levels},
        {"order", enum_name(c.preprocess.order)}}},
      {"augment",
       {{"dropout_lambda_max", c.augment.dropout_lambda_max},
        {"mix_epsilon_max", c.augment.mix_epsilon_max},
        {"methods", methods},
        {"copies_per_method", c.augment.copies_per_method},
        {"stage", enum_name(c.augment_stage)}}},
      {"model", model},
      {"train",
       {{"batch_size", c.train.batch_size},
        {"epochs", c.train.epochs},
        {"base_lr", c.train.base_lr},
        {"lr_decay", c.train.lr_decay},
        {"weight_decay", c.train.weight_decay},
        {"beta1", c.train.beta1},
        {"beta2", c.train.beta2},
        {"epsilon", c.train.epsilon},
        {"shuffle", c.train.shuffle},
        {"folds", c.folds},
        {"validation", c.validate_on_fold0 ? "fold0" : "none"}}}};
}

namespace detail {

/// Rejects any key in `given` that is absent from `reference`, naming its full path.
inline void check_known_keys(const Json& given, const Json& reference, const std::string& prefix) {
  if (!given.is_object()) return;
  for (auto it = given.begin(); it != given.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!reference.contains(it.key())) throw ConfigError("unknown config key '" + key + "'");
    if (reference.at(it.key()).is_object()) {
      if (!it.value().is_object()) throw ConfigError("config key '" + key + "' must be a section");
      check_known_keys(it.value(), reference.at(it.key()), key);
    }
  }
}

template <typename T>
T get(const Json& j, const char* section, const char* name) {
  const std::string key = std::string(section) + (*section ? "." : "") + name;
  const Json& v = *section ? j.at(section).at(name) : j.at(name);
  try {
    if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t> || std::is_same_v<T, int>) {
      if (!v.is_number_integer()) throw ConfigError("expected an integer");
      if constexpr (!std::is_same_v<T, int>)
        if (v.get<long long>() < 0) throw ConfigError("expected a non-negative integer");
    }
    return v.get<T>();
  } catch (const std::exception& e) {
    throw ConfigError("config key '" + key + "': " + e.what());
  }
}

}  // namespace detail

inline RunConfig from_json(const Json& given) {
  const Json reference = to_json(RunConfig{});
  detail::check_known_keys(given, reference, "");
  Json j = reference;
  j.merge_patch(given);
  using detail::get;
  RunConfig c;
  c.seed = get<std::uint64_t>(j, "", "seed");
  c.threads = get<std::size_t>(j, "", "threads");
  c.dataset_dir = get<std::string>(j, "paths", "dataset");
  c.output_dir = get<std::string>(j, "paths", "output");

  c.synth.classes = get<std::size_t>(j, "synth", "classes");
  c.synth.samples_per_class = get<std::size_t>(j, "synth", "samples_per_class");
  c.synth.n_t = get<std::size_t>(j, "synth", "n_t");
  c.synth.n_r = get<std::size_t>(j, "synth", "n_r");
  c.synth.n_p = get<std::size_t>(j, "synth", "n_p");
  c.synth.n_s = get<std::size_t>(j, "synth", "n_s");
  c.synth.base_amplitude = get<double>(j, "synth", "base_amplitude");
  c.synth.signature_amplitude = get<double>(j, "synth", "signature_amplitude");
  c.synth.frequency_base = get<double>(j, "synth", "frequency_base");
  c.synth.frequency_step = get<double>(j, "synth", "frequency_step");
  c.synth.class_frequencies = get<std::vector<double>>(j, "synth", "class_frequencies");
  c.synth.profile_depth = get<double>(j, "synth", "profile_depth");
  c.synth.phase_jitter = get<double>(j, "synth", "phase_jitter");
  c.synth.frequency_jitter = get<double>(j, "synth", "frequency_jitter");
  c.synth.noise_amplitude = get<double>(j, "synth", "noise_amplitude");

  c.target_packets = get<std::size_t>(j, "preprocess", "target_packets");
  c.preprocess.filter.order = get<int>(j, "preprocess", "filter_order");
  c.preprocess.filter.cutoff = get<double>(j, "preprocess", "cutoff");
  c.preprocess.filter.zero_phase = get<bool>(j, "preprocess", "zero_phase");
  c.preprocess.wavelet.family =
      parse_enum<WaveletFamily>(get<std::string>(j, "preprocess", "wavelet"), "preprocess.wavelet");
  c.preprocess.wavelet.levels = get<std::size_t>(j, "preprocess", "levels");
  c.preprocess.order = parse_enum<StageOrder>(get<std::string>(j, "preprocess", "order"), "preprocess.order");

  c.augment.dropout_lambda_max = get<double>(j, "augment", "dropout_lambda_max");
  c.augment.mix_epsilon_max = get<double>(j, "augment", "mix_epsilon_max");
  c.augment.methods.clear();
  for (const auto& m : get<std::vector<std::string>>(j, "augment", "methods"))
    c.augment.methods.push_back(parse_enum<AugmentMethod>(m, "augment.methods"));
  c.augment.copies_per_method = get<std::size_t>(j, "augment", "copies_per_method");
  c.augment_stage = parse_enum<AugmentStage>(get<std::string>(j, "augment", "stage"), "augment.stage");

  c.model.filters = get<std::vector<std::size_t>>(j, "model", "filters");
  c.model.dilations = default_dilations(c.model.filters.size());
  c.model.kernel = get<std::size_t>(j, "model", "kernel");
  c.model.dropout = get<double>(j, "model", "dropout");
  c.model.attention = parse_enum<AttentionPlacement>(get<std::string>(j, "model", "attention"), "model.attention");
  c.model.mask = parse_enum<MaskMode>(get<std::string>(j, "model", "mask"), "model.mask");
  c.model.residual = get<bool>(j, "model", "residual");
  c.model.d_k = get<std::size_t>(j, "model", "d_k");
  c.model.n_classes = get<std::size_t>(j, "model", "n_classes");

  c.train.batch_size = get<std::size_t>(j, "train", "batch_size");
  c.train.epochs = get<std::size_t>(j, "train", "epochs");
  c.train.base_lr = get<double>(j, "train", "base_lr");
  c.train.lr_decay = get<double>(j, "train", "lr_decay");
  c.train.weight_decay = get<double>(j, "train", "weight_decay");
  c.train.beta1 = get<double>(j, "train", "beta1");
  c.train.beta2 = get<double>(j, "train", "beta2");
  c.train.epsilon = get<double>(j, "train", "epsilon");
  c.train.shuffle = get<bool>(j, "train", "shuffle");
  c.folds = get<std::size_t>(j, "train", "folds");
  const std::string validation = get<std::string>(j, "train", "validation");
  if (validation != "fold0" && validation != "none")
    throw ConfigError("config key 'train.validation': expected 'fold0' or 'none'");
  c.validate_on_fold0 = validation == "fold0";

  try {
    c.synth.validate();
    c.preprocess.filter.validate();
    c.preprocess.wavelet.validate();
    c.augment.validate();
    c.model.validate();
    c.train.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("invalid configuration: ") + e.what());
  }
  if (c.threads < 1) throw ConfigError("config key 'threads' must be >= 1");
  return c;
}

/// Applies "a.b.c=value" to a JSON document. The value is parsed as JSON when
/// possible and taken as a string otherwise.
inline void apply_override(Json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  const Json reference = to_json(RunConfig{});
  const Json* ref = &reference;
  Json* node = &doc;
  std::stringstream parts(key);
  std::string part;
  std::vector<std::string> path;
  while (std::getline(parts, part, '.')) path.push_back(part);
  for (std::size_t i = 0; i < path.size(); ++i) {
    if (!ref->is_object() || !ref->contains(path[i])) throw ConfigError("unknown config key '" + key + "'");
    ref = &ref->at(path[i]);
    if (i + 1 < path.size()) {
      if (!node->contains(path[i])) (*node)[path[i]] = Json::object();
      node = &(*node)[path[i]];
    }
  }
  if (ref->is_object()) throw ConfigError("config key '" + key + "' names a section");
  Json value = Json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  (*node)[path.back()] = value;
}

inline Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  Json j = Json::parse(in, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw ConfigError("config file " + path.string() + " is not a JSON object");
  return j;
}

/// Precedence: overrides > file > defaults.
inline RunConfig load_run_config(const std::optional<std::filesystem::path>& file,
                                 const std::vector<std::string>& overrides) {
  Json doc = file ? read_json_file(*file) : Json::object();
  for (const auto& o : overrides) apply_override(doc, o);
  return from_json(doc);
}

// ---------------------------------------------------------------------------
// Sweep specifications: "kernel=2,7,15", "dropout=0.2,0.5",
// "attention=pre,none", "augment=raw;dropout;mix_other+mix_same".

inline AblationSweep parse_sweep(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos) throw ConfigError("sweep '" + text + "' is not kind=values");
  const std::string kind = text.substr(0, eq);
  const std::string values = text.substr(eq + 1);
  auto split = [](const std::string& s, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, sep))
      if (!item.empty()) out.push_back(item);
    return out;
  };
  AblationSweep sweep;
  try {
    if (kind == "kernel") {
      sweep.kind = SweepKind::Kernel;
      for (const auto& v : split(values, ',')) sweep.kernels.push_back(std::stoul(v));
    } else if (kind == "dropout") {
      sweep.kind = SweepKind::Dropout;
      for (const auto& v : split(values, ',')) sweep.dropouts.push_back(std::stod(v));
    } else if (kind == "attention") {
      sweep.kind = SweepKind::Attention;
      for (const auto& v : split(values, ','))
        sweep.placements.push_back(parse_enum<AttentionPlacement>(v, "sweep.attention"));
    } else if (kind == "augment") {
      sweep.kind = SweepKind::Augmentation;
      for (const auto& set : split(values, ';')) {
        std::vector<AugmentMethod> methods;
        if (set != "raw")
          for (const auto& m : split(set, '+')) methods.push_back(parse_enum<AugmentMethod>(m, "sweep.augment"));
        sweep.augment_sets.push_back(methods);
      }
    } else {
      throw ConfigError("unknown sweep kind '" + kind + "' (expected kernel, dropout, attention or augment)");
    }
  } catch (const std::logic_error& e) {
    throw ConfigError("bad sweep value in '" + text + "': " + e.what());
  }
  if (sweep.points() == 0) throw ConfigError("sweep '" + text + "' has no points");
  return sweep;
}

}  // namespace tcnaa
