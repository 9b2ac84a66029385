// tcnaa: synth | preprocess | augment | train | eval | gradcheck | ablate

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tcnaa/tcnaa.hpp"

namespace fs = std::filesystem;
using namespace tcnaa;

namespace {

constexpr int kExitValidation = 1;
constexpr int kExitError = 2;

struct CommonOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> overrides;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config, "JSON configuration file")->check(CLI::ExistingFile);
    cmd->add_option("--seed", seed, "global seed (overrides the config)");
    cmd->add_option("--out", out, "output directory");
    cmd->add_option("--set", overrides, "override a config key: key=value (repeatable)")->take_all();
  }

  RunConfig load() const {
    std::vector<std::string> all = overrides;
    if (seed) all.push_back("seed=" + std::to_string(*seed));
    return load_run_config(config.empty() ? std::nullopt : std::optional<fs::path>(config), all);
  }

  fs::path output_dir(const RunConfig& cfg) const { return out.empty() ? fs::path(cfg.output_dir) : fs::path(out); }
};

void write_text(const fs::path& path, const std::string& text) {
  write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

void write_json(const fs::path& path, const Json& j) { write_text(path, j.dump(2) + "\n"); }

Dataset load_nonempty(const fs::path& manifest) {
  Dataset data = load_dataset(manifest);
  if (data.empty()) throw std::invalid_argument("manifest " + manifest.string() + " lists no samples");
  const Shape& shape = data.front().data.shape();
  for (const auto& s : data)
    if (s.data.shape() != shape)
      throw ShapeError("samples in " + manifest.string() + " differ in shape: " + shape_str(shape) + " vs " +
                       shape_str(s.data.shape()));
  return data;
}

ModelConfig model_for(const RunConfig& cfg, const Dataset& data) {
  ModelConfig mc = cfg.model;
  mc.input_features = data.front().data.dim(2);
  mc.validate();
  return mc;
}

/// Gated amplitude tensors for every recording of a raw manifest; short
/// recordings are skipped and reported.
struct AmplitudeSet {
  Dataset samples;
  std::vector<ManifestEntry> entries;
  std::size_t skipped = 0;
};

AmplitudeSet load_amplitudes(const fs::path& manifest_path, std::size_t target_packets) {
  const DatasetManifest m = load_manifest(manifest_path);
  AmplitudeSet out;
  for (const ManifestEntry& e : m.entries) {
    const auto gated = gate_and_trim(load_recording(resolve_entry(manifest_path, e)), target_packets);
    if (!gated) {
      ++out.skipped;
      continue;
    }
    out.samples.push_back({amplitude(*gated), e.label});
    out.entries.push_back(e);
  }
  return out;
}

int cmd_synth(const CommonOptions& opt) {
  const RunConfig cfg = opt.load();
  const fs::path dir = opt.out.empty() ? fs::path(cfg.dataset_dir) : fs::path(opt.out);
  const auto records = generate_synthetic(cfg.synth_spec());
  const fs::path manifest = write_synthetic(dir, records);
  std::printf("synth: %zu recordings (%zu classes x %zu) -> %s\n", records.size(), cfg.synth.classes,
              cfg.synth.samples_per_class, manifest.string().c_str());
  return 0;
}

int cmd_preprocess(const CommonOptions& opt, const fs::path& manifest) {
  const RunConfig cfg = opt.load();
  AmplitudeSet amps = load_amplitudes(manifest, cfg.target_packets);
  Dataset data;
  for (const auto& s : amps.samples) data.push_back({preprocess_amplitude(s.data, cfg.preprocess), s.label});
  const fs::path out = save_dataset(opt.output_dir(cfg), data, &amps.entries);
  std::printf("preprocess: %zu samples written, %zu recordings skipped (< %zu packets) -> %s\n", data.size(),
              amps.skipped, cfg.target_packets, out.string().c_str());
  if (data.empty()) {
    std::fprintf(stderr, "error: no recording reached %zu packets\n", cfg.target_packets);
    return kExitValidation;
  }
  std::printf("sample shape %s\n", shape_str(data.front().data.shape()).c_str());
  return 0;
}

int cmd_augment(const CommonOptions& opt, const fs::path& manifest) {
  const RunConfig cfg = opt.load();
  const AugmentConfig ac = cfg.augment_config();
  Dataset out;
  std::size_t originals = 0;
  if (cfg.augment_stage == AugmentStage::PrePipeline) {
    const AmplitudeSet amps = load_amplitudes(manifest, cfg.target_packets);
    if (amps.samples.empty()) throw std::invalid_argument("no recording reached the target packet count");
    originals = amps.samples.size();
    for (auto& s : expand_dataset(amps.samples, ac))
      out.push_back({preprocess_amplitude(s.data, cfg.preprocess), s.label});
  } else {
    const Dataset data = load_nonempty(manifest);
    originals = data.size();
    out = expand_dataset(data, ac);
  }
  const fs::path path = save_dataset(opt.output_dir(cfg), out);
  std::printf("augment (%s-pipeline): %zu originals -> %zu samples -> %s\n",
              cfg.augment_stage == AugmentStage::PrePipeline ? "pre" : "post", originals, out.size(),
              path.string().c_str());
  return 0;
}

int cmd_train(const CommonOptions& opt, const fs::path& manifest) {
  const RunConfig cfg = opt.load();
  const Dataset data = load_nonempty(manifest);
  const ModelConfig mc = model_for(cfg, data);
  const TrainConfig tc = cfg.train_config();
  Dataset train_set = data, val_set;
  std::string protocol = "none";
  if (cfg.validate_on_fold0) {
    const KFoldPlan plan = make_kfold(labels_of(data), cfg.folds, tc.seed);
    train_set = subset(data, plan.train_indices(0));
    val_set = subset(data, plan.validation_indices(0));
    protocol = "fold0/" + std::to_string(cfg.folds);
  }
  std::printf("train: %zu train / %zu val samples, %zu parameters, validation %s\n", train_set.size(), val_set.size(),
              parameter_count(mc), protocol.c_str());
  const TrainResult tr = train(train_set, mc, tc, val_set.empty() ? nullptr : &val_set, [](const EpochRecord& e) {
    std::printf("epoch %3zu  lr %.3g  train acc %.4f loss %.4f", e.epoch, e.learning_rate, e.train_accuracy,
                e.train_loss);
    if (e.val_accuracy) std::printf("  val acc %.4f loss %.4f", *e.val_accuracy, *e.val_loss);
    std::printf("  (%.1fs)\n", e.seconds);
    std::fflush(stdout);
  });

  const fs::path dir = opt.output_dir(cfg);
  save_checkpoint(dir / "checkpoint.tcnk", tr.params, mc);
  write_text(dir / "metrics.csv", format_metrics_csv(tr.metrics));
  Json summary{{"command", "train"},
               {"validation", protocol},
               {"train_samples", train_set.size()},
               {"val_samples", val_set.size()},
               {"parameters", parameter_count(mc)},
               {"epochs", tr.metrics.epochs.size()},
               {"config", to_json(cfg)},
               {"model", model_to_json(mc)}};
  if (!tr.metrics.epochs.empty()) {
    const EpochRecord& last = tr.metrics.epochs.back();
    summary["final"] = {{"train_accuracy", last.train_accuracy}, {"train_loss", last.train_loss}};
    if (last.val_accuracy) {
      summary["final"]["val_accuracy"] = *last.val_accuracy;
      summary["final"]["val_loss"] = *last.val_loss;
    }
  }
  if (tr.metrics.confusion) write_text(dir / "confusion.csv", format_confusion_csv(*tr.metrics.confusion));
  write_json(dir / "summary.json", summary);
  std::printf("wrote %s\n", (dir / "checkpoint.tcnk").string().c_str());
  return 0;
}

int cmd_eval(const CommonOptions& opt, const fs::path& manifest, const fs::path& checkpoint) {
  const RunConfig cfg = opt.load();
  const Dataset data = load_nonempty(manifest);
  const ModelConfig mc = model_for(cfg, data);
  const ModelParams params = load_checkpoint(checkpoint, mc);
  const EvalResult ev = evaluate(params, mc, data, cfg.threads);
  const fs::path dir = opt.output_dir(cfg);
  write_text(dir / "metrics.csv",
             "epoch,split,accuracy,loss\nfinal,eval," + format_real(ev.accuracy) + ',' + format_real(ev.loss) + '\n');
  write_text(dir / "confusion.csv", format_confusion_csv(ev.confusion));
  write_json(dir / "summary.json", Json{{"command", "eval"},
                                        {"samples", data.size()},
                                        {"accuracy", ev.accuracy},
                                        {"loss", ev.loss},
                                        {"model", model_to_json(mc)}});
  std::printf("eval: %zu samples, accuracy %.4f, loss %.4f\n", data.size(), ev.accuracy, ev.loss);
  std::printf("%s", format_confusion_csv(ev.confusion).c_str());
  return 0;
}

int cmd_gradcheck(const CommonOptions& opt) {
  const RunConfig cfg = opt.load();
  std::vector<GradCheckReport> reports = primitive_grad_checks(derive_seed(cfg.seed, "gradcheck"));
  reports.push_back(model_grad_check(tiny_model_config()));
  std::string csv = "check,max_error,tolerance,passed\n";
  bool ok = true;
  for (const auto& r : reports) {
    ok = ok && r.passed();
    csv += r.name + ',' + format_real(r.max_error) + ',' + format_real(r.tolerance) + ',' +
           (r.passed() ? "1" : "0") + '\n';
    std::printf("%-40s %.3e  (< %.0e)  %s\n", r.name.c_str(), r.max_error, r.tolerance, r.passed() ? "ok" : "FAIL");
  }
  write_text(opt.output_dir(cfg) / "gradcheck.csv", csv);
  std::printf("gradcheck: %s\n", ok ? "all checks passed" : "FAILED");
  return ok ? 0 : kExitValidation;
}

int cmd_ablate(const CommonOptions& opt, const fs::path& manifest, const std::string& sweep_text,
               const std::string& validation_manifest) {
  const RunConfig cfg = opt.load();
  const AblationSweep sweep = parse_sweep(sweep_text);
  const Dataset data = load_nonempty(manifest);
  const ModelConfig mc = model_for(cfg, data);
  std::optional<Dataset> validation;
  if (!validation_manifest.empty()) validation = load_nonempty(validation_manifest);
  const AblationTable table = ablate(data, mc, cfg.train_config(), cfg.augment_config(), sweep,
                                     validation ? &*validation : nullptr, cfg.folds);
  const fs::path dir = opt.output_dir(cfg);
  const std::string csv = format_ablation_csv(table);
  write_text(dir / "ablation.csv", csv);
  write_json(dir / "summary.json", Json{{"command", "ablate"},
                                        {"sweep", sweep_text},
                                        {"validation", table.validation},
                                        {"config", to_json(cfg)}});
  std::printf("%s", csv.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"TCN with masked attention for WiFi-CSI interaction recognition"};
  app.require_subcommand(1);
  CommonOptions opt;
  std::string manifest, checkpoint, sweep, validation;

  auto* synth = app.add_subcommand("synth", "generate a synthetic CSI dataset");
  opt.attach(synth);
  auto* preprocess = app.add_subcommand("preprocess", "gate, normalize, filter and DWT raw recordings");
  opt.attach(preprocess);
  preprocess->add_option("manifest", manifest, "raw recording manifest")->required()->check(CLI::ExistingFile);
  auto* augment = app.add_subcommand("augment", "expand a dataset by dropout and mixing");
  opt.attach(augment);
  augment->add_option("manifest", manifest, "sample manifest (raw when augment.stage=pre)")
      ->required()
      ->check(CLI::ExistingFile);
  auto* train_cmd = app.add_subcommand("train", "train a model");
  opt.attach(train_cmd);
  train_cmd->add_option("manifest", manifest, "preprocessed sample manifest")->required()->check(CLI::ExistingFile);
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  opt.attach(eval);
  eval->add_option("manifest", manifest, "preprocessed sample manifest")->required()->check(CLI::ExistingFile);
  eval->add_option("checkpoint", checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  opt.attach(gradcheck);
  auto* ablate_cmd = app.add_subcommand("ablate", "run an ablation sweep");
  opt.attach(ablate_cmd);
  ablate_cmd->add_option("manifest", manifest, "preprocessed sample manifest")->required()->check(CLI::ExistingFile);
  ablate_cmd->add_option("--sweep", sweep, "kernel=2,7,15 | dropout=.. | attention=pre,none | augment=raw;dropout")
      ->required();
  ablate_cmd->add_option("--validation", validation, "explicit validation manifest (default: fold 0)")
      ->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kExitError;
  }

  try {
    if (*synth) return cmd_synth(opt);
    if (*preprocess) return cmd_preprocess(opt, manifest);
    if (*augment) return cmd_augment(opt, manifest);
    if (*train_cmd) return cmd_train(opt, manifest);
    if (*eval) return cmd_eval(opt, manifest, checkpoint);
    if (*gradcheck) return cmd_gradcheck(opt);
    if (*ablate_cmd) return cmd_ablate(opt, manifest, sweep, validation);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitValidation;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitError;
  }
  return kExitError;
}
