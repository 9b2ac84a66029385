// Synthetic data -> preprocessing -> a few epochs of training -> evaluation.

#include <cstdio>

#include "tcnaa/tcnaa.hpp"

int main() {
  using namespace tcnaa;

  SyntheticSpec spec;
  spec.classes = 4;
  spec.samples_per_class = 12;
  spec.n_p = 256;
  spec.seed = 3;

  PreprocessOptions prep;  // order-5 Butterworth at 0.1, two Haar levels
  Dataset data;
  for (const auto& r : generate_synthetic(spec)) data.push_back(preprocess(r.recording, r.entry.label, prep));
  std::printf("%zu samples of shape %s\n", data.size(), shape_str(data.front().data.shape()).c_str());

  ModelConfig model;
  model.input_features = spec.n_s;
  model.filters = {16, 16, 16};
  model.kernel = 7;
  model.n_classes = spec.classes;

  TrainConfig cfg;
  cfg.epochs = 10;
  cfg.batch_size = 8;
  cfg.base_lr = 3e-3;
  cfg.seed = 11;

  const KFoldPlan plan = make_kfold(labels_of(data), 4, cfg.seed);
  const Dataset train_set = subset(data, plan.train_indices(0));
  const Dataset val_set = subset(data, plan.validation_indices(0));
  const TrainResult result = train(train_set, model, cfg, &val_set, [](const EpochRecord& e) {
    std::printf("epoch %zu: train %.3f, val %.3f\n", e.epoch, e.train_accuracy, e.val_accuracy.value_or(0.0));
  });

  const EvalResult ev = evaluate(result.params, model, val_set);
  std::printf("validation accuracy %.3f over %zu samples\n", ev.accuracy, ev.confusion.total());
}
