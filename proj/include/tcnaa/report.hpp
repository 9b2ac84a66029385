#pragma once

// Text renderings of metrics, confusion matrices and ablation tables.

#include <cstdio>
#include <string>

#include "tcnaa/train.hpp"

namespace tcnaa {

inline std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

/// "epoch,split,accuracy,loss" with one train row and, when present, one val row per epoch.
inline std::string format_metrics_csv(const Metrics& m) {
  std::string out = "epoch,split,accuracy,loss\n";
  for (const EpochRecord& e : m.epochs) {
    const std::string epoch = std::to_string(e.epoch);
    out += epoch + ",train," + format_real(e.train_accuracy) + ',' + format_real(e.train_loss) + '\n';
    if (e.val_accuracy)
      out += epoch + ",val," + format_real(*e.val_accuracy) + ',' + format_real(e.val_loss.value_or(0.0)) + '\n';
  }
  return out;
}

/// Rows are true classes, columns predicted classes.
inline std::string format_confusion_csv(const ConfusionMatrix& cm) {
  std::string out = "true\\predicted";
  for (std::size_t j = 0; j < cm.classes(); ++j) out += ',' + std::to_string(j);
  out += '\n';
  for (std::size_t i = 0; i < cm.classes(); ++i) {
    out += std::to_string(i);
    for (std::size_t j = 0; j < cm.classes(); ++j) out += ',' + std::to_string(cm.at(i, j));
    out += '\n';
  }
  return out;
}

inline std::string format_ablation_csv(const AblationTable& t) {
  std::string out =
      "parameter,value,train_accuracy,train_loss,val_accuracy,val_loss,epochs_to_90,train_samples,val_samples,"
      "validation\n";
  for (const AblationRow& r : t.rows)
    out += r.parameter + ',' + r.value + ',' + format_real(r.train_accuracy) + ',' + format_real(r.train_loss) + ',' +
           format_real(r.val_accuracy) + ',' + format_real(r.val_loss) + ',' +
           (r.epochs_to_90 ? std::to_string(*r.epochs_to_90) : std::string("never")) + ',' +
           std::to_string(r.train_samples) + ',' + std::to_string(r.val_samples) + ',' + t.validation + '\n';
  return out;
}

}  // namespace tcnaa
