#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "inceptseg/tensor.hpp"

namespace iseg {

struct ConfusionCounts {
  long long tp = 0, fp = 0, tn = 0, fn = 0;
  long long total() const { return tp + fp + tn + fn; }
};

ConfusionCounts confusion(const Tensor4& pred_binary, const Tensor4& truth);

struct ScalarMetrics {
  double accuracy = 0, sensitivity = 0, specificity = 0, precision = 0, f1 = 0;
  // set when the corresponding metric hit a 0/0 denominator and was defined as 0
  bool degenerate_sensitivity = false, degenerate_specificity = false,
       degenerate_precision = false, degenerate_f1 = false;
};

ScalarMetrics scalar_metrics(const ConfusionCounts& c);

struct JaccardResult {
  double value = 0;
  bool degenerate = false;  // empty-union case, defined as 1
};

JaccardResult jaccard(const ConfusionCounts& c);
JaccardResult jaccard(const Tensor4& pred_binary, const Tensor4& truth);

struct RocCurve {
  std::vector<std::pair<double, double>> points;  // (fpr, tpr)
  double auc = 0;
};

// Throws ConfigError when only one class is present (AUC undefined).
RocCurve roc_auc(const std::vector<double>& scores, const std::vector<int>& labels);

struct MetricsReport {
  ConfusionCounts counts;
  ScalarMetrics scalars;
  double jaccard = 0;
  bool jaccard_degenerate = false;
  double auc = 0;
  bool auc_defined = false;
};

MetricsReport make_report(const ConfusionCounts& counts,
                          const std::vector<double>& scores,
                          const std::vector<int>& labels);

// Pixel-pooled (micro) report plus per-image means (macro).
struct EvalReport {
  MetricsReport micro;
  double macro_accuracy = 0, macro_sensitivity = 0, macro_specificity = 0,
         macro_precision = 0, macro_f1 = 0, macro_jaccard = 0;
  int image_count = 0;
};

void write_metrics_csv(const std::string& path, const std::string& row_id,
                       const EvalReport& report);
void write_roc_csv(const std::string& path, const RocCurve& curve);

}  // namespace iseg
