#include "inceptseg/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "inceptseg/errors.hpp"

namespace iseg {

namespace {

void check_binary(const Tensor4& t, const char* what) {
  for (double v : t.data)
    if (v != 0.0 && v != 1.0)
      throw ConfigError(std::string("confusion: ") + what + " is not strictly binary");
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

ConfusionCounts confusion(const Tensor4& pred_binary, const Tensor4& truth) {
  if (!pred_binary.same_shape(truth))
    throw ConfigError("confusion: shape mismatch " + pred_binary.shape_str() + " vs " +
                      truth.shape_str());
  check_binary(pred_binary, "prediction");
  check_binary(truth, "truth");
  ConfusionCounts c;
  for (size_t i = 0; i < truth.data.size(); ++i) {
    const bool p = pred_binary.data[i] == 1.0, t = truth.data[i] == 1.0;
    if (p && t) ++c.tp;
    else if (p && !t) ++c.fp;
    else if (!p && t) ++c.fn;
    else ++c.tn;
  }
  return c;
}

ScalarMetrics scalar_metrics(const ConfusionCounts& c) {
  ScalarMetrics m;
  const double tp = static_cast<double>(c.tp), fp = static_cast<double>(c.fp);
  const double tn = static_cast<double>(c.tn), fn = static_cast<double>(c.fn);
  m.accuracy = c.total() > 0 ? (tp + tn) / static_cast<double>(c.total()) : 0.0;
  if (tp + fn > 0) m.sensitivity = tp / (tp + fn);
  else m.degenerate_sensitivity = true;
  if (tn + fp > 0) m.specificity = tn / (tn + fp);
  else m.degenerate_specificity = true;
  if (tp + fp > 0) m.precision = tp / (tp + fp);
  else m.degenerate_precision = true;
  if (2 * tp + fp + fn > 0) m.f1 = 2 * tp / (2 * tp + fp + fn);
  else m.degenerate_f1 = true;
  return m;
}

JaccardResult jaccard(const ConfusionCounts& c) {
  const double inter = static_cast<double>(c.tp);
  const double uni = static_cast<double>(c.tp + c.fp + c.fn);
  if (uni == 0.0) return {1.0, true};
  return {inter / uni, false};
}

JaccardResult jaccard(const Tensor4& pred_binary, const Tensor4& truth) {
  return jaccard(confusion(pred_binary, truth));
}

RocCurve roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size())
    throw ConfigError("roc_auc: scores and labels differ in length");
  long long pos = 0, neg = 0;
  for (int l : labels) (l ? pos : neg) += 1;
  if (pos == 0 || neg == 0)
    throw ConfigError("roc_auc: AUC undefined, only one class present");

  std::vector<size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return scores[a] > scores[b]; });

  RocCurve curve;
  curve.points.emplace_back(0.0, 0.0);
  long long tp = 0, fp = 0;
  size_t i = 0;
  while (i < order.size()) {
    const double thr = scores[order[i]];
    // all samples tied at this threshold enter together
    while (i < order.size() && scores[order[i]] == thr) {
      (labels[order[i]] ? tp : fp) += 1;
      ++i;
    }
    curve.points.emplace_back(static_cast<double>(fp) / static_cast<double>(neg),
                              static_cast<double>(tp) / static_cast<double>(pos));
  }
  if (curve.points.back() != std::pair<double, double>(1.0, 1.0))
    curve.points.emplace_back(1.0, 1.0);

  double auc = 0.0;
  for (size_t k = 1; k < curve.points.size(); ++k) {
    const auto& [x0, y0] = curve.points[k - 1];
    const auto& [x1, y1] = curve.points[k];
    auc += (x1 - x0) * (y0 + y1) * 0.5;
  }
  curve.auc = auc;
  return curve;
}

MetricsReport make_report(const ConfusionCounts& counts,
                          const std::vector<double>& scores,
                          const std::vector<int>& labels) {
  MetricsReport r;
  r.counts = counts;
  r.scalars = scalar_metrics(counts);
  const JaccardResult j = jaccard(counts);
  r.jaccard = j.value;
  r.jaccard_degenerate = j.degenerate;
  if (!scores.empty()) {
    try {
      r.auc = roc_auc(scores, labels).auc;
      r.auc_defined = true;
    } catch (const ConfigError&) {
      r.auc_defined = false;
    }
  }
  return r;
}

void write_metrics_csv(const std::string& path, const std::string& row_id,
                       const EvalReport& rep) {
  std::ofstream os(path);
  if (!os) throw IoError("metrics: cannot open '" + path + "' for writing");
  os << "id,tp,fp,tn,fn,accuracy,sensitivity,specificity,precision,f1,jaccard,auc,"
        "auc_defined,degenerate_se,degenerate_sp,degenerate_precision,degenerate_f1,"
        "jaccard_degenerate,macro_accuracy,macro_sensitivity,macro_specificity,"
        "macro_precision,macro_f1,macro_jaccard,image_count\n";
  const auto& m = rep.micro;
  os << row_id << ',' << m.counts.tp << ',' << m.counts.fp << ',' << m.counts.tn << ','
     << m.counts.fn << ',' << fmt(m.scalars.accuracy) << ',' << fmt(m.scalars.sensitivity)
     << ',' << fmt(m.scalars.specificity) << ',' << fmt(m.scalars.precision) << ','
     << fmt(m.scalars.f1) << ',' << fmt(m.jaccard) << ',' << fmt(m.auc) << ','
     << (m.auc_defined ? 1 : 0) << ',' << (m.scalars.degenerate_sensitivity ? 1 : 0) << ','
     << (m.scalars.degenerate_specificity ? 1 : 0) << ','
     << (m.scalars.degenerate_precision ? 1 : 0) << ',' << (m.scalars.degenerate_f1 ? 1 : 0)
     << ',' << (m.jaccard_degenerate ? 1 : 0) << ',' << fmt(rep.macro_accuracy) << ','
     << fmt(rep.macro_sensitivity) << ',' << fmt(rep.macro_specificity) << ','
     << fmt(rep.macro_precision) << ',' << fmt(rep.macro_f1) << ','
     << fmt(rep.macro_jaccard) << ',' << rep.image_count << '\n';
  if (!os) throw IoError("metrics: write failed for '" + path + "'");
}

void write_roc_csv(const std::string& path, const RocCurve& curve) {
  std::ofstream os(path);
  if (!os) throw IoError("metrics: cannot open '" + path + "' for writing");
  os << "fpr,tpr\n";
  for (const auto& [x, y] : curve.points) os << fmt(x) << ',' << fmt(y) << '\n';
  if (!os) throw IoError("metrics: write failed for '" + path + "'");
}

}  // namespace iseg
