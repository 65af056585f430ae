#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace bimamba::metrics {

// K x K counts; rows are the true class, columns the prediction.
class ConfusionMatrix {
 public:
  ConfusionMatrix() = default;
  explicit ConfusionMatrix(std::size_t classes) : k_(classes), counts_(classes * classes, 0) {}

  std::size_t classes() const { return k_; }
  std::uint64_t at(std::size_t truth, std::size_t pred) const { return counts_[truth * k_ + pred]; }
  std::uint64_t& at(std::size_t truth, std::size_t pred) { return counts_[truth * k_ + pred]; }
  std::uint64_t total() const;
  std::uint64_t row_sum(std::size_t truth) const;
  std::uint64_t col_sum(std::size_t pred) const;

  ConfusionMatrix& operator+=(const ConfusionMatrix& other);
  bool operator==(const ConfusionMatrix&) const = default;

  const std::vector<std::uint64_t>& counts() const { return counts_; }

 private:
  std::size_t k_ = 0;
  std::vector<std::uint64_t> counts_;
};

ConfusionMatrix confusion(std::span<const int> truth, std::span<const int> pred, std::size_t classes);

struct MetricBundle {
  double accuracy = 0.0;
  std::vector<double> precision;
  std::vector<double> recall;
  std::vector<double> f1;
  std::vector<std::uint64_t> support;
  // A class whose precision, recall or F1 had a zero denominator; the metric is reported as 0.
  std::vector<bool> undefined;
  double macro_f1 = 0.0;
  double kappa = 0.0;
  double p_o = 0.0;
  double p_e = 0.0;
};

// One-vs-rest per-class metrics, accuracy = trace/total, macro F1, Cohen's kappa.
MetricBundle bundle(const ConfusionMatrix& cm);

double f1_score(double precision, double recall);

struct RocPoint {
  double threshold;
  double fpr;
  double tpr;
};

struct RocCurve {
  std::vector<RocPoint> points;  // from (0,0) to (1,1)
  double auc = 0.0;
};

// Positive class is label 1. Sweeps thresholds over the distinct scores in
// descending order; tied scores move in one step, which gives half credit.
RocCurve roc_auc(std::span<const double> scores, std::span<const int> labels);

// JSON text of a bundle; `class_names` label the per-class entries.
std::string to_json(const MetricBundle& b, const std::vector<std::string>& class_names, int indent = 2);
std::string to_json(const ConfusionMatrix& cm);
std::string to_json(const RocCurve& roc, int indent = 2);

struct TableRow {
  std::string name;
  MetricBundle metrics;
};

// Plain-text table with columns ACC, F1, Kappa and one per-class F1 column.
std::string render_table(const std::vector<TableRow>& rows, const std::vector<std::string>& class_names);

// Element-wise mean of accuracy, macro F1, kappa and per-class F1 across bundles.
MetricBundle mean_bundle(const std::vector<MetricBundle>& bundles);

}  // namespace bimamba::metrics
