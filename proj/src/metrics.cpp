#include "bimamba/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <json.hpp>
#include <numeric>

#include "bimamba/errors.hpp"

namespace bimamba::metrics {

using nlohmann::ordered_json;

std::uint64_t ConfusionMatrix::total() const { return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0}); }

std::uint64_t ConfusionMatrix::row_sum(std::size_t truth) const {
  std::uint64_t s = 0;
  for (std::size_t p = 0; p < k_; ++p) s += at(truth, p);
  return s;
}

std::uint64_t ConfusionMatrix::col_sum(std::size_t pred) const {
  std::uint64_t s = 0;
  for (std::size_t t = 0; t < k_; ++t) s += at(t, pred);
  return s;
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
  if (other.k_ != k_) throw DimensionError("confusion matrices differ in class count");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  return *this;
}

ConfusionMatrix confusion(std::span<const int> truth, std::span<const int> pred, std::size_t classes) {
  if (truth.size() != pred.size()) {
    throw DimensionError("confusion: " + std::to_string(truth.size()) + " true labels vs " +
                         std::to_string(pred.size()) + " predictions");
  }
  ConfusionMatrix cm(classes);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const int t = truth[i], p = pred[i];
    if (t < 0 || static_cast<std::size_t>(t) >= classes || p < 0 || static_cast<std::size_t>(p) >= classes) {
      throw IndexError("confusion: label pair (" + std::to_string(t) + ", " + std::to_string(p) + ") at index " +
                       std::to_string(i) + " outside [0, " + std::to_string(classes) + ")");
    }
    ++cm.at(static_cast<std::size_t>(t), static_cast<std::size_t>(p));
  }
  return cm;
}

double f1_score(double precision, double recall) {
  const double denom = precision + recall;
  return denom > 0.0 ? 2.0 * precision * recall / denom : 0.0;
}

MetricBundle bundle(const ConfusionMatrix& cm) {
  const std::size_t k = cm.classes();
  const auto n = cm.total();
  if (k == 0 || n == 0) throw DomainError("bundle: confusion matrix is empty");
  MetricBundle b;
  b.precision.assign(k, 0.0);
  b.recall.assign(k, 0.0);
  b.f1.assign(k, 0.0);
  b.support.assign(k, 0);
  b.undefined.assign(k, false);
  const double total = static_cast<double>(n);
  std::uint64_t trace = 0;
  double chance = 0.0;
  for (std::size_t c = 0; c < k; ++c) {
    const auto tp = cm.at(c, c);
    const auto row = cm.row_sum(c);
    const auto col = cm.col_sum(c);
    trace += tp;
    b.support[c] = row;
    if (col > 0) {
      b.precision[c] = static_cast<double>(tp) / static_cast<double>(col);
    } else {
      b.undefined[c] = true;
    }
    if (row > 0) {
      b.recall[c] = static_cast<double>(tp) / static_cast<double>(row);
    } else {
      b.undefined[c] = true;
    }
    if (b.precision[c] + b.recall[c] > 0.0) {
      b.f1[c] = f1_score(b.precision[c], b.recall[c]);
    } else {
      b.undefined[c] = true;
    }
    chance += static_cast<double>(row) * static_cast<double>(col);
  }
  b.accuracy = static_cast<double>(trace) / total;
  b.macro_f1 = std::accumulate(b.f1.begin(), b.f1.end(), 0.0) / static_cast<double>(k);
  b.p_o = b.accuracy;
  b.p_e = chance / (total * total);
  // p_e == 1 only when both raters put everything in one class.
  b.kappa = b.p_e < 1.0 ? (b.p_o - b.p_e) / (1.0 - b.p_e) : (b.p_o == 1.0 ? 1.0 : 0.0);
  return b;
}

RocCurve roc_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw DimensionError("roc_auc: scores and labels differ in length");
  std::size_t pos = 0, neg = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == 1) {
      ++pos;
    } else if (labels[i] == 0) {
      ++neg;
    } else {
      throw IndexError("roc_auc: label at index " + std::to_string(i) + " is not 0 or 1");
    }
  }
  if (pos == 0 || neg == 0) throw DomainError("roc_auc: AUC is undefined unless both classes are present");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  RocCurve roc;
  roc.points.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
  std::size_t tp = 0, fp = 0;
  double area = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    const double s = scores[order[i]];
    while (i < order.size() && scores[order[i]] == s) {
      (labels[order[i]] == 1 ? tp : fp) += 1;
      ++i;
    }
    const RocPoint prev = roc.points.back();
    RocPoint p{s, static_cast<double>(fp) / static_cast<double>(neg), static_cast<double>(tp) / static_cast<double>(pos)};
    area += (p.fpr - prev.fpr) * (p.tpr + prev.tpr) * 0.5;
    roc.points.push_back(p);
  }
  roc.auc = area;
  return roc;
}

namespace {

ordered_json bundle_json(const MetricBundle& b, const std::vector<std::string>& names) {
  ordered_json j;
  j["accuracy"] = b.accuracy;
  j["macro_f1"] = b.macro_f1;
  j["kappa"] = b.kappa;
  j["p_o"] = b.p_o;
  j["p_e"] = b.p_e;
  ordered_json per = ordered_json::array();
  for (std::size_t c = 0; c < b.f1.size(); ++c) {
    ordered_json e;
    e["class"] = c < names.size() ? names[c] : std::to_string(c);
    e["precision"] = b.precision[c];
    e["recall"] = b.recall[c];
    e["f1"] = b.f1[c];
    if (c < b.support.size()) e["support"] = b.support[c];
    e["undefined"] = c < b.undefined.size() ? static_cast<bool>(b.undefined[c]) : false;
    per.push_back(e);
  }
  j["per_class"] = per;
  return j;
}

}  // namespace

std::string to_json(const MetricBundle& b, const std::vector<std::string>& class_names, int indent) {
  return bundle_json(b, class_names).dump(indent);
}

std::string to_json(const ConfusionMatrix& cm) {
  ordered_json rows = ordered_json::array();
  for (std::size_t t = 0; t < cm.classes(); ++t) {
    ordered_json r = ordered_json::array();
    for (std::size_t p = 0; p < cm.classes(); ++p) r.push_back(cm.at(t, p));
    rows.push_back(r);
  }
  return rows.dump();
}

std::string to_json(const RocCurve& roc, int indent) {
  ordered_json j;
  j["schema"] = "bimamba-roc/1";
  j["auc"] = roc.auc;
  ordered_json pts = ordered_json::array();
  for (const auto& p : roc.points) {
    // JSON has no infinity; the first point's threshold is written as null.
    ordered_json e;
    if (std::isfinite(p.threshold)) {
      e["threshold"] = p.threshold;
    } else {
      e["threshold"] = nullptr;
    }
    e["fpr"] = p.fpr;
    e["tpr"] = p.tpr;
    pts.push_back(e);
  }
  j["points"] = pts;
  return j.dump(indent);
}

std::string render_table(const std::vector<TableRow>& rows, const std::vector<std::string>& class_names) {
  std::size_t name_width = 5;
  for (const auto& r : rows) name_width = std::max(name_width, r.name.size());
  auto cell = [](const std::string& s, std::size_t width) {
    return s.size() >= width ? s : std::string(width - s.size(), ' ') + s;
  };
  auto num = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", v);
    return std::string(buf);
  };
  std::string out = "Model" + std::string(name_width - 5, ' ');
  out += " |" + cell("ACC", 7) + cell("F1", 7) + cell("Kappa", 7) + " |";
  for (const auto& c : class_names) out += cell(c, 7);
  out += '\n';
  const std::size_t width = out.size() - 1;
  out += std::string(width, '-') + '\n';
  for (const auto& r : rows) {
    out += r.name + std::string(name_width - r.name.size(), ' ');
    out += " |" + cell(num(r.metrics.accuracy), 7) + cell(num(r.metrics.macro_f1), 7) +
           cell(num(r.metrics.kappa), 7) + " |";
    for (std::size_t c = 0; c < class_names.size(); ++c) {
      out += cell(c < r.metrics.f1.size() ? num(r.metrics.f1[c]) : "-", 7);
    }
    out += '\n';
  }
  return out;
}

MetricBundle mean_bundle(const std::vector<MetricBundle>& bundles) {
  if (bundles.empty()) throw DomainError("mean_bundle: no bundles to average");
  MetricBundle m;
  const std::size_t k = bundles.front().f1.size();
  m.precision.assign(k, 0.0);
  m.recall.assign(k, 0.0);
  m.f1.assign(k, 0.0);
  m.support.assign(k, 0);
  m.undefined.assign(k, false);
  const double n = static_cast<double>(bundles.size());
  for (const auto& b : bundles) {
    if (b.f1.size() != k) throw DimensionError("mean_bundle: bundles differ in class count");
    m.accuracy += b.accuracy / n;
    m.macro_f1 += b.macro_f1 / n;
    m.kappa += b.kappa / n;
    m.p_o += b.p_o / n;
    m.p_e += b.p_e / n;
    for (std::size_t c = 0; c < k; ++c) {
      m.precision[c] += b.precision[c] / n;
      m.recall[c] += b.recall[c] / n;
      m.f1[c] += b.f1[c] / n;
      if (c < b.support.size()) m.support[c] += b.support[c];
      if (c < b.undefined.size() && b.undefined[c]) m.undefined[c] = true;
    }
  }
  return m;
}

}  // namespace bimamba::metrics
