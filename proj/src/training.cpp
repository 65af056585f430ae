#include "bimamba/training.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <numeric>
#include <set>

#include "bimamba/errors.hpp"
#include "bimamba/ops.hpp"

namespace bimamba::training {

using nlohmann::ordered_json;

void TrainingConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("training: lr must be > 0");
  if (!(weight_decay >= 0.0 && weight_decay < 1.0)) throw ConfigError("training: weight_decay must lie in [0, 1)");
  if (batch_size < 1) throw ConfigError("training: batch_size must be >= 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("training: betas must lie in [0, 1)");
  if (!(eps > 0.0)) throw ConfigError("training: eps must be > 0");
}

void adam_step(std::span<const std::span<double>> params, std::span<const std::span<const double>> grads,
               AdamState& state, const TrainingConfig& cfg) {
  if (params.size() != grads.size()) throw DimensionError("adam_step: parameter and gradient counts differ");
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(params[i].size(), 0.0);
      state.v[i].assign(params[i].size(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw DimensionError("adam_step: optimizer state does not match parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].size() != grads[i].size() || state.m[i].size() != params[i].size()) {
      throw DimensionError("adam_step: shape mismatch for parameter " + std::to_string(i));
    }
    for (std::size_t j = 0; j < grads[i].size(); ++j) {
      if (!std::isfinite(grads[i][j])) {
        throw NumericError("adam_step: non-finite gradient in parameter " + std::to_string(i) + " at index " +
                           std::to_string(j));
      }
    }
  }
  state.t += 1;
  const double t = static_cast<double>(state.t);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  const double decay = 1.0 - cfg.lr * cfg.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i];
    auto g = grads[i];
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
      const double m_hat = m[j] / c1;
      const double v_hat = v[j] / c2;
      p[j] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
      p[j] *= decay;
    }
  }
}

Adam::Adam(NamedTensors params, TrainingConfig cfg) : params_(std::move(params)), cfg_(cfg) { cfg_.validate(); }

void Adam::zero_grad() {
  for (auto& [name, t] : params_) t.zero_grad();
}

void Adam::step() {
  std::vector<std::span<double>> p;
  std::vector<std::span<const double>> g;
  std::vector<std::vector<double>> zeros;
  zeros.reserve(params_.size());
  for (auto& [name, t] : params_) {
    p.push_back(t.mutable_data());
    if (t.has_grad()) {
      g.push_back(t.grad());
    } else {
      zeros.emplace_back(t.numel(), 0.0);
      g.emplace_back(zeros.back());
    }
  }
  adam_step(p, g, state_, cfg_);
}

FoldPlan subject_kfold(std::vector<std::string> subjects, std::size_t k, std::uint64_t seed) {
  const std::set<std::string> unique(subjects.begin(), subjects.end());
  if (unique.size() != subjects.size()) throw ConfigError("subject_kfold: duplicate subject ids");
  if (k < 2) throw ConfigError("subject_kfold: k must be >= 2");
  if (k > subjects.size()) {
    throw ConfigError("subject_kfold: k = " + std::to_string(k) + " exceeds " + std::to_string(subjects.size()) +
                      " subjects");
  }
  Rng rng(seed);
  std::shuffle(subjects.begin(), subjects.end(), rng.engine());
  const std::size_t n = subjects.size();
  FoldPlan plan(k);
  std::size_t start = 0;
  for (std::size_t f = 0; f < k; ++f) {
    const std::size_t size = n / k + (f < n % k ? 1 : 0);
    for (std::size_t i = 0; i < n; ++i) {
      (i >= start && i < start + size ? plan[f].validation : plan[f].train).push_back(subjects[i]);
    }
    start += size;
  }
  return plan;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> stratified_split(std::span<const int> labels,
                                                                               double train_ratio,
                                                                               std::uint64_t seed) {
  if (!(train_ratio > 0.0 && train_ratio < 1.0)) throw ConfigError("stratified_split: ratio must lie in (0, 1)");
  std::set<int> classes(labels.begin(), labels.end());
  Rng rng(seed);
  std::vector<std::size_t> train, test;
  for (int c : classes) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] == c) rows.push_back(i);
    }
    std::shuffle(rows.begin(), rows.end(), rng.engine());
    auto n_train = static_cast<std::size_t>(std::llround(train_ratio * static_cast<double>(rows.size())));
    n_train = std::clamp<std::size_t>(n_train, rows.size() > 1 ? 1 : 0, rows.size() > 1 ? rows.size() - 1 : rows.size());
    train.insert(train.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(n_train));
    test.insert(test.end(), rows.begin() + static_cast<std::ptrdiff_t>(n_train), rows.end());
  }
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return {train, test};
}

std::vector<std::size_t> rows_for_subjects(const EpochBatch& data, std::span<const std::string> subjects) {
  const std::set<std::string> wanted(subjects.begin(), subjects.end());
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (wanted.count(data.subjects[i])) rows.push_back(i);
  }
  return rows;
}

Evaluation evaluate(const model::Classifier& m, const EpochBatch& data, std::size_t batch_size) {
  NoGradGuard guard;
  if (data.size() == 0) throw ConfigError("evaluate: empty dataset");
  const std::size_t k = m.num_classes();
  Evaluation ev;
  ev.predictions.reserve(data.size());
  ev.probabilities.reserve(data.size() * k);
  double loss = 0.0;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    std::vector<std::size_t> idx(std::min(batch_size, data.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    EpochBatch batch = data.gather(idx);
    Tensor logits = m.forward_eval(batch.data);
    const auto lv = logits.data();
    for (std::size_t r = 0; r < idx.size(); ++r) {
      const double* row = lv.data() + r * k;
      const double mx = *std::max_element(row, row + k);
      double z = 0.0;
      for (std::size_t c = 0; c < k; ++c) z += std::exp(row[c] - mx);
      for (std::size_t c = 0; c < k; ++c) ev.probabilities.push_back(std::exp(row[c] - mx) / z);
      const int label = batch.labels[r];
      if (label < 0 || static_cast<std::size_t>(label) >= k) {
        throw IndexError("evaluate: label " + std::to_string(label) + " at row " + std::to_string(start + r));
      }
      loss += std::log(z) + mx - row[label];
    }
    for (int p : model::argmax_rows(logits)) ev.predictions.push_back(p);
  }
  ev.loss = loss / static_cast<double>(data.size());
  ev.confusion = metrics::confusion(data.labels, ev.predictions, k);
  ev.metrics = metrics::bundle(ev.confusion);
  return ev;
}

namespace {

std::vector<std::vector<double>> snapshot(const NamedTensors& params) {
  std::vector<std::vector<double>> out;
  out.reserve(params.size());
  for (const auto& [name, t] : params) out.emplace_back(t.data().begin(), t.data().end());
  return out;
}

void restore(NamedTensors& params, const std::vector<std::vector<double>>& saved) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto dst = params[i].second.mutable_data();
    std::copy(saved[i].begin(), saved[i].end(), dst.begin());
  }
}

}  // namespace

TrainReport train(model::Classifier& model, const EpochBatch& data, const Fold& fold, const TrainingConfig& cfg,
                  const std::filesystem::path& checkpoint_stem, const EpochCallback& on_epoch) {
  cfg.validate();
  if (fold.train.empty() || fold.validation.empty()) throw ConfigError("train: fold has an empty side");
  const std::set<std::string> train_ids(fold.train.begin(), fold.train.end());
  for (const auto& v : fold.validation) {
    if (train_ids.count(v)) throw ContractError("train: subject '" + v + "' is on both sides of the fold");
  }
  const auto train_rows = rows_for_subjects(data, fold.train);
  const auto val_rows = rows_for_subjects(data, fold.validation);
  if (train_rows.empty() || val_rows.empty()) throw ConfigError("train: fold selects no epochs on one side");
  const EpochBatch val = data.gather(val_rows);
  for (const auto& s : val.subjects) {
    if (train_ids.count(s)) throw ContractError("train: validation contains training subject '" + s + "'");
  }

  NamedTensors params = model.parameters();
  Adam opt(params, cfg);
  Rng order_rng(cfg.seed);
  Rng dropout_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order = train_rows;

  TrainReport report;
  std::vector<std::vector<double>> best_params = snapshot(params);
  double best_acc = -1.0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), order_rng.engine());
    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t len = std::min(cfg.batch_size, order.size() - start);
      EpochBatch batch = data.gather(std::span(order).subspan(start, len));
      opt.zero_grad();
      Tensor logits = model.forward(batch.data, true, dropout_rng);
      Tensor loss = ops::softmax_cross_entropy(logits, batch.labels);
      const double lv = loss.item();
      if (!std::isfinite(lv)) {
        report.diverged = true;
        break;
      }
      backward(loss);
      opt.step();
      loss_sum += lv * static_cast<double>(len);
      seen += len;
    }
    if (report.diverged) break;
    Evaluation ev = evaluate(model, val);
    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = loss_sum / static_cast<double>(seen);
    stats.val_loss = ev.loss;
    stats.val_accuracy = ev.metrics.accuracy;
    stats.val_macro_f1 = ev.metrics.macro_f1;
    stats.val_kappa = ev.metrics.kappa;
    report.history.push_back(stats);
    if (on_epoch) on_epoch(stats);
    if (ev.metrics.accuracy > best_acc) {
      best_acc = ev.metrics.accuracy;
      report.best_epoch = epoch;
      report.best = std::move(ev);
      best_params = snapshot(params);
    }
  }
  restore(params, best_params);
  if (report.best_epoch == 0) report.best = evaluate(model, val);
  if (!checkpoint_stem.empty()) {
    model::save_model(model, checkpoint_stem);
    report.checkpoint = checkpoint_stem;
  }
  return report;
}

std::string to_json(const TrainReport& r, const std::vector<std::string>& class_names) {
  ordered_json j;
  j["schema"] = "bimamba-train-report/1";
  j["best_epoch"] = r.best_epoch;
  j["diverged"] = r.diverged;
  ordered_json hist = ordered_json::array();
  for (const auto& e : r.history) {
    hist.push_back({{"epoch", e.epoch},
                    {"train_loss", e.train_loss},
                    {"val_loss", e.val_loss},
                    {"val_accuracy", e.val_accuracy},
                    {"val_macro_f1", e.val_macro_f1},
                    {"val_kappa", e.val_kappa}});
  }
  j["history"] = hist;
  j["best_metrics"] = ordered_json::parse(metrics::to_json(r.best.metrics, class_names));
  j["best_confusion"] = ordered_json::parse(metrics::to_json(r.best.confusion));
  j["checkpoint"] = r.checkpoint.empty() ? std::string() : r.checkpoint.filename().string();
  return j.dump(2);
}

}  // namespace bimamba::training
