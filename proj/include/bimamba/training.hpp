#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "bimamba/metrics.hpp"
#include "bimamba/model.hpp"
#include "bimamba/types.hpp"

namespace bimamba::training {

struct TrainingConfig {
  std::size_t epochs = 40;
  std::size_t batch_size = 100;
  double lr = 1e-3;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 0;

  void validate() const;
};

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::uint64_t t = 0;
};

// One Adam update with bias correction followed by decoupled weight decay
// p <- p (1 - lr wd). `state` is sized on first use.
void adam_step(std::span<const std::span<double>> params, std::span<const std::span<const double>> grads,
               AdamState& state, const TrainingConfig& cfg);

// Adam over named tensors, reading their accumulated grads.
class Adam {
 public:
  Adam(NamedTensors params, TrainingConfig cfg);
  void zero_grad();
  void step();
  const AdamState& state() const { return state_; }

 private:
  NamedTensors params_;
  TrainingConfig cfg_;
  AdamState state_;
};

struct Fold {
  std::vector<std::string> train;
  std::vector<std::string> validation;
};
using FoldPlan = std::vector<Fold>;

// Seeded shuffle of subject ids into k validation groups whose sizes differ
// by at most one; each fold trains on the remaining subjects.
FoldPlan subject_kfold(std::vector<std::string> subjects, std::size_t k, std::uint64_t seed);

// Seeded split keeping each label's share equal on both sides; `train_ratio`
// of every label group (rounded) goes to training. Returns (train, test) row indices.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> stratified_split(std::span<const int> labels,
                                                                               double train_ratio,
                                                                               std::uint64_t seed);

struct Evaluation {
  metrics::ConfusionMatrix confusion;
  metrics::MetricBundle metrics;
  double loss = 0.0;
  std::vector<int> predictions;
  // Softmax probabilities, row-major [N, K].
  std::vector<double> probabilities;
};

Evaluation evaluate(const model::Classifier& m, const EpochBatch& data, std::size_t batch_size = 256);

struct EpochStats {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
  double val_macro_f1 = 0.0;
  double val_kappa = 0.0;
};

struct TrainReport {
  std::vector<EpochStats> history;
  std::size_t best_epoch = 0;  // 1-based; 0 when no epoch completed
  Evaluation best;
  bool diverged = false;
  std::filesystem::path checkpoint;
};

using EpochCallback = std::function<void(const EpochStats&)>;

// Fits `model` on the fold's training subjects and keeps the parameters of
// the epoch with the highest validation accuracy (restored on return, and
// saved when `checkpoint_stem` is non-empty). Stops early only on a
// non-finite loss.
TrainReport train(model::Classifier& model, const EpochBatch& data, const Fold& fold, const TrainingConfig& cfg,
                  const std::filesystem::path& checkpoint_stem = {}, const EpochCallback& on_epoch = {});

// Rows whose subject is in `subjects`, in dataset order.
std::vector<std::size_t> rows_for_subjects(const EpochBatch& data, std::span<const std::string> subjects);

std::string to_json(const TrainReport& r, const std::vector<std::string>& class_names);

}  // namespace bimamba::training
