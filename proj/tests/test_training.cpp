#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "bimamba/errors.hpp"
#include "bimamba/ops.hpp"
#include "bimamba/training.hpp"

using namespace bimamba;
using namespace bimamba::training;

namespace {

std::vector<std::string> ids(std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back("s" + std::to_string(i));
  return out;
}

// Returns a fixed prediction per row: column 0 of the input's row is the
// class to predict, or `constant` when non-negative.
class FixedClassifier : public model::Classifier {
 public:
  explicit FixedClassifier(int constant = -1) : constant_(constant) {}
  Tensor forward(const Tensor& x, bool, Rng&) const override {
    const std::size_t b = x.dim(0), row = x.numel() / b;
    std::vector<double> out(b * 5, 0.0);
    for (std::size_t i = 0; i < b; ++i) {
      const int c = constant_ >= 0 ? constant_ : static_cast<int>(x.data()[i * row]);
      out[i * 5 + static_cast<std::size_t>(c)] = 10.0;
    }
    return Tensor({b, 5}, out);
  }
  NamedTensors parameters() const override { return {}; }
  std::size_t num_classes() const override { return 5; }
  std::string config_json() const override { return "{}"; }

 private:
  int constant_;
};

EpochBatch labelled_rows(std::size_t per_class, std::size_t subjects) {
  EpochBatch b;
  std::vector<double> data;
  for (std::size_t i = 0; i < per_class * 5; ++i) {
    const int label = static_cast<int>(i % 5);
    data.push_back(label);
    data.push_back(0.0);
    b.labels.push_back(label);
    b.subjects.push_back("s" + std::to_string(i % subjects));
  }
  b.data = Tensor({per_class * 5, 1, 2}, data);
  return b;
}

// Separable toy task: class c has a tone whose frequency grows with c.
EpochBatch toy_stage_data(std::size_t per_subject, std::size_t subjects, std::uint64_t seed) {
  Rng rng(seed);
  EpochBatch b;
  const std::size_t n = per_subject * subjects, C = 2, S = 64;
  std::vector<double> data;
  for (std::size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(rng.index(5));
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t s = 0; s < S; ++s)
        data.push_back(std::sin(0.15 * (label + 1) * static_cast<double>(s)) +
                       0.3 * rng.normal());
    b.labels.push_back(label);
    b.subjects.push_back("s" + std::to_string(i / per_subject));
  }
  b.data = Tensor({n, C, S}, data);
  return b;
}

model::StageModelConfig toy_config() {
  model::StageModelConfig c;
  c.channels = 2;
  c.epoch_samples = 64;
  c.state_dim = 3;
  c.cnn = {{6, 5, 2, 1}, {8, 3, 2, 2}};
  c.dropout = 0.0;
  return c;
}

}  // namespace

TEST(Adam, FirstStepMovesByLearningRate) {
  // With zero moments, the bias-corrected first step is lr * g / (|g| + eps).
  TrainingConfig cfg;
  cfg.lr = 0.01;
  cfg.weight_decay = 0.0;
  for (double g0 : {3.0, -0.2, 1e-3}) {
    std::vector<double> p = {1.0};
    std::vector<double> g = {g0};
    std::vector<std::span<double>> ps = {p};
    std::vector<std::span<const double>> gs = {g};
    AdamState st;
    adam_step(ps, gs, st, cfg);
    EXPECT_NEAR(p[0], 1.0 - 0.01 * g0 / (std::abs(g0) + 1e-8), 1e-15);
  }
}

TEST(Adam, DecoupledDecayShrinksAfterStep) {
  TrainingConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.5;
  std::vector<double> p = {2.0}, g = {0.0};
  std::vector<std::span<double>> ps = {p};
  std::vector<std::span<const double>> gs = {g};
  AdamState st;
  adam_step(ps, gs, st, cfg);
  EXPECT_NEAR(p[0], 2.0 * (1.0 - 0.05), 1e-15);
}

TEST(Adam, QuadraticRecurrence) {
  // f(p) = p^2 / 2; closed-form moment recurrences tracked alongside.
  TrainingConfig cfg;
  cfg.lr = 0.05;
  cfg.weight_decay = 0.0;
  std::vector<double> p = {1.5};
  double q = 1.5, m = 0.0, v = 0.0;
  AdamState st;
  for (int t = 1; t <= 50; ++t) {
    std::vector<double> g = {p[0]};
    std::vector<std::span<double>> ps = {p};
    std::vector<std::span<const double>> gs = {g};
    adam_step(ps, gs, st, cfg);
    m = 0.9 * m + 0.1 * q;
    v = 0.999 * v + 0.001 * q * q;
    q -= 0.05 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
    EXPECT_NEAR(p[0], q, 1e-12);
  }
  EXPECT_LT(std::abs(p[0]), 1.5);
}

TEST(Adam, RejectsNonFiniteGradient) {
  TrainingConfig cfg;
  std::vector<double> p = {1.0}, g = {std::nan("")};
  std::vector<std::span<double>> ps = {p};
  std::vector<std::span<const double>> gs = {g};
  AdamState st;
  EXPECT_THROW(adam_step(ps, gs, st, cfg), NumericError);
}

TEST(Adam, ValidatesConfig) {
  TrainingConfig cfg;
  cfg.lr = 0.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.batch_size = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(KFold, TenSubjectsTenFolds) {
  const auto plan = subject_kfold(ids(10), 10, 1);
  ASSERT_EQ(plan.size(), 10u);
  for (const auto& f : plan) {
    EXPECT_EQ(f.validation.size(), 1u);
    EXPECT_EQ(f.train.size(), 9u);
  }
}

TEST(KFold, FiftySubjectsTwentyFiveFolds) {
  const auto plan = subject_kfold(ids(50), 25, 2);
  ASSERT_EQ(plan.size(), 25u);
  for (const auto& f : plan) EXPECT_EQ(f.validation.size(), 2u);
}

TEST(KFold, PropertiesOverSweep) {
  for (std::size_t n = 2; n <= 23; ++n) {
    for (std::size_t k = 2; k <= n; k += 3) {
      const auto all = ids(n);
      const auto plan = subject_kfold(all, k, n * 31 + k);
      std::multiset<std::string> seen;
      std::size_t lo = n, hi = 0;
      for (const auto& f : plan) {
        lo = std::min(lo, f.validation.size());
        hi = std::max(hi, f.validation.size());
        std::set<std::string> tr(f.train.begin(), f.train.end());
        for (const auto& v : f.validation) {
          EXPECT_FALSE(tr.count(v));
          seen.insert(v);
        }
        EXPECT_EQ(f.train.size() + f.validation.size(), n);
      }
      EXPECT_LE(hi - lo, 1u);
      EXPECT_EQ(seen, std::multiset<std::string>(all.begin(), all.end()));
    }
  }
}

TEST(KFold, SeedIsDeterministic) {
  const auto a = subject_kfold(ids(12), 4, 9), b = subject_kfold(ids(12), 4, 9), c = subject_kfold(ids(12), 4, 10);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(a[i].validation, b[i].validation);
  bool differs = false;
  for (std::size_t i = 0; i < 4; ++i) differs |= a[i].validation != c[i].validation;
  EXPECT_TRUE(differs);
}

TEST(KFold, Errors) {
  EXPECT_THROW(subject_kfold(ids(3), 4, 0), ConfigError);
  EXPECT_THROW(subject_kfold(ids(3), 1, 0), ConfigError);
  EXPECT_THROW(subject_kfold({"a", "a", "b"}, 2, 0), ConfigError);
}

TEST(Stratified, KeepsClassShares) {
  std::vector<int> labels;
  for (int i = 0; i < 110; ++i) labels.push_back(0);
  for (int i = 0; i < 100; ++i) labels.push_back(1);
  for (double r : {0.5, 0.6, 0.7, 0.8, 0.9}) {
    const auto [tr, te] = stratified_split(labels, r, 3);
    std::size_t h = 0;
    for (auto i : tr) h += labels[i] == 0;
    EXPECT_EQ(h, static_cast<std::size_t>(std::llround(110 * r)));
    EXPECT_EQ(tr.size() - h, static_cast<std::size_t>(std::llround(100 * r)));
    EXPECT_EQ(tr.size() + te.size(), 210u);
    std::set<std::size_t> all(tr.begin(), tr.end());
    for (auto i : te) EXPECT_FALSE(all.count(i));
  }
  EXPECT_THROW(stratified_split(labels, 1.0, 0), ConfigError);
}

TEST(Evaluate, PerfectPredictions) {
  FixedClassifier oracle;
  const auto ev = evaluate(oracle, labelled_rows(4, 2), 3);
  EXPECT_DOUBLE_EQ(ev.metrics.accuracy, 1.0);
  EXPECT_DOUBLE_EQ(ev.metrics.kappa, 1.0);
  EXPECT_DOUBLE_EQ(ev.metrics.macro_f1, 1.0);
  EXPECT_EQ(ev.probabilities.size(), 20u * 5u);
}

TEST(Evaluate, ConstantPredictionHasZeroKappa) {
  FixedClassifier constant(0);
  const auto ev = evaluate(constant, labelled_rows(6, 2));
  EXPECT_NEAR(ev.metrics.accuracy, 0.2, 1e-15);
  EXPECT_NEAR(ev.metrics.kappa, 0.0, 1e-15);
  // Loss oracle: -log softmax with logits (10, 0, 0, 0, 0).
  const double lse = std::log(std::exp(10.0) + 4.0);
  EXPECT_NEAR(ev.loss, 0.2 * (lse - 10.0) + 0.8 * lse, 1e-12);
}

TEST(Evaluate, EmptyDatasetIsConfigError) {
  FixedClassifier oracle;
  EpochBatch empty;
  empty.data = Tensor::zeros({0, 1, 2});
  EXPECT_THROW(evaluate(oracle, empty), ConfigError);
}

TEST(Train, LossDecreasesAndBestIsRestored) {
  const auto data = toy_stage_data(40, 4, 1);
  model::StageModel m(toy_config(), 3);
  TrainingConfig cfg;
  cfg.epochs = 6;
  cfg.batch_size = 16;
  cfg.lr = 5e-3;
  cfg.seed = 4;
  const Fold fold{{"s0", "s1", "s2"}, {"s3"}};
  const auto r = train(m, data, fold, cfg);
  ASSERT_EQ(r.history.size(), 6u);
  EXPECT_LT(r.history.back().train_loss, r.history.front().train_loss);
  double best = 0.0;
  for (const auto& e : r.history) best = std::max(best, e.val_accuracy);
  EXPECT_DOUBLE_EQ(r.best.metrics.accuracy, best);
  EXPECT_DOUBLE_EQ(r.history[r.best_epoch - 1].val_accuracy, best);
  // The returned model holds the best epoch's weights.
  const auto again = evaluate(m, data.gather(rows_for_subjects(data, fold.validation)));
  EXPECT_DOUBLE_EQ(again.metrics.accuracy, best);
}

TEST(Train, Deterministic) {
  const auto data = toy_stage_data(10, 3, 2);
  TrainingConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 8;
  cfg.seed = 1;
  const Fold fold{{"s0", "s1"}, {"s2"}};
  model::StageModel a(toy_config(), 5), b(toy_config(), 5);
  const auto ra = train(a, data, fold, cfg), rb = train(b, data, fold, cfg);
  for (std::size_t i = 0; i < 2; ++i) EXPECT_EQ(ra.history[i].train_loss, rb.history[i].train_loss);
  const auto pa = a.parameters(), pb = b.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i)
    for (std::size_t j = 0; j < pa[i].second.numel(); ++j) EXPECT_EQ(pa[i].second.data()[j], pb[i].second.data()[j]);
}

TEST(Train, FoldErrors) {
  const auto data = toy_stage_data(4, 3, 2);
  model::StageModel m(toy_config(), 5);
  TrainingConfig cfg;
  cfg.epochs = 1;
  EXPECT_THROW(train(m, data, Fold{{"s0"}, {}}, cfg), ConfigError);
  EXPECT_THROW(train(m, data, Fold{{"s0", "s1"}, {"s1"}}, cfg), ContractError);
  EXPECT_THROW(train(m, data, Fold{{"s0"}, {"nobody"}}, cfg), ConfigError);
}
