#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "bimamba/metrics.hpp"
#include "bimamba/model.hpp"
#include "bimamba/training.hpp"
#include "bimamba/types.hpp"

namespace bimamba::cli {

// Entry point of the `bimamba` executable. Returns 0 on success, 2 on a
// usage error and 1 on a runtime failure; failures print one JSON line on
// stderr: {"error": <kind>, "message": <text>}.
int run(const std::vector<std::string>& args);
int run(int argc, char** argv);

std::string to_json(const training::TrainingConfig& cfg);
training::TrainingConfig training_config_from_json(const std::string& text);

struct FoldResult {
  std::string id;  // "fold_01", ...
  training::Fold fold;
  training::TrainReport report;
};

struct CvResult {
  std::vector<FoldResult> folds;
  metrics::MetricBundle mean;
};

// Subject-wise k-fold cross-validation of the stage model. Fold i uses
// model seed and training seed derived from `seed` and i, so results do not
// depend on `threads`. With a non-empty `out`, each fold writes
// fold_XX/{metrics.json, model.*, predictions/} and `out` gets plan.json.
CvResult cross_validate(const EpochBatch& data, const model::StageModelConfig& mcfg,
                        const training::TrainingConfig& tcfg, std::size_t k, std::uint64_t seed,
                        const std::filesystem::path& out = {}, std::size_t threads = 1);

struct RatioResult {
  double ratio = 0.0;
  std::size_t train_size = 0;
  std::size_t test_size = 0;
  double accuracy = 0.0;
  double auc = 0.0;
  metrics::RocCurve roc;
};

// Health classification at each train ratio, with stratified splits.
std::vector<RatioResult> health_sweep(const std::vector<Hypnogram>& hypnograms, const std::vector<double>& ratios,
                                      const model::HealthModelConfig& hcfg, const training::TrainingConfig& tcfg,
                                      std::uint64_t seed, const std::filesystem::path& out = {});

// Aggregates the fold reports of a cv run directory into report.txt,
// report.json and plots/. Throws IoError naming every missing fold.
metrics::MetricBundle report(const std::filesystem::path& run_dir);

// "0.5,0.7" or a range "0.5..0.9" (step 0.1).
std::vector<double> parse_ratios(const std::string& text);

// Worker cap from BIMAMBA_THREADS (default 1).
std::size_t thread_limit();

}  // namespace bimamba::cli
