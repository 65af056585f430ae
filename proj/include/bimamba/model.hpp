#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "bimamba/eca.hpp"
#include "bimamba/serialize.hpp"
#include "bimamba/ssm.hpp"
#include "bimamba/types.hpp"

namespace bimamba::model {

struct ConvLayerSpec {
  std::size_t out_channels = 64;
  std::size_t kernel = 7;
  std::size_t stride = 2;
  std::size_t pool = 1;  // max-pool width and stride; 1 disables pooling

  // (kernel - stride) / 2, so every layer divides the length by about `stride`.
  std::size_t padding() const { return kernel > stride ? (kernel - stride) / 2 : 0; }
};

struct StageModelConfig {
  std::size_t channels = 10;
  std::size_t epoch_samples = 1000;
  std::size_t n_bimamba = 1;
  std::size_t state_dim = 16;
  std::vector<ConvLayerSpec> cnn = {{64, 7, 2, 1}, {96, 5, 2, 1}, {128, 3, 2, 1}};
  double dropout = 0.2;
  std::size_t expand = 2;
  std::size_t conv_width = 4;
  bool use_eca = true;
  std::size_t eca_kernel = 0;  // 0 picks adaptive_kernel_size(last CNN width)

  void validate() const;
  // Width of the CNN output, which is also the BiMamba model width.
  std::size_t hidden_width() const { return cnn.back().out_channels; }
  // Sequence length after the CNN front end.
  std::size_t feature_length() const;
};

struct HealthModelConfig {
  std::size_t max_cycles = 850;
  std::size_t n_bimamba = 1;
  std::size_t state_dim = 8;
  std::size_t expand = 2;
  std::size_t conv_width = 4;
  double dropout = 0.2;

  static constexpr std::size_t kInputRows = kNumStages + 1;  // one-hot stages + mask
  static constexpr std::size_t kClasses = 2;
  void validate() const;
};

// Anything the trainer can fit: maps a batch tensor to class logits.
class Classifier {
 public:
  virtual ~Classifier() = default;
  // x: [B, ...] -> logits [B, num_classes()]. Dropout is active iff `train`.
  virtual Tensor forward(const Tensor& x, bool train, Rng& rng) const = 0;
  virtual NamedTensors parameters() const = 0;
  virtual std::size_t num_classes() const = 0;
  // Architecture description embedded in checkpoints.
  virtual std::string config_json() const = 0;

  Tensor forward_eval(const Tensor& x) const;
  std::size_t parameter_count() const;
};

// CNN front end -> ECA -> n BiMamba blocks -> time mean -> linear head.
class StageModel final : public Classifier {
 public:
  StageModel(StageModelConfig cfg, std::uint64_t seed);

  Tensor forward(const Tensor& x, bool train, Rng& rng) const override;
  NamedTensors parameters() const override;
  std::size_t num_classes() const override { return kNumStages; }
  std::string config_json() const override;
  const StageModelConfig& config() const { return cfg_; }

  // Output of the CNN front end, [B, hidden, T'].
  Tensor features(const Tensor& x, bool train, Rng& rng) const;

  struct ConvLayer {
    Tensor weight;
    Tensor bias;
  };
  std::vector<ConvLayer> cnn;
  eca::EcaAttention eca;
  std::vector<ssm::BiMambaBlock> blocks;
  Tensor head_w;  // [5, hidden]
  Tensor head_b;  // [5]

 private:
  StageModelConfig cfg_;
};

// One-hot hypnogram with mask row -> BiMamba stack -> masked time mean ->
// linear head with two outputs (healthy, unhealthy).
class HealthModel final : public Classifier {
 public:
  HealthModel(HealthModelConfig cfg, std::uint64_t seed);

  // x: [B, 6, T]; row 5 is the mask and must be a run of ones then zeros.
  Tensor forward(const Tensor& x, bool train, Rng& rng) const override;
  NamedTensors parameters() const override;
  std::size_t num_classes() const override { return HealthModelConfig::kClasses; }
  std::string config_json() const override;
  const HealthModelConfig& config() const { return cfg_; }

  std::vector<ssm::BiMambaBlock> blocks;
  Tensor head_w;  // [2, 6]
  Tensor head_b;  // [2]

 private:
  HealthModelConfig cfg_;
};

std::unique_ptr<StageModel> build_stage_model(const StageModelConfig& cfg, std::uint64_t seed);
std::unique_ptr<HealthModel> build_health_model(const HealthModelConfig& cfg, std::uint64_t seed);

// Eval-mode logits for a batch of epochs [B, C, S] -> [B, 5].
Tensor forward_stage(const StageModel& m, const EpochBatch& batch, bool train, Rng& rng);

// Argmax per epoch across the batches in order; ties go to the lower class.
Hypnogram predict_hypnogram(const Classifier& m, std::span<const EpochBatch> epochs);
std::vector<int> argmax_rows(const Tensor& logits);

void save_model(const Classifier& m, const std::filesystem::path& stem);
// Rebuilds the architecture from the embedded config, then loads weights.
std::unique_ptr<Classifier> load_model(const std::filesystem::path& stem);

std::string to_json(const StageModelConfig& cfg);
StageModelConfig stage_config_from_json(const std::string& text);
std::string to_json(const HealthModelConfig& cfg);
HealthModelConfig health_config_from_json(const std::string& text);

}  // namespace bimamba::model
