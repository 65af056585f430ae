#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bimamba/tensor.hpp"

namespace bimamba {

// AASM sleep stages in class-index order.
enum class StageLabel : int { W = 0, N1 = 1, N2 = 2, N3 = 3, REM = 4 };
inline constexpr std::size_t kNumStages = 5;

// Label-file characters: W, 1, 2, 3, R.
char stage_to_char(StageLabel s);
std::optional<StageLabel> stage_from_char(char c);
std::string_view stage_name(StageLabel s);

enum class HealthLabel : int { Healthy = 0, Unhealthy = 1 };
std::string_view health_name(HealthLabel h);
std::optional<HealthLabel> health_from_name(std::string_view name);

// Rows of `data` ([B, C, S] for PSG epochs, [B, 6, T] for health inputs)
// with one class index and one subject id per row.
struct EpochBatch {
  Tensor data;
  std::vector<int> labels;
  std::vector<std::string> subjects;

  std::size_t size() const { return labels.size(); }
  // Rows at `indices`, in that order.
  EpochBatch gather(std::span<const std::size_t> indices) const;
  // Concatenates along the batch axis; row shapes must agree.
  static EpochBatch concat(std::span<const EpochBatch> parts);
};

struct Hypnogram {
  std::vector<StageLabel> stages;
  std::vector<bool> mask;  // true = scored epoch
  std::string subject;
  std::optional<HealthLabel> health;

  std::size_t size() const { return stages.size(); }
  static Hypnogram from_stages(std::vector<StageLabel> stages, std::string subject = {});
};

}  // namespace bimamba
