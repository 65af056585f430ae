#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "bimamba/types.hpp"

namespace bimamba::data {

// Ordered PSG channel names. The default is the ten-channel montage
// LOC-A2, ROC-A1, F3-A2, C3-A2, O1-A2, F4-A1, C4-A1, O2-A1, X1 (chin EMG), X2 (ECG).
struct ChannelSpec {
  std::vector<std::string> names;

  static ChannelSpec standard();
  // Names unique and, when expected > 0, exactly `expected` of them.
  void validate(std::size_t expected = 0) const;
};

struct ChannelSeries {
  std::vector<double> samples;
  double sample_rate = 0.0;
};

struct SliceOptions {
  double epoch_s = 30.0;
  std::size_t epoch_samples = 1000;
  // Drop each subject's last 30 labelled epochs.
  bool drop_last_30 = false;
  // Z-score each channel over the subject's emitted epochs.
  bool standardize = true;
};

struct SliceResult {
  EpochBatch batch;  // data [n, channels, epoch_samples]
  std::size_t dropped_tail = 0;
  std::size_t dropped_unscored = 0;
};

// Cuts every channel into non-overlapping epochs and resamples each window
// to epoch_samples. labels holds one StageLabel value per epoch, or -1 for
// unscored epochs (dropped and counted).
SliceResult slice_epochs(std::span<const ChannelSeries> channels, std::span<const int> labels,
                         const std::string& subject, const SliceOptions& opts);

// [6, max_cycles]: rows 0-4 one-hot stage, row 5 mask. Unscored epochs are
// skipped, so the mask is a run of ones followed by zeros.
Tensor encode_health_input(const Hypnogram& h, std::size_t max_cycles = 850);
// Stacks encoded hypnograms into [B, 6, max_cycles]; labels are health classes.
EpochBatch encode_health_batch(std::span<const Hypnogram> hypnograms, std::size_t max_cycles = 850);

// One stage character per line (W/1/2/3/R; 4 reads as N3, ? as unscored).
std::vector<int> read_labels(const std::filesystem::path& path);
void write_labels(const std::filesystem::path& path, std::span<const int> labels);

Hypnogram hypnogram_from_labels(std::span<const int> labels, std::string subject);

}  // namespace bimamba::data
