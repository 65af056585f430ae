#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "bimamba/types.hpp"

namespace bimamba::data {

// Dominant oscillation of a stage on the informative channels.
struct BandSignature {
  double lo_hz;
  double hi_hz;
  double amplitude;
};

// W 6-7.5 Hz, N1 4-5 Hz, N2 2.5-3.5 Hz, N3 0.5-1.5 Hz (large), REM 1.5-2.5 Hz
// with eye-movement bursts. All bands sit below the Nyquist rate of a
// 500-sample epoch.
BandSignature stage_band(StageLabel s);

// Relative stage frequencies W, N1, N2, N3, REM = 1674 : 1217 : 2616 : 2016 : 1066.
std::array<double, kNumStages> reference_stage_shares();

struct SynthStageSpec {
  std::size_t n_subjects = 8;
  std::size_t epochs_per_subject = 200;
  std::size_t epoch_samples = 500;
  std::size_t channels = 10;
  // Channels carrying stage information; the rest get stage-independent
  // rhythms. Zero means all channels.
  std::size_t informative_channels = 0;
  // 1 follows the reference shares exactly, 0 is uniform.
  double skew = 1.0;
  double noise = 0.5;
  std::uint64_t seed = 0;
};

struct SynthSubject {
  std::string id;
  // [channels, epochs_per_subject * epoch_samples] at epoch_samples / 30 Hz.
  Tensor signals;
  std::vector<int> labels;
};

// Subject ids are "s01", "s02", ...
std::vector<SynthSubject> synth_stage(const SynthStageSpec& spec);
// Exact per-subject label counts: largest-remainder rounding of the mixed shares.
std::vector<std::size_t> stage_counts(std::size_t n, double skew);

struct SynthHealthSpec {
  std::size_t healthy = 110;
  std::size_t unhealthy = 100;
  std::size_t min_epochs = 780;
  std::size_t max_epochs = 960;
  // Severity ranges: healthy nights draw from [0, healthy_severity_hi],
  // unhealthy ones from [unhealthy_severity_lo, 1].
  double healthy_severity_hi = 0.5;
  double unhealthy_severity_lo = 0.45;
  std::uint64_t seed = 0;
};

// Whole-night hypnograms. Higher severity means more wake and more
// fragmented N2; unhealthy nights sit higher on that scale.
std::vector<Hypnogram> synth_health(const SynthHealthSpec& spec);

}  // namespace bimamba::data
