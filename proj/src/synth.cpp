#include "bimamba/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>

#include "bimamba/errors.hpp"

namespace bimamba::data {

namespace {

constexpr double kEpochSeconds = 30.0;
constexpr std::size_t kEogChannels = 2;

std::string subject_id(const char* prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%02zu", prefix, i + 1);
  return buf;
}

// Sum of three tones drawn from the band plus white noise.
void add_band(std::span<double> out, const BandSignature& b, double fs, double scale, Rng& rng) {
  for (int tone = 0; tone < 3; ++tone) {
    const double f = rng.uniform(b.lo_hz, b.hi_hz);
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double amp = b.amplitude * scale * rng.uniform(0.6, 1.0);
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i] += amp * std::sin(2.0 * std::numbers::pi * f * static_cast<double>(i) / fs + phase);
    }
  }
}

std::vector<int> arrange_runs(std::vector<std::size_t> remaining, Rng& rng) {
  std::vector<int> seq;
  std::size_t left = std::accumulate(remaining.begin(), remaining.end(), std::size_t{0});
  seq.reserve(left);
  int prev = -1;
  while (left > 0) {
    // Stage chosen in proportion to what is left, avoiding an immediate repeat when possible.
    std::size_t pool = 0;
    for (std::size_t k = 0; k < remaining.size(); ++k) {
      if (static_cast<int>(k) != prev) pool += remaining[k];
    }
    int stage = prev;
    if (pool > 0) {
      std::size_t pick = rng.index(pool);
      for (std::size_t k = 0; k < remaining.size(); ++k) {
        if (static_cast<int>(k) == prev) continue;
        if (pick < remaining[k]) {
          stage = static_cast<int>(k);
          break;
        }
        pick -= remaining[k];
      }
    }
    const std::size_t run = std::min(remaining[static_cast<std::size_t>(stage)], 1 + rng.index(8));
    seq.insert(seq.end(), run, stage);
    remaining[static_cast<std::size_t>(stage)] -= run;
    left -= run;
    prev = stage;
  }
  return seq;
}

}  // namespace

BandSignature stage_band(StageLabel s) {
  switch (s) {
    case StageLabel::W: return {6.0, 7.5, 1.0};
    case StageLabel::N1: return {4.0, 5.0, 0.8};
    case StageLabel::N2: return {2.5, 3.5, 1.0};
    case StageLabel::N3: return {0.5, 1.5, 2.0};
    case StageLabel::REM: return {1.5, 2.5, 0.7};
  }
  return {0.0, 0.0, 0.0};
}

std::array<double, kNumStages> reference_stage_shares() {
  const std::array<double, kNumStages> counts = {1674, 1217, 2616, 2016, 1066};
  const double total = std::accumulate(counts.begin(), counts.end(), 0.0);
  std::array<double, kNumStages> shares{};
  for (std::size_t k = 0; k < kNumStages; ++k) shares[k] = counts[k] / total;
  return shares;
}

std::vector<std::size_t> stage_counts(std::size_t n, double skew) {
  if (skew < 0.0 || skew > 1.0) throw ConfigError("synth: skew must lie in [0, 1]");
  const auto ref = reference_stage_shares();
  std::vector<std::size_t> counts(kNumStages);
  std::vector<std::pair<double, std::size_t>> rema;
  std::size_t assigned = 0;
  for (std::size_t k = 0; k < kNumStages; ++k) {
    const double share = skew * ref[k] + (1.0 - skew) / static_cast<double>(kNumStages);
    const double exact = share * static_cast<double>(n);
    counts[k] = static_cast<std::size_t>(std::floor(exact));
    assigned += counts[k];
    rema.emplace_back(exact - std::floor(exact), k);
  }
  std::stable_sort(rema.begin(), rema.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < n; ++i, ++assigned) ++counts[rema[i % kNumStages].second];
  return counts;
}

std::vector<SynthSubject> synth_stage(const SynthStageSpec& spec) {
  if (spec.n_subjects == 0 || spec.epochs_per_subject == 0 || spec.epoch_samples == 0 || spec.channels == 0) {
    throw ConfigError("synth: subjects, epochs, samples and channels must be positive");
  }
  const std::size_t informative = spec.informative_channels ? spec.informative_channels : spec.channels;
  if (informative > spec.channels) throw ConfigError("synth: more informative channels than channels");
  const double fs = static_cast<double>(spec.epoch_samples) / kEpochSeconds;
  const std::size_t S = spec.epoch_samples;
  // The last two channels of a full montage are chin EMG and ECG.
  const bool montage = spec.channels >= 4;
  const std::size_t emg = montage ? spec.channels - 2 : spec.channels;
  const std::size_t ecg = montage ? spec.channels - 1 : spec.channels;

  Rng rng(spec.seed);
  std::vector<SynthSubject> subjects;
  for (std::size_t s = 0; s < spec.n_subjects; ++s) {
    SynthSubject subj;
    subj.id = subject_id("s", s);
    subj.labels = arrange_runs(stage_counts(spec.epochs_per_subject, spec.skew), rng);
    const double subject_gain = rng.uniform(0.85, 1.15);
    const double heart_hz = rng.uniform(0.9, 1.3);
    const std::size_t T = spec.epochs_per_subject * S;
    std::vector<double> v(spec.channels * T, 0.0);
    for (std::size_t e = 0; e < spec.epochs_per_subject; ++e) {
      const auto stage = static_cast<StageLabel>(subj.labels[e]);
      for (std::size_t c = 0; c < spec.channels; ++c) {
        std::span<double> win(v.data() + c * T + e * S, S);
        const bool signal = c < informative;
        if (c == ecg) {
          for (std::size_t i = 0; i < S; ++i) {
            const double t = static_cast<double>(e * S + i) / fs;
            const double ph = std::fmod(t * heart_hz, 1.0);
            win[i] += 1.5 * std::exp(-std::pow((ph - 0.5) / 0.04, 2.0));
          }
        } else if (c == emg) {
          double tone = 0.3;
          if (signal) tone = stage == StageLabel::W ? 1.2 : stage == StageLabel::REM ? 0.1 : 0.4;
          for (auto& x : win) x += tone * rng.normal();
        } else {
          const auto band_stage = signal ? stage : static_cast<StageLabel>(rng.index(kNumStages));
          add_band(win, stage_band(band_stage), fs, subject_gain, rng);
          if (signal && stage == StageLabel::REM && c < kEogChannels) {
            // Rapid eye movements: a few smooth deflections per epoch.
            const std::size_t bursts = 2 + rng.index(3);
            for (std::size_t b = 0; b < bursts; ++b) {
              const double centre = rng.uniform(0.0, kEpochSeconds);
              const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
              for (std::size_t i = 0; i < S; ++i) {
                const double t = static_cast<double>(i) / fs;
                win[i] += sign * 2.0 * std::exp(-std::pow((t - centre) / 0.4, 2.0));
              }
            }
          }
        }
        for (auto& x : win) x += spec.noise * rng.normal();
      }
    }
    subj.signals = Tensor({spec.channels, T}, std::move(v));
    subjects.push_back(std::move(subj));
  }
  return subjects;
}

std::vector<Hypnogram> synth_health(const SynthHealthSpec& spec) {
  if (spec.min_epochs == 0 || spec.max_epochs < spec.min_epochs) throw ConfigError("synth: bad hypnogram length range");
  Rng rng(spec.seed);
  std::vector<Hypnogram> out;
  const std::size_t total = spec.healthy + spec.unhealthy;
  std::vector<HealthLabel> classes;
  classes.insert(classes.end(), spec.healthy, HealthLabel::Healthy);
  classes.insert(classes.end(), spec.unhealthy, HealthLabel::Unhealthy);
  std::shuffle(classes.begin(), classes.end(), rng.engine());
  for (std::size_t i = 0; i < total; ++i) {
    const bool sick = classes[i] == HealthLabel::Unhealthy;
    // Disorder severity in [0, 1]; the two classes overlap slightly.
    const double sev = sick ? rng.uniform(spec.unhealthy_severity_lo, 1.0) : rng.uniform(0.0, spec.healthy_severity_hi);
    const std::size_t len = spec.min_epochs + rng.index(spec.max_epochs - spec.min_epochs + 1);
    std::vector<StageLabel> st;
    auto push = [&](StageLabel s, std::size_t n) { st.insert(st.end(), n, s); };
    auto count = [&](double scale) { return static_cast<std::size_t>(std::llround(scale)); };
    push(StageLabel::W, 6 + rng.index(10 + count(40.0 * sev)));
    while (st.size() < len) {
      // One sleep cycle: N1 -> N2 -> N3 -> N2 -> REM; severity adds wake and
      // breaks N2 into short pieces.
      push(StageLabel::N1, 2 + rng.index(6));
      const std::size_t n2 = 25 + rng.index(20);
      const std::size_t pieces = 1 + count(6.0 * sev * rng.uniform(0.5, 1.5));
      for (std::size_t k = 0; k < pieces; ++k) {
        push(StageLabel::N2, std::max<std::size_t>(1, n2 / pieces));
        if (k + 1 < pieces) {
          push(rng.uniform() < 0.3 + 0.5 * sev ? StageLabel::W : StageLabel::N1, 1 + rng.index(1 + count(5.0 * sev)));
        }
      }
      push(StageLabel::N3, 3 + rng.index(1 + count(25.0 * (1.0 - 0.6 * sev))));
      push(StageLabel::N2, 5 + rng.index(10));
      push(StageLabel::REM, 8 + rng.index(15));
      if (rng.uniform() < 0.3 + 0.6 * sev) push(StageLabel::W, 1 + rng.index(2 + count(10.0 * sev)));
    }
    st.resize(len);
    Hypnogram h = Hypnogram::from_stages(std::move(st), subject_id("p", i));
    h.health = classes[i];
    out.push_back(std::move(h));
  }
  return out;
}

}  // namespace bimamba::data
