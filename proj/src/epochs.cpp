#include "bimamba/epochs.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "bimamba/errors.hpp"
#include "bimamba/resample.hpp"

namespace bimamba::data {

ChannelSpec ChannelSpec::standard() {
  return {{"LOC-A2", "ROC-A1", "F3-A2", "C3-A2", "O1-A2", "F4-A1", "C4-A1", "O2-A1", "X1", "X2"}};
}

void ChannelSpec::validate(std::size_t expected) const {
  std::set<std::string> seen;
  for (const auto& n : names) {
    if (!seen.insert(n).second) throw ConfigError("channel '" + n + "' listed twice");
  }
  if (expected && names.size() != expected) {
    throw ConfigError("channel list has " + std::to_string(names.size()) + " names, model expects " +
                      std::to_string(expected));
  }
}

SliceResult slice_epochs(std::span<const ChannelSeries> channels, std::span<const int> labels,
                         const std::string& subject, const SliceOptions& opts) {
  if (channels.empty()) throw ConfigError("slice_epochs: no channels");
  if (opts.epoch_samples == 0 || !(opts.epoch_s > 0.0)) throw ConfigError("slice_epochs: empty epoch");
  for (std::size_t c = 0; c < channels.size(); ++c) {
    const auto& ch = channels[c];
    if (!(ch.sample_rate > 0.0)) throw ConfigError("slice_epochs: channel " + std::to_string(c) + " has no sample rate");
    const double duration = static_cast<double>(ch.samples.size()) / ch.sample_rate;
    const double needed = static_cast<double>(labels.size()) * opts.epoch_s;
    if (needed > duration + 1e-9 * std::max(1.0, duration)) {
      throw AlignmentError("subject " + subject + ": " + std::to_string(labels.size()) + " labelled epochs need " +
                           std::to_string(needed) + " s, channel " + std::to_string(c) + " holds " +
                           std::to_string(duration) + " s");
    }
  }
  SliceResult result;
  std::size_t usable = labels.size();
  if (opts.drop_last_30) {
    result.dropped_tail = std::min<std::size_t>(30, usable);
    usable -= result.dropped_tail;
  }
  std::vector<std::size_t> kept;
  for (std::size_t e = 0; e < usable; ++e) {
    if (labels[e] < 0) {
      ++result.dropped_unscored;
      continue;
    }
    if (labels[e] >= static_cast<int>(kNumStages)) {
      throw IndexError("subject " + subject + ": label " + std::to_string(labels[e]) + " at epoch " +
                       std::to_string(e) + " is not a stage");
    }
    kept.push_back(e);
  }
  const std::size_t C = channels.size();
  const std::size_t S = opts.epoch_samples;
  std::vector<double> out(kept.size() * C * S);
  for (std::size_t c = 0; c < C; ++c) {
    const auto& ch = channels[c];
    const double per_epoch = ch.sample_rate * opts.epoch_s;
    const auto n_in = static_cast<std::size_t>(std::llround(per_epoch));
    const bool integral = std::abs(per_epoch - static_cast<double>(n_in)) < 1e-9;
    for (std::size_t i = 0; i < kept.size(); ++i) {
      const std::size_t e = kept[i];
      const auto start = static_cast<std::size_t>(std::llround(static_cast<double>(e) * per_epoch));
      const auto stop = std::min(ch.samples.size(),
                                 static_cast<std::size_t>(std::llround(static_cast<double>(e + 1) * per_epoch)));
      std::span<const double> window(ch.samples.data() + start, stop - start);
      std::vector<double> r = integral ? resample_rational(window, S, window.size())
                                       : resample(window, ch.sample_rate, static_cast<double>(S) / opts.epoch_s);
      r.resize(S, r.empty() ? 0.0 : r.back());
      std::copy(r.begin(), r.end(), out.begin() + static_cast<std::ptrdiff_t>((i * C + c) * S));
    }
  }
  if (opts.standardize && !kept.empty()) {
    for (std::size_t c = 0; c < C; ++c) {
      double sum = 0.0, sq = 0.0;
      for (std::size_t i = 0; i < kept.size(); ++i) {
        for (std::size_t k = 0; k < S; ++k) sum += out[(i * C + c) * S + k];
      }
      const double n = static_cast<double>(kept.size() * S);
      const double mean = sum / n;
      for (std::size_t i = 0; i < kept.size(); ++i) {
        for (std::size_t k = 0; k < S; ++k) {
          const double d = out[(i * C + c) * S + k] - mean;
          sq += d * d;
        }
      }
      const double sd = std::sqrt(sq / n);
      const double inv = sd > 1e-12 ? 1.0 / sd : 1.0;
      for (std::size_t i = 0; i < kept.size(); ++i) {
        for (std::size_t k = 0; k < S; ++k) {
          auto& v = out[(i * C + c) * S + k];
          v = (v - mean) * inv;
        }
      }
    }
  }
  result.batch.data = Tensor({kept.size(), C, S}, std::move(out));
  for (auto e : kept) {
    result.batch.labels.push_back(labels[e]);
    result.batch.subjects.push_back(subject);
  }
  return result;
}

Tensor encode_health_input(const Hypnogram& h, std::size_t max_cycles) {
  const std::size_t rows = kNumStages + 1;
  std::vector<double> v(rows * max_cycles, 0.0);
  std::size_t t = 0;
  for (std::size_t i = 0; i < h.size() && t < max_cycles; ++i) {
    if (i < h.mask.size() && !h.mask[i]) continue;
    v[static_cast<std::size_t>(h.stages[i]) * max_cycles + t] = 1.0;
    v[kNumStages * max_cycles + t] = 1.0;
    ++t;
  }
  return Tensor({rows, max_cycles}, std::move(v));
}

EpochBatch encode_health_batch(std::span<const Hypnogram> hypnograms, std::size_t max_cycles) {
  const std::size_t rows = kNumStages + 1;
  EpochBatch batch;
  std::vector<double> v;
  v.reserve(hypnograms.size() * rows * max_cycles);
  for (const auto& h : hypnograms) {
    if (!h.health) throw SchemaError("hypnogram of subject " + h.subject + " has no health label");
    const Tensor x = encode_health_input(h, max_cycles);
    v.insert(v.end(), x.data().begin(), x.data().end());
    batch.labels.push_back(static_cast<int>(*h.health));
    batch.subjects.push_back(h.subject);
  }
  batch.data = Tensor({hypnograms.size(), rows, max_cycles}, std::move(v));
  return batch;
}

std::vector<int> read_labels(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open label file " + path.string());
  std::vector<int> labels;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ' || line.back() == '\t')) line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos) continue;
    line = line.substr(first);
    if (line.size() != 1) {
      throw SchemaError(path.string() + ":" + std::to_string(lineno) + ": expected one stage character, got '" +
                        line + "'");
    }
    if (line[0] == '?') {
      labels.push_back(-1);
      continue;
    }
    const auto s = stage_from_char(line[0]);
    if (!s) throw SchemaError(path.string() + ":" + std::to_string(lineno) + ": unknown stage '" + line + "'");
    labels.push_back(static_cast<int>(*s));
  }
  return labels;
}

void write_labels(const std::filesystem::path& path, std::span<const int> labels) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write label file " + path.string());
  for (int l : labels) out << (l < 0 ? '?' : stage_to_char(static_cast<StageLabel>(l))) << '\n';
}

Hypnogram hypnogram_from_labels(std::span<const int> labels, std::string subject) {
  Hypnogram h;
  h.subject = std::move(subject);
  for (int l : labels) {
    h.stages.push_back(l < 0 ? StageLabel::W : static_cast<StageLabel>(l));
    h.mask.push_back(l >= 0);
  }
  return h;
}

}  // namespace bimamba::data
