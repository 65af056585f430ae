#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "bimamba/epochs.hpp"
#include "bimamba/types.hpp"

namespace bimamba::data {

inline constexpr const char* kManifestSchema = "bimamba-manifest/1";

// One subject. Signals come from either a raw tensor ([channels, samples],
// BMT1 record) with `sample_rate`, or an EDF file whose signals are picked
// by the manifest channel names. Paths are relative to the manifest.
struct SubjectEntry {
  std::string id;
  std::optional<std::filesystem::path> signals;
  std::optional<std::filesystem::path> edf;
  double sample_rate = 0.0;
  // Label text file, or an EDF+ hypnogram (".edf").
  std::filesystem::path labels;
  std::optional<HealthLabel> health;
};

struct Manifest {
  std::filesystem::path root;
  std::string name;
  ChannelSpec channels = ChannelSpec::standard();
  bool drop_last_30 = false;
  std::vector<SubjectEntry> subjects;

  std::vector<std::string> subject_ids() const;
};

// Validates the schema (errors name the offending field), rejects duplicate
// ids, and lists every missing file in one IoError.
Manifest load_manifest(const std::filesystem::path& path);
void save_manifest(const std::filesystem::path& path, const Manifest& m);

struct LoadStats {
  std::size_t epochs = 0;
  std::size_t dropped_tail = 0;
  std::size_t dropped_unscored = 0;
};

// All subjects' epochs, in manifest order.
EpochBatch load_stage_epochs(const Manifest& m, std::size_t epoch_samples, LoadStats* stats = nullptr);
std::vector<int> load_labels(const Manifest& m, const SubjectEntry& s);
// Hypnograms with health labels, for the health task.
std::vector<Hypnogram> load_hypnograms(const Manifest& m);

}  // namespace bimamba::data
