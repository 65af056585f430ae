#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace bimamba::data {

struct EdfSignal {
  std::string label;
  std::string transducer;
  std::string physical_dimension;
  double physical_min = -1.0;
  double physical_max = 1.0;
  int digital_min = -32768;
  int digital_max = 32767;
  std::string prefilter;
  std::size_t samples_per_record = 0;
  std::string reserved;
  // Every data record's samples for this signal, concatenated.
  std::vector<std::int16_t> digital;

  double to_physical(std::int16_t d) const;
  std::vector<double> physical() const;
  // Nearest digital code for a physical value, clamped to [digital_min, digital_max].
  std::int16_t to_digital(double physical) const;
};

struct EdfRecording {
  std::string version = "0";
  std::string patient;
  std::string recording;
  std::string start_date = "01.01.00";
  std::string start_time = "00.00.00";
  std::string reserved;
  std::int64_t n_records = 0;
  double record_duration_s = 1.0;
  std::vector<EdfSignal> signals;

  double duration_s() const { return static_cast<double>(n_records) * record_duration_s; }
  double sample_rate(std::size_t signal) const;
};

// Header: 256 ASCII bytes plus 256 per signal; data records of 16-bit
// little-endian two's-complement samples. A record count of -1 is inferred
// from the file length. Failures throw ParseError with the byte offset.
EdfRecording parse_edf(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> write_edf(const EdfRecording& rec);

EdfRecording read_edf_file(const std::filesystem::path& path);
void write_edf_file(const std::filesystem::path& path, const EdfRecording& rec);

// Fits `value` into an EDF numeric field of `width` characters.
std::string format_edf_number(double value, std::size_t width = 8);

struct EdfAnnotation {
  double onset_s = 0.0;
  double duration_s = 0.0;
  std::string text;
};

// Time-stamped annotation lists from every "EDF Annotations" signal.
std::vector<EdfAnnotation> read_annotations(const EdfRecording& rec);

struct AnnotatedStages {
  // Per 30 s epoch: StageLabel value, or -1 for epochs outside the five
  // AASM classes (movement, unscored).
  std::vector<int> stages;
  std::size_t dropped = 0;
};

// Maps "Sleep stage W/1/2/3/4/R" annotations onto fixed epochs (3 and 4
// merge into N3); anything else counts as dropped.
AnnotatedStages stages_from_annotations(std::span<const EdfAnnotation> annotations, double epoch_s = 30.0);

}  // namespace bimamba::data
