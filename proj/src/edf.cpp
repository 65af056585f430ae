#include "bimamba/edf.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>

#include "bimamba/errors.hpp"
#include "bimamba/types.hpp"

namespace bimamba::data {

namespace {

constexpr std::size_t kFixedHeader = 256;
constexpr std::size_t kPerSignalHeader = 256;

// Widths of the per-signal header fields, in file order.
constexpr std::size_t kLabelW = 16, kTransducerW = 80, kDimW = 8, kNumW = 8, kPrefilterW = 80, kSamplesW = 8,
                      kSignalReservedW = 32;

class HeaderReader {
 public:
  explicit HeaderReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::string text(std::size_t offset, std::size_t width, const char* field) const {
    if (offset + width > bytes_.size()) throw ParseError(bytes_.size(), std::string("truncated header in field ") + field);
    std::string s;
    s.reserve(width);
    for (std::size_t i = 0; i < width; ++i) {
      const auto c = bytes_[offset + i];
      if (c < 0x20 || c > 0x7e) {
        throw ParseError(offset + i, std::string("non-ASCII byte in header field ") + field);
      }
      s.push_back(static_cast<char>(c));
    }
    while (!s.empty() && s.back() == ' ') s.pop_back();
    return s;
  }

  double number(std::size_t offset, std::size_t width, const char* field) const {
    std::string s = text(offset, width, field);
    const auto first = s.find_first_not_of(' ');
    if (first == std::string::npos) throw ParseError(offset, std::string("empty numeric field ") + field);
    s = s.substr(first);
    if (!s.empty() && s.front() == '+') s.erase(0, 1);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) {
      throw ParseError(offset, std::string("field ") + field + " is not a number: '" + s + "'");
    }
    return v;
  }

  std::int64_t integer(std::size_t offset, std::size_t width, const char* field) const {
    const double v = number(offset, width, field);
    if (v != std::floor(v)) throw ParseError(offset, std::string("field ") + field + " must be an integer");
    return static_cast<std::int64_t>(v);
  }

 private:
  std::span<const std::uint8_t> bytes_;
};

void put_field(std::vector<std::uint8_t>& out, const std::string& s, std::size_t width, const char* field) {
  if (s.size() > width) {
    throw ContractError(std::string("EDF field ") + field + " '" + s + "' exceeds " + std::to_string(width) + " characters");
  }
  for (char c : s) {
    if (static_cast<unsigned char>(c) < 0x20 || static_cast<unsigned char>(c) > 0x7e) {
      throw ContractError(std::string("EDF field ") + field + " contains a non-printable character");
    }
  }
  out.insert(out.end(), s.begin(), s.end());
  out.insert(out.end(), width - s.size(), ' ');
}

}  // namespace

double EdfSignal::to_physical(std::int16_t d) const {
  return (static_cast<double>(d) - digital_min) * (physical_max - physical_min) /
             static_cast<double>(digital_max - digital_min) +
         physical_min;
}

std::vector<double> EdfSignal::physical() const {
  std::vector<double> out(digital.size());
  std::transform(digital.begin(), digital.end(), out.begin(), [this](std::int16_t d) { return to_physical(d); });
  return out;
}

std::int16_t EdfSignal::to_digital(double physical) const {
  const double span = physical_max - physical_min;
  const double d = span != 0.0
                       ? (physical - physical_min) * static_cast<double>(digital_max - digital_min) / span + digital_min
                       : digital_min;
  const double clamped = std::clamp(std::round(d), static_cast<double>(digital_min), static_cast<double>(digital_max));
  return static_cast<std::int16_t>(clamped);
}

double EdfRecording::sample_rate(std::size_t signal) const {
  return static_cast<double>(signals.at(signal).samples_per_record) / record_duration_s;
}

std::string format_edf_number(double value, std::size_t width) {
  if (!std::isfinite(value)) throw ContractError("EDF numeric field must be finite");
  char buf[64];
  if (value == std::floor(value) && std::abs(value) < 1e15) {
    std::snprintf(buf, sizeof buf, "%lld", static_cast<long long>(value));
    if (std::string(buf).size() <= width) return buf;
  }
  for (int precision = 15; precision >= 1; --precision) {
    std::snprintf(buf, sizeof buf, "%.*g", precision, value);
    std::string s(buf);
    if (s.size() <= width) return s;
  }
  throw ContractError("value " + std::to_string(value) + " does not fit in " + std::to_string(width) + " characters");
}

EdfRecording parse_edf(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kFixedHeader) throw ParseError(bytes.size(), "truncated header: fewer than 256 bytes");
  HeaderReader hr(bytes);
  EdfRecording rec;
  rec.version = hr.text(0, 8, "version");
  rec.patient = hr.text(8, 80, "patient");
  rec.recording = hr.text(88, 80, "recording");
  rec.start_date = hr.text(168, 8, "startdate");
  rec.start_time = hr.text(176, 8, "starttime");
  const auto header_bytes = hr.integer(184, 8, "header bytes");
  rec.reserved = hr.text(192, 44, "reserved");
  rec.n_records = hr.integer(236, 8, "number of data records");
  rec.record_duration_s = hr.number(244, 8, "data record duration");
  const auto ns = hr.integer(252, 4, "number of signals");
  if (ns < 1 || ns > 4096) throw ParseError(252, "number of signals must lie in [1, 4096]");
  if (rec.n_records < -1) throw ParseError(236, "number of data records must be >= -1");
  if (!(rec.record_duration_s > 0.0)) throw ParseError(244, "data record duration must be > 0");
  const auto n_signals = static_cast<std::size_t>(ns);
  const std::size_t expected_header = kFixedHeader + kPerSignalHeader * n_signals;
  if (header_bytes != static_cast<std::int64_t>(expected_header)) {
    throw ParseError(184, "header byte count " + std::to_string(header_bytes) + " != 256 * (ns + 1) = " +
                              std::to_string(expected_header));
  }
  if (bytes.size() < expected_header) throw ParseError(bytes.size(), "truncated signal header block");

  rec.signals.resize(n_signals);
  std::size_t off = kFixedHeader;
  auto field_offset = [&](std::size_t width, std::size_t i) { return off + width * i; };
  for (std::size_t i = 0; i < n_signals; ++i) rec.signals[i].label = hr.text(field_offset(kLabelW, i), kLabelW, "label");
  off += kLabelW * n_signals;
  for (std::size_t i = 0; i < n_signals; ++i) {
    rec.signals[i].transducer = hr.text(field_offset(kTransducerW, i), kTransducerW, "transducer type");
  }
  off += kTransducerW * n_signals;
  for (std::size_t i = 0; i < n_signals; ++i) {
    rec.signals[i].physical_dimension = hr.text(field_offset(kDimW, i), kDimW, "physical dimension");
  }
  off += kDimW * n_signals;
  for (std::size_t i = 0; i < n_signals; ++i) {
    rec.signals[i].physical_min = hr.number(field_offset(kNumW, i), kNumW, "physical minimum");
  }
  off += kNumW * n_signals;
  for (std::size_t i = 0; i < n_signals; ++i) {
    rec.signals[i].physical_max = hr.number(field_offset(kNumW, i), kNumW, "physical maximum");
  }
  off += kNumW * n_signals;
  const std::size_t dmin_off = off;
  for (std::size_t i = 0; i < n_signals; ++i) {
    const auto v = hr.integer(field_offset(kNumW, i), kNumW, "digital minimum");
    if (v < -32768 || v > 32767) throw ParseError(field_offset(kNumW, i), "digital minimum outside int16 range");
    rec.signals[i].digital_min = static_cast<int>(v);
  }
  off += kNumW * n_signals;
  for (std::size_t i = 0; i < n_signals; ++i) {
    const auto v = hr.integer(field_offset(kNumW, i), kNumW, "digital maximum");
    if (v < -32768 || v > 32767) throw ParseError(field_offset(kNumW, i), "digital maximum outside int16 range");
    rec.signals[i].digital_max = static_cast<int>(v);
    if (rec.signals[i].digital_min >= rec.signals[i].digital_max) {
      throw ParseError(dmin_off + kNumW * i, "digital minimum must be below digital maximum for signal " +
                                                 std::to_string(i));
    }
  }
  off += kNumW * n_signals;
  for (std::size_t i = 0; i < n_signals; ++i) {
    rec.signals[i].prefilter = hr.text(field_offset(kPrefilterW, i), kPrefilterW, "prefiltering");
  }
  off += kPrefilterW * n_signals;
  std::size_t record_samples = 0;
  for (std::size_t i = 0; i < n_signals; ++i) {
    const auto v = hr.integer(field_offset(kSamplesW, i), kSamplesW, "samples per record");
    if (v < 1) throw ParseError(field_offset(kSamplesW, i), "samples per record must be >= 1");
    rec.signals[i].samples_per_record = static_cast<std::size_t>(v);
    record_samples += rec.signals[i].samples_per_record;
  }
  off += kSamplesW * n_signals;
  for (std::size_t i = 0; i < n_signals; ++i) {
    rec.signals[i].reserved = hr.text(field_offset(kSignalReservedW, i), kSignalReservedW, "signal reserved");
  }

  const std::size_t record_bytes = 2 * record_samples;
  const std::size_t payload = bytes.size() - expected_header;
  if (rec.n_records == -1) {
    if (payload % record_bytes != 0) {
      throw ParseError(expected_header + payload / record_bytes * record_bytes, "truncated data record");
    }
    rec.n_records = static_cast<std::int64_t>(payload / record_bytes);
  }
  const std::size_t n_records = static_cast<std::size_t>(rec.n_records);
  if (payload < n_records * record_bytes) {
    throw ParseError(bytes.size(), "truncated data: header declares " + std::to_string(n_records) + " records");
  }
  if (payload > n_records * record_bytes) {
    throw ParseError(expected_header + n_records * record_bytes, "trailing bytes after the last data record");
  }
  for (auto& s : rec.signals) s.digital.reserve(s.samples_per_record * n_records);
  std::size_t pos = expected_header;
  for (std::size_t r = 0; r < n_records; ++r) {
    for (std::size_t si = 0; si < n_signals; ++si) {
      auto& s = rec.signals[si];
      for (std::size_t k = 0; k < s.samples_per_record; ++k, pos += 2) {
        const auto raw = static_cast<std::uint16_t>(bytes[pos] | (bytes[pos + 1] << 8));
        const auto v = static_cast<std::int16_t>(raw);
        if (v < s.digital_min || v > s.digital_max) {
          throw ParseError(pos, "sample outside [digital_min, digital_max] in signal " + std::to_string(si));
        }
        s.digital.push_back(v);
      }
    }
  }
  return rec;
}

std::vector<std::uint8_t> write_edf(const EdfRecording& rec) {
  const std::size_t ns = rec.signals.size();
  if (ns < 1) throw ContractError("write_edf: recording has no signals");
  if (rec.n_records < 0) throw ContractError("write_edf: record count must be known");
  const auto n_records = static_cast<std::size_t>(rec.n_records);
  for (std::size_t i = 0; i < ns; ++i) {
    const auto& s = rec.signals[i];
    if (s.samples_per_record < 1) throw ContractError("write_edf: samples_per_record must be >= 1");
    if (s.digital.size() != s.samples_per_record * n_records) {
      throw DimensionError("write_edf: signal " + std::to_string(i) + " holds " + std::to_string(s.digital.size()) +
                           " samples, header implies " + std::to_string(s.samples_per_record * n_records));
    }
    if (s.digital_min >= s.digital_max) throw ContractError("write_edf: digital_min must be below digital_max");
  }
  std::vector<std::uint8_t> out;
  std::size_t record_samples = 0;
  for (const auto& s : rec.signals) record_samples += s.samples_per_record;
  out.reserve(kFixedHeader * (ns + 1) + 2 * record_samples * n_records);
  put_field(out, rec.version, 8, "version");
  put_field(out, rec.patient, 80, "patient");
  put_field(out, rec.recording, 80, "recording");
  put_field(out, rec.start_date, 8, "startdate");
  put_field(out, rec.start_time, 8, "starttime");
  put_field(out, std::to_string(kFixedHeader * (ns + 1)), 8, "header bytes");
  put_field(out, rec.reserved, 44, "reserved");
  put_field(out, std::to_string(rec.n_records), 8, "number of data records");
  put_field(out, format_edf_number(rec.record_duration_s), 8, "data record duration");
  put_field(out, std::to_string(ns), 4, "number of signals");
  for (const auto& s : rec.signals) put_field(out, s.label, kLabelW, "label");
  for (const auto& s : rec.signals) put_field(out, s.transducer, kTransducerW, "transducer type");
  for (const auto& s : rec.signals) put_field(out, s.physical_dimension, kDimW, "physical dimension");
  for (const auto& s : rec.signals) put_field(out, format_edf_number(s.physical_min), kNumW, "physical minimum");
  for (const auto& s : rec.signals) put_field(out, format_edf_number(s.physical_max), kNumW, "physical maximum");
  for (const auto& s : rec.signals) put_field(out, std::to_string(s.digital_min), kNumW, "digital minimum");
  for (const auto& s : rec.signals) put_field(out, std::to_string(s.digital_max), kNumW, "digital maximum");
  for (const auto& s : rec.signals) put_field(out, s.prefilter, kPrefilterW, "prefiltering");
  for (const auto& s : rec.signals) put_field(out, std::to_string(s.samples_per_record), kSamplesW, "samples per record");
  for (const auto& s : rec.signals) put_field(out, s.reserved, kSignalReservedW, "signal reserved");
  for (std::size_t r = 0; r < n_records; ++r) {
    for (const auto& s : rec.signals) {
      for (std::size_t k = 0; k < s.samples_per_record; ++k) {
        const auto raw = static_cast<std::uint16_t>(s.digital[r * s.samples_per_record + k]);
        out.push_back(static_cast<std::uint8_t>(raw & 0xff));
        out.push_back(static_cast<std::uint8_t>(raw >> 8));
      }
    }
  }
  return out;
}

EdfRecording read_edf_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_edf(bytes);
}

void write_edf_file(const std::filesystem::path& path, const EdfRecording& rec) {
  const auto bytes = write_edf(rec);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<EdfAnnotation> read_annotations(const EdfRecording& rec) {
  std::vector<EdfAnnotation> out;
  for (const auto& s : rec.signals) {
    if (s.label != "EDF Annotations") continue;
    const std::size_t record_bytes = 2 * s.samples_per_record;
    for (std::size_t r = 0; r < static_cast<std::size_t>(rec.n_records); ++r) {
      std::string raw;
      raw.reserve(record_bytes);
      for (std::size_t k = 0; k < s.samples_per_record; ++k) {
        const auto v = static_cast<std::uint16_t>(s.digital[r * s.samples_per_record + k]);
        raw.push_back(static_cast<char>(v & 0xff));
        raw.push_back(static_cast<char>(v >> 8));
      }
      // TAL: +onset[\x15duration]\x14text\x14...\x14\0
      std::size_t pos = 0;
      while (pos < raw.size()) {
        const auto end = raw.find('\0', pos);
        const std::string tal = raw.substr(pos, end == std::string::npos ? std::string::npos : end - pos);
        pos = end == std::string::npos ? raw.size() : end + 1;
        if (tal.empty()) continue;
        const auto first = tal.find('\x14');
        if (first == std::string::npos) continue;
        const std::string timing = tal.substr(0, first);
        const auto dur_sep = timing.find('\x15');
        EdfAnnotation base;
        auto parse_num = [](const std::string& t) {
          std::string s = t;
          if (!s.empty() && s.front() == '+') s.erase(0, 1);
          double v = 0.0;
          std::from_chars(s.data(), s.data() + s.size(), v);
          return v;
        };
        base.onset_s = parse_num(timing.substr(0, dur_sep));
        if (dur_sep != std::string::npos) base.duration_s = parse_num(timing.substr(dur_sep + 1));
        std::size_t t = first + 1;
        while (t < tal.size()) {
          const auto next = tal.find('\x14', t);
          const std::string text = tal.substr(t, next == std::string::npos ? std::string::npos : next - t);
          if (!text.empty()) {
            EdfAnnotation a = base;
            a.text = text;
            out.push_back(a);
          }
          if (next == std::string::npos) break;
          t = next + 1;
        }
      }
    }
  }
  return out;
}

AnnotatedStages stages_from_annotations(std::span<const EdfAnnotation> annotations, double epoch_s) {
  AnnotatedStages result;
  for (const auto& a : annotations) {
    const std::string prefix = "Sleep stage ";
    int stage = -1;
    if (a.text.rfind(prefix, 0) == 0 && a.text.size() == prefix.size() + 1) {
      if (auto s = stage_from_char(a.text.back()); s && a.text.back() != '0' && a.text.back() != '5') {
        stage = static_cast<int>(*s);
      }
    }
    const auto first = static_cast<std::size_t>(std::llround(a.onset_s / epoch_s));
    const auto count = static_cast<std::size_t>(std::llround(a.duration_s / epoch_s));
    if (result.stages.size() < first + count) result.stages.resize(first + count, -1);
    for (std::size_t e = first; e < first + count; ++e) result.stages[e] = stage;
  }
  result.dropped = static_cast<std::size_t>(std::count(result.stages.begin(), result.stages.end(), -1));
  return result;
}

}  // namespace bimamba::data
