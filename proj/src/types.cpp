#include "bimamba/types.hpp"

#include <algorithm>

#include "bimamba/errors.hpp"

namespace bimamba {

char stage_to_char(StageLabel s) {
  switch (s) {
    case StageLabel::W: return 'W';
    case StageLabel::N1: return '1';
    case StageLabel::N2: return '2';
    case StageLabel::N3: return '3';
    case StageLabel::REM: return 'R';
  }
  return '?';
}

std::optional<StageLabel> stage_from_char(char c) {
  switch (c) {
    case 'W': case 'w': case '0': return StageLabel::W;
    case '1': return StageLabel::N1;
    case '2': return StageLabel::N2;
    case '3': case '4': return StageLabel::N3;
    case 'R': case 'r': case '5': return StageLabel::REM;
    default: return std::nullopt;
  }
}

std::string_view stage_name(StageLabel s) {
  switch (s) {
    case StageLabel::W: return "W";
    case StageLabel::N1: return "N1";
    case StageLabel::N2: return "N2";
    case StageLabel::N3: return "N3";
    case StageLabel::REM: return "REM";
  }
  return "?";
}

std::string_view health_name(HealthLabel h) { return h == HealthLabel::Healthy ? "healthy" : "unhealthy"; }

std::optional<HealthLabel> health_from_name(std::string_view name) {
  if (name == "healthy") return HealthLabel::Healthy;
  if (name == "unhealthy") return HealthLabel::Unhealthy;
  return std::nullopt;
}

EpochBatch EpochBatch::gather(std::span<const std::size_t> indices) const {
  const std::size_t rows = size();
  if (data.dim(0) != rows || subjects.size() != rows) {
    throw DimensionError("EpochBatch: data axis 0, labels and subjects disagree");
  }
  const std::size_t row_len = rows ? data.numel() / rows : 0;
  Shape shape = data.shape();
  shape[0] = indices.size();
  std::vector<double> out(indices.size() * row_len);
  EpochBatch sub;
  sub.labels.reserve(indices.size());
  sub.subjects.reserve(indices.size());
  const auto src = data.data();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto r = indices[i];
    if (r >= rows) throw IndexError("EpochBatch::gather: row " + std::to_string(r) + " out of range");
    std::copy_n(src.data() + r * row_len, row_len, out.data() + i * row_len);
    sub.labels.push_back(labels[r]);
    sub.subjects.push_back(subjects[r]);
  }
  sub.data = Tensor(std::move(shape), std::move(out));
  return sub;
}

EpochBatch EpochBatch::concat(std::span<const EpochBatch> parts) {
  EpochBatch all;
  if (parts.empty()) return all;
  Shape shape = parts.front().data.shape();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    Shape s = p.data.shape();
    if (s.size() != shape.size() || !std::equal(s.begin() + 1, s.end(), shape.begin() + 1)) {
      throw DimensionError("EpochBatch::concat: row shape " + shape_str(s) + " differs from " + shape_str(shape));
    }
    rows += s[0];
  }
  shape[0] = rows;
  std::vector<double> out;
  out.reserve(shape_numel(shape));
  for (const auto& p : parts) {
    out.insert(out.end(), p.data.data().begin(), p.data.data().end());
    all.labels.insert(all.labels.end(), p.labels.begin(), p.labels.end());
    all.subjects.insert(all.subjects.end(), p.subjects.begin(), p.subjects.end());
  }
  all.data = Tensor(std::move(shape), std::move(out));
  return all;
}

Hypnogram Hypnogram::from_stages(std::vector<StageLabel> stages, std::string subject) {
  Hypnogram h;
  h.mask.assign(stages.size(), true);
  h.stages = std::move(stages);
  h.subject = std::move(subject);
  return h;
}

}  // namespace bimamba
