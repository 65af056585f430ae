#include "bimamba/manifest.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "bimamba/edf.hpp"
#include "bimamba/errors.hpp"
#include "bimamba/serialize.hpp"

namespace bimamba::data {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

const ordered_json& require(const ordered_json& obj, const std::string& key, const std::string& where) {
  if (!obj.is_object() || !obj.contains(key)) throw SchemaError(where + "." + key + ": missing field");
  return obj.at(key);
}

std::string require_string(const ordered_json& obj, const std::string& key, const std::string& where) {
  const auto& v = require(obj, key, where);
  if (!v.is_string()) throw SchemaError(where + "." + key + ": expected a string");
  return v.get<std::string>();
}

fs::path resolve(const Manifest& m, const fs::path& p) { return p.is_absolute() ? p : m.root / p; }

}  // namespace

std::vector<std::string> Manifest::subject_ids() const {
  std::vector<std::string> ids;
  for (const auto& s : subjects) ids.push_back(s.id);
  return ids;
}

Manifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  ordered_json j;
  try {
    j = ordered_json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(e.byte, "manifest " + path.string() + " is not valid JSON");
  }
  const std::string where = "manifest";
  if (require_string(j, "schema", where) != kManifestSchema) {
    throw SchemaError("manifest.schema: expected '" + std::string(kManifestSchema) + "'");
  }
  Manifest m;
  m.root = path.parent_path();
  if (j.contains("name")) {
    if (!j["name"].is_string()) throw SchemaError("manifest.name: expected a string");
    m.name = j["name"].get<std::string>();
  }
  if (j.contains("channels")) {
    const auto& ch = j["channels"];
    if (!ch.is_array()) throw SchemaError("manifest.channels: expected an array of strings");
    m.channels.names.clear();
    for (const auto& c : ch) {
      if (!c.is_string()) throw SchemaError("manifest.channels: expected an array of strings");
      m.channels.names.push_back(c.get<std::string>());
    }
    m.channels.validate();
  }
  if (j.contains("drop_last_30")) {
    if (!j["drop_last_30"].is_boolean()) throw SchemaError("manifest.drop_last_30: expected a boolean");
    m.drop_last_30 = j["drop_last_30"].get<bool>();
  }
  const auto& subjects = require(j, "subjects", where);
  if (!subjects.is_array()) throw SchemaError("manifest.subjects: expected an array");
  std::set<std::string> ids;
  for (std::size_t i = 0; i < subjects.size(); ++i) {
    const auto& sj = subjects[i];
    const std::string w = "manifest.subjects[" + std::to_string(i) + "]";
    SubjectEntry s;
    s.id = require_string(sj, "id", w);
    if (s.id.empty()) throw SchemaError(w + ".id: must not be empty");
    if (!ids.insert(s.id).second) throw SchemaError(w + ".id: duplicate subject id '" + s.id + "'");
    s.labels = require_string(sj, "labels", w);
    if (sj.contains("signals")) s.signals = require_string(sj, "signals", w);
    if (sj.contains("edf")) s.edf = require_string(sj, "edf", w);
    if (s.signals && s.edf) throw SchemaError(w + ": give either 'signals' or 'edf', not both");
    if (s.signals) {
      const auto& r = require(sj, "sample_rate", w);
      if (!r.is_number() || !(r.get<double>() > 0.0)) throw SchemaError(w + ".sample_rate: expected a positive number");
      s.sample_rate = r.get<double>();
    }
    if (sj.contains("health")) {
      const auto name = require_string(sj, "health", w);
      s.health = health_from_name(name);
      if (!s.health) throw SchemaError(w + ".health: expected 'healthy' or 'unhealthy', got '" + name + "'");
    }
    m.subjects.push_back(std::move(s));
  }
  std::vector<std::string> missing;
  for (const auto& s : m.subjects) {
    for (const auto* p : {&s.labels}) {
      if (!fs::exists(resolve(m, *p))) missing.push_back(resolve(m, *p).string());
    }
    if (s.signals && !fs::exists(resolve(m, *s.signals))) missing.push_back(resolve(m, *s.signals).string());
    if (s.edf && !fs::exists(resolve(m, *s.edf))) missing.push_back(resolve(m, *s.edf).string());
  }
  if (!missing.empty()) {
    std::ostringstream msg;
    msg << missing.size() << " file(s) listed in " << path.string() << " do not exist:";
    for (const auto& f : missing) msg << ' ' << f;
    throw IoError(msg.str());
  }
  return m;
}

void save_manifest(const fs::path& path, const Manifest& m) {
  ordered_json j;
  j["schema"] = kManifestSchema;
  j["name"] = m.name;
  j["channels"] = m.channels.names;
  j["drop_last_30"] = m.drop_last_30;
  j["subjects"] = ordered_json::array();
  for (const auto& s : m.subjects) {
    ordered_json sj;
    sj["id"] = s.id;
    if (s.signals) {
      sj["signals"] = s.signals->generic_string();
      sj["sample_rate"] = s.sample_rate;
    }
    if (s.edf) sj["edf"] = s.edf->generic_string();
    sj["labels"] = s.labels.generic_string();
    if (s.health) sj["health"] = std::string(health_name(*s.health));
    j["subjects"].push_back(std::move(sj));
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest " + path.string());
  out << j.dump(2) << '\n';
}

std::vector<int> load_labels(const Manifest& m, const SubjectEntry& s) {
  const auto p = resolve(m, s.labels);
  if (p.extension() == ".edf" || p.extension() == ".EDF") {
    return stages_from_annotations(read_annotations(read_edf_file(p))).stages;
  }
  return read_labels(p);
}

EpochBatch load_stage_epochs(const Manifest& m, std::size_t epoch_samples, LoadStats* stats) {
  std::vector<EpochBatch> parts;
  LoadStats local;
  SliceOptions opts;
  opts.epoch_samples = epoch_samples;
  opts.drop_last_30 = m.drop_last_30;
  for (const auto& s : m.subjects) {
    std::vector<ChannelSeries> channels;
    if (s.signals) {
      const Tensor raw = load_tensor(resolve(m, *s.signals));
      if (raw.rank() != 2) {
        throw DimensionError("subject " + s.id + ": signal tensor must be [channels, samples], got " +
                             shape_str(raw.shape()));
      }
      if (raw.dim(0) != m.channels.names.size()) {
        throw DimensionError("subject " + s.id + ": signal tensor has " + std::to_string(raw.dim(0)) +
                             " channels, manifest lists " + std::to_string(m.channels.names.size()));
      }
      const std::size_t T = raw.dim(1);
      for (std::size_t c = 0; c < raw.dim(0); ++c) {
        const auto d = raw.data().subspan(c * T, T);
        channels.push_back({{d.begin(), d.end()}, s.sample_rate});
      }
    } else if (s.edf) {
      const EdfRecording rec = read_edf_file(resolve(m, *s.edf));
      for (const auto& name : m.channels.names) {
        std::size_t found = rec.signals.size();
        for (std::size_t i = 0; i < rec.signals.size(); ++i) {
          if (rec.signals[i].label == name) {
            found = i;
            break;
          }
        }
        if (found == rec.signals.size()) throw SchemaError("subject " + s.id + ": EDF has no signal '" + name + "'");
        channels.push_back({rec.signals[found].physical(), rec.sample_rate(found)});
      }
    } else {
      throw SchemaError("subject " + s.id + ": no 'signals' or 'edf' entry for the staging task");
    }
    const auto labels = load_labels(m, s);
    SliceResult r = slice_epochs(channels, labels, s.id, opts);
    local.dropped_tail += r.dropped_tail;
    local.dropped_unscored += r.dropped_unscored;
    local.epochs += r.batch.size();
    parts.push_back(std::move(r.batch));
  }
  if (stats) *stats = local;
  return EpochBatch::concat(parts);
}

std::vector<Hypnogram> load_hypnograms(const Manifest& m) {
  std::vector<Hypnogram> out;
  for (const auto& s : m.subjects) {
    if (!s.health) throw SchemaError("subject " + s.id + ": missing field 'health' for the health task");
    Hypnogram h = hypnogram_from_labels(load_labels(m, s), s.id);
    h.health = s.health;
    out.push_back(std::move(h));
  }
  return out;
}

}  // namespace bimamba::data
