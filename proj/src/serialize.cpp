#include "bimamba/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "bimamba/errors.hpp"

namespace bimamba {

namespace {

constexpr char kMagic[4] = {'B', 'M', 'T', '1'};
constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 34;

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename T>
void put_le(std::ostream& out, T value) {
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  out.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T get_le(std::istream& in, std::size_t& offset, const char* what) {
  unsigned char buf[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(buf), sizeof(T))) throw ParseError(offset, std::string("truncated tensor ") + what);
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  T value;
  std::memcpy(&value, buf, sizeof(T));
  offset += sizeof(T);
  return value;
}

}  // namespace

void write_tensor(std::ostream& out, const Tensor& t) {
  out.write(kMagic, 4);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) put_le<std::uint64_t>(out, d);
  for (auto v : t.data()) put_le<double>(out, v);
  if (!out) throw IoError("failed writing tensor record");
}

Tensor read_tensor(std::istream& in) {
  std::size_t offset = 0;
  char magic[4];
  if (!in.read(magic, 4)) throw ParseError(offset, "truncated tensor magic");
  if (std::memcmp(magic, kMagic, 4) != 0) throw ParseError(offset, "bad tensor magic, expected BMT1");
  offset += 4;
  const auto rank = get_le<std::uint32_t>(in, offset, "rank");
  if (rank > 16) throw ParseError(offset - 4, "implausible tensor rank " + std::to_string(rank));
  Shape shape(rank);
  std::uint64_t n = 1;
  for (auto& d : shape) {
    const auto v = get_le<std::uint64_t>(in, offset, "dims");
    n *= v;
    if (n > kMaxElements) throw ParseError(offset - 8, "tensor too large");
    d = static_cast<std::size_t>(v);
  }
  std::vector<double> data(static_cast<std::size_t>(n));
  for (auto& v : data) v = get_le<double>(in, offset, "payload");
  return Tensor(std::move(shape), std::move(data));
}

std::vector<std::uint8_t> encode_tensor(const Tensor& t) {
  std::ostringstream os(std::ios::binary);
  write_tensor(os, t);
  const auto s = os.str();
  return {s.begin(), s.end()};
}

Tensor decode_tensor(const std::vector<std::uint8_t>& bytes) {
  std::istringstream is(std::string(bytes.begin(), bytes.end()), std::ios::binary);
  return read_tensor(is);
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_tensor(out, t);
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return read_tensor(in);
}

void save_checkpoint(const std::filesystem::path& stem, const Checkpoint& ckpt) {
  auto bin_path = stem;
  bin_path += ".bin";
  auto json_path = stem;
  json_path += ".json";
  nlohmann::ordered_json manifest;
  manifest["schema"] = "bimamba-checkpoint/1";
  manifest["tensors"] = nlohmann::ordered_json::array();
  std::ofstream bin(bin_path, std::ios::binary);
  if (!bin) throw IoError("cannot open " + bin_path.string() + " for writing");
  for (const auto& [name, t] : ckpt.tensors) {
    manifest["tensors"].push_back({{"name", name}, {"shape", t.shape()}});
    write_tensor(bin, t);
  }
  manifest["meta"] = nlohmann::ordered_json::parse(ckpt.meta_json);
  std::ofstream js(json_path);
  if (!js) throw IoError("cannot open " + json_path.string() + " for writing");
  js << manifest.dump(2) << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& stem) {
  auto bin_path = stem;
  bin_path += ".bin";
  auto json_path = stem;
  json_path += ".json";
  std::ifstream js(json_path);
  if (!js) throw IoError("cannot open " + json_path.string());
  nlohmann::ordered_json manifest;
  try {
    manifest = nlohmann::ordered_json::parse(js);
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(json_path.string() + ": " + e.what());
  }
  if (manifest.value("schema", "") != "bimamba-checkpoint/1") throw SchemaError(json_path.string() + ": field 'schema'");
  if (!manifest.contains("tensors") || !manifest["tensors"].is_array()) {
    throw SchemaError(json_path.string() + ": field 'tensors'");
  }
  std::ifstream bin(bin_path, std::ios::binary);
  if (!bin) throw IoError("cannot open " + bin_path.string());
  Checkpoint ckpt;
  for (const auto& entry : manifest["tensors"]) {
    Tensor t = read_tensor(bin);
    const auto name = entry.at("name").get<std::string>();
    if (entry.at("shape").get<Shape>() != t.shape()) {
      throw SchemaError(json_path.string() + ": shape of '" + name + "' disagrees with binary payload");
    }
    ckpt.tensors.emplace_back(name, std::move(t));
  }
  ckpt.meta_json = manifest.contains("meta") ? manifest["meta"].dump() : "{}";
  return ckpt;
}

void assign_tensors(NamedTensors& target, const NamedTensors& source) {
  for (auto& [name, t] : target) {
    auto it = std::find_if(source.begin(), source.end(), [&](const auto& p) { return p.first == name; });
    if (it == source.end()) throw SchemaError("checkpoint lacks parameter '" + name + "'");
    if (it->second.shape() != t.shape()) {
      throw DimensionError("parameter '" + name + "' has shape " + shape_str(it->second.shape()) + ", expected " +
                           shape_str(t.shape()));
    }
    auto dst = t.mutable_data();
    std::copy(it->second.data().begin(), it->second.data().end(), dst.begin());
  }
}

}  // namespace bimamba
