#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "bimamba/tensor.hpp"

namespace bimamba {

// Ordered (name, tensor) pairs; names are stable dotted paths such as
// "bimamba.0.fwd.A_log".
using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

// Binary tensor record: "BMT1", u32 rank, rank x u64 dims, little-endian f64 payload.
void write_tensor(std::ostream& out, const Tensor& t);
Tensor read_tensor(std::istream& in);
std::vector<std::uint8_t> encode_tensor(const Tensor& t);
Tensor decode_tensor(const std::vector<std::uint8_t>& bytes);

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

// Checkpoint = `<stem>.bin` (concatenated tensor records in manifest order)
// plus `<stem>.json` naming each record and embedding `meta` (the
// architecture config) so the pair is self-describing.
struct Checkpoint {
  NamedTensors tensors;
  std::string meta_json = "{}";
};

void save_checkpoint(const std::filesystem::path& stem, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& stem);

// Copies values from `source` into the same-named tensors of `target`.
void assign_tensors(NamedTensors& target, const NamedTensors& source);

}  // namespace bimamba
