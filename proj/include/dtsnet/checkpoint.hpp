#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dtsnet/graph.hpp"

namespace dtsnet {

struct NamedTensor {
  std::string path;
  Tensor<double> value;
};

/// Versioned binary container:
///   "DTSNCKPT" | u32 version | config text | sections of (path, rank, dims, LE doubles) |
///   meta key=value text | FNV-1a 64 checksum of everything before it.
/// All integers little-endian; strings are u64 length + bytes.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::string config_text;
  std::map<std::string, std::vector<NamedTensor>> sections;
  std::map<std::string, std::string> meta;

  const std::vector<NamedTensor>& section(const std::string& name) const;
  const std::string& meta_value(const std::string& key) const;
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
/// Throws DataError on bad magic, unknown version, truncation or checksum mismatch.
Checkpoint parse_checkpoint(const std::string& bytes, const std::string& origin = "checkpoint");

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL);

/// Parameter values in store order.
std::vector<NamedTensor> export_params(const ParamStore<double>& store);
/// Copies values into an existing store; paths and shapes must match exactly.
void import_params(ParamStore<double>& store, const std::vector<NamedTensor>& tensors,
                   const std::string& what);

}  // namespace dtsnet
