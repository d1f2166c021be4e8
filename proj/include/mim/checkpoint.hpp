#pragma once

// "MIMC" parameter store, little-endian:
//   magic "MIMC", u32 version
//   u32 config length, config text (INI)
//   u32 record count, then per record:
//     u32 name length, name, u32 rank, rank x u32 dims, f64 payload

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mim/tensor.hpp"

namespace mim::model {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<double> values;
  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::string config;
  std::vector<NamedTensor> tensors;

  /// Throws DataError when no record carries `name`.
  const NamedTensor& find(const std::string& name) const;
  bool contains(const std::string& name) const;
  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

std::string encode_checkpoint(const Checkpoint& ckpt);
/// Throws DataError on a bad magic, unknown version or truncated payload.
Checkpoint decode_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace mim::model
