#pragma once

// Versioned binary checkpoint archive:
//   "LDCK" | u32 version | u64 config length | config JSON bytes
//   | u32 blob count | per blob: u32 name length, name, 4 x i32 shape,
//     u64 element count, little-endian f64 payload.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "localdom/nn.hpp"

namespace localdom {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Archive {
  std::string config_json;
  std::vector<std::pair<std::string, nn::Tensor>> blobs;

  const nn::Tensor* find(const std::string& name) const;
};

std::string serialize_archive(const Archive& archive);
Archive parse_archive(std::string_view bytes);
void write_archive(const Archive& archive, const std::filesystem::path& path);
Archive read_archive(const std::filesystem::path& path);

void store_params(Archive& archive, const nn::ParamList& params, const std::string& prefix);
// Overwrites parameter values in place; throws BadCheckpoint on missing or
// mis-shaped blobs.
void load_params(const Archive& archive, const nn::ParamList& params, const std::string& prefix);

// Write to a sibling temp file, then rename over the destination.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);
std::string read_file(const std::filesystem::path& path);

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

}  // namespace localdom
