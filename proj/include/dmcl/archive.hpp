#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dmcl/tensor.hpp"
#include "json.hpp"

namespace dmcl {

// Versioned binary container: a JSON metadata block followed by named float
// tensors. Layout (all integers little-endian):
//
//   "DMCLARCH" | u32 version | u64 n | n bytes JSON
//   u64 count | count x { u32 len | name | u32 rank | rank x u64 dim | f32 data }
//
// The JSON is dumped with sorted keys and tensors are written in the order
// given, so save -> load -> save reproduces the same bytes.
struct NamedTensor {
  std::string name;
  Tensor<float> tensor;
};

struct Archive {
  nlohmann::json metadata = nlohmann::json::object();
  std::vector<NamedTensor> tensors;

  const Tensor<float>& get(const std::string& name) const;
};

inline constexpr std::uint32_t kArchiveVersion = 1;

void write_archive(const std::filesystem::path& path, const Archive& archive);
Archive read_archive(const std::filesystem::path& path);

std::string serialize_archive(const Archive& archive);
Archive deserialize_archive(const std::string& bytes, const std::string& origin = "<memory>");

}  // namespace dmcl
