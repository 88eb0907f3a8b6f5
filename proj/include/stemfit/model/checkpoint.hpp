// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "stemfit/ndgrad/tensor.hpp"

namespace stemfit::model {

// Binary container, little-endian:
//   "SJPA" | version u32 | config digest u64 | phase u32 | step u64
//   | meta length u32 | meta bytes
//   | tensor count u64
//   | per tensor: name length u32, name, rank u32, dims u64 x rank, f32 payload
//   | table digest u64
// The table digest is FNV-1a over the bytes from the tensor count through the
// last payload.
inline constexpr char kCheckpointMagic[4] = {'S', 'J', 'P', 'A'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  ndgrad::Shape shape;
  std::vector<float> data;
};

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::uint64_t config_digest = 0;
  std::uint32_t phase = 0;
  std::uint64_t step = 0;
  std::string meta;  // free-form, JSON by convention
  std::vector<NamedTensor> tensors;

  const NamedTensor* find(std::string_view name) const;
  const NamedTensor& at(std::string_view name) const;  // throws FormatError
  // Rejects duplicate names.
  void add(std::string name, const ndgrad::Tensor& tensor);
  void add(NamedTensor tensor);
};

std::uint64_t tensor_table_digest(const std::vector<NamedTensor>& tensors);

std::string serialize_checkpoint(const Checkpoint& ckpt);
// `source` is used in diagnostics.
Checkpoint parse_checkpoint(std::string_view bytes, const std::string& source = "<memory>");

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Stores every parameter as `prefix + name`.
void add_parameters(Checkpoint& ckpt, const std::string& prefix, const ndgrad::ParameterList& params);
// Fills every parameter from `prefix + name`; missing names or shape
// disagreements are FormatErrors.
void load_parameters(const Checkpoint& ckpt, const std::string& prefix, ndgrad::ParameterList& params);

}  // namespace stemfit::model
