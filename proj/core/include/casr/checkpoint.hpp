// Binary checkpoint archive: magic "CASR", u32 version, length-prefixed
// config text, then named tensors. All integers and floats little-endian.
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "casr/parameters.hpp"
#include "casr/tensor.hpp"

namespace casr {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::string config_text;
  std::vector<std::pair<std::string, Tensor>> tensors;

  bool has(const std::string& name) const;
  const Tensor& get(const std::string& name) const;
  // Value of a `key: value` line in config_text, or `fallback`.
  std::string config_value(const std::string& key, const std::string& fallback = "") const;
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Copies every store parameter into a checkpoint, in store order.
void append_parameters(Checkpoint& ckpt, const ParameterStore& store);

// Overwrites store parameters from checkpoint tensors with the same name.
// Names selected by `prefixes` (all when empty) must exist in the checkpoint;
// shape mismatches raise FormatError. Returns the number of tensors copied.
std::size_t load_parameters(ParameterStore& store, const Checkpoint& ckpt,
                            const std::vector<std::string>& prefixes = {},
                            bool require_all = true);

}  // namespace casr
