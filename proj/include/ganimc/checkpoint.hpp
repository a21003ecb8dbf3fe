#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ganimc/tensor.hpp"

namespace ganimc::ckpt {

/// Named-tensor container backing the on-disk NTC1 format: float32 tensors in
/// insertion order, an iteration counter, and a free-form config snapshot.
struct Checkpoint {
  std::vector<std::pair<std::string, TensorPtr>> tensors;
  uint32_t iteration = 0;
  std::string config;

  void add(const std::string& name, const TensorPtr& t);
  TensorPtr find(const std::string& name) const;  // nullptr when absent
};

/// Writes the NTC1 layout: magic "NTCK", u32 version, u32 tensor count, then
/// per tensor a u16 name length, the name, u8 dtype (0 = float32), u8 rank,
/// rank u32 extents and the little-endian payload; finally a u32 iteration
/// counter and a u32-length-prefixed config string.
void save(const Checkpoint& c, const std::string& path);

/// Loads and validates; truncation, bad magic, unknown version or dtype raise
/// FormatError without returning partial state.
Checkpoint load(const std::string& path);

}  // namespace ganimc::ckpt
