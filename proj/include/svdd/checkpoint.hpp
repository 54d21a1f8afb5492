#pragma once

#include <string>
#include <utility>
#include <vector>

#include "svdd/tensor.hpp"

namespace svdd::autograd {

// Checkpoint layout: magic "SVDD", version u32, tensor count u32, then per
// tensor: name length u16 + UTF-8 name, rank u8, dims u32 each, f32
// little-endian payload.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, Tensor>>& tensors);

std::vector<std::pair<std::string, Tensor>> load_checkpoint(const std::string& path);

}  // namespace svdd::autograd
