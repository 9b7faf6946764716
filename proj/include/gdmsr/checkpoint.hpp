#pragma once

#include <filesystem>

#include "gdmsr/tensor.hpp"

namespace gdmsr::io {

// Container layout: magic "GDMSR1", uint32 little-endian header length, JSON
// header listing tensor names/shapes/offsets (byte offsets into the data
// section), then the tensors as little-endian float32 arrays in header order.
void save_checkpoint(const std::filesystem::path& path, const num::ParamSet& params);

num::ParamSet load_checkpoint(const std::filesystem::path& path);

}  // namespace gdmsr::io
