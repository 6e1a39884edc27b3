#pragma once

#include <filesystem>

#include "ecnet/tensor.hpp"

namespace ecnet {

/// Decodes an 8- or 16-bit PNG or binary PPM/PGM into a CHW float tensor in
/// [0,1] (1 or 3 channels). Throws std::runtime_error naming the file on any
/// decode problem.
Tensor<float> load_image(const std::filesystem::path& path);

/// Writes a CHW tensor (1 or 3 channels) as an 8-bit image; values are clamped
/// to [0,1] and quantized with round-half-away-from-zero. The extension picks
/// the codec: .png, or .ppm/.pgm for the dependency-free path.
void save_image(const Tensor<float>& image, const std::filesystem::path& path);

// Raw float dumps: magic "ECNI", u32 version, u32 rank, u32 extents, then the
// values as little-endian f32.
void save_tensor_raw(const Tensor<float>& t, const std::filesystem::path& path);
Tensor<float> load_tensor_raw(const std::filesystem::path& path);

}  // namespace ecnet
