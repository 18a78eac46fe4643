#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "vipguard/common.hpp"

namespace vipguard::image_io {

// Binary PPM (P6), 8-bit. Lossless.
void write_ppm(const std::filesystem::path& path, const Image& image);
Image read_ppm(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_jpeg(const Image& image, int quality);
Image decode_jpeg(const std::vector<std::uint8_t>& bytes);

/// Box-filter downscale / bilinear upscale to the requested size.
Image resize(const Image& image, int width, int height);

}  // namespace vipguard::image_io
