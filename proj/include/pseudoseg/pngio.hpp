#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace pseudoseg::png {

// Minimal PNG codec for the cache/dataset rasters: 8-bit grayscale and
// 8-bit RGB, non-interlaced. Output bytes are deterministic for identical
// input (fixed zlib level), which the idempotence contract relies on.

void write_gray(const std::string& path, int height, int width, const std::vector<uint8_t>& pixels);
void write_rgb(const std::string& path, int height, int width, const std::vector<uint8_t>& rgb);

// Reads an 8-bit grayscale (or RGB, converted by luma drop to first channel
// equality check) PNG written by this module.
void read_gray(const std::string& path, int& height, int& width, std::vector<uint8_t>& pixels);

}  // namespace pseudoseg::png
