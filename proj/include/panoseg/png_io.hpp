#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace panoseg {

/// Interleaved RGB, 8 bits per channel, row-major.
struct RgbImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;  // 3 * width * height
};

void write_png(const std::filesystem::path& path, const RgbImage& image);
RgbImage read_png(const std::filesystem::path& path);

}  // namespace panoseg
