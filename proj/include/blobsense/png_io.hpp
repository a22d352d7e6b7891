#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace blobsense {

struct GrayImage16 {
    int width = 0;
    int height = 0;
    std::vector<std::uint16_t> pixels;  // row-major
};

void write_png_gray16(const std::filesystem::path& path, const GrayImage16& image);
GrayImage16 read_png_gray16(const std::filesystem::path& path);

}  // namespace blobsense
