#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "disagg/grid.hpp"

namespace disagg {

/// Interleaved 8-bit RGB raster.
struct Rgb8Image {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> rgb;

    bool operator==(const Rgb8Image&) const = default;
};

void write_png_rgb8(const std::filesystem::path& path, const Rgb8Image& image);
/// Gray, palette and alpha inputs are converted to 8-bit RGB.
Rgb8Image read_png_rgb8(const std::filesystem::path& path);

void write_png_gray16(const std::filesystem::path& path, const Grid<std::uint16_t>& image);
/// Requires a single-channel 16-bit PNG.
Grid<std::uint16_t> read_png_gray16(const std::filesystem::path& path);

}  // namespace disagg
