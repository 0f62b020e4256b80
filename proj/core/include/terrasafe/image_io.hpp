#pragma once

#include <cstdint>
#include <filesystem>

#include "terrasafe/grid.hpp"

namespace terrasafe {

using Gray8Image = Grid2D<std::uint8_t>;

// Maps [0, 1] to 0..255 with round-to-nearest; values outside are clamped.
std::uint8_t quantize_unit(double v) noexcept;
Gray8Image quantize(const ScalarMap& map);
ScalarMap dequantize(const Gray8Image& image);

/// 8-bit single-channel PNG. Output bytes depend only on the pixels, so
/// identical images always produce identical files.
void write_png_gray8(const std::filesystem::path& path, const Gray8Image& image);

/// Reads an 8-bit PNG. Gray+alpha, RGB, and palette files are converted to
/// single-channel gray; 16-bit files are reduced to 8 bits.
Gray8Image read_png_gray8(const std::filesystem::path& path);

}  // namespace terrasafe
