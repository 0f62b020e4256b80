#include "terrasafe/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <png.h>

#include "terrasafe/error.hpp"

namespace terrasafe {

namespace fs = std::filesystem;

std::uint8_t quantize_unit(double v) noexcept {
  if (!(v > 0.0)) return 0;
  if (v >= 1.0) return 255;
  return static_cast<std::uint8_t>(std::lround(v * 255.0));
}

Gray8Image quantize(const ScalarMap& map) {
  Gray8Image out(map.width(), map.height());
  std::transform(map.values().begin(), map.values().end(), out.values().begin(),
                 [](float v) { return quantize_unit(v); });
  return out;
}

ScalarMap dequantize(const Gray8Image& image) {
  ScalarMap out(image.width(), image.height());
  std::transform(image.values().begin(), image.values().end(), out.values().begin(),
                 [](std::uint8_t v) { return static_cast<float>(v) / 255.0f; });
  return out;
}

void write_png_gray8(const fs::path& path, const Gray8Image& image) {
  if (image.empty()) throw Error(ErrorKind::invalid_argument, "cannot write an empty image");
  png_image header{};
  header.version = PNG_IMAGE_VERSION;
  header.width = static_cast<png_uint_32>(image.width());
  header.height = static_cast<png_uint_32>(image.height());
  header.format = PNG_FORMAT_GRAY;
  const bool ok = png_image_write_to_file(&header, path.c_str(), 0, image.values().data(),
                                          image.width(), nullptr) != 0;
  const std::string message = header.message;
  png_image_free(&header);
  if (!ok) throw Error(ErrorKind::io, "PNG write failed for " + path.string() + ": " + message);
}

Gray8Image read_png_gray8(const fs::path& path) {
  if (!fs::is_regular_file(path)) {
    throw Error(ErrorKind::io, "cannot open " + path.string() + " for reading");
  }
  png_image header{};
  header.version = PNG_IMAGE_VERSION;
  if (png_image_begin_read_from_file(&header, path.c_str()) == 0) {
    const std::string message = header.message;
    png_image_free(&header);
    throw Error(ErrorKind::format, "PNG decode failed for " + path.string() + ": " + message);
  }
  header.format = PNG_FORMAT_GRAY;
  Gray8Image image(static_cast<int>(header.width), static_cast<int>(header.height));
  if (png_image_finish_read(&header, nullptr, image.values().data(), image.width(), nullptr) == 0) {
    const std::string message = header.message;
    png_image_free(&header);
    throw Error(ErrorKind::format, "PNG decode failed for " + path.string() + ": " + message);
  }
  return image;
}

}  // namespace terrasafe
