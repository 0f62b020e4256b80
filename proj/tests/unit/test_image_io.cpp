#include <gtest/gtest.h>

#include <png.h>

#include <cstdio>

#include "synthetic.hpp"
#include "terrasafe/error.hpp"
#include "terrasafe/image_io.hpp"

using namespace terrasafe;
using terrasafe::testing::read_file;
using terrasafe::testing::TempDir;

namespace {

// Writes an 8-bit RGB PNG directly with libpng.
void write_rgb(const std::filesystem::path& path, int w, int h, const std::vector<std::uint8_t>& rgb) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(w);
  img.height = static_cast<png_uint_32>(h);
  img.format = PNG_FORMAT_RGB;
  ASSERT_TRUE(png_image_write_to_file(&img, path.c_str(), 0, rgb.data(), 0, nullptr));
}

}  // namespace

TEST(ImageIo, Quantize) {
  EXPECT_EQ(quantize_unit(0.0), 0);
  EXPECT_EQ(quantize_unit(1.0), 255);
  EXPECT_EQ(quantize_unit(0.5), 128);
  EXPECT_EQ(quantize_unit(-3.0), 0);
  EXPECT_EQ(quantize_unit(7.0), 255);
  EXPECT_EQ(quantize_unit(100.0 / 255.0), 100);
  for (int v = 0; v < 256; ++v) EXPECT_EQ(quantize_unit(v / 255.0), v);
  ScalarMap m(3, 1);
  m.values()[0] = 0.0f, m.values()[1] = 0.2f, m.values()[2] = 1.0f;
  const Gray8Image q = quantize(m);
  EXPECT_EQ(q.values()[1], 51);
  EXPECT_NEAR(dequantize(q).values()[1], 0.2f, 1e-6);
}

TEST(ImageIo, PngRoundTripAndDeterminism) {
  TempDir dir("png");
  Gray8Image img(17, 9);
  for (int y = 0; y < 9; ++y) {
    for (int x = 0; x < 17; ++x) img(x, y) = static_cast<std::uint8_t>((x * 13 + y * 7) % 256);
  }
  write_png_gray8(dir / "a.png", img);
  write_png_gray8(dir / "b.png", img);
  EXPECT_EQ(read_png_gray8(dir / "a.png"), img);
  EXPECT_EQ(read_file(dir / "a.png"), read_file(dir / "b.png"));
}

TEST(ImageIo, ColorInputCollapsesToGray) {
  TempDir dir("png_rgb");
  write_rgb(dir / "c.png", 2, 1, {10, 10, 10, 200, 200, 200});
  const Gray8Image g = read_png_gray8(dir / "c.png");
  ASSERT_EQ(g.width(), 2);
  EXPECT_NEAR(g.values()[0], 10, 1);
  EXPECT_NEAR(g.values()[1], 200, 1);
}

TEST(ImageIo, Errors) {
  TempDir dir("png_err");
  auto kind_of = [](const std::function<void()>& fn) {
    try {
      fn();
    } catch (const Error& e) {
      return e.kind();
    }
    return ErrorKind::invalid_argument;
  };
  EXPECT_EQ(kind_of([&] { read_png_gray8(dir / "missing.png"); }), ErrorKind::io);
  {
    std::FILE* f = std::fopen((dir / "junk.png").c_str(), "wb");
    std::fputs("not a png", f);
    std::fclose(f);
  }
  EXPECT_EQ(kind_of([&] { read_png_gray8(dir / "junk.png"); }), ErrorKind::format);
  EXPECT_EQ(kind_of([&] { write_png_gray8(dir / "nodir" / "x.png", Gray8Image(2, 2)); }), ErrorKind::io);
}
