#pragma once

#include <cassert>
#include <cstddef>
#include <span>
#include <vector>

namespace terrasafe {

/// Dense row-major 2D array. Used for images, prediction maps, and masks.
template <typename T>
class Grid2D {
 public:
  Grid2D() = default;
  Grid2D(int width, int height, T fill = T{})
      : width_(width), height_(height),
        data_(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), fill) {
    assert(width >= 0 && height >= 0);
  }

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(int x, int y) noexcept { return data_[index(x, y)]; }
  const T& operator()(int x, int y) const noexcept { return data_[index(x, y)]; }

  std::span<T> row(int y) noexcept {
    return {data_.data() + index(0, y), static_cast<std::size_t>(width_)};
  }
  std::span<const T> row(int y) const noexcept {
    return {data_.data() + index(0, y), static_cast<std::size_t>(width_)};
  }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }

  bool same_shape(const Grid2D& other) const noexcept {
    return width_ == other.width_ && height_ == other.height_;
  }

  template <typename U>
  bool same_shape(const Grid2D<U>& other) const noexcept {
    return width_ == other.width() && height_ == other.height();
  }

  friend bool operator==(const Grid2D&, const Grid2D&) = default;

 private:
  std::size_t index(int x, int y) const noexcept {
    assert(x >= 0 && x < width_ && y >= 0 && y < height_);
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) +
           static_cast<std::size_t>(x);
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<T> data_;
};

using ScalarMap = Grid2D<float>;
using BinaryMap = Grid2D<std::uint8_t>;

}  // namespace terrasafe
