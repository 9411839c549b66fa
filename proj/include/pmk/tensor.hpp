#pragma once

#include <cassert>
#include <cstddef>
#include <vector>

namespace pmk {

/// Dense C x H x W real tensor, channel-major.
struct Tensor {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> data;

  Tensor() = default;
  Tensor(int c, int h, int w, double fill = 0.0)
      : channels(c), height(h), width(w),
        data(static_cast<std::size_t>(c) * static_cast<std::size_t>(h) * static_cast<std::size_t>(w), fill) {}

  std::size_t size() const noexcept { return data.size(); }
  std::size_t plane() const noexcept { return static_cast<std::size_t>(height) * static_cast<std::size_t>(width); }

  std::size_t index(int c, int y, int x) const noexcept {
    assert(c >= 0 && c < channels && y >= 0 && y < height && x >= 0 && x < width);
    return (static_cast<std::size_t>(c) * height + y) * width + x;
  }
  double& at(int c, int y, int x) noexcept { return data[index(c, y, x)]; }
  double at(int c, int y, int x) const noexcept { return data[index(c, y, x)]; }

  bool same_shape(const Tensor& other) const noexcept {
    return channels == other.channels && height == other.height && width == other.width;
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

}  // namespace pmk
