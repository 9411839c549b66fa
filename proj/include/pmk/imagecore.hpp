#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "pmk/rng.hpp"
#include "pmk/tensor.hpp"

namespace pmk {

/// 8-bit RGB raster, row-major, interleaved.
class ImageBuffer {
 public:
  ImageBuffer(int width, int height);
  ImageBuffer(int width, int height, std::vector<std::uint8_t> data);

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  static constexpr int channels() noexcept { return 3; }

  std::span<const std::uint8_t> data() const noexcept { return data_; }
  std::span<std::uint8_t> data() noexcept { return data_; }

  std::uint8_t& at(int x, int y, int c) noexcept { return data_[(static_cast<std::size_t>(y) * width_ + x) * 3 + c]; }
  std::uint8_t at(int x, int y, int c) const noexcept { return data_[(static_cast<std::size_t>(y) * width_ + x) * 3 + c]; }

  friend bool operator==(const ImageBuffer&, const ImageBuffer&) = default;

 private:
  int width_;
  int height_;
  std::vector<std::uint8_t> data_;
};

/// A tensor whose samples are finite and lie in [0, 1]. The range is
/// asserted on construction in debug builds.
struct PatchTensor : Tensor {
  PatchTensor() = default;
  PatchTensor(int c, int h, int w, double fill = 0.0) : Tensor(c, h, w, fill) {}
  explicit PatchTensor(Tensor t);
};

bool in_unit_range(const Tensor& t) noexcept;

// Codecs. PPM (binary P6, maxval 255) and PNG (decoded to RGB8).
ImageBuffer decode_image(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_ppm(const ImageBuffer& img);
std::vector<std::uint8_t> encode_png(const ImageBuffer& img);

ImageBuffer read_image(const std::filesystem::path& path);
/// Format chosen by extension: ".ppm" writes P6, anything else PNG.
void write_image(const std::filesystem::path& path, const ImageBuffer& img);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

/// v[c,y,x] = img[y,x,c] / 255.
PatchTensor to_tensor(const ImageBuffer& img);
/// Inverse of to_tensor with round-to-nearest quantization; values are
/// clamped to [0,1] first.
ImageBuffer from_tensor(const Tensor& t);

inline constexpr int kDefaultPatchSize = 64;

/// Exact crop of a size x size block with its top-left corner at (x, y).
PatchTensor extract_patch(const ImageBuffer& img, int x, int y, int size = kDefaultPatchSize);
/// Uniformly random crop origin such that the patch fits.
std::pair<int, int> random_patch_origin(const ImageBuffer& img, int size, Rng& rng);
PatchTensor extract_patch(const ImageBuffer& img, Rng& rng, int size = kDefaultPatchSize);

/// HSL with every component in [0,1]; hue in [0,1).
PatchTensor rgb_to_hsl(const PatchTensor& rgb);
PatchTensor hsl_to_rgb(const PatchTensor& hsl);

}  // namespace pmk
