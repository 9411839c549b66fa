#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <string>

#include <unistd.h>

#include "pmk/dataset.hpp"

namespace pmk::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("pmk-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const noexcept { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  std::filesystem::path path_;
};

/// Smooth colour fields with texture; distinct per index.
inline ImageBuffer synthetic_image(int index, int size = 96) {
  ImageBuffer img(size, size);
  Rng rng(1000 + static_cast<std::uint64_t>(index));
  const double fx = rng.uniform(0.02, 0.2), fy = rng.uniform(0.02, 0.2);
  const double phase[3] = {rng.uniform(0, 6.28), rng.uniform(0, 6.28), rng.uniform(0, 6.28)};
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      for (int c = 0; c < 3; ++c) {
        const double v = 0.5 + 0.3 * std::sin(fx * x * (c + 1) + phase[c]) * std::cos(fy * y + phase[c]) +
                         0.1 * rng.uniform(-1.0, 1.0) + ((x / 16 + y / 16) % 2 ? 0.05 : -0.05);
        img.at(x, y, c) = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
      }
  return img;
}

inline Corpus synthetic_corpus(int n = 5, int size = 96) {
  Corpus c;
  for (int i = 0; i < n; ++i) {
    c.names.push_back("img" + std::to_string(i) + ".png");
    c.images.push_back(synthetic_image(i, size));
  }
  return c;
}

inline void write_corpus(const std::filesystem::path& dir, const Corpus& c) {
  for (std::size_t i = 0; i < c.images.size(); ++i) write_image(dir / c.names[i], c.images[i]);
}

}  // namespace pmk::testing
