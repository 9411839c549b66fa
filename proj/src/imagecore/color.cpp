#include <algorithm>
#include <cmath>

#include "pmk/error.hpp"
#include "pmk/imagecore.hpp"

namespace pmk {

namespace {

void require_rgb(const Tensor& t) {
  if (t.channels != 3) throw Error(ErrorKind::config, "color conversion expects 3 channels");
}

double hue_to_channel(double p, double q, double t) {
  if (t < 0.0) t += 1.0;
  if (t > 1.0) t -= 1.0;
  if (t < 1.0 / 6.0) return p + (q - p) * 6.0 * t;
  if (t < 0.5) return q;
  if (t < 2.0 / 3.0) return p + (q - p) * (2.0 / 3.0 - t) * 6.0;
  return p;
}

}  // namespace

PatchTensor rgb_to_hsl(const PatchTensor& rgb) {
  require_rgb(rgb);
  PatchTensor out(3, rgb.height, rgb.width);
  const std::size_t n = rgb.plane();
  for (std::size_t i = 0; i < n; ++i) {
    const double r = rgb.data[i];
    const double g = rgb.data[n + i];
    const double b = rgb.data[2 * n + i];
    const double hi = std::max({r, g, b});
    const double lo = std::min({r, g, b});
    const double l = 0.5 * (hi + lo);
    double h = 0.0;
    double s = 0.0;
    const double chroma = hi - lo;
    if (chroma > 0.0) {
      s = chroma / (1.0 - std::abs(2.0 * l - 1.0));
      if (hi == r) {
        h = (g - b) / chroma;
        if (h < 0.0) h += 6.0;
      } else if (hi == g) {
        h = (b - r) / chroma + 2.0;
      } else {
        h = (r - g) / chroma + 4.0;
      }
      h /= 6.0;
      if (h >= 1.0) h -= 1.0;
    }
    out.data[i] = h;
    out.data[n + i] = std::clamp(s, 0.0, 1.0);
    out.data[2 * n + i] = l;
  }
  return out;
}

PatchTensor hsl_to_rgb(const PatchTensor& hsl) {
  require_rgb(hsl);
  PatchTensor out(3, hsl.height, hsl.width);
  const std::size_t n = hsl.plane();
  for (std::size_t i = 0; i < n; ++i) {
    const double h = hsl.data[i];
    const double s = hsl.data[n + i];
    const double l = hsl.data[2 * n + i];
    double r = l;
    double g = l;
    double b = l;
    if (s > 0.0) {
      const double q = l < 0.5 ? l * (1.0 + s) : l + s - l * s;
      const double p = 2.0 * l - q;
      r = hue_to_channel(p, q, h + 1.0 / 3.0);
      g = hue_to_channel(p, q, h);
      b = hue_to_channel(p, q, h - 1.0 / 3.0);
    }
    out.data[i] = std::clamp(r, 0.0, 1.0);
    out.data[n + i] = std::clamp(g, 0.0, 1.0);
    out.data[2 * n + i] = std::clamp(b, 0.0, 1.0);
  }
  return out;
}

}  // namespace pmk
