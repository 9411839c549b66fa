#include "pmk/metric.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "pmk/error.hpp"

namespace pmk {

ChannelWeights::ChannelWeights(LayerVectors layers) : layers_(std::move(layers)) {
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    for (std::size_t c = 0; c < layers_[l].size(); ++c) {
      const double v = layers_[l][c];
      if (!std::isfinite(v) || v < 0.0) {
        throw Error(ErrorKind::range, "channel weight [" + std::to_string(l) + "][" + std::to_string(c) +
                                          "] must be finite and non-negative");
      }
    }
  }
}

ChannelWeights ChannelWeights::ones(std::span<const int> channels) {
  LayerVectors layers;
  for (int c : channels) layers.emplace_back(static_cast<std::size_t>(c), 1.0);
  return ChannelWeights(std::move(layers));
}

std::size_t ChannelWeights::parameter_count() const noexcept {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l.size();
  return n;
}

double ChannelWeights::min() const noexcept {
  double m = std::numeric_limits<double>::infinity();
  for (const auto& l : layers_)
    for (double v : l) m = std::min(m, v);
  return m;
}

std::size_t linear_parameter_count(std::span<const int> tap_channels) {
  return std::accumulate(tap_channels.begin(), tap_channels.end(), std::size_t{0},
                         [](std::size_t acc, int c) { return acc + static_cast<std::size_t>(c); });
}

// ---------------------------------------------------------------------------
// Channel normalization

FeatureStack normalize_channels(const FeatureStack& stack) {
  FeatureStack out = stack;
  for (auto& t : out.layers) {
    const std::size_t plane = t.plane();
    for (std::size_t pos = 0; pos < plane; ++pos) {
      double sq = 0.0;
      for (int c = 0; c < t.channels; ++c) {
        const double v = t.data[c * plane + pos];
        sq += v * v;
      }
      const double denom = std::sqrt(sq) + kNormEpsilon;
      for (int c = 0; c < t.channels; ++c) t.data[c * plane + pos] /= denom;
    }
  }
  return out;
}

FeatureStack normalize_channels_backward(const FeatureStack& raw, const FeatureStack& grad_normalized) {
  if (raw.layers.size() != grad_normalized.layers.size()) {
    throw Error(ErrorKind::config, "normalize backward: layer count mismatch");
  }
  FeatureStack out = grad_normalized;
  for (std::size_t l = 0; l < raw.layers.size(); ++l) {
    const Tensor& y = raw.layers[l];
    const Tensor& g = grad_normalized.layers[l];
    if (!y.same_shape(g)) throw Error(ErrorKind::config, "normalize backward: shape mismatch");
    Tensor& gy = out.layers[l];
    const std::size_t plane = y.plane();
    for (std::size_t pos = 0; pos < plane; ++pos) {
      double sq = 0.0;
      double dot = 0.0;
      for (int c = 0; c < y.channels; ++c) {
        const double v = y.data[c * plane + pos];
        sq += v * v;
        dot += v * g.data[c * plane + pos];
      }
      const double norm = std::sqrt(sq);
      const double denom = norm + kNormEpsilon;
      // d(y/(|y|+e))/dy = I/(|y|+e) - y y^T / (|y| (|y|+e)^2); second term vanishes at y = 0.
      const double radial = norm > 0.0 ? dot / (norm * denom * denom) : 0.0;
      for (int c = 0; c < y.channels; ++c) {
        const std::size_t j = c * plane + pos;
        gy.data[j] = g.data[j] / denom - y.data[j] * radial;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Layered distance

namespace {

void check_pair(const FeatureStack& s0, const FeatureStack& s1, const ChannelWeights* w) {
  if (s0.layers.size() != s1.layers.size()) throw Error(ErrorKind::config, "distance: stacks differ in layer count");
  if (w != nullptr && w->layer_count() != s0.layers.size()) {
    throw Error(ErrorKind::config, "distance: weights have " + std::to_string(w->layer_count()) +
                                       " layers, stacks have " + std::to_string(s0.layers.size()));
  }
  for (std::size_t l = 0; l < s0.layers.size(); ++l) {
    if (!s0.layers[l].same_shape(s1.layers[l])) {
      throw Error(ErrorKind::config, "distance: layer " + std::to_string(l) + " shape mismatch");
    }
    if (w != nullptr && w->layers()[l].size() != static_cast<std::size_t>(s0.layers[l].channels)) {
      throw Error(ErrorKind::config, "distance: layer " + std::to_string(l) + " has " +
                                         std::to_string(s0.layers[l].channels) + " channels but " +
                                         std::to_string(w->layers()[l].size()) + " weights");
    }
  }
}

}  // namespace

LayerVectors channel_mean_sq_diff(const FeatureStack& s0, const FeatureStack& s1) {
  check_pair(s0, s1, nullptr);
  LayerVectors out(s0.layers.size());
  for (std::size_t l = 0; l < s0.layers.size(); ++l) {
    const Tensor& a = s0.layers[l];
    const Tensor& b = s1.layers[l];
    const std::size_t plane = a.plane();
    out[l].assign(static_cast<std::size_t>(a.channels), 0.0);
    for (int c = 0; c < a.channels; ++c) {
      double acc = 0.0;
      for (std::size_t pos = 0; pos < plane; ++pos) {
        const double d = a.data[c * plane + pos] - b.data[c * plane + pos];
        acc += d * d;
      }
      out[l][c] = plane == 0 ? 0.0 : acc / static_cast<double>(plane);
    }
  }
  return out;
}

DistanceReport lpips_distance(const FeatureStack& s0, const FeatureStack& s1, const ChannelWeights& w) {
  check_pair(s0, s1, &w);
  const LayerVectors diffs = channel_mean_sq_diff(s0, s1);
  DistanceReport report;
  report.per_layer.reserve(diffs.size());
  for (std::size_t l = 0; l < diffs.size(); ++l) {
    double layer = 0.0;
    for (std::size_t c = 0; c < diffs[l].size(); ++c) layer += w.layers()[l][c] * diffs[l][c];
    report.per_layer.push_back(layer);
    report.total += layer;
  }
  return report;
}

LpipsGradients lpips_backward(const FeatureStack& s0, const FeatureStack& s1, const ChannelWeights& w,
                              double upstream) {
  check_pair(s0, s1, &w);
  LpipsGradients grads;
  grads.weights = channel_mean_sq_diff(s0, s1);
  for (auto& layer : grads.weights)
    for (double& v : layer) v *= upstream;
  grads.s0 = s0;
  grads.s1 = s1;
  for (std::size_t l = 0; l < s0.layers.size(); ++l) {
    const Tensor& a = s0.layers[l];
    const Tensor& b = s1.layers[l];
    const std::size_t plane = a.plane();
    const double scale = plane == 0 ? 0.0 : 2.0 * upstream / static_cast<double>(plane);
    for (int c = 0; c < a.channels; ++c) {
      const double wc = w.layers()[l][c];
      for (std::size_t pos = 0; pos < plane; ++pos) {
        const std::size_t j = c * plane + pos;
        const double g = scale * wc * (a.data[j] - b.data[j]);
        grads.s0.layers[l].data[j] = g;
        grads.s1.layers[l].data[j] = -g;
      }
    }
  }
  return grads;
}

// ---------------------------------------------------------------------------
// Pixel baselines

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (!a.same_shape(b)) throw Error(ErrorKind::config, std::string(what) + ": inputs differ in shape");
  if (a.size() == 0) throw Error(ErrorKind::config, std::string(what) + ": empty input");
}

}  // namespace

double l2_distance(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "l2");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    acc += d * d;
  }
  return acc / static_cast<double>(a.size());
}

double psnr(const Tensor& a, const Tensor& b) {
  const double mse = l2_distance(a, b);
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

namespace {

std::vector<double> ssim_taps(int length, const SsimOptions& o) {
  std::vector<double> full(static_cast<std::size_t>(o.window));
  const double centre = (o.window - 1) / 2.0;
  for (int i = 0; i < o.window; ++i) {
    const double d = i - centre;
    full[i] = std::exp(-d * d / (2.0 * o.sigma * o.sigma));
  }
  const int taps = std::min(length, o.window);
  const int start = (o.window - taps) / 2;
  std::vector<double> out(full.begin() + start, full.begin() + start + taps);
  const double sum = std::accumulate(out.begin(), out.end(), 0.0);
  for (double& v : out) v /= sum;
  return out;
}

// Valid-mode separable filter of one plane.
std::vector<double> filter_valid(const double* src, int h, int w, const std::vector<double>& ky,
                                 const std::vector<double>& kx) {
  const int out_h = h - static_cast<int>(ky.size()) + 1;
  const int out_w = w - static_cast<int>(kx.size()) + 1;
  std::vector<double> rows(static_cast<std::size_t>(h) * out_w, 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < out_w; ++x) {
      double acc = 0.0;
      for (std::size_t k = 0; k < kx.size(); ++k) acc += kx[k] * src[y * w + x + static_cast<int>(k)];
      rows[static_cast<std::size_t>(y) * out_w + x] = acc;
    }
  std::vector<double> out(static_cast<std::size_t>(out_h) * out_w, 0.0);
  for (int y = 0; y < out_h; ++y)
    for (int x = 0; x < out_w; ++x) {
      double acc = 0.0;
      for (std::size_t k = 0; k < ky.size(); ++k) acc += ky[k] * rows[(y + k) * out_w + x];
      out[static_cast<std::size_t>(y) * out_w + x] = acc;
    }
  return out;
}

}  // namespace

double ssim(const Tensor& a, const Tensor& b, const SsimOptions& o) {
  check_same_shape(a, b, "ssim");
  const auto ky = ssim_taps(a.height, o);
  const auto kx = ssim_taps(a.width, o);
  const std::size_t plane = a.plane();
  std::vector<double> aa(plane), bb(plane), ab(plane);
  double total = 0.0;
  for (int c = 0; c < a.channels; ++c) {
    const double* pa = a.data.data() + c * plane;
    const double* pb = b.data.data() + c * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      aa[i] = pa[i] * pa[i];
      bb[i] = pb[i] * pb[i];
      ab[i] = pa[i] * pb[i];
    }
    const auto mu_a = filter_valid(pa, a.height, a.width, ky, kx);
    const auto mu_b = filter_valid(pb, a.height, a.width, ky, kx);
    const auto e_aa = filter_valid(aa.data(), a.height, a.width, ky, kx);
    const auto e_bb = filter_valid(bb.data(), a.height, a.width, ky, kx);
    const auto e_ab = filter_valid(ab.data(), a.height, a.width, ky, kx);
    double channel = 0.0;
    for (std::size_t i = 0; i < mu_a.size(); ++i) {
      const double ma = mu_a[i];
      const double mb = mu_b[i];
      const double va = e_aa[i] - ma * ma;
      const double vb = e_bb[i] - mb * mb;
      const double cov = e_ab[i] - ma * mb;
      channel += ((2.0 * ma * mb + o.c1) * (2.0 * cov + o.c2)) / ((ma * ma + mb * mb + o.c1) * (va + vb + o.c2));
    }
    total += channel / static_cast<double>(mu_a.size());
  }
  return total / a.channels;
}

}  // namespace pmk
