#pragma once

#include <span>
#include <vector>

#include "pmk/backbone.hpp"
#include "pmk/imagecore.hpp"

namespace pmk {

/// Per-tap-layer vectors of reals; the unconstrained form used by optimizers.
using LayerVectors = std::vector<std::vector<double>>;

/// Non-negative per-channel weights, one vector per tap layer.
class ChannelWeights {
 public:
  ChannelWeights() = default;
  /// Throws ErrorKind::range if any component is negative or not finite.
  explicit ChannelWeights(LayerVectors layers);

  static ChannelWeights ones(std::span<const int> channels);

  const LayerVectors& layers() const noexcept { return layers_; }
  std::size_t layer_count() const noexcept { return layers_.size(); }
  std::size_t parameter_count() const noexcept;
  double min() const noexcept;

  friend bool operator==(const ChannelWeights&, const ChannelWeights&) = default;

 private:
  LayerVectors layers_;
};

/// Number of linear calibration weights for the given tap channel counts.
std::size_t linear_parameter_count(std::span<const int> tap_channels);

struct DistanceReport {
  double total = 0.0;
  std::vector<double> per_layer;
};

inline constexpr double kNormEpsilon = 1e-10;

/// y / (||y||_2 + eps) along the channel axis at every spatial position.
FeatureStack normalize_channels(const FeatureStack& stack);

/// Reverse of normalize_channels: maps a gradient on the normalized stack to
/// a gradient on the raw stack.
FeatureStack normalize_channels_backward(const FeatureStack& raw, const FeatureStack& grad_normalized);

/// Layered distance: per_layer_l = mean_{h,w} sum_c w_{l,c} (a - b)^2 on
/// already-normalized stacks; total is the sum over layers.
DistanceReport lpips_distance(const FeatureStack& s0, const FeatureStack& s1, const ChannelWeights& w);

/// Per-layer, per-channel spatial mean of squared differences. The distance
/// is linear in w over these values: total = sum_{l,c} w_{l,c} D_{l,c}.
LayerVectors channel_mean_sq_diff(const FeatureStack& s0, const FeatureStack& s1);

struct LpipsGradients {
  LayerVectors weights;
  FeatureStack s0;
  FeatureStack s1;
};

/// Gradients of upstream * lpips_distance(s0, s1, w).
LpipsGradients lpips_backward(const FeatureStack& s0, const FeatureStack& s1, const ChannelWeights& w,
                              double upstream);

/// Mean squared error over all samples.
double l2_distance(const Tensor& a, const Tensor& b);
/// 10 log10(1 / MSE) with peak 1.0; +infinity for identical inputs.
double psnr(const Tensor& a, const Tensor& b);

struct SsimOptions {
  int window = 11;
  double sigma = 1.5;
  double c1 = 0.01 * 0.01;
  double c2 = 0.03 * 0.03;
};

/// Mean SSIM over every window position fully inside the image, computed per
/// channel and averaged. On axes shorter than the window, the Gaussian is
/// truncated to the axis length and renormalized.
double ssim(const Tensor& a, const Tensor& b, const SsimOptions& options = {});

}  // namespace pmk
