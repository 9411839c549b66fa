#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numeric>

#include "pmk/error.hpp"
#include "pmk/metric.hpp"
#include "support/gradcheck.hpp"

namespace pmk {
namespace {

using testing::central_difference;
using testing::relative_error;

FeatureStack random_stack(const std::vector<std::array<int, 3>>& shapes, Rng& rng) {
  FeatureStack s;
  for (const auto& sh : shapes) {
    Tensor t(sh[0], sh[1], sh[2]);
    for (double& v : t.data) v = rng.normal();
    s.layers.push_back(std::move(t));
  }
  return s;
}

FeatureStack one_pixel(std::vector<double> values) {
  Tensor t(static_cast<int>(values.size()), 1, 1);
  t.data = std::move(values);
  return FeatureStack{{t}};
}

// Spatial mean of 2 (1 - cos) between raw channel vectors, summed over layers.
double cosine_oracle(const FeatureStack& a, const FeatureStack& b) {
  double total = 0.0;
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    const auto& x = a.layers[l];
    const auto& y = b.layers[l];
    double layer = 0.0;
    for (int yy = 0; yy < x.height; ++yy)
      for (int xx = 0; xx < x.width; ++xx) {
        double dot = 0, nx = 0, ny = 0;
        for (int c = 0; c < x.channels; ++c) {
          dot += x.at(c, yy, xx) * y.at(c, yy, xx);
          nx += x.at(c, yy, xx) * x.at(c, yy, xx);
          ny += y.at(c, yy, xx) * y.at(c, yy, xx);
        }
        layer += 2.0 * (1.0 - dot / std::sqrt(nx * ny));
      }
    total += layer / (x.height * x.width);
  }
  return total;
}

const std::vector<std::array<int, 3>> kSmallShapes = {{4, 3, 3}, {6, 2, 2}, {3, 1, 1}};

TEST(Normalize, ScalesToUnitLength) {
  const auto out = normalize_channels(one_pixel({3.0, 4.0}));
  EXPECT_NEAR(out.layers[0].data[0], 0.6, 1e-9);
  EXPECT_NEAR(out.layers[0].data[1], 0.8, 1e-9);
}

TEST(Normalize, ZeroVectorStaysZero) {
  const auto out = normalize_channels(one_pixel({0.0, 0.0, 0.0}));
  for (double v : out.layers[0].data) EXPECT_EQ(v, 0.0);
}

TEST(Normalize, UnitVectorIsFixedPoint) {
  const double s = 1.0 / std::sqrt(2.0);
  const auto out = normalize_channels(one_pixel({s, -s}));
  EXPECT_NEAR(out.layers[0].data[0], s, 1e-9);
  EXPECT_NEAR(out.layers[0].data[1], -s, 1e-9);
}

TEST(Normalize, NormsAreZeroOrNearOne) {
  Rng rng(3);
  auto stack = random_stack(kSmallShapes, rng);
  stack.layers[0].at(0, 0, 0) = 0.0;
  for (int c = 0; c < 4; ++c) stack.layers[0].at(c, 1, 1) = 0.0;
  const auto out = normalize_channels(stack);
  for (const auto& t : out.layers)
    for (int y = 0; y < t.height; ++y)
      for (int x = 0; x < t.width; ++x) {
        double sq = 0;
        for (int c = 0; c < t.channels; ++c) sq += t.at(c, y, x) * t.at(c, y, x);
        const double n = std::sqrt(sq);
        EXPECT_TRUE(n == 0.0 || (n >= 1.0 - 1e-6 && n <= 1.0)) << n;
      }
}

TEST(Normalize, BackwardMatchesFiniteDifferences) {
  Rng rng(4);
  auto raw = random_stack(kSmallShapes, rng);
  const auto up = random_stack(kSmallShapes, rng);
  auto objective = [&] {
    const auto n = normalize_channels(raw);
    double acc = 0;
    for (std::size_t l = 0; l < n.layers.size(); ++l)
      acc += std::inner_product(n.layers[l].data.begin(), n.layers[l].data.end(), up.layers[l].data.begin(), 0.0);
    return acc;
  };
  const auto g = normalize_channels_backward(raw, up);
  for (std::size_t l = 0; l < raw.layers.size(); ++l)
    for (std::size_t i = 0; i < raw.layers[l].size(); ++i) {
      const double fd = central_difference(&raw.layers[l].data[i], 1e-5, objective);
      EXPECT_LT(relative_error(g.layers[l].data[i], fd), 1e-6);
    }
}

TEST(Lpips, IdenticalStacksGiveZero) {
  Rng rng(5);
  const auto s = normalize_channels(random_stack(kSmallShapes, rng));
  const auto w = ChannelWeights::ones(std::vector<int>{4, 6, 3});
  const auto r = lpips_distance(s, s, w);
  EXPECT_EQ(r.total, 0.0);
  for (double v : r.per_layer) EXPECT_EQ(v, 0.0);
}

TEST(Lpips, OrthogonalUnitVectors) {
  const auto r = lpips_distance(one_pixel({1, 0}), one_pixel({0, 1}), ChannelWeights({{1.0, 1.0}}));
  EXPECT_DOUBLE_EQ(r.total, 2.0);
  ASSERT_EQ(r.per_layer.size(), 1u);
}

TEST(Lpips, UnitWeightsEqualCosineDistance) {
  Rng rng(6);
  const std::vector<std::array<int, 3>> shapes = {{16, 8, 8}, {32, 4, 4}, {64, 2, 2}, {64, 1, 1}};
  const auto w = ChannelWeights::ones(std::vector<int>{16, 32, 64, 64});
  for (int trial = 0; trial < 20; ++trial) {
    const auto a = random_stack(shapes, rng);
    const auto b = random_stack(shapes, rng);
    const auto r = lpips_distance(normalize_channels(a), normalize_channels(b), w);
    EXPECT_NEAR(r.total, cosine_oracle(a, b), 1e-6);
    EXPECT_NEAR(r.total, std::accumulate(r.per_layer.begin(), r.per_layer.end(), 0.0), 1e-12);
  }
}

TEST(Lpips, MismatchedWeightsAreConfigErrors) {
  const auto s = one_pixel({1, 0});
  try {
    lpips_distance(s, s, ChannelWeights({{1.0, 1.0, 1.0}}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::config);
  }
  EXPECT_THROW(lpips_distance(s, one_pixel({1, 0, 0}), ChannelWeights({{1.0, 1.0}})), Error);
  EXPECT_THROW(lpips_distance(s, s, ChannelWeights({{1.0, 1.0}, {1.0}})), Error);
}

TEST(Lpips, SymmetricMonotoneAndBounded) {
  Rng rng(7);
  const std::vector<int> channels{4, 6, 3};
  for (int trial = 0; trial < 50; ++trial) {
    const auto a = normalize_channels(random_stack(kSmallShapes, rng));
    const auto b = normalize_channels(random_stack(kSmallShapes, rng));
    LayerVectors raw;
    for (int c : channels) {
      std::vector<double> v(static_cast<std::size_t>(c));
      for (double& x : v) x = rng.uniform(0.0, 2.0);
      raw.push_back(v);
    }
    const ChannelWeights w(raw);
    const double d = lpips_distance(a, b, w).total;
    EXPECT_LT(std::abs(d - lpips_distance(b, a, w).total), 1e-9);

    auto bumped = raw;
    bumped[trial % 3][0] += 0.5;
    EXPECT_GE(lpips_distance(a, b, ChannelWeights(bumped)).total, d);

    const auto unit = lpips_distance(a, b, ChannelWeights::ones(channels));
    for (double v : unit.per_layer) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 4.0);
    }
  }
}

TEST(Lpips, BackwardOnOrthogonalPair) {
  const auto g = lpips_backward(one_pixel({1, 0}), one_pixel({0, 1}), ChannelWeights({{1.0, 1.0}}), 1.0);
  EXPECT_EQ(g.weights[0], (std::vector<double>{1.0, 1.0}));
}

TEST(Lpips, BackwardIdenticalStacksZeroWeightGradient) {
  Rng rng(8);
  const auto s = normalize_channels(random_stack(kSmallShapes, rng));
  const auto g = lpips_backward(s, s, ChannelWeights::ones(std::vector<int>{4, 6, 3}), 1.7);
  for (const auto& l : g.weights)
    for (double v : l) EXPECT_EQ(v, 0.0);
}

TEST(Lpips, BackwardMatchesFiniteDifferences) {
  Rng rng(9);
  auto a = normalize_channels(random_stack(kSmallShapes, rng));
  auto b = normalize_channels(random_stack(kSmallShapes, rng));
  LayerVectors raw;
  for (int c : {4, 6, 3}) {
    std::vector<double> v(static_cast<std::size_t>(c));
    for (double& x : v) x = rng.uniform(0.5, 1.5);
    raw.push_back(v);
  }
  const double upstream = 0.7;
  const auto g = lpips_backward(a, b, ChannelWeights(raw), upstream);
  auto objective = [&] { return upstream * lpips_distance(a, b, ChannelWeights(raw)).total; };
  for (std::size_t l = 0; l < raw.size(); ++l)
    for (std::size_t c = 0; c < raw[l].size(); ++c)
      EXPECT_LT(relative_error(g.weights[l][c], central_difference(&raw[l][c], 1e-4, objective)), 1e-4);
  for (std::size_t l = 0; l < a.layers.size(); ++l)
    for (std::size_t i = 0; i < a.layers[l].size(); ++i) {
      EXPECT_LT(relative_error(g.s0.layers[l].data[i], central_difference(&a.layers[l].data[i], 1e-4, objective)), 1e-4);
      EXPECT_LT(relative_error(g.s1.layers[l].data[i], central_difference(&b.layers[l].data[i], 1e-4, objective)), 1e-4);
    }
}

TEST(ChannelWeightsType, RejectsNegativeAndNonFinite) {
  try {
    ChannelWeights({{0.5, -0.1}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::range);
  }
  EXPECT_THROW(ChannelWeights(LayerVectors{{std::nan("")}}), Error);
  EXPECT_NO_THROW(ChannelWeights({{0.0, 3.0}}));
}

TEST(ChannelWeightsType, LinearParameterCounts) {
  EXPECT_EQ(linear_parameter_count(std::vector<int>{64, 128, 256, 512, 512}), 1472u);
  EXPECT_EQ(linear_parameter_count(std::vector<int>{64, 192, 384, 256, 256}), 1152u);
  EXPECT_EQ(linear_parameter_count(tiny_conv_spec().tap_channels()), 240u);
  EXPECT_EQ(ChannelWeights::ones(tiny_conv_spec().tap_channels()).parameter_count(), 240u);
}

TEST(PixelMetrics, IdenticalInputs) {
  const Tensor a(3, 4, 4, 0.3);
  EXPECT_EQ(l2_distance(a, a), 0.0);
  EXPECT_TRUE(std::isinf(psnr(a, a)));
  EXPECT_GT(psnr(a, a), 0.0);
}

TEST(PixelMetrics, KnownValues) {
  EXPECT_EQ(l2_distance(Tensor(1, 1, 1, 0.0), Tensor(1, 1, 1, 1.0)), 1.0);
  EXPECT_EQ(psnr(Tensor(1, 1, 1, 0.0), Tensor(1, 1, 1, 1.0)), 0.0);
  EXPECT_NEAR(psnr(Tensor(3, 4, 4, 0.0), Tensor(3, 4, 4, 0.1)), 20.0, 1e-9);
  EXPECT_THROW(l2_distance(Tensor(3, 4, 4), Tensor(3, 4, 5)), Error);
}

// Direct evaluation at each window position with explicit 2-D weights.
double ssim_oracle(const Tensor& a, const Tensor& b) {
  const SsimOptions o;
  auto taps = [&](int len) {
    const int n = std::min(len, o.window);
    const int start = (o.window - n) / 2;
    std::vector<double> t;
    double sum = 0;
    for (int i = start; i < start + n; ++i) {
      const double d = i - (o.window - 1) / 2.0;
      t.push_back(std::exp(-d * d / (2 * o.sigma * o.sigma)));
      sum += t.back();
    }
    for (double& v : t) v /= sum;
    return t;
  };
  const auto ty = taps(a.height);
  const auto tx = taps(a.width);
  const int wy = static_cast<int>(ty.size());
  const int wx = static_cast<int>(tx.size());
  double total = 0;
  for (int c = 0; c < a.channels; ++c) {
    double channel = 0;
    int count = 0;
    for (int y0 = 0; y0 + wy <= a.height; ++y0)
      for (int x0 = 0; x0 + wx <= a.width; ++x0) {
        double ma = 0, mb = 0;
        for (int i = 0; i < wy; ++i)
          for (int j = 0; j < wx; ++j) {
            ma += ty[i] * tx[j] * a.at(c, y0 + i, x0 + j);
            mb += ty[i] * tx[j] * b.at(c, y0 + i, x0 + j);
          }
        double va = 0, vb = 0, cov = 0;
        for (int i = 0; i < wy; ++i)
          for (int j = 0; j < wx; ++j) {
            const double da = a.at(c, y0 + i, x0 + j) - ma;
            const double db = b.at(c, y0 + i, x0 + j) - mb;
            va += ty[i] * tx[j] * da * da;
            vb += ty[i] * tx[j] * db * db;
            cov += ty[i] * tx[j] * da * db;
          }
        channel += ((2 * ma * mb + o.c1) * (2 * cov + o.c2)) / ((ma * ma + mb * mb + o.c1) * (va + vb + o.c2));
        ++count;
      }
    total += channel / count;
  }
  return total / a.channels;
}

TEST(Ssim, SelfSimilarityIsOne) {
  Rng rng(10);
  Tensor a(3, 16, 16);
  for (double& v : a.data) v = rng.uniform();
  EXPECT_NEAR(ssim(a, a), 1.0, 1e-9);
}

TEST(Ssim, ConstantImagesClosedForm) {
  const double p = 0.5, q = 0.25;
  const double c1 = 1e-4;
  const double expected = (2 * p * q + c1) / (p * p + q * q + c1);
  EXPECT_NEAR(expected, 0.800064, 1e-6);
  EXPECT_NEAR(ssim(Tensor(3, 16, 16, p), Tensor(3, 16, 16, q)), expected, 1e-6);
}

TEST(Ssim, MatchesWindowedOracle) {
  Rng rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    Tensor a(3, 16, 16), b(3, 16, 16);
    for (double& v : a.data) v = rng.uniform();
    for (std::size_t i = 0; i < b.size(); ++i) b.data[i] = std::clamp(a.data[i] + 0.2 * rng.normal(), 0.0, 1.0);
    EXPECT_NEAR(ssim(a, b), ssim_oracle(a, b), 1e-6);
  }
}

TEST(Ssim, SmallInputsUseTruncatedWindow) {
  Rng rng(12);
  Tensor a(3, 5, 7), b(3, 5, 7);
  for (double& v : a.data) v = rng.uniform();
  for (double& v : b.data) v = rng.uniform();
  const double s = ssim(a, b);
  EXPECT_NEAR(s, ssim_oracle(a, b), 1e-9);
  EXPECT_GE(s, -1.0);
  EXPECT_LE(s, 1.0);
  EXPECT_NEAR(ssim(a, a), 1.0, 1e-9);
}

TEST(Ssim, ShapeMismatch) { EXPECT_THROW(ssim(Tensor(3, 16, 16), Tensor(1, 16, 16)), Error); }

}  // namespace
}  // namespace pmk
