#include "pmk/distort.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>

#include "pmk/error.hpp"

namespace pmk {

std::string_view to_string(DistortionKind kind) noexcept {
  switch (kind) {
    case DistortionKind::gaussian_noise: return "gaussian_noise";
    case DistortionKind::uniform_noise: return "uniform_noise";
    case DistortionKind::impulse_noise: return "impulse_noise";
    case DistortionKind::gaussian_blur: return "gaussian_blur";
    case DistortionKind::box_blur: return "box_blur";
    case DistortionKind::brightness: return "brightness";
    case DistortionKind::contrast: return "contrast";
    case DistortionKind::saturation: return "saturation";
    case DistortionKind::hue_shift: return "hue_shift";
    case DistortionKind::translate: return "translate";
    case DistortionKind::block_shuffle: return "block_shuffle";
    case DistortionKind::block_zero: return "block_zero";
    case DistortionKind::quantize_dct: return "quantize_dct";
  }
  return "unknown";
}

std::optional<DistortionKind> distortion_kind_from_string(std::string_view name) noexcept {
  for (auto kind : kAllDistortionKinds)
    if (to_string(kind) == name) return kind;
  return std::nullopt;
}

std::string severity_table() {
  return "gaussian_noise: additive N(0, sigma), sigma = 0.3*s\n"
         "uniform_noise: additive U(-a, a), a = 0.3*s\n"
         "impulse_noise: pixel fraction 0.2*s set to 0 or 1\n"
         "gaussian_blur: sigma = 5*s, radius = ceil(3*sigma), reflect padding\n"
         "box_blur: radius = round(6*s), reflect padding\n"
         "brightness: offset = +/-0.4*s\n"
         "contrast: scale = 1 +/- 0.8*s about 0.5\n"
         "saturation: HSL saturation scale = 1 +/- s\n"
         "hue_shift: hue offset = +/-0.25*s of the circle\n"
         "translate: shift = round(12*s) px, reflect fill\n"
         "block_shuffle: 8x8 blocks, fraction 0.3*s cyclically permuted\n"
         "block_zero: 8x8 blocks, fraction 0.3*s set to 0\n"
         "quantize_dct: 8x8 orthonormal DCT, step = 0.02 + 0.5*s\n"
         "severity 0: identity for every kind\n";
}

std::string severity_table_hash() {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : severity_table()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace {

std::string describe_spec(const DistortionSpec& s) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "@%g", s.severity);
  return std::string(to_string(s.kind)) + buf;
}

}  // namespace

std::string describe(const Distortion& d) {
  if (const auto* s = std::get_if<DistortionSpec>(&d)) return describe_spec(*s);
  const auto& c = std::get<ComposedDistortion>(d);
  return describe_spec(c.first) + "+" + describe_spec(c.second);
}

std::string family(const Distortion& d) {
  if (const auto* s = std::get_if<DistortionSpec>(&d)) return std::string(to_string(s->kind));
  const auto& c = std::get<ComposedDistortion>(d);
  return std::string(to_string(c.first.kind)) + "+" + std::string(to_string(c.second.kind));
}

// ---------------------------------------------------------------------------
// Kernels

namespace {

int reflect(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * n - 2;
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

void clamp_unit(Tensor& t) {
  for (double& v : t.data) v = std::clamp(v, 0.0, 1.0);
}

// Separable 1-D filter along x then y with reflect padding.
PatchTensor separable_filter(const PatchTensor& x, const std::vector<double>& taps) {
  const int r = static_cast<int>(taps.size() / 2);
  Tensor tmp(x.channels, x.height, x.width);
  for (int c = 0; c < x.channels; ++c)
    for (int y = 0; y < x.height; ++y)
      for (int xx = 0; xx < x.width; ++xx) {
        double acc = 0.0;
        for (int k = -r; k <= r; ++k) acc += taps[k + r] * x.at(c, y, reflect(xx + k, x.width));
        tmp.at(c, y, xx) = acc;
      }
  Tensor out(x.channels, x.height, x.width);
  for (int c = 0; c < x.channels; ++c)
    for (int y = 0; y < x.height; ++y)
      for (int xx = 0; xx < x.width; ++xx) {
        double acc = 0.0;
        for (int k = -r; k <= r; ++k) acc += taps[k + r] * tmp.at(c, reflect(y + k, x.height), xx);
        out.at(c, y, xx) = acc;
      }
  clamp_unit(out);
  return PatchTensor(std::move(out));
}

PatchTensor gaussian_blur(const PatchTensor& x, double sigma) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  if (radius == 0) return x;
  std::vector<double> taps(static_cast<std::size_t>(2 * radius + 1));
  for (int k = -radius; k <= radius; ++k) taps[k + radius] = std::exp(-0.5 * k * k / (sigma * sigma));
  const double sum = std::accumulate(taps.begin(), taps.end(), 0.0);
  for (double& t : taps) t /= sum;
  return separable_filter(x, taps);
}

PatchTensor box_blur(const PatchTensor& x, int radius) {
  if (radius == 0) return x;
  std::vector<double> taps(static_cast<std::size_t>(2 * radius + 1), 1.0 / (2 * radius + 1));
  return separable_filter(x, taps);
}

template <typename Fn>
PatchTensor pointwise(const PatchTensor& x, Fn fn) {
  Tensor out = x;
  for (double& v : out.data) v = fn(v);
  clamp_unit(out);
  return PatchTensor(std::move(out));
}

PatchTensor translate(const PatchTensor& x, int shift, Rng& rng) {
  if (shift == 0) return x;
  const auto direction = rng.below(3);  // 0 horizontal, 1 vertical, 2 diagonal
  const int dx = direction != 1 ? rng.sign() * shift : 0;
  const int dy = direction != 0 ? rng.sign() * shift : 0;
  PatchTensor out(x.channels, x.height, x.width);
  for (int c = 0; c < x.channels; ++c)
    for (int y = 0; y < x.height; ++y)
      for (int xx = 0; xx < x.width; ++xx)
        out.at(c, y, xx) = x.at(c, reflect(y - dy, x.height), reflect(xx - dx, x.width));
  return out;
}

constexpr int kBlock = 8;

std::vector<int> pick_blocks(const PatchTensor& x, double fraction, Rng& rng, int* blocks_x) {
  *blocks_x = x.width / kBlock;
  const int total = (x.height / kBlock) * *blocks_x;
  const int count = static_cast<int>(std::lround(fraction * total));
  std::vector<int> ids(static_cast<std::size_t>(total));
  std::iota(ids.begin(), ids.end(), 0);
  rng.shuffle(std::span<int>(ids));
  ids.resize(static_cast<std::size_t>(std::clamp(count, 0, total)));
  return ids;
}

PatchTensor block_shuffle(const PatchTensor& x, double fraction, Rng& rng) {
  int bx = 0;
  const auto ids = pick_blocks(x, fraction, rng, &bx);
  if (ids.size() < 2) return x;
  PatchTensor out = x;
  // Block ids[i] receives the content of ids[i+1]; every chosen block moves.
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const int dst = ids[i];
    const int src = ids[(i + 1) % ids.size()];
    for (int c = 0; c < x.channels; ++c)
      for (int y = 0; y < kBlock; ++y)
        for (int xx = 0; xx < kBlock; ++xx)
          out.at(c, (dst / bx) * kBlock + y, (dst % bx) * kBlock + xx) =
              x.at(c, (src / bx) * kBlock + y, (src % bx) * kBlock + xx);
  }
  return out;
}

PatchTensor block_zero(const PatchTensor& x, double fraction, Rng& rng) {
  int bx = 0;
  const auto ids = pick_blocks(x, fraction, rng, &bx);
  PatchTensor out = x;
  for (int id : ids)
    for (int c = 0; c < x.channels; ++c)
      for (int y = 0; y < kBlock; ++y)
        for (int xx = 0; xx < kBlock; ++xx) out.at(c, (id / bx) * kBlock + y, (id % bx) * kBlock + xx) = 0.0;
  return out;
}

// Orthonormal 8-point DCT-II basis, basis[k][n].
const std::array<std::array<double, kBlock>, kBlock>& dct_basis() {
  static const auto basis = [] {
    std::array<std::array<double, kBlock>, kBlock> b{};
    for (int k = 0; k < kBlock; ++k) {
      const double scale = k == 0 ? std::sqrt(1.0 / kBlock) : std::sqrt(2.0 / kBlock);
      for (int n = 0; n < kBlock; ++n) b[k][n] = scale * std::cos(std::numbers::pi * (n + 0.5) * k / kBlock);
    }
    return b;
  }();
  return basis;
}

PatchTensor quantize_dct(const PatchTensor& x, double step) {
  const auto& basis = dct_basis();
  Tensor out = x;
  double block[kBlock][kBlock];
  double tmp[kBlock][kBlock];
  for (int c = 0; c < x.channels; ++c)
    for (int by = 0; by + kBlock <= x.height; by += kBlock)
      for (int bx = 0; bx + kBlock <= x.width; bx += kBlock) {
        for (int y = 0; y < kBlock; ++y)
          for (int k = 0; k < kBlock; ++k) {
            double acc = 0.0;
            for (int n = 0; n < kBlock; ++n) acc += basis[k][n] * x.at(c, by + y, bx + n);
            tmp[y][k] = acc;
          }
        for (int ky = 0; ky < kBlock; ++ky)
          for (int kx = 0; kx < kBlock; ++kx) {
            double acc = 0.0;
            for (int n = 0; n < kBlock; ++n) acc += basis[ky][n] * tmp[n][kx];
            block[ky][kx] = std::nearbyint(acc / step) * step;
          }
        for (int n = 0; n < kBlock; ++n)
          for (int kx = 0; kx < kBlock; ++kx) {
            double acc = 0.0;
            for (int ky = 0; ky < kBlock; ++ky) acc += basis[ky][n] * block[ky][kx];
            tmp[n][kx] = acc;
          }
        for (int y = 0; y < kBlock; ++y)
          for (int n = 0; n < kBlock; ++n) {
            double acc = 0.0;
            for (int kx = 0; kx < kBlock; ++kx) acc += basis[kx][n] * tmp[y][kx];
            out.at(c, by + y, bx + n) = acc;
          }
      }
  clamp_unit(out);
  return PatchTensor(std::move(out));
}

PatchTensor adjust_hsl(const PatchTensor& x, double saturation_scale, double hue_offset) {
  PatchTensor hsl = rgb_to_hsl(x);
  const std::size_t n = hsl.plane();
  for (std::size_t i = 0; i < n; ++i) {
    double h = hsl.data[i] + hue_offset;
    h -= std::floor(h);
    hsl.data[i] = h >= 1.0 ? 0.0 : h;
    hsl.data[n + i] = std::clamp(hsl.data[n + i] * saturation_scale, 0.0, 1.0);
  }
  return hsl_to_rgb(hsl);
}

}  // namespace

PatchTensor apply(const DistortionSpec& spec, const PatchTensor& x) {
  const double s = spec.severity;
  if (!(s >= 0.0 && s <= 1.0)) throw Error(ErrorKind::range, "distortion severity must be in [0,1]");
  if (x.channels != 3) throw Error(ErrorKind::config, "distortions expect a 3-channel patch");
  if (s == 0.0) return x;
  Rng rng(spec.seed, static_cast<std::uint64_t>(spec.kind));
  switch (spec.kind) {
    case DistortionKind::gaussian_noise: {
      const double sigma = 0.3 * s;
      return pointwise(x, [&](double v) { return v + sigma * rng.normal(); });
    }
    case DistortionKind::uniform_noise: {
      const double a = 0.3 * s;
      return pointwise(x, [&](double v) { return v + rng.uniform(-a, a); });
    }
    case DistortionKind::impulse_noise: {
      const double fraction = 0.2 * s;
      PatchTensor out = x;
      const std::size_t n = x.plane();
      for (std::size_t i = 0; i < n; ++i) {
        if (rng.uniform() >= fraction) continue;
        const double value = rng.uniform() < 0.5 ? 0.0 : 1.0;
        for (int c = 0; c < x.channels; ++c) out.data[c * n + i] = value;
      }
      return out;
    }
    case DistortionKind::gaussian_blur:
      return gaussian_blur(x, 5.0 * s);
    case DistortionKind::box_blur:
      return box_blur(x, static_cast<int>(std::lround(6.0 * s)));
    case DistortionKind::brightness: {
      const double offset = rng.sign() * 0.4 * s;
      return pointwise(x, [&](double v) { return v + offset; });
    }
    case DistortionKind::contrast: {
      const double scale = 1.0 + rng.sign() * 0.8 * s;
      return pointwise(x, [&](double v) { return (v - 0.5) * scale + 0.5; });
    }
    case DistortionKind::saturation:
      return adjust_hsl(x, 1.0 + rng.sign() * s, 0.0);
    case DistortionKind::hue_shift:
      return adjust_hsl(x, 1.0, rng.sign() * 0.25 * s);
    case DistortionKind::translate:
      return translate(x, static_cast<int>(std::lround(12.0 * s)), rng);
    case DistortionKind::block_shuffle:
      return block_shuffle(x, 0.3 * s, rng);
    case DistortionKind::block_zero:
      return block_zero(x, 0.3 * s, rng);
    case DistortionKind::quantize_dct:
      return quantize_dct(x, 0.02 + 0.5 * s);
  }
  return x;
}

PatchTensor apply(const ComposedDistortion& spec, const PatchTensor& x) {
  return apply(spec.second, apply(spec.first, x));
}

PatchTensor apply(const Distortion& spec, const PatchTensor& x) {
  return std::visit([&](const auto& s) { return apply(s, x); }, spec);
}

Triplet make_triplet(const PatchTensor& x, const Distortion& d0, const Distortion& d1) {
  if (d0 == d1) throw Error(ErrorKind::generation, "degenerate triplet: both distortions are " + describe(d0));
  return Triplet{x, apply(d0, x), apply(d1, x)};
}

std::vector<double> severity_grid() {
  std::vector<double> grid;
  for (int i = 1; i <= 10; ++i) grid.push_back(i / 10.0);
  return grid;
}

std::vector<Distortion> sample_distortion_bank(std::size_t count_base, std::size_t count_composed, Rng& rng) {
  const auto grid = severity_grid();
  const std::size_t kinds = kAllDistortionKinds.size();
  if (count_base > kinds * grid.size()) {
    throw Error(ErrorKind::range, "bank: at most " + std::to_string(kinds * grid.size()) + " distinct base specs");
  }
  const std::size_t max_pairs = count_base < 2 ? 0 : count_base * (count_base - 1);
  if (count_composed > max_pairs) {
    throw Error(ErrorKind::range, "bank: " + std::to_string(count_composed) + " composed specs requested, only " +
                                      std::to_string(max_pairs) + " ordered pairs exist");
  }

  std::vector<DistortionKind> order(kAllDistortionKinds.begin(), kAllDistortionKinds.end());
  rng.shuffle(std::span<DistortionKind>(order));
  std::vector<std::vector<bool>> used(kinds, std::vector<bool>(grid.size(), false));
  std::vector<DistortionSpec> base;
  base.reserve(count_base);
  for (std::size_t i = 0; i < count_base; ++i) {
    const DistortionKind kind = order[i % kinds];
    auto& taken = used[static_cast<std::size_t>(kind)];
    std::size_t level = 0;
    do {
      level = static_cast<std::size_t>(rng.below(grid.size()));
    } while (taken[level]);
    taken[level] = true;
    base.push_back(DistortionSpec{kind, grid[level], rng.next_u64()});
  }

  std::vector<Distortion> bank(base.begin(), base.end());
  if (count_composed > 0) {
    const std::size_t n = count_base;
    std::vector<std::size_t> pairs(max_pairs);
    std::iota(pairs.begin(), pairs.end(), std::size_t{0});
    // Partial Fisher-Yates: the first count_composed entries are a uniform sample.
    for (std::size_t i = 0; i < count_composed; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.below(max_pairs - i));
      std::swap(pairs[i], pairs[j]);
    }
    for (std::size_t i = 0; i < count_composed; ++i) {
      const std::size_t a = pairs[i] / (n - 1);
      std::size_t b = pairs[i] % (n - 1);
      if (b >= a) ++b;
      bank.emplace_back(ComposedDistortion{base[a], base[b]});
    }
  }
  return bank;
}

JndPairImages make_jnd_pair(const PatchTensor& x, const DistortionSpec& spec, bool same) {
  if (same) return JndPairImages{x, x};
  DistortionSpec floored = spec;
  floored.severity = std::max(spec.severity, kJndSeverityFloor);
  return JndPairImages{x, apply(floored, x)};
}

}  // namespace pmk
