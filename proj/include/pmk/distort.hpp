#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "pmk/imagecore.hpp"
#include "pmk/rng.hpp"

namespace pmk {

enum class DistortionKind {
  gaussian_noise,
  uniform_noise,
  impulse_noise,
  gaussian_blur,
  box_blur,
  brightness,
  contrast,
  saturation,
  hue_shift,
  translate,
  block_shuffle,
  block_zero,
  quantize_dct,
};

inline constexpr std::array<DistortionKind, 13> kAllDistortionKinds = {
    DistortionKind::gaussian_noise, DistortionKind::uniform_noise, DistortionKind::impulse_noise,
    DistortionKind::gaussian_blur,  DistortionKind::box_blur,      DistortionKind::brightness,
    DistortionKind::contrast,       DistortionKind::saturation,    DistortionKind::hue_shift,
    DistortionKind::translate,      DistortionKind::block_shuffle, DistortionKind::block_zero,
    DistortionKind::quantize_dct,
};

std::string_view to_string(DistortionKind kind) noexcept;
std::optional<DistortionKind> distortion_kind_from_string(std::string_view name) noexcept;

/// One parameterized distortion. Severity in [0,1] maps to kind-specific
/// parameters through the fixed table in severity_table(); severity 0 is the
/// identity for every kind. `seed` drives all random choices.
struct DistortionSpec {
  DistortionKind kind = DistortionKind::gaussian_noise;
  double severity = 0.0;
  std::uint64_t seed = 0;

  friend bool operator==(const DistortionSpec&, const DistortionSpec&) = default;
};

/// `first` applied, then `second`.
struct ComposedDistortion {
  DistortionSpec first;
  DistortionSpec second;

  friend bool operator==(const ComposedDistortion&, const ComposedDistortion&) = default;
};

using Distortion = std::variant<DistortionSpec, ComposedDistortion>;

/// Human-readable severity -> parameter table. Embedded in dataset metadata.
std::string severity_table();
/// FNV-1a 64 of severity_table(), hex.
std::string severity_table_hash();

/// Short label such as "gaussian_blur@0.4" or "gaussian_blur@0.4+hue_shift@0.2".
std::string describe(const Distortion& d);
/// The kind family of a distortion ("a" or "a+b").
std::string family(const Distortion& d);

/// Output is clamped to [0,1] and fully determined by (spec, x).
PatchTensor apply(const DistortionSpec& spec, const PatchTensor& x);
PatchTensor apply(const ComposedDistortion& spec, const PatchTensor& x);
PatchTensor apply(const Distortion& spec, const PatchTensor& x);

struct Triplet {
  PatchTensor ref;
  PatchTensor p0;
  PatchTensor p1;
};

/// Throws ErrorKind::generation if d0 == d1.
Triplet make_triplet(const PatchTensor& x, const Distortion& d0, const Distortion& d1);

/// Severity grid used by the bank: 0.1, 0.2, ..., 1.0.
std::vector<double> severity_grid();

/// count_base distinct base specs spread over every kind, followed by
/// count_composed distinct ordered pairs of distinct base specs.
std::vector<Distortion> sample_distortion_bank(std::size_t count_base, std::size_t count_composed, Rng& rng);

inline constexpr double kJndSeverityFloor = 0.05;
inline constexpr double kSentinelNoiseSeverity = 1.0;

struct JndPairImages {
  PatchTensor ref;
  PatchTensor probe;
};

/// If `same`, probe is a copy of the reference. Otherwise the spec is
/// applied with its severity raised to at least kJndSeverityFloor.
JndPairImages make_jnd_pair(const PatchTensor& x, const DistortionSpec& spec, bool same);

}  // namespace pmk
