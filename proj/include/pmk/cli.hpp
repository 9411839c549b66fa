#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "pmk/backbone.hpp"
#include "pmk/evalkit.hpp"
#include "pmk/metric.hpp"

namespace pmk::cli {

/// Entry point of the pmk binary. Returns 0 on success, 1 on a domain error
/// and 2 on a usage error.
int run(int argc, char** argv);
/// Same, with argv[0] omitted and explicit streams (for tests).
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

struct MetricOptions {
  std::optional<std::filesystem::path> backbone;  // spec JSON; TinyConv when absent
  std::optional<std::filesystem::path> weights;   // required for lpips
  std::optional<std::filesystem::path> calib;     // channel weights; all ones when absent
};

/// Backbone, weights and channel weights of a learned metric.
struct LpipsModel {
  BackboneSpec spec;
  WeightStore weights;
  ChannelWeights w;

  DistanceReport operator()(const Tensor& a, const Tensor& b) const;
};

LpipsModel load_lpips(const MetricOptions& opt);

/// Metric names accepted by --metric.
const std::vector<std::string>& metric_names();

/// The metric's own value: MSE, PSNR in dB, SSIM or the learned distance.
double metric_value(const std::string& name, const Tensor& a, const Tensor& b, const LpipsModel* lpips);

/// A distance where smaller means more similar: -PSNR and 1 - SSIM for the
/// similarity scores. Throws config on an unknown name.
PatchDistance make_distance(const std::string& name, const MetricOptions& opt);

}  // namespace pmk::cli
