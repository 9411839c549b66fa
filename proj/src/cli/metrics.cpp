#include <memory>

#include "pmk/cli.hpp"
#include "pmk/error.hpp"
#include "pmk/trainer.hpp"

namespace pmk::cli {

DistanceReport LpipsModel::operator()(const Tensor& a, const Tensor& b) const {
  if (!a.same_shape(b)) throw Error(ErrorKind::range, "images differ in size");
  return lpips_distance(normalize_channels(forward(spec, weights, a)), normalize_channels(forward(spec, weights, b)), w);
}

LpipsModel load_lpips(const MetricOptions& opt) {
  if (!opt.weights) throw Error(ErrorKind::config, "the lpips metric needs --weights");
  LpipsModel m;
  m.spec = opt.backbone ? load_backbone_spec(*opt.backbone) : tiny_conv_spec();
  m.weights = load_weights(*opt.weights);
  check_weights(m.spec, m.weights);
  m.w = opt.calib ? load_channel_weights(*opt.calib) : ChannelWeights::ones(m.spec.tap_channels());
  const auto taps = m.spec.tap_channels();
  if (m.w.layer_count() != taps.size()) throw Error(ErrorKind::config, "calibration does not match the backbone taps");
  for (std::size_t l = 0; l < taps.size(); ++l)
    if (m.w.layers()[l].size() != static_cast<std::size_t>(taps[l]))
      throw Error(ErrorKind::config, "calibration layer " + std::to_string(l) + " has the wrong channel count");
  return m;
}

const std::vector<std::string>& metric_names() {
  static const std::vector<std::string> names = {"l2", "psnr", "ssim", "lpips"};
  return names;
}

double metric_value(const std::string& name, const Tensor& a, const Tensor& b, const LpipsModel* lpips) {
  if (name == "l2") return l2_distance(a, b);
  if (name == "psnr") return psnr(a, b);
  if (name == "ssim") return ssim(a, b);
  if (name == "lpips") {
    if (!lpips) throw Error(ErrorKind::config, "the lpips metric needs --weights");
    return (*lpips)(a, b).total;
  }
  throw Error(ErrorKind::config, "unknown metric '" + name + "' (l2, psnr, ssim, lpips)");
}

PatchDistance make_distance(const std::string& name, const MetricOptions& opt) {
  if (name == "l2") return [](const PatchTensor& a, const PatchTensor& b) { return l2_distance(a, b); };
  if (name == "psnr") return [](const PatchTensor& a, const PatchTensor& b) { return -psnr(a, b); };
  if (name == "ssim") return [](const PatchTensor& a, const PatchTensor& b) { return 1.0 - ssim(a, b); };
  if (name == "lpips") {
    auto model = std::make_shared<const LpipsModel>(load_lpips(opt));
    return [model](const PatchTensor& a, const PatchTensor& b) { return (*model)(a, b).total; };
  }
  throw Error(ErrorKind::config, "unknown metric '" + name + "' (l2, psnr, ssim, lpips)");
}

}  // namespace pmk::cli
