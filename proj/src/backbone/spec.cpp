#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "pmk/backbone.hpp"
#include "pmk/error.hpp"

namespace pmk {

using nlohmann::ordered_json;

void BackboneSpec::validate() const {
  if (input_channels < 1) throw Error(ErrorKind::config, "backbone: input_channels must be >= 1");
  if (!input_shift.empty() && input_shift.size() != static_cast<std::size_t>(input_channels)) {
    throw Error(ErrorKind::config, "backbone: input_norm shift length must equal input_channels");
  }
  if (!input_scale.empty() && input_scale.size() != static_cast<std::size_t>(input_channels)) {
    throw Error(ErrorKind::config, "backbone: input_norm scale length must equal input_channels");
  }
  for (double s : input_scale) {
    if (!(s != 0.0)) throw Error(ErrorKind::config, "backbone: input_norm scale must be non-zero");
  }
  int channels = input_channels;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& layer = layers[i];
    if (layer.kind == LayerKind::conv) {
      const auto& c = layer.conv;
      if (c.in_channels != channels) {
        throw Error(ErrorKind::config, "backbone: layer " + std::to_string(i) + " expects " +
                                           std::to_string(c.in_channels) + " input channels, chain provides " +
                                           std::to_string(channels));
      }
      if (c.out_channels < 1 || c.kernel < 1 || c.stride < 1 || c.pad < 0) {
        throw Error(ErrorKind::config, "backbone: layer " + std::to_string(i) + " has invalid conv parameters");
      }
      channels = c.out_channels;
    } else if (layer.kind == LayerKind::maxpool) {
      if (layer.pool.kernel < 1 || layer.pool.stride < 1) {
        throw Error(ErrorKind::config, "backbone: layer " + std::to_string(i) + " has invalid pool parameters");
      }
    }
  }
  if (taps.empty()) throw Error(ErrorKind::config, "backbone: at least one tap is required");
  for (int t : taps) {
    if (t < 0 || static_cast<std::size_t>(t) >= layers.size()) {
      throw Error(ErrorKind::config, "backbone: tap index " + std::to_string(t) + " out of range");
    }
    if (layers[t].kind == LayerKind::maxpool) {
      throw Error(ErrorKind::config, "backbone: tap index " + std::to_string(t) + " must be a conv or relu layer");
    }
  }
}

std::vector<int> BackboneSpec::tap_channels() const {
  std::vector<int> per_layer(layers.size());
  int channels = input_channels;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].kind == LayerKind::conv) channels = layers[i].conv.out_channels;
    per_layer[i] = channels;
  }
  std::vector<int> out;
  out.reserve(taps.size());
  for (int t : taps) out.push_back(per_layer.at(static_cast<std::size_t>(t)));
  return out;
}

std::vector<std::array<int, 3>> BackboneSpec::layer_shapes(int height, int width) const {
  std::vector<std::array<int, 3>> shapes;
  int c = input_channels;
  int h = height;
  int w = width;
  for (const auto& layer : layers) {
    if (layer.kind == LayerKind::conv) {
      c = layer.conv.out_channels;
      h = conv_output_size(h, layer.conv.kernel, layer.conv.stride, layer.conv.pad);
      w = conv_output_size(w, layer.conv.kernel, layer.conv.stride, layer.conv.pad);
    } else if (layer.kind == LayerKind::maxpool) {
      h = conv_output_size(h, layer.pool.kernel, layer.pool.stride, 0);
      w = conv_output_size(w, layer.pool.kernel, layer.pool.stride, 0);
    }
    shapes.push_back({c, h, w});
  }
  return shapes;
}

BackboneSpec tiny_conv_spec(int blocks) {
  static constexpr int kChannels[5] = {16, 32, 64, 64, 64};
  if (blocks < 1 || blocks > 5) throw Error(ErrorKind::config, "tiny_conv_spec: blocks must be in [1,5]");
  BackboneSpec spec;
  spec.input_channels = 3;
  int in = 3;
  for (int b = 0; b < blocks; ++b) {
    LayerSpec conv;
    conv.kind = LayerKind::conv;
    conv.conv = ConvParams{in, kChannels[b], 3, 1, 1};
    spec.layers.push_back(conv);
    spec.layers.push_back(LayerSpec{LayerKind::relu, {}, {}});
    spec.taps.push_back(static_cast<int>(spec.layers.size()) - 1);
    if (b < 4 && b + 1 < blocks) {
      LayerSpec pool;
      pool.kind = LayerKind::maxpool;
      pool.pool = PoolParams{2, 2};
      spec.layers.push_back(pool);
    }
    in = kChannels[b];
  }
  return spec;
}

namespace {

const char* kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv: return "conv";
    case LayerKind::relu: return "relu";
    case LayerKind::maxpool: return "maxpool";
  }
  return "?";
}

}  // namespace

std::string backbone_spec_to_json(const BackboneSpec& spec) {
  ordered_json j;
  j["input_channels"] = spec.input_channels;
  if (!spec.input_shift.empty() || !spec.input_scale.empty()) {
    j["input_norm"] = {{"shift", spec.input_shift}, {"scale", spec.input_scale}};
  }
  ordered_json layers = ordered_json::array();
  for (const auto& layer : spec.layers) {
    ordered_json l;
    l["kind"] = kind_name(layer.kind);
    if (layer.kind == LayerKind::conv) {
      l["in_channels"] = layer.conv.in_channels;
      l["out_channels"] = layer.conv.out_channels;
      l["kernel"] = layer.conv.kernel;
      l["stride"] = layer.conv.stride;
      l["pad"] = layer.conv.pad;
    } else if (layer.kind == LayerKind::maxpool) {
      l["kernel"] = layer.pool.kernel;
      l["stride"] = layer.pool.stride;
    }
    layers.push_back(std::move(l));
  }
  j["layers"] = std::move(layers);
  j["taps"] = spec.taps;
  return j.dump(2) + "\n";
}

BackboneSpec backbone_spec_from_json(const std::string& text) {
  BackboneSpec spec;
  try {
    const auto j = nlohmann::json::parse(text);
    spec.input_channels = j.value("input_channels", 3);
    if (j.contains("input_norm")) {
      const auto& norm = j.at("input_norm");
      spec.input_shift = norm.value("shift", std::vector<double>{});
      spec.input_scale = norm.value("scale", std::vector<double>{});
    }
    for (const auto& l : j.at("layers")) {
      LayerSpec layer;
      const auto kind = l.at("kind").get<std::string>();
      if (kind == "conv") {
        layer.kind = LayerKind::conv;
        layer.conv.in_channels = l.at("in_channels").get<int>();
        layer.conv.out_channels = l.at("out_channels").get<int>();
        layer.conv.kernel = l.at("kernel").get<int>();
        layer.conv.stride = l.value("stride", 1);
        layer.conv.pad = l.value("pad", 0);
      } else if (kind == "relu") {
        layer.kind = LayerKind::relu;
      } else if (kind == "maxpool") {
        layer.kind = LayerKind::maxpool;
        layer.pool.kernel = l.value("kernel", 2);
        layer.pool.stride = l.value("stride", layer.pool.kernel);
      } else {
        throw Error(ErrorKind::config, "backbone: unknown layer kind '" + kind + "'");
      }
      spec.layers.push_back(layer);
    }
    spec.taps = j.at("taps").get<std::vector<int>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::config, std::string("backbone spec: ") + e.what());
  }
  spec.validate();
  return spec;
}

BackboneSpec load_backbone_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot open " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return backbone_spec_from_json(buffer.str());
}

}  // namespace pmk
