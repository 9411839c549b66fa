#include <bit>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>

#include <json.hpp>

#include "pmk/backbone.hpp"
#include "pmk/error.hpp"

namespace pmk {

void WeightStore::set(const std::string& name, NamedTensor tensor) {
  const std::size_t want =
      std::accumulate(tensor.shape.begin(), tensor.shape.end(), std::size_t{1}, std::multiplies<>());
  if (want != tensor.data.size()) throw Error(ErrorKind::config, "weights: tensor '" + name + "' shape/data mismatch");
  tensors_[name] = std::move(tensor);
}

const NamedTensor& WeightStore::get(const std::string& name) const {
  const auto it = tensors_.find(name);
  if (it == tensors_.end()) throw Error(ErrorKind::config, "weights: missing tensor '" + name + "'");
  return it->second;
}

NamedTensor& WeightStore::get(const std::string& name) {
  const auto it = tensors_.find(name);
  if (it == tensors_.end()) throw Error(ErrorKind::config, "weights: missing tensor '" + name + "'");
  return it->second;
}

std::size_t WeightStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : tensors_) n += t.data.size();
  return n;
}

WeightStore WeightStore::zeros_like() const {
  WeightStore out;
  for (const auto& [name, t] : tensors_) out.tensors_[name] = NamedTensor{t.shape, std::vector<double>(t.data.size())};
  return out;
}

void WeightStore::round_to_f32() {
  for (auto& [name, t] : tensors_)
    for (double& v : t.data) v = static_cast<double>(static_cast<float>(v));
}

std::string conv_kernel_name(int layer_index) { return "layer" + std::to_string(layer_index) + ".kernel"; }
std::string conv_bias_name(int layer_index) { return "layer" + std::to_string(layer_index) + ".bias"; }

void check_weights(const BackboneSpec& spec, const WeightStore& weights) {
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& layer = spec.layers[i];
    if (layer.kind != LayerKind::conv) continue;
    const auto& c = layer.conv;
    const auto& kernel = weights.get(conv_kernel_name(static_cast<int>(i)));
    const auto& bias = weights.get(conv_bias_name(static_cast<int>(i)));
    const std::vector<int> kshape{c.out_channels, c.in_channels, c.kernel, c.kernel};
    if (kernel.shape != kshape) {
      throw Error(ErrorKind::config, "weights: kernel shape mismatch for layer " + std::to_string(i));
    }
    if (bias.shape != std::vector<int>{c.out_channels}) {
      throw Error(ErrorKind::config, "weights: bias shape mismatch for layer " + std::to_string(i));
    }
  }
}

// ---------------------------------------------------------------------------
// LPW1 container

namespace {

constexpr std::size_t kAlign = 16;
constexpr char kMagic[4] = {'L', 'P', 'W', '1'};

std::size_t align_up(std::size_t n) { return (n + kAlign - 1) / kAlign * kAlign; }

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

[[noreturn]] void fail(std::size_t offset, const std::string& what) {
  throw Error(ErrorKind::decode, "weight file decode error at byte " + std::to_string(offset) + ": " + what);
}

}  // namespace

std::vector<std::uint8_t> encode_weights(const WeightStore& weights) {
  nlohmann::ordered_json header = nlohmann::ordered_json::array();
  std::size_t offset = 0;
  for (const auto& [name, t] : weights.tensors()) {
    const std::size_t length = t.data.size() * 4;
    header.push_back({{"name", name}, {"shape", t.shape}, {"dtype", "f32"}, {"offset", offset}, {"length", length}});
    offset = align_up(offset + length);
  }
  std::string text = header.dump();
  // Pad the header with spaces so the payload starts on an aligned boundary.
  text.append(align_up(8 + text.size()) - 8 - text.size(), ' ');

  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  const std::size_t payload_start = out.size();
  for (const auto& [name, t] : weights.tensors()) {
    out.resize(payload_start + align_up(out.size() - payload_start), 0);
    for (double v : t.data) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  out.resize(payload_start + align_up(out.size() - payload_start), 0);
  return out;
}

WeightStore decode_weights(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8) fail(bytes.size(), "truncated preamble");
  if (!std::equal(kMagic, kMagic + 4, bytes.begin())) fail(0, "bad magic (expected LPW1)");
  const std::size_t header_len = get_u32(bytes.data() + 4);
  if (bytes.size() - 8 < header_len) fail(8, "header length exceeds file size");
  const std::size_t payload_start = 8 + header_len;
  const std::size_t payload_size = bytes.size() - payload_start;

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 8, bytes.begin() + static_cast<std::ptrdiff_t>(payload_start));
  } catch (const nlohmann::json::exception& e) {
    fail(8, std::string("header is not valid JSON: ") + e.what());
  }
  if (!header.is_array()) fail(8, "header must be a JSON array");

  WeightStore store;
  for (const auto& entry : header) {
    try {
      const auto name = entry.at("name").get<std::string>();
      if (entry.at("dtype").get<std::string>() != "f32") fail(8, "tensor '" + name + "' has unsupported dtype");
      NamedTensor t;
      t.shape = entry.at("shape").get<std::vector<int>>();
      const auto offset = entry.at("offset").get<std::size_t>();
      const auto length = entry.at("length").get<std::size_t>();
      std::size_t count = 1;
      for (int d : t.shape) {
        if (d < 0) fail(8, "tensor '" + name + "' has negative dimension");
        count *= static_cast<std::size_t>(d);
      }
      if (length != count * 4) fail(8, "tensor '" + name + "' length does not match shape");
      if (offset % kAlign != 0) fail(payload_start + offset, "tensor '" + name + "' is not 16-byte aligned");
      if (offset > payload_size || payload_size - offset < length) {
        fail(payload_start + offset, "tensor '" + name + "' extends past end of file");
      }
      t.data.resize(count);
      const std::uint8_t* p = bytes.data() + payload_start + offset;
      for (std::size_t i = 0; i < count; ++i) t.data[i] = std::bit_cast<float>(get_u32(p + 4 * i));
      if (store.contains(name)) fail(8, "duplicate tensor '" + name + "'");
      store.set(name, std::move(t));
    } catch (const nlohmann::json::exception& e) {
      fail(8, std::string("malformed header entry: ") + e.what());
    }
  }
  return store;
}

void save_weights(const std::filesystem::path& path, const WeightStore& weights) {
  write_file(path, encode_weights(weights));
}

WeightStore load_weights(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  try {
    return decode_weights(bytes);
  } catch (const Error& e) {
    throw Error(e.kind(), path.string() + ": " + e.what());
  }
}

}  // namespace pmk
