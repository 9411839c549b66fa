#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "pmk/imagecore.hpp"
#include "pmk/rng.hpp"
#include "pmk/tensor.hpp"

namespace pmk {

enum class LayerKind { conv, relu, maxpool };

struct ConvParams {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 1;
  int stride = 1;
  int pad = 0;

  friend bool operator==(const ConvParams&, const ConvParams&) = default;
};

struct PoolParams {
  int kernel = 2;
  int stride = 2;

  friend bool operator==(const PoolParams&, const PoolParams&) = default;
};

struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  ConvParams conv;  // meaningful when kind == conv
  PoolParams pool;  // meaningful when kind == maxpool

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// Feed-forward convolutional feature extractor description.
///
/// Input normalization is applied per channel before the first layer as
/// (x - shift) / scale. The `taps` are indices into `layers`; the output of
/// each tapped layer (after that layer runs) becomes one entry of the
/// FeatureStack, in the order given.
struct BackboneSpec {
  int input_channels = 3;
  std::vector<LayerSpec> layers;
  std::vector<int> taps;
  std::vector<double> input_shift;
  std::vector<double> input_scale;

  /// Throws ErrorKind::config when channel counts do not chain, a tap is
  /// out of range or points at a pool layer, or no tap is present.
  void validate() const;
  /// Channel count at the output of each tap.
  std::vector<int> tap_channels() const;
  /// Output shape (C, H, W) of layer `index` for an input of h x w.
  std::vector<std::array<int, 3>> layer_shapes(int height, int width) const;

  friend bool operator==(const BackboneSpec&, const BackboneSpec&) = default;
};

/// Reference architecture: five conv3x3+relu blocks with channels
/// [16,32,64,64,64], 2x2/2 max pooling after blocks 1-4, a tap after every
/// relu. `blocks` truncates it for small test networks.
BackboneSpec tiny_conv_spec(int blocks = 5);

std::string backbone_spec_to_json(const BackboneSpec& spec);
BackboneSpec backbone_spec_from_json(const std::string& text);
BackboneSpec load_backbone_spec(const std::filesystem::path& path);

/// A named, shaped tensor of parameters. Values are held as doubles but are
/// always representable as 32-bit floats once they come from a file,
/// init_scratch or a trainer step (see round_to_f32).
struct NamedTensor {
  std::vector<int> shape;
  std::vector<double> data;

  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

class WeightStore {
 public:
  void set(const std::string& name, NamedTensor tensor);
  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
  const NamedTensor& get(const std::string& name) const;
  NamedTensor& get(const std::string& name);
  const std::map<std::string, NamedTensor>& tensors() const noexcept { return tensors_; }
  std::map<std::string, NamedTensor>& tensors() noexcept { return tensors_; }
  std::size_t parameter_count() const;
  /// Same names and shapes, all values zero.
  WeightStore zeros_like() const;
  void round_to_f32();

  friend bool operator==(const WeightStore&, const WeightStore&) = default;

 private:
  std::map<std::string, NamedTensor> tensors_;
};

std::string conv_kernel_name(int layer_index);
std::string conv_bias_name(int layer_index);

/// Checks that every conv layer has a kernel [out,in,k,k] and bias [out].
void check_weights(const BackboneSpec& spec, const WeightStore& weights);

// LPW1 weight file: "LPW1", u32 LE header length, JSON header, f32 LE payload.
std::vector<std::uint8_t> encode_weights(const WeightStore& weights);
WeightStore decode_weights(std::span<const std::uint8_t> bytes);
void save_weights(const std::filesystem::path& path, const WeightStore& weights);
WeightStore load_weights(const std::filesystem::path& path);

struct FeatureStack {
  std::vector<Tensor> layers;

  friend bool operator==(const FeatureStack&, const FeatureStack&) = default;
};

/// out[o,y,x] = bias[o] + sum k[o,i,ky,kx] * in[i, y*s-p+ky, x*s-p+kx],
/// zero padding. kernel is [out, in, k, k] row-major.
Tensor conv2d_forward(const Tensor& input, std::span<const double> kernel, std::span<const double> bias,
                      const ConvParams& params);

/// Accumulates into grad_input/grad_kernel/grad_bias (which must be sized).
void conv2d_backward(const Tensor& input, std::span<const double> kernel, const ConvParams& params,
                     const Tensor& grad_output, Tensor* grad_input, std::span<double> grad_kernel,
                     std::span<double> grad_bias);

Tensor relu_forward(const Tensor& input);
/// Max pooling; argmax receives the flat input index chosen for each
/// output (first maximum in row-major window scan).
Tensor maxpool_forward(const Tensor& input, const PoolParams& params, std::vector<std::size_t>* argmax = nullptr);

int conv_output_size(int size, int kernel, int stride, int pad) noexcept;

FeatureStack forward(const BackboneSpec& spec, const WeightStore& weights, const Tensor& x);

struct BackboneGradients {
  WeightStore weights;
  Tensor input;
};

/// Reverse-mode gradients of sum_l <upstream_l, tap_l(x)>.
BackboneGradients backward(const BackboneSpec& spec, const WeightStore& weights, const Tensor& x,
                           const FeatureStack& upstream);

/// He-normal kernels (sigma = sqrt(2 / fan_in)), zero biases, f32-rounded.
WeightStore init_scratch(const BackboneSpec& spec, Rng& rng);

}  // namespace pmk
