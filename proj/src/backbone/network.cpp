#include <cmath>
#include <string>

#include "pmk/backbone.hpp"
#include "pmk/error.hpp"

namespace pmk {

namespace {

Tensor normalize_input(const BackboneSpec& spec, const Tensor& x) {
  if (x.channels != spec.input_channels) {
    throw Error(ErrorKind::config, "backbone: input has " + std::to_string(x.channels) + " channels, spec expects " +
                                       std::to_string(spec.input_channels));
  }
  Tensor out = x;
  if (spec.input_shift.empty() && spec.input_scale.empty()) return out;
  for (int c = 0; c < x.channels; ++c) {
    const double shift = spec.input_shift.empty() ? 0.0 : spec.input_shift[c];
    const double scale = spec.input_scale.empty() ? 1.0 : spec.input_scale[c];
    double* plane = out.data.data() + static_cast<std::size_t>(c) * out.plane();
    for (std::size_t i = 0; i < out.plane(); ++i) plane[i] = (plane[i] - shift) / scale;
  }
  return out;
}

// Activations of every layer plus pooling argmax, kept for the reverse pass.
struct Trace {
  Tensor input;
  std::vector<Tensor> outputs;
  std::vector<std::vector<std::size_t>> argmax;
};

Trace run(const BackboneSpec& spec, const WeightStore& weights, const Tensor& x, bool keep_argmax) {
  spec.validate();
  check_weights(spec, weights);
  Trace trace;
  trace.input = normalize_input(spec, x);
  trace.outputs.reserve(spec.layers.size());
  trace.argmax.resize(spec.layers.size());
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const Tensor& in = i == 0 ? trace.input : trace.outputs[i - 1];
    const auto& layer = spec.layers[i];
    switch (layer.kind) {
      case LayerKind::conv:
        trace.outputs.push_back(conv2d_forward(in, weights.get(conv_kernel_name(static_cast<int>(i))).data,
                                               weights.get(conv_bias_name(static_cast<int>(i))).data, layer.conv));
        break;
      case LayerKind::relu:
        trace.outputs.push_back(relu_forward(in));
        break;
      case LayerKind::maxpool:
        trace.outputs.push_back(maxpool_forward(in, layer.pool, keep_argmax ? &trace.argmax[i] : nullptr));
        break;
    }
  }
  return trace;
}

}  // namespace

FeatureStack forward(const BackboneSpec& spec, const WeightStore& weights, const Tensor& x) {
  Trace trace = run(spec, weights, x, false);
  FeatureStack stack;
  stack.layers.reserve(spec.taps.size());
  for (int t : spec.taps) stack.layers.push_back(trace.outputs[static_cast<std::size_t>(t)]);
  return stack;
}

BackboneGradients backward(const BackboneSpec& spec, const WeightStore& weights, const Tensor& x,
                           const FeatureStack& upstream) {
  if (upstream.layers.size() != spec.taps.size()) {
    throw Error(ErrorKind::config, "backbone backward: upstream has " + std::to_string(upstream.layers.size()) +
                                       " layers, spec has " + std::to_string(spec.taps.size()) + " taps");
  }
  Trace trace = run(spec, weights, x, true);
  for (std::size_t k = 0; k < spec.taps.size(); ++k) {
    if (!upstream.layers[k].same_shape(trace.outputs[static_cast<std::size_t>(spec.taps[k])])) {
      throw Error(ErrorKind::config, "backbone backward: upstream shape mismatch at tap " + std::to_string(k));
    }
  }

  BackboneGradients grads{weights.zeros_like(), Tensor(trace.input.channels, trace.input.height, trace.input.width)};
  const std::size_t n = spec.layers.size();
  // grad w.r.t. the output of the current layer; starts empty above the last tap.
  Tensor grad;
  for (std::size_t ii = n; ii-- > 0;) {
    const Tensor& out = trace.outputs[ii];
    for (std::size_t k = 0; k < spec.taps.size(); ++k) {
      if (static_cast<std::size_t>(spec.taps[k]) != ii) continue;
      if (grad.size() == 0) grad = Tensor(out.channels, out.height, out.width);
      for (std::size_t j = 0; j < grad.size(); ++j) grad.data[j] += upstream.layers[k].data[j];
    }
    if (grad.size() == 0) continue;

    const Tensor& in = ii == 0 ? trace.input : trace.outputs[ii - 1];
    Tensor grad_in(in.channels, in.height, in.width);
    const auto& layer = spec.layers[ii];
    switch (layer.kind) {
      case LayerKind::conv: {
        const int idx = static_cast<int>(ii);
        conv2d_backward(in, weights.get(conv_kernel_name(idx)).data, layer.conv, grad, &grad_in,
                        grads.weights.get(conv_kernel_name(idx)).data, grads.weights.get(conv_bias_name(idx)).data);
        break;
      }
      case LayerKind::relu:
        // Subgradient at exactly zero is zero.
        for (std::size_t j = 0; j < grad.size(); ++j) grad_in.data[j] = in.data[j] > 0.0 ? grad.data[j] : 0.0;
        break;
      case LayerKind::maxpool: {
        const auto& argmax = trace.argmax[ii];
        for (std::size_t j = 0; j < grad.size(); ++j) grad_in.data[argmax[j]] += grad.data[j];
        break;
      }
    }
    grad = std::move(grad_in);
  }

  if (grad.size() != 0) {
    grads.input = std::move(grad);
    if (!spec.input_scale.empty()) {
      for (int c = 0; c < grads.input.channels; ++c) {
        double* plane = grads.input.data.data() + static_cast<std::size_t>(c) * grads.input.plane();
        for (std::size_t j = 0; j < grads.input.plane(); ++j) plane[j] /= spec.input_scale[c];
      }
    }
  }
  return grads;
}

WeightStore init_scratch(const BackboneSpec& spec, Rng& rng) {
  spec.validate();
  WeightStore store;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& layer = spec.layers[i];
    if (layer.kind != LayerKind::conv) continue;
    const auto& c = layer.conv;
    const int fan_in = c.in_channels * c.kernel * c.kernel;
    const double sigma = std::sqrt(2.0 / fan_in);
    NamedTensor kernel{{c.out_channels, c.in_channels, c.kernel, c.kernel}, {}};
    kernel.data.resize(static_cast<std::size_t>(c.out_channels) * fan_in);
    for (double& v : kernel.data) v = static_cast<double>(static_cast<float>(sigma * rng.normal()));
    store.set(conv_kernel_name(static_cast<int>(i)), std::move(kernel));
    store.set(conv_bias_name(static_cast<int>(i)),
              NamedTensor{{c.out_channels}, std::vector<double>(static_cast<std::size_t>(c.out_channels), 0.0)});
  }
  return store;
}

}  // namespace pmk
