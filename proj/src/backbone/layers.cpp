#include <algorithm>
#include <string>

#include "pmk/backbone.hpp"
#include "pmk/error.hpp"

namespace pmk {

int conv_output_size(int size, int kernel, int stride, int pad) noexcept {
  const int span = size + 2 * pad - kernel;
  if (span < 0) return 0;
  return span / stride + 1;
}

namespace {

void check_conv_shapes(const Tensor& input, std::size_t kernel_size, std::size_t bias_size, const ConvParams& p) {
  if (p.stride < 1 || p.pad < 0 || p.kernel < 1) throw Error(ErrorKind::config, "conv: invalid stride/pad/kernel");
  if (input.channels != p.in_channels) {
    throw Error(ErrorKind::config, "conv: input has " + std::to_string(input.channels) + " channels, expected " +
                                       std::to_string(p.in_channels));
  }
  const std::size_t want = static_cast<std::size_t>(p.out_channels) * p.in_channels * p.kernel * p.kernel;
  if (kernel_size != want) throw Error(ErrorKind::config, "conv: kernel size mismatch");
  if (bias_size != static_cast<std::size_t>(p.out_channels)) throw Error(ErrorKind::config, "conv: bias size mismatch");
}

// Output columns x for which x*stride - pad + kx lands inside [0, width).
struct ColumnRange {
  int lo;
  int hi;  // exclusive
};

ColumnRange valid_columns(int kx, int width, int out_width, const ConvParams& p) {
  const int offset = p.pad - kx;  // need x*s >= offset and x*s <= width-1+offset
  int lo = offset <= 0 ? 0 : (offset + p.stride - 1) / p.stride;
  const int top = width - 1 + offset;
  int hi = top < 0 ? 0 : top / p.stride + 1;
  lo = std::min(lo, out_width);
  hi = std::clamp(hi, lo, out_width);
  return {lo, hi};
}

}  // namespace

Tensor conv2d_forward(const Tensor& input, std::span<const double> kernel, std::span<const double> bias,
                      const ConvParams& p) {
  check_conv_shapes(input, kernel.size(), bias.size(), p);
  const int out_h = conv_output_size(input.height, p.kernel, p.stride, p.pad);
  const int out_w = conv_output_size(input.width, p.kernel, p.stride, p.pad);
  if (out_h < 1 || out_w < 1) throw Error(ErrorKind::config, "conv: input smaller than kernel");
  Tensor out(p.out_channels, out_h, out_w);
  const int k = p.kernel;
  // Unrolled input patches: row j = (i, ky, kx) holds that tap for every
  // output position, so the inner loop spans the whole output plane.
  const std::size_t positions = out.plane();
  const std::size_t taps = static_cast<std::size_t>(p.in_channels) * k * k;
  std::vector<double> col(taps * positions, 0.0);
  for (int i = 0; i < p.in_channels; ++i) {
    const double* in_plane = input.data.data() + static_cast<std::size_t>(i) * input.plane();
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        double* row = col.data() + ((static_cast<std::size_t>(i) * k + ky) * k + kx) * positions;
        const auto cols = valid_columns(kx, input.width, out_w, p);
        for (int y = 0; y < out_h; ++y) {
          const int iy = y * p.stride - p.pad + ky;
          if (iy < 0 || iy >= input.height) continue;
          const double* in_row = in_plane + static_cast<std::size_t>(iy) * input.width;
          double* dst = row + static_cast<std::size_t>(y) * out_w;
          for (int x = cols.lo; x < cols.hi; ++x) dst[x] = in_row[x * p.stride - p.pad + kx];
        }
      }
    }
  }
  for (int o = 0; o < p.out_channels; ++o) {
    double* out_plane = out.data.data() + static_cast<std::size_t>(o) * positions;
    std::fill(out_plane, out_plane + positions, bias[o]);
    const double* kern = kernel.data() + static_cast<std::size_t>(o) * taps;
    for (std::size_t j = 0; j < taps; ++j) {
      const double weight = kern[j];
      const double* src = col.data() + j * positions;
      for (std::size_t q = 0; q < positions; ++q) out_plane[q] += weight * src[q];
    }
  }
  return out;
}

void conv2d_backward(const Tensor& input, std::span<const double> kernel, const ConvParams& p,
                     const Tensor& grad_output, Tensor* grad_input, std::span<double> grad_kernel,
                     std::span<double> grad_bias) {
  check_conv_shapes(input, kernel.size(), grad_bias.size(), p);
  if (grad_kernel.size() != kernel.size()) throw Error(ErrorKind::config, "conv backward: kernel gradient size");
  const int out_h = conv_output_size(input.height, p.kernel, p.stride, p.pad);
  const int out_w = conv_output_size(input.width, p.kernel, p.stride, p.pad);
  if (grad_output.channels != p.out_channels || grad_output.height != out_h || grad_output.width != out_w) {
    throw Error(ErrorKind::config, "conv backward: upstream gradient shape mismatch");
  }
  if (grad_input != nullptr && !grad_input->same_shape(input)) {
    throw Error(ErrorKind::config, "conv backward: input gradient shape mismatch");
  }
  const int k = p.kernel;
  for (int o = 0; o < p.out_channels; ++o) {
    const double* g_plane = grad_output.data.data() + static_cast<std::size_t>(o) * grad_output.plane();
    double bias_sum = 0.0;
    for (std::size_t j = 0; j < grad_output.plane(); ++j) bias_sum += g_plane[j];
    grad_bias[o] += bias_sum;
    for (int i = 0; i < p.in_channels; ++i) {
      const double* in_plane = input.data.data() + static_cast<std::size_t>(i) * input.plane();
      double* gin_plane =
          grad_input != nullptr ? grad_input->data.data() + static_cast<std::size_t>(i) * input.plane() : nullptr;
      const std::size_t kbase = (static_cast<std::size_t>(o) * p.in_channels + i) * k * k;
      for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx) {
          const double weight = kernel[kbase + ky * k + kx];
          const auto cols = valid_columns(kx, input.width, out_w, p);
          double kernel_sum = 0.0;
          for (int y = 0; y < out_h; ++y) {
            const int iy = y * p.stride - p.pad + ky;
            if (iy < 0 || iy >= input.height) continue;
            const double* in_row = in_plane + static_cast<std::size_t>(iy) * input.width;
            const double* g_row = g_plane + static_cast<std::size_t>(y) * out_w;
            for (int x = cols.lo; x < cols.hi; ++x) {
              const int ix = x * p.stride - p.pad + kx;
              kernel_sum += g_row[x] * in_row[ix];
            }
            if (gin_plane != nullptr) {
              double* gin_row = gin_plane + static_cast<std::size_t>(iy) * input.width;
              for (int x = cols.lo; x < cols.hi; ++x) gin_row[x * p.stride - p.pad + kx] += weight * g_row[x];
            }
          }
          grad_kernel[kbase + ky * k + kx] += kernel_sum;
        }
      }
    }
  }
}

Tensor relu_forward(const Tensor& input) {
  Tensor out = input;
  for (double& v : out.data) v = v > 0.0 ? v : 0.0;
  return out;
}

Tensor maxpool_forward(const Tensor& input, const PoolParams& params, std::vector<std::size_t>* argmax) {
  if (params.kernel < 1 || params.stride < 1) throw Error(ErrorKind::config, "maxpool: invalid kernel/stride");
  const int out_h = conv_output_size(input.height, params.kernel, params.stride, 0);
  const int out_w = conv_output_size(input.width, params.kernel, params.stride, 0);
  if (out_h < 1 || out_w < 1) throw Error(ErrorKind::config, "maxpool: input smaller than window");
  Tensor out(input.channels, out_h, out_w);
  if (argmax != nullptr) argmax->assign(out.size(), 0);
  std::size_t slot = 0;
  for (int c = 0; c < input.channels; ++c) {
    for (int y = 0; y < out_h; ++y) {
      for (int x = 0; x < out_w; ++x, ++slot) {
        std::size_t best = input.index(c, y * params.stride, x * params.stride);
        double best_value = input.data[best];
        for (int ky = 0; ky < params.kernel; ++ky) {
          for (int kx = 0; kx < params.kernel; ++kx) {
            const std::size_t idx = input.index(c, y * params.stride + ky, x * params.stride + kx);
            if (input.data[idx] > best_value) {
              best_value = input.data[idx];
              best = idx;
            }
          }
        }
        out.data[slot] = best_value;
        if (argmax != nullptr) (*argmax)[slot] = best;
      }
    }
  }
  return out;
}

}  // namespace pmk
