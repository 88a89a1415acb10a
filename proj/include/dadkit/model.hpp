#pragma once

// Miniature convolutional detector: [conv -> bias -> ReLU] blocks followed by a
// 1x1 linear head emitting scoremap logits. Convolutions use same-size output
// with half-sample symmetric reflection padding. Forward and backward are
// written out by hand; AdamW with decoupled weight decay updates the weights.

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "dadkit/core.hpp"

namespace dadkit {

struct ArchConfig {
  std::vector<int> channel_widths{8, 16, 16};
  int kernel_size = 5;
  std::uint64_t seed = 0;

  int num_blocks() const { return static_cast<int>(channel_widths.size()); }
  int receptive_field() const { return 1 + (kernel_size - 1) * num_blocks(); }

  void validate() const {
    DADKIT_CHECK(kernel_size >= 1 && kernel_size % 2 == 1, ErrorKind::invalid_parameter, "kernel_size must be odd");
    for (int w : channel_widths) DADKIT_CHECK(w >= 1, ErrorKind::invalid_parameter, "channel widths must be >= 1");
  }
};

struct Layer {
  std::array<int, 4> shape{};  // out, in, kh, kw
  std::vector<double> kernel;
  std::vector<double> bias;

  int out_channels() const { return shape[0]; }
  int in_channels() const { return shape[1]; }
  int kernel_size() const { return shape[2]; }

  double& w(int o, int i, int ky, int kx) {
    return kernel[((static_cast<std::size_t>(o) * shape[1] + i) * shape[2] + ky) * shape[3] + kx];
  }
  double w(int o, int i, int ky, int kx) const {
    return kernel[((static_cast<std::size_t>(o) * shape[1] + i) * shape[2] + ky) * shape[3] + kx];
  }

  static Layer zeros(int out, int in, int k) {
    Layer l;
    l.shape = {out, in, k, k};
    l.kernel.assign(static_cast<std::size_t>(out) * in * k * k, 0.0);
    l.bias.assign(out, 0.0);
    return l;
  }

  friend bool operator==(const Layer&, const Layer&) = default;
};

// Hidden blocks first, then the linear head. Also used to hold gradients.
struct DetectorParams {
  std::vector<Layer> layers;

  std::size_t num_scalars() const {
    std::size_t n = 0;
    for (const Layer& l : layers) n += l.kernel.size() + l.bias.size();
    return n;
  }

  // Visits kernel then bias of every layer in order.
  template <typename F>
  void for_each_tensor(F&& f) {
    for (Layer& l : layers) {
      f(std::span<double>(l.kernel));
      f(std::span<double>(l.bias));
    }
  }
  template <typename F>
  void for_each_tensor(F&& f) const {
    for (const Layer& l : layers) {
      f(std::span<const double>(l.kernel));
      f(std::span<const double>(l.bias));
    }
  }

  DetectorParams zeros_like() const {
    DetectorParams z;
    for (const Layer& l : layers) z.layers.push_back(Layer::zeros(l.shape[0], l.shape[1], l.shape[2]));
    return z;
  }

  void validate() const {
    DADKIT_CHECK(!layers.empty(), ErrorKind::invalid_input, "detector has no layers");
    int channels = 1;
    for (const Layer& l : layers) {
      DADKIT_CHECK(l.shape[1] == channels && l.shape[2] == l.shape[3] && l.shape[2] % 2 == 1,
                   ErrorKind::invalid_input, "inconsistent layer shapes");
      DADKIT_CHECK(l.kernel.size() == static_cast<std::size_t>(l.shape[0]) * l.shape[1] * l.shape[2] * l.shape[3] &&
                       l.bias.size() == static_cast<std::size_t>(l.shape[0]),
                   ErrorKind::invalid_input, "layer storage does not match its shape");
      channels = l.shape[0];
    }
    DADKIT_CHECK(channels == 1, ErrorKind::invalid_input, "detector head must emit one channel");
    bool finite = true;
    for_each_tensor([&](std::span<const double> t) {
      for (double v : t) finite = finite && std::isfinite(v);
    });
    DADKIT_CHECK(finite, ErrorKind::invalid_input, "detector weights are not finite");
  }

  friend bool operator==(const DetectorParams&, const DetectorParams&) = default;
};

// Glorot-uniform kernels, zero biases, seeded by cfg.seed.
inline DetectorParams init_params(const ArchConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  DetectorParams p;
  int in = 1;
  auto add_layer = [&](int out, int k) {
    Layer l = Layer::zeros(out, in, k);
    const double limit = std::sqrt(6.0 / static_cast<double>((in + out) * k * k));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (double& v : l.kernel) v = dist(rng);
    p.layers.push_back(std::move(l));
    in = out;
  };
  for (int w : cfg.channel_widths) add_layer(w, cfg.kernel_size);
  add_layer(1, 1);
  return p;
}

// Channel-major stack of equally sized planes.
struct Tensor3 {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> data;

  Tensor3() = default;
  Tensor3(int c, int h, int w, double fill = 0.0)
      : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, fill) {}

  std::size_t plane() const { return static_cast<std::size_t>(height) * width; }
  double* channel(int c) { return data.data() + c * plane(); }
  const double* channel(int c) const { return data.data() + c * plane(); }
};

namespace detail {

inline Tensor3 reflect_pad(const Tensor3& in, int r) {
  Tensor3 out(in.channels, in.height + 2 * r, in.width + 2 * r);
  for (int c = 0; c < in.channels; ++c) {
    const double* src = in.channel(c);
    double* dst = out.channel(c);
    for (int y = 0; y < out.height; ++y) {
      const int sy = reflect_index(y - r, in.height);
      for (int x = 0; x < out.width; ++x) dst[y * out.width + x] = src[sy * in.width + reflect_index(x - r, in.width)];
    }
  }
  return out;
}

// Adds the gradient of a padded tensor back onto the pixels it was copied from.
inline Tensor3 fold_reflect_pad(const Tensor3& grad_padded, int r, int height, int width) {
  Tensor3 out(grad_padded.channels, height, width);
  for (int c = 0; c < out.channels; ++c) {
    const double* src = grad_padded.channel(c);
    double* dst = out.channel(c);
    for (int y = 0; y < grad_padded.height; ++y) {
      const int ty = reflect_index(y - r, height);
      for (int x = 0; x < grad_padded.width; ++x)
        dst[ty * width + reflect_index(x - r, width)] += src[y * grad_padded.width + x];
    }
  }
  return out;
}

inline Tensor3 conv_valid(const Tensor3& padded, const Layer& layer, int height, int width) {
  const int k = layer.kernel_size();
  Tensor3 out(layer.out_channels(), height, width);
  for (int o = 0; o < layer.out_channels(); ++o) {
    double* dst = out.channel(o);
    std::fill(dst, dst + out.plane(), layer.bias[o]);
    for (int i = 0; i < layer.in_channels(); ++i) {
      const double* src = padded.channel(i);
      for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx) {
          const double wgt = layer.w(o, i, ky, kx);
          for (int y = 0; y < height; ++y) {
            const double* s = src + (y + ky) * padded.width + kx;
            double* d = dst + y * width;
            for (int x = 0; x < width; ++x) d[x] += wgt * s[x];
          }
        }
      }
    }
  }
  return out;
}

// Accumulates kernel/bias gradients into `grad` and returns the gradient w.r.t. the padded input.
inline Tensor3 conv_valid_backward(const Tensor3& padded, const Layer& layer, const Tensor3& grad_out, Layer& grad) {
  const int k = layer.kernel_size();
  const int height = grad_out.height, width = grad_out.width;
  Tensor3 grad_in(padded.channels, padded.height, padded.width);
  for (int o = 0; o < layer.out_channels(); ++o) {
    const double* g = grad_out.channel(o);
    double bsum = 0.0;
    for (std::size_t j = 0; j < grad_out.plane(); ++j) bsum += g[j];
    grad.bias[o] += bsum;
    for (int i = 0; i < layer.in_channels(); ++i) {
      const double* src = padded.channel(i);
      double* gin = grad_in.channel(i);
      for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx) {
          const double wgt = layer.w(o, i, ky, kx);
          double acc = 0.0;
          for (int y = 0; y < height; ++y) {
            const double* s = src + (y + ky) * padded.width + kx;
            double* gi = gin + (y + ky) * padded.width + kx;
            const double* gr = g + y * width;
            for (int x = 0; x < width; ++x) {
              acc += gr[x] * s[x];
              gi[x] += wgt * gr[x];
            }
          }
          grad.w(o, i, ky, kx) += acc;
        }
      }
    }
  }
  return grad_in;
}

}  // namespace detail

struct ActivationCache {
  Shape shape;
  std::vector<Tensor3> padded_inputs;   // per layer
  std::vector<Tensor3> pre_activations;  // per hidden block
  std::size_t num_layers = 0;
};

struct ForwardResult {
  ScoreMap scoremap;
  ActivationCache cache;
};

inline ForwardResult forward(const DetectorParams& params, const Grid2d& image) {
  params.validate();
  int field = 1;
  for (const Layer& l : params.layers) field += l.kernel_size() - 1;
  DADKIT_CHECK(image.height() >= field && image.width() >= field, ErrorKind::invalid_input,
               "image " + to_string(image.shape()) + " smaller than receptive field " + std::to_string(field));
  DADKIT_CHECK(all_finite(image), ErrorKind::invalid_input, "image contains non-finite values");

  const int h = image.height(), w = image.width();
  ForwardResult res;
  res.cache.shape = image.shape();
  res.cache.num_layers = params.layers.size();

  Tensor3 x(1, h, w);
  std::copy(image.begin(), image.end(), x.data.begin());
  for (std::size_t li = 0; li < params.layers.size(); ++li) {
    const Layer& layer = params.layers[li];
    Tensor3 padded = detail::reflect_pad(x, layer.kernel_size() / 2);
    Tensor3 z = detail::conv_valid(padded, layer, h, w);
    res.cache.padded_inputs.push_back(std::move(padded));
    if (li + 1 < params.layers.size()) {
      x = z;
      for (double& v : x.data) v = v > 0.0 ? v : 0.0;
      res.cache.pre_activations.push_back(std::move(z));
    } else {
      x = std::move(z);
    }
  }
  res.scoremap = ScoreMap(Grid2d(h, w, std::move(x.data)));
  return res;
}

inline DetectorParams backward(const DetectorParams& params, const ActivationCache& cache,
                               const Grid2d& grad_scoremap) {
  DADKIT_CHECK(cache.num_layers == params.layers.size() && cache.padded_inputs.size() == params.layers.size(),
               ErrorKind::invalid_input, "activation cache does not match the detector");
  require_same_shape(grad_scoremap.shape(), cache.shape, "backward");
  const int h = cache.shape.height, w = cache.shape.width;
  DetectorParams grads = params.zeros_like();

  Tensor3 g(1, h, w);
  std::copy(grad_scoremap.begin(), grad_scoremap.end(), g.data.begin());
  for (std::size_t li = params.layers.size(); li-- > 0;) {
    const Layer& layer = params.layers[li];
    if (li + 1 < params.layers.size()) {
      const Tensor3& z = cache.pre_activations[li];
      for (std::size_t j = 0; j < g.data.size(); ++j)
        if (!(z.data[j] > 0.0)) g.data[j] = 0.0;
    }
    const Tensor3 g_padded = detail::conv_valid_backward(cache.padded_inputs[li], layer, g, grads.layers[li]);
    if (li > 0) g = detail::fold_reflect_pad(g_padded, layer.kernel_size() / 2, h, w);
  }
  return grads;
}

struct OptState {
  std::vector<double> first_moment;
  std::vector<double> second_moment;
  long step_count = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps_opt = 1e-8;
  double weight_decay = 1e-4;

  void validate() const {
    DADKIT_CHECK(beta1 > 0.0 && beta1 < 1.0 && beta2 > 0.0 && beta2 < 1.0, ErrorKind::invalid_parameter,
                 "optimizer betas must lie in (0, 1)");
    DADKIT_CHECK(lr > 0.0 && eps_opt > 0.0 && weight_decay >= 0.0, ErrorKind::invalid_parameter,
                 "optimizer lr/eps must be positive and weight decay nonnegative");
  }
};

// One AdamW step: decoupled decay multiplies the weights, then the bias-corrected
// moment ratio is subtracted.
inline void optimizer_step(DetectorParams& params, const DetectorParams& grads, OptState& state) {
  state.validate();
  const std::size_t n = params.num_scalars();
  DADKIT_CHECK(grads.num_scalars() == n, ErrorKind::invalid_input, "gradient shape does not match parameters");
  if (state.first_moment.size() != n) {
    state.first_moment.assign(n, 0.0);
    state.second_moment.assign(n, 0.0);
  }
  ++state.step_count;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step_count));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step_count));
  const double decay = 1.0 - state.lr * state.weight_decay;

  std::vector<std::span<const double>> g;
  grads.for_each_tensor([&](std::span<const double> t) { g.push_back(t); });
  std::size_t flat = 0, tensor = 0;
  params.for_each_tensor([&](std::span<double> t) {
    const std::span<const double> gt = g[tensor++];
    for (std::size_t j = 0; j < t.size(); ++j, ++flat) {
      double& m = state.first_moment[flat];
      double& v = state.second_moment[flat];
      m = state.beta1 * m + (1.0 - state.beta1) * gt[j];
      v = state.beta2 * v + (1.0 - state.beta2) * gt[j] * gt[j];
      t[j] *= decay;
      t[j] -= state.lr * (m / bc1) / (std::sqrt(v / bc2) + state.eps_opt);
    }
  });
}

inline void add_scaled(DetectorParams& acc, const DetectorParams& g, double scale = 1.0) {
  std::vector<std::span<const double>> src;
  g.for_each_tensor([&](std::span<const double> t) { src.push_back(t); });
  std::size_t tensor = 0;
  acc.for_each_tensor([&](std::span<double> t) {
    const std::span<const double> s = src[tensor++];
    for (std::size_t j = 0; j < t.size(); ++j) t[j] += scale * s[j];
  });
}

}  // namespace dadkit
