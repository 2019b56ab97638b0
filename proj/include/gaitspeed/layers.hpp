#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <span>
#include <vector>

#include "gaitspeed/error.hpp"
#include "gaitspeed/rng.hpp"
#include "gaitspeed/tensor.hpp"

namespace gaitspeed {

namespace detail {

/// Unfolds x [C,H,W] for a 3x3 kernel with zero padding 1 and stride 1 into
/// col [C*9, H*W], so convolution becomes one GEMM.
inline void im2col3x3(const double* x, std::size_t C, std::size_t H, std::size_t W, double* col) {
  const std::size_t HW = H * W;
  for (std::size_t c = 0; c < C; ++c) {
    const double* xc = x + c * HW;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        double* row = col + ((c * 3 + static_cast<std::size_t>(ky)) * 3 +
                             static_cast<std::size_t>(kx)) * HW;
        for (std::size_t h = 0; h < H; ++h) {
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(h) + ky - 1;
          double* out = row + h * W;
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(H)) {
            std::fill(out, out + W, 0.0);
            continue;
          }
          const double* src = xc + static_cast<std::size_t>(sy) * W;
          for (std::size_t w = 0; w < W; ++w) {
            const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(w) + kx - 1;
            out[w] = (sx < 0 || sx >= static_cast<std::ptrdiff_t>(W))
                         ? 0.0
                         : src[static_cast<std::size_t>(sx)];
          }
        }
      }
    }
  }
}

/// Transpose of im2col3x3: scatter-adds col [C*9, H*W] back into x [C,H,W].
inline void col2im3x3(const double* col, std::size_t C, std::size_t H, std::size_t W, double* x) {
  const std::size_t HW = H * W;
  std::fill(x, x + C * HW, 0.0);
  for (std::size_t c = 0; c < C; ++c) {
    double* xc = x + c * HW;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const double* row = col + ((c * 3 + static_cast<std::size_t>(ky)) * 3 +
                                   static_cast<std::size_t>(kx)) * HW;
        for (std::size_t h = 0; h < H; ++h) {
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(h) + ky - 1;
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(H)) continue;
          double* dst = xc + static_cast<std::size_t>(sy) * W;
          const double* src = row + h * W;
          for (std::size_t w = 0; w < W; ++w) {
            const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(w) + kx - 1;
            if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(W)) continue;
            dst[static_cast<std::size_t>(sx)] += src[w];
          }
        }
      }
    }
  }
}

/// Zero-mean uniform init with fan-in scaling, limit sqrt(6 / fan_in).
inline void init_uniform_fan_in(Tensor& t, std::size_t fan_in, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (double& v : t.v) v = rng.uniform(-limit, limit);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// 2-D convolution, 3x3 kernel, stride 1, "same" zero padding.
// ---------------------------------------------------------------------------

struct Conv2d {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  Tensor w;  // [K, C, 3, 3]
  Tensor b;  // [K]

  static Conv2d zeros(std::size_t in_ch, std::size_t out_ch) {
    Conv2d l;
    l.in_channels = in_ch;
    l.out_channels = out_ch;
    l.w = Tensor::zeros({out_ch, in_ch, 3, 3});
    l.b = Tensor::zeros({out_ch});
    return l;
  }

  static Conv2d init(std::size_t in_ch, std::size_t out_ch, Rng& rng) {
    Conv2d l = zeros(in_ch, out_ch);
    detail::init_uniform_fan_in(l.w, in_ch * 9, rng);
    return l;  // biases start at zero
  }

  std::size_t parameter_count() const { return w.size() + b.size(); }
};

inline Tensor conv2d_forward(const Conv2d& layer, const Tensor& x) {
  if (x.shape.size() != 3 || x.shape[0] != layer.in_channels)
    fail(Errc::shape_mismatch, "conv2d input channel mismatch");
  const std::size_t C = x.shape[0], H = x.shape[1], W = x.shape[2];
  const std::size_t K = layer.out_channels, HW = H * W;

  double* col = detail::scratch(0, C * 9 * HW);
  detail::im2col3x3(x.data(), C, H, W, col);

  Tensor y = Tensor::zeros({K, H, W});
  detail::gemm(K, C * 9, HW, layer.w.data(), col, y.data(), false);
  for (std::size_t k = 0; k < K; ++k) {
    const double bk = layer.b[k];
    double* yk = y.data() + k * HW;
    for (std::size_t i = 0; i < HW; ++i) yk[i] += bk;
  }
  return y;
}

/// Returns the gradient w.r.t. the input and accumulates parameter gradients
/// into `grad` (same shapes as the layer).
inline Tensor conv2d_backward(const Conv2d& layer, const Tensor& x, const Tensor& grad_out,
                              Conv2d& grad) {
  const std::size_t C = x.shape[0], H = x.shape[1], W = x.shape[2];
  const std::size_t K = layer.out_channels, HW = H * W;
  if (grad_out.shape.size() != 3 || grad_out.shape[0] != K || grad_out.shape[1] != H ||
      grad_out.shape[2] != W)
    fail(Errc::shape_mismatch, "conv2d grad shape mismatch");

  double* col = detail::scratch(0, C * 9 * HW);
  detail::im2col3x3(x.data(), C, H, W, col);

  // dW[K, C*9] += dY[K, HW] * col^T
  detail::gemm_abt(K, HW, C * 9, grad_out.data(), col, grad.w.data(), true);
  for (std::size_t k = 0; k < K; ++k) {
    const double* gk = grad_out.data() + k * HW;
    double acc = 0;
    for (std::size_t i = 0; i < HW; ++i) acc += gk[i];
    grad.b[k] += acc;
  }

  // dcol[C*9, HW] = W^T * dY, then fold back to input layout.
  double* dcol = detail::scratch(1, C * 9 * HW);
  detail::gemm_atb(C * 9, K, HW, layer.w.data(), grad_out.data(), dcol, false);
  Tensor gx = Tensor::zeros({C, H, W});
  detail::col2im3x3(dcol, C, H, W, gx.data());
  return gx;
}

// ---------------------------------------------------------------------------
// Activations and pooling.
// ---------------------------------------------------------------------------

inline Tensor relu(const Tensor& x) {
  Tensor y = x;
  for (double& v : y.v) v = v > 0 ? v : 0.0;
  return y;
}

/// Gradient mask from the pre-activation input; the subgradient at 0 is 0.
inline Tensor relu_backward(const Tensor& x, const Tensor& grad_out) {
  Tensor gx = grad_out;
  for (std::size_t i = 0; i < gx.size(); ++i)
    if (!(x[i] > 0)) gx.v[i] = 0.0;
  return gx;
}

struct PoolResult {
  Tensor out;                       // [K]
  std::vector<std::size_t> argmax;  // row-major spatial index per filter
};

/// Reduces each filter map to its maximum. Ties go to the first occurrence
/// in row-major order so the backward route is unambiguous.
inline PoolResult global_max_pool(const Tensor& x) {
  if (x.shape.size() != 3) fail(Errc::shape_mismatch, "global_max_pool expects [K,H,W]");
  const std::size_t K = x.shape[0], HW = x.shape[1] * x.shape[2];
  PoolResult r;
  r.out = Tensor::zeros({K});
  r.argmax.resize(K);
  for (std::size_t k = 0; k < K; ++k) {
    const double* xk = x.data() + k * HW;
    std::size_t best = 0;
    for (std::size_t i = 1; i < HW; ++i)
      if (xk[i] > xk[best]) best = i;
    r.out[k] = xk[best];
    r.argmax[k] = best;
  }
  return r;
}

inline Tensor global_max_pool_backward(const std::vector<std::size_t>& argmax,
                                       const Tensor& grad_out, std::size_t H, std::size_t W) {
  const std::size_t K = argmax.size();
  Tensor gx = Tensor::zeros({K, H, W});
  for (std::size_t k = 0; k < K; ++k) gx.v[k * H * W + argmax[k]] = grad_out[k];
  return gx;
}

// ---------------------------------------------------------------------------
// Dense layer.
// ---------------------------------------------------------------------------

struct Dense {
  std::size_t in = 0;
  std::size_t out = 0;
  Tensor w;  // [out, in]
  Tensor b;  // [out]

  static Dense zeros(std::size_t in, std::size_t out) {
    Dense l;
    l.in = in;
    l.out = out;
    l.w = Tensor::zeros({out, in});
    l.b = Tensor::zeros({out});
    return l;
  }

  static Dense init(std::size_t in, std::size_t out, Rng& rng) {
    Dense l = zeros(in, out);
    detail::init_uniform_fan_in(l.w, in, rng);
    return l;
  }

  std::size_t parameter_count() const { return w.size() + b.size(); }
};

inline Tensor dense_forward(const Dense& layer, const Tensor& x) {
  if (x.size() != layer.in) fail(Errc::shape_mismatch, "dense input size mismatch");
  Tensor y = Tensor::zeros({layer.out});
  for (std::size_t o = 0; o < layer.out; ++o) {
    const double* wr = layer.w.data() + o * layer.in;
    double acc = layer.b[o];
    for (std::size_t i = 0; i < layer.in; ++i) acc += wr[i] * x[i];
    y[o] = acc;
  }
  return y;
}

inline Tensor dense_backward(const Dense& layer, const Tensor& x, const Tensor& grad_out,
                             Dense& grad) {
  if (grad_out.size() != layer.out) fail(Errc::shape_mismatch, "dense grad size mismatch");
  Tensor gx = Tensor::zeros({layer.in});
  for (std::size_t o = 0; o < layer.out; ++o) {
    const double go = grad_out[o];
    grad.b[o] += go;
    const double* wr = layer.w.data() + o * layer.in;
    double* gw = grad.w.data() + o * layer.in;
    for (std::size_t i = 0; i < layer.in; ++i) {
      gw[i] += go * x[i];
      gx[i] += go * wr[i];
    }
  }
  return gx;
}

// ---------------------------------------------------------------------------
// Inverted dropout: survivors are rescaled by 1/(1-rate) during training so
// inference is the identity.
// ---------------------------------------------------------------------------

struct DropoutMask {
  std::vector<std::uint8_t> keep;
  double scale = 1.0;
};

inline Tensor dropout(const Tensor& x, double rate, Rng& rng, bool training,
                      DropoutMask* mask = nullptr) {
  if (!(rate >= 0.0 && rate < 1.0)) fail(Errc::out_of_range, "dropout rate must be in [0, 1)");
  if (!training || rate == 0.0) {
    if (mask) {
      mask->keep.assign(x.size(), 1);
      mask->scale = 1.0;
    }
    return x;
  }
  Tensor y = x;
  const double scale = 1.0 / (1.0 - rate);
  if (mask) {
    mask->keep.assign(x.size(), 0);
    mask->scale = scale;
  }
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (rng.uniform() < rate) {
      y.v[i] = 0.0;
    } else {
      y.v[i] *= scale;
      if (mask) mask->keep[i] = 1;
    }
  }
  return y;
}

inline Tensor dropout_backward(const DropoutMask& mask, const Tensor& grad_out) {
  Tensor gx = grad_out;
  for (std::size_t i = 0; i < gx.size(); ++i)
    gx.v[i] = mask.keep[i] ? gx.v[i] * mask.scale : 0.0;
  return gx;
}

// ---------------------------------------------------------------------------
// Mean absolute error.
// ---------------------------------------------------------------------------

struct MaeResult {
  double loss = 0;
  std::vector<double> grad;  // d loss / d pred
};

/// (1/n) sum |pred - truth|; the subgradient of |.| at 0 is taken as 0.
inline MaeResult mae_loss(std::span<const double> pred, std::span<const double> truth) {
  if (pred.size() != truth.size()) fail(Errc::shape_mismatch, "mae_loss length mismatch");
  if (pred.empty()) fail(Errc::empty_dataset, "mae_loss on empty vectors");
  MaeResult r;
  r.grad.resize(pred.size());
  const double inv_n = 1.0 / static_cast<double>(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - truth[i];
    r.loss += std::abs(d) * inv_n;
    r.grad[i] = d > 0 ? inv_n : (d < 0 ? -inv_n : 0.0);
  }
  return r;
}

}  // namespace gaitspeed
