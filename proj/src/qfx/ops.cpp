/* Copyright 2026 The qfx Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "qfx/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "qfx/error.hpp"

namespace qfx {
namespace {

std::string dims(std::size_t a) { return std::to_string(a); }

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank-" + dims(rank) +
                     " input, got shape " + shape_to_string(t.shape()));
  }
}

struct ConvGeometry {
  std::size_t batch, channels, height, width;
  std::size_t out_h, out_w;
  std::size_t patch;   // in * kh * kw
  std::size_t pixels;  // out_h * out_w
};

ConvGeometry conv_geometry(const Tensor& input, const ConvParams& p) {
  require_rank(input, 4, "conv2d");
  p.validate();
  if (input.dim(1) != p.in_channels) {
    throw ShapeError("conv2d: input channel dimension (dim 1) is " +
                     dims(input.dim(1)) + " but the convolution expects " +
                     dims(p.in_channels));
  }
  if (p.stride == 0) throw ShapeError("conv2d: stride must be positive");
  const std::size_t h = input.dim(2) + 2 * p.padding;
  const std::size_t w = input.dim(3) + 2 * p.padding;
  if (h < p.kernel_h) {
    throw ShapeError("conv2d: padded input height " + dims(h) +
                     " is smaller than kernel height " + dims(p.kernel_h));
  }
  if (w < p.kernel_w) {
    throw ShapeError("conv2d: padded input width " + dims(w) +
                     " is smaller than kernel width " + dims(p.kernel_w));
  }
  ConvGeometry g{};
  g.batch = input.dim(0);
  g.channels = input.dim(1);
  g.height = input.dim(2);
  g.width = input.dim(3);
  g.out_h = (h - p.kernel_h) / p.stride + 1;
  g.out_w = (w - p.kernel_w) / p.stride + 1;
  g.patch = p.in_channels * p.kernel_h * p.kernel_w;
  g.pixels = g.out_h * g.out_w;
  return g;
}

// col is [patch, pixels], row index = (c * kh + i) * kw + j.
void im2col(const double* image, const ConvGeometry& g, const ConvParams& p,
            double* col) {
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t i = 0; i < p.kernel_h; ++i) {
      for (std::size_t j = 0; j < p.kernel_w; ++j) {
        double* row = col + ((c * p.kernel_h + i) * p.kernel_w + j) * g.pixels;
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const auto ih = static_cast<std::ptrdiff_t>(oh * p.stride + i) -
                          static_cast<std::ptrdiff_t>(p.padding);
          double* dst = row + oh * g.out_w;
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.height)) {
            std::fill(dst, dst + g.out_w, 0.0);
            continue;
          }
          const double* src = image + (c * g.height + ih) * g.width;
          for (std::size_t ow = 0; ow < g.out_w; ++ow) {
            const auto iw = static_cast<std::ptrdiff_t>(ow * p.stride + j) -
                            static_cast<std::ptrdiff_t>(p.padding);
            dst[ow] = (iw < 0 || iw >= static_cast<std::ptrdiff_t>(g.width))
                          ? 0.0
                          : src[iw];
          }
        }
      }
    }
  }
}

void col2im(const double* col, const ConvGeometry& g, const ConvParams& p,
            double* image) {
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t i = 0; i < p.kernel_h; ++i) {
      for (std::size_t j = 0; j < p.kernel_w; ++j) {
        const double* row =
            col + ((c * p.kernel_h + i) * p.kernel_w + j) * g.pixels;
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const auto ih = static_cast<std::ptrdiff_t>(oh * p.stride + i) -
                          static_cast<std::ptrdiff_t>(p.padding);
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.height)) continue;
          double* dst = image + (c * g.height + ih) * g.width;
          for (std::size_t ow = 0; ow < g.out_w; ++ow) {
            const auto iw = static_cast<std::ptrdiff_t>(ow * p.stride + j) -
                            static_cast<std::ptrdiff_t>(p.padding);
            if (iw >= 0 && iw < static_cast<std::ptrdiff_t>(g.width)) {
              dst[iw] += row[oh * g.out_w + ow];
            }
          }
        }
      }
    }
  }
}

// C[m,n] += sum_k A[m,k] * B[k,n]
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a,
             const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t t = 0; t < k; ++t) {
      const double av = a[i * k + t];
      if (av == 0.0) continue;
      const double* brow = b + t * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m,n] += sum_k A[k,m] * B[k,n]
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a,
             const double* b, double* c) {
  for (std::size_t t = 0; t < k; ++t) {
    const double* brow = b + t * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = a[t * m + i];
      if (av == 0.0) continue;
      double* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// Dot product with four fixed partial sums; the order is fixed so results
// are reproducible.
double dot(const double* x, const double* y, std::size_t n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += x[i] * y[i];
    s1 += x[i + 1] * y[i + 1];
    s2 += x[i + 2] * y[i + 2];
    s3 += x[i + 3] * y[i + 3];
  }
  for (; i < n; ++i) s0 += x[i] * y[i];
  return (s0 + s1) + (s2 + s3);
}

// C[m,n] += sum_k A[m,k] * B[n,k]
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a,
             const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      c[i * n + j] += dot(a + i * k, b + j * k, k);
    }
  }
}

}  // namespace

void ConvParams::validate() const {
  const Shape expected{out_channels, in_channels, kernel_h, kernel_w};
  if (weights.shape() != expected) {
    throw ShapeError("conv weights: expected shape " +
                     shape_to_string(expected) + ", got " +
                     shape_to_string(weights.shape()));
  }
  if (bias && bias->shape() != Shape{out_channels}) {
    throw ShapeError("conv bias: expected shape [" + dims(out_channels) +
                     "], got " + shape_to_string(bias->shape()));
  }
}

void BatchNormParams::validate() const {
  const Shape expected{gamma.size()};
  gamma.require_shape(expected, "batchnorm gamma");
  beta.require_shape(expected, "batchnorm beta");
  running_mean.require_shape(expected, "batchnorm running_mean");
  running_var.require_shape(expected, "batchnorm running_var");
  for (std::size_t c = 0; c < running_var.size(); ++c) {
    if (!(running_var[c] + eps > 0.0)) {
      throw DataError("batchnorm: running_var + eps must be positive (channel " +
                      dims(c) + ")");
    }
  }
}

Tensor conv2d(const Tensor& input, const ConvParams& p) {
  const ConvGeometry g = conv_geometry(input, p);
  Tensor out({g.batch, p.out_channels, g.out_h, g.out_w});
  std::vector<double> col(g.patch * g.pixels);
  const std::size_t in_stride = g.channels * g.height * g.width;
  const std::size_t out_stride = p.out_channels * g.pixels;
  for (std::size_t n = 0; n < g.batch; ++n) {
    im2col(input.data().data() + n * in_stride, g, p, col.data());
    double* dst = out.data().data() + n * out_stride;
    gemm_nn(p.out_channels, g.pixels, g.patch, p.weights.data().data(),
            col.data(), dst);
    if (p.bias) {
      for (std::size_t o = 0; o < p.out_channels; ++o) {
        const double b = (*p.bias)[o];
        for (std::size_t q = 0; q < g.pixels; ++q) dst[o * g.pixels + q] += b;
      }
    }
  }
  return out;
}

Tensor conv2d_quant(const Tensor& input, const ConvParams& p,
                    const QuantConfig& qc) {
  if (!qc.enabled) return conv2d(input, p);
  ConvParams qp = p;
  qp.weights = quantize_tensor(p.weights, qc.weight_format);
  if (p.bias) qp.bias = quantize_tensor(*p.bias, qc.activation_format);
  return quantize_tensor(conv2d(input, qp), qc.activation_format);
}

Tensor relu(const Tensor& input) {
  Tensor out = input;
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  return out;
}

Tensor relu_quant(const Tensor& input, const QuantConfig& qc) {
  return maybe_quantize(relu(input), qc);
}

Tensor maxpool2d(const Tensor& input, std::size_t window, std::size_t stride) {
  require_rank(input, 4, "maxpool2d");
  if (window == 0 || stride == 0) {
    throw ShapeError("maxpool2d: window and stride must be positive");
  }
  const std::size_t nb = input.dim(0), ch = input.dim(1), h = input.dim(2),
                    w = input.dim(3);
  if (window > h || window > w) {
    throw ShapeError("maxpool2d: window " + dims(window) +
                     " is larger than input " + dims(h) + "x" + dims(w));
  }
  const std::size_t oh = (h - window) / stride + 1;
  const std::size_t ow = (w - window) / stride + 1;
  Tensor out({nb, ch, oh, ow});
  for (std::size_t n = 0; n < nb; ++n)
    for (std::size_t c = 0; c < ch; ++c)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x) {
          double best = input.at(n, c, y * stride, x * stride);
          for (std::size_t i = 0; i < window; ++i)
            for (std::size_t j = 0; j < window; ++j)
              best = std::max(best, input.at(n, c, y * stride + i,
                                             x * stride + j));
          out.at(n, c, y, x) = best;
        }
  return out;
}

Tensor maxpool2d_backward(const Tensor& input, std::size_t window,
                          std::size_t stride, const Tensor& grad_out) {
  const std::size_t nb = input.dim(0), ch = input.dim(1);
  const std::size_t oh = grad_out.dim(2), ow = grad_out.dim(3);
  Tensor grad(input.shape());
  for (std::size_t n = 0; n < nb; ++n)
    for (std::size_t c = 0; c < ch; ++c)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x) {
          // First maximum in scan order receives the gradient.
          std::size_t by = y * stride, bx = x * stride;
          double best = input.at(n, c, by, bx);
          for (std::size_t i = 0; i < window; ++i)
            for (std::size_t j = 0; j < window; ++j) {
              const double v = input.at(n, c, y * stride + i, x * stride + j);
              if (v > best) {
                best = v;
                by = y * stride + i;
                bx = x * stride + j;
              }
            }
          grad.at(n, c, by, bx) += grad_out.at(n, c, y, x);
        }
  return grad;
}

Tensor global_avgpool(const Tensor& input) {
  require_rank(input, 4, "global_avgpool");
  const std::size_t nb = input.dim(0), ch = input.dim(1);
  const std::size_t plane = input.dim(2) * input.dim(3);
  if (plane == 0) throw ShapeError("global_avgpool: empty spatial extent");
  Tensor out({nb, ch});
  const double* src = input.data().data();
  for (std::size_t i = 0; i < nb * ch; ++i) {
    double sum = 0.0;
    for (std::size_t q = 0; q < plane; ++q) sum += src[i * plane + q];
    out[i] = sum / static_cast<double>(plane);
  }
  return out;
}

Tensor global_avgpool_backward(const Shape& input_shape,
                               const Tensor& grad_out) {
  Tensor grad(input_shape);
  const std::size_t plane = input_shape[2] * input_shape[3];
  const double inv = 1.0 / static_cast<double>(plane);
  for (std::size_t i = 0; i < grad_out.size(); ++i) {
    const double g = grad_out[i] * inv;
    std::fill_n(grad.data().data() + i * plane, plane, g);
  }
  return grad;
}

Tensor batchnorm_inference(const Tensor& input, const BatchNormParams& bn) {
  require_rank(input, 4, "batchnorm");
  bn.validate();
  if (input.dim(1) != bn.channels()) {
    throw ShapeError("batchnorm: input channel dimension (dim 1) is " +
                     dims(input.dim(1)) + " but the layer has " +
                     dims(bn.channels()) + " channels");
  }
  Tensor out = input;
  const std::size_t plane = input.dim(2) * input.dim(3);
  for (std::size_t n = 0; n < input.dim(0); ++n)
    for (std::size_t c = 0; c < bn.channels(); ++c) {
      const double scale = bn.gamma[c] / std::sqrt(bn.running_var[c] + bn.eps);
      const double shift = bn.beta[c] - bn.running_mean[c] * scale;
      double* p = out.data().data() + (n * bn.channels() + c) * plane;
      for (std::size_t q = 0; q < plane; ++q) p[q] = p[q] * scale + shift;
    }
  return out;
}

ConvParams batchnorm_fold(const ConvParams& p, const BatchNormParams& bn) {
  p.validate();
  bn.validate();
  if (bn.channels() != p.out_channels) {
    throw ShapeError("batchnorm_fold: batch-norm has " + dims(bn.channels()) +
                     " channels but the convolution has " +
                     dims(p.out_channels) + " output channels");
  }
  ConvParams folded = p;
  Tensor bias({p.out_channels});
  const std::size_t per_out = p.in_channels * p.kernel_h * p.kernel_w;
  for (std::size_t o = 0; o < p.out_channels; ++o) {
    const double scale = bn.gamma[o] / std::sqrt(bn.running_var[o] + bn.eps);
    for (std::size_t k = 0; k < per_out; ++k) {
      folded.weights[o * per_out + k] = p.weights[o * per_out + k] * scale;
    }
    const double b = p.bias ? (*p.bias)[o] : 0.0;
    bias[o] = (b - bn.running_mean[o]) * scale + bn.beta[o];
  }
  folded.bias = std::move(bias);
  return folded;
}

Tensor quantize_tensor(const Tensor& t, const QFormat& q) {
  Tensor out = t;
  const Quantizer quant(q);
  for (double& v : out.data()) v = quant(v);
  return out;
}

Tensor maybe_quantize(const Tensor& t, const QuantConfig& qc) {
  return qc.enabled ? quantize_tensor(t, qc.activation_format) : t;
}

Tensor add(const Tensor& a, const Tensor& b) {
  b.require_shape(a.shape(), "add");
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank(x, 2, "linear");
  require_rank(weight, 2, "linear");
  if (weight.dim(1) != x.dim(1)) {
    throw ShapeError("linear: input feature dimension (dim 1) is " +
                     dims(x.dim(1)) + " but the weight expects " +
                     dims(weight.dim(1)));
  }
  bias.require_shape({weight.dim(0)}, "linear bias");
  const std::size_t n = x.dim(0), d = x.dim(1), o = weight.dim(0);
  Tensor out({n, o});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < o; ++j)
      out.at(i, j) = bias[j] + dot(x.data().data() + i * d,
                                   weight.data().data() + j * d, d);
  return out;
}

ConvGrads conv2d_backward(const Tensor& input, const ConvParams& p,
                          const Tensor& grad_out, bool need_input_grad) {
  const ConvGeometry g = conv_geometry(input, p);
  grad_out.require_shape({g.batch, p.out_channels, g.out_h, g.out_w},
                         "conv2d_backward grad");
  ConvGrads grads;
  grads.weights = Tensor(p.weights.shape());
  grads.bias = Tensor({p.out_channels});
  if (need_input_grad) grads.input = Tensor(input.shape());
  std::vector<double> col(g.patch * g.pixels);
  const std::size_t in_stride = g.channels * g.height * g.width;
  const std::size_t out_stride = p.out_channels * g.pixels;
  for (std::size_t n = 0; n < g.batch; ++n) {
    const double* go = grad_out.data().data() + n * out_stride;
    im2col(input.data().data() + n * in_stride, g, p, col.data());
    gemm_nt(p.out_channels, g.patch, g.pixels, go, col.data(),
            grads.weights.data().data());
    for (std::size_t o = 0; o < p.out_channels; ++o) {
      double s = 0.0;
      for (std::size_t q = 0; q < g.pixels; ++q) s += go[o * g.pixels + q];
      grads.bias[o] += s;
    }
    if (need_input_grad) {
      std::fill(col.begin(), col.end(), 0.0);
      gemm_tn(g.patch, g.pixels, p.out_channels, p.weights.data().data(), go,
              col.data());
      col2im(col.data(), g, p, grads.input.data().data() + n * in_stride);
    }
  }
  return grads;
}

Tensor relu_backward(const Tensor& input, const Tensor& grad_out) {
  grad_out.require_shape(input.shape(), "relu_backward");
  Tensor grad = grad_out;
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!(input[i] > 0.0)) grad[i] = 0.0;
  }
  return grad;
}

}  // namespace qfx
