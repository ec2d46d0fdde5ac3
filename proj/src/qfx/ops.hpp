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

#ifndef QFX_OPS_HPP_
#define QFX_OPS_HPP_

#include <cstddef>
#include <optional>

#include "qfx/fixedpoint.hpp"
#include "qfx/tensor.hpp"

namespace qfx {

/// 2-D convolution parameters. weights are [out, in, kh, kw]; bias is [out].
struct ConvParams {
  std::size_t out_channels = 0;
  std::size_t in_channels = 0;
  std::size_t kernel_h = 0;
  std::size_t kernel_w = 0;
  std::size_t stride = 1;
  std::size_t padding = 0;
  Tensor weights;
  std::optional<Tensor> bias;

  /// Throws ShapeError when weights/bias disagree with the declared dims.
  void validate() const;
};

/// Fake-quantization switch shared by every quantized operator.
struct QuantConfig {
  QFormat weight_format;
  QFormat activation_format;
  bool enabled = true;

  static QuantConfig disabled() { return QuantConfig{{}, {}, false}; }
  static QuantConfig uniform(const QFormat& q) { return QuantConfig{q, q, true}; }
};

/// Inference-mode batch-norm statistics, one entry per channel.
struct BatchNormParams {
  Tensor gamma;
  Tensor beta;
  Tensor running_mean;
  Tensor running_var;
  double eps = 1e-5;

  std::size_t channels() const noexcept { return gamma.size(); }
  void validate() const;
};

// Forward operators. All inputs are NCHW unless noted.

/// Cross-correlation with zero padding.
Tensor conv2d(const Tensor& input, const ConvParams& p);
/// Weights on weight_format, bias and output on activation_format. The
/// accumulation itself is exact real arithmetic.
Tensor conv2d_quant(const Tensor& input, const ConvParams& p,
                    const QuantConfig& qc);

Tensor relu(const Tensor& input);
Tensor relu_quant(const Tensor& input, const QuantConfig& qc);

Tensor maxpool2d(const Tensor& input, std::size_t window, std::size_t stride);
/// [N,C,H,W] -> [N,C].
Tensor global_avgpool(const Tensor& input);

Tensor batchnorm_inference(const Tensor& input, const BatchNormParams& bn);
/// Conv whose output equals conv followed by inference-mode batch-norm.
ConvParams batchnorm_fold(const ConvParams& p, const BatchNormParams& bn);

/// Elementwise quantize(). Throws NumericError on a non-finite element.
Tensor quantize_tensor(const Tensor& t, const QFormat& q);
/// quantize_tensor when qc is enabled, otherwise a copy.
Tensor maybe_quantize(const Tensor& t, const QuantConfig& qc);

Tensor add(const Tensor& a, const Tensor& b);

/// x [N,D], weight [O,D], bias [O] -> [N,O].
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

// Backward kernels used by the training engine.

struct ConvGrads {
  Tensor input;  // empty unless requested
  Tensor weights;
  Tensor bias;  // [out], always filled
};

ConvGrads conv2d_backward(const Tensor& input, const ConvParams& p,
                          const Tensor& grad_out, bool need_input_grad);
Tensor relu_backward(const Tensor& input, const Tensor& grad_out);
Tensor maxpool2d_backward(const Tensor& input, std::size_t window,
                          std::size_t stride, const Tensor& grad_out);
Tensor global_avgpool_backward(const Shape& input_shape,
                               const Tensor& grad_out);

}  // namespace qfx

#endif  // QFX_OPS_HPP_
