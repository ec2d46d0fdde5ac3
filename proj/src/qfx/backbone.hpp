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

#ifndef QFX_BACKBONE_HPP_
#define QFX_BACKBONE_HPP_

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "qfx/ops.hpp"
#include "qfx/tensor.hpp"

namespace qfx {

/// Named tensors, ordered by name. Names follow "block{b}.conv{c}.weight",
/// "block{b}.bn{c}.running_var", "block{b}.shortcut.weight", ...
using WeightStore = std::map<std::string, Tensor>;

struct ConvLayer {
  std::string name;  // weight prefix, e.g. "block1.conv2"
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t padding = 1;
  bool has_bias = false;
};

struct BatchNormLayer {
  std::string name;  // e.g. "block1.bn2"
  std::size_t channels = 0;
  double eps = 1e-5;
};

struct ReluLayer {};

struct MaxPoolLayer {
  std::size_t window = 2;
  std::size_t stride = 2;
};

/// Saves the current activation for the matching ResidualAdd.
struct ResidualBeginLayer {};

/// Adds the saved activation, optionally through a 1x1 projection (+BN).
struct ResidualAddLayer {
  std::optional<ConvLayer> projection;
  std::optional<BatchNormLayer> projection_bn;
};

struct GlobalAvgPoolLayer {};

using LayerSpec =
    std::variant<ConvLayer, BatchNormLayer, ReluLayer, MaxPoolLayer,
                 ResidualBeginLayer, ResidualAddLayer, GlobalAvgPoolLayer>;

/// Human-readable kind name ("conv", "batchnorm", ...).
std::string layer_kind(const LayerSpec& layer);

struct ParamSpec {
  std::string name;
  Shape shape;
};

/// Sequential layer program plus its weights.
struct BackboneModel {
  std::string arch;  // "resnet12", "resnet_lite", "custom", ... (+"-folded")
  std::size_t input_channels = 0;
  std::size_t feature_dim = 0;
  std::vector<LayerSpec> layers;
  WeightStore weights;

  /// Every tensor the layer program expects, in layer order.
  std::vector<ParamSpec> parameter_specs() const;
  std::size_t parameter_count() const;
  std::size_t conv_layer_count() const;

  /// Checks residual balance, the terminal pooling layer and that every
  /// expected weight is present with the right shape. Throws ShapeError.
  void validate() const;
};

struct ResNetOptions {
  bool batchnorm = true;
  double bn_eps = 1e-5;
};

/// Residual stack: one block per entry of `widths`, each block
/// conv3x3-BN-ReLU, conv3x3-BN-ReLU, conv3x3-BN, shortcut add, ReLU, 2x2
/// maxpool. The shortcut is a 1x1 projection (+BN) when the width changes
/// and the identity otherwise. Weights are left empty.
BackboneModel build_resnet(std::size_t input_channels,
                           const std::vector<std::size_t>& widths,
                           const ResNetOptions& options = {});

/// Four blocks of widths base*{1,2,4,8}: twelve 3x3 convolutions.
BackboneModel build_resnet12(std::size_t input_channels,
                             std::size_t base_width = 64);

/// Two blocks of widths base*{1,2}: six 3x3 convolutions.
BackboneModel build_resnet_lite(std::size_t input_channels,
                                std::size_t base_width = 16);

/// Builds by architecture name ("resnet12" or "resnet_lite").
BackboneModel build_arch(const std::string& arch, std::size_t input_channels,
                         std::size_t base_width);

/// Kaiming fan-in normal conv weights, identity batch-norm statistics.
void init_weights(BackboneModel& model, std::uint64_t seed);

/// Returns a model without batch-norm layers whose convolutions carry the
/// folded scale and shift.
BackboneModel fold_batchnorm(const BackboneModel& model);

/// Parameter accessors used by forward passes.
ConvParams conv_params(const BackboneModel& model, const ConvLayer& layer);
BatchNormParams bn_params(const BackboneModel& model,
                          const BatchNormLayer& layer);

/// Feature extraction. A disabled QuantConfig gives the float path; an
/// enabled one fake-quantizes the input, every conv/BN/ReLU/add output and
/// the pooled features onto the activation grid, and weights onto the
/// weight grid. Output is [batch, feature_dim].
Tensor forward(const BackboneModel& model, const Tensor& input,
               const QuantConfig& qc = QuantConfig::disabled());

/// forward() over a large batch in chunks of `chunk` samples.
Tensor extract_features(const BackboneModel& model, const Tensor& images,
                        const QuantConfig& qc, std::size_t chunk = 64);

}  // namespace qfx

#endif  // QFX_BACKBONE_HPP_
