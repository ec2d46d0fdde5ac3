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

#ifndef QFX_TRAINING_HPP_
#define QFX_TRAINING_HPP_

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "qfx/backbone.hpp"
#include "qfx/dataset.hpp"
#include "qfx/ops.hpp"

namespace qfx {

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  double learning_rate = 0.05;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::uint64_t seed = 0;
  /// Enabled => quantization-aware training with this config.
  QuantConfig quant = QuantConfig::disabled();
  bool cosine_decay = false;
  double bn_momentum = 0.1;

  /// Throws ConfigError. A zero learning rate is accepted (frozen run).
  void validate() const;
};

/// Linear classifier over the base classes; only used during pre-training.
struct LinearHead {
  Tensor weight;  // [classes, feature_dim]
  Tensor bias;    // [classes]

  static LinearHead create(std::size_t classes, std::size_t feature_dim,
                           std::uint64_t seed);
};

/// Whether batch-norm layers normalize with the batch or the running stats.
enum class BatchNormMode { kBatchStats, kRunningStats };

/// Records one forward pass of a backbone so the exact gradient of any
/// scalar function of the features can be pulled back onto every weight.
/// In quantized mode the backward pass applies the clipped
/// straight-through estimator at each quantization point.
class GradientTape {
 public:
  struct BatchStats {
    Tensor mean;
    Tensor var_unbiased;
  };

  GradientTape(const BackboneModel& model, const QuantConfig& qc,
               BatchNormMode bn_mode);

  /// Runs the model and records what backward() needs. [N, feature_dim].
  Tensor forward(const Tensor& input);

  /// Gradient for every trainable tensor (running stats excluded), keyed
  /// by weight name.
  WeightStore backward(const Tensor& grad_features) const;

  /// Per batch-norm layer statistics of the last forward (batch mode only).
  const std::map<std::string, BatchStats>& batch_stats() const {
    return batch_stats_;
  }

 private:
  struct ConvRecord {
    const ConvLayer* layer;
    Tensor input;
    ConvParams used;  // quantized copy in QAT mode
    Tensor pre_quant;
  };
  struct BnRecord {
    const BatchNormLayer* layer;
    Tensor x_hat;
    Tensor inv_std;
    Tensor gamma;
    Tensor pre_quant;
  };
  struct ReluRecord {
    Tensor input;
  };
  struct PoolRecord {
    Tensor input;
    std::size_t window;
    std::size_t stride;
  };
  struct BeginRecord {};
  struct AddRecord {
    std::optional<ConvRecord> projection;
    std::optional<BnRecord> projection_bn;
    Tensor pre_quant;
  };
  struct AvgRecord {
    Shape input_shape;
    Tensor pre_quant;
  };
  using Record = std::variant<ConvRecord, BnRecord, ReluRecord, PoolRecord,
                              BeginRecord, AddRecord, AvgRecord>;

  Tensor conv_forward(const ConvLayer& layer, const Tensor& x,
                      std::optional<ConvRecord>& rec);
  Tensor bn_forward(const BatchNormLayer& layer, const Tensor& x,
                    std::optional<BnRecord>& rec);
  Tensor conv_backward(const ConvRecord& rec, const Tensor& g, bool need_input,
                       WeightStore& grads) const;
  Tensor bn_backward(const BnRecord& rec, const Tensor& g,
                     WeightStore& grads) const;
  Tensor ste(const Tensor& g, const Tensor& pre_quant) const;

  const BackboneModel& model_;
  QuantConfig qc_;
  BatchNormMode bn_mode_;
  std::vector<Record> records_;
  std::map<std::string, BatchStats> batch_stats_;
};

/// Clipped straight-through estimator: passes grad_out where
/// min < pre_quant_input < max of `q`, zero elsewhere.
Tensor ste_backward(const Tensor& grad_out, const Tensor& pre_quant_input,
                    const QFormat& q);

struct LossAndGrads {
  double loss = 0.0;  // mean softmax cross-entropy
  std::size_t correct = 0;
  WeightStore grads;  // backbone tensors plus "head.weight"/"head.bias"
  std::map<std::string, GradientTape::BatchStats> batch_stats;
};

/// Loss of a labelled batch through backbone + head, with gradients when
/// `with_grads` is set.
LossAndGrads loss_and_gradients(const BackboneModel& model,
                                const LinearHead& head, const Tensor& images,
                                std::span<const int> labels,
                                const QuantConfig& qc, BatchNormMode bn_mode,
                                bool with_grads = true);

/// True for names that are optimized (running statistics are not).
bool is_trainable(const std::string& name);

struct TrainStep {
  std::size_t epoch = 0;
  std::size_t batch = 0;
  double loss = 0.0;
  double train_acc = 0.0;  // percent, on the batch
};

struct TrainResult {
  std::vector<TrainStep> history;
};

/// SGD with momentum on softmax cross-entropy. The data order is a pure
/// function of cfg.seed; QAT mode fake-quantizes every forward. Throws
/// NumericError on a non-finite loss.
TrainResult train(BackboneModel& model, LinearHead& head,
                  const LabeledImages& data, const TrainConfig& cfg);

/// Loss history as CSV: epoch,batch,loss,train_acc.
std::string history_csv(const TrainResult& result);

/// Fraction (percent) of samples the backbone+head classifies correctly,
/// using running batch-norm statistics.
double classification_accuracy(const BackboneModel& model,
                               const LinearHead& head,
                               const LabeledImages& data,
                               const QuantConfig& qc);

struct GradCheckEntry {
  std::string name;
  std::size_t checked = 0;
  double max_abs_error = 0.0;
  double max_abs_grad = 0.0;
  /// max |analytic - numeric| divided by the largest gradient magnitude in
  /// the tensor (or 1 if the tensor's gradient vanishes).
  double max_rel_error = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error() const;
  bool all_finite = true;
};

struct GradCheckOptions {
  double epsilon = 1e-4;
  /// Coordinates checked per tensor; 0 means all of them.
  std::size_t max_per_tensor = 0;
  BatchNormMode bn_mode = BatchNormMode::kBatchStats;
  std::uint64_t seed = 0;
};

/// Float-mode analytic gradients against central differences, one entry
/// per trainable tensor (including the head).
GradCheckReport grad_check(const BackboneModel& model, const LinearHead& head,
                           const Tensor& images, std::span<const int> labels,
                           const GradCheckOptions& options = {});

}  // namespace qfx

#endif  // QFX_TRAINING_HPP_
