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

#ifndef QFX_PTQ_HPP_
#define QFX_PTQ_HPP_

#include <span>
#include <string>
#include <vector>

#include "qfx/backbone.hpp"
#include "qfx/dataset.hpp"
#include "qfx/fewshot.hpp"
#include "qfx/ops.hpp"

namespace qfx {

enum class StandardizeMode { kCenterOnly, kCenterNormalize };

std::string to_string(StandardizeMode mode);
StandardizeMode parse_standardize_mode(const std::string& text);

struct TransferReport {
  struct Item {
    std::string name;
    double max_error = 0.0;  // max |quantized - folded float|
  };
  std::vector<Item> items;
  double max_error() const;
};

struct TransferResult {
  BackboneModel model;
  TransferReport report;
};

/// Loads `float_store` into `arch`, folds batch-norm into the convolutions
/// and quantizes every tensor onto qc.weight_format. With qc disabled the
/// architecture is returned unfolded and unquantized. Missing, unexpected
/// and mis-shaped tensors are all listed in one DataError.
TransferResult weight_transfer(const WeightStore& float_store,
                               const BackboneModel& arch,
                               const QuantConfig& qc);

/// Elementwise mean of the rows of [n, d]. Throws DataError when n == 0.
Tensor mean_vector(const Tensor& features);

struct StandardizeResult {
  Tensor features;
  std::size_t degenerate_rows = 0;  // rows equal to the mean
};

/// r <- r - mean, then r <- r / ||r|| in kCenterNormalize mode. Rows that
/// are zero after centering stay centered-only and are counted. With
/// `quant`, the output is re-quantized onto that grid.
StandardizeResult standardize(const Tensor& features, const Tensor& mean,
                              StandardizeMode mode,
                              const std::optional<QFormat>& quant = std::nullopt);

struct PipelineResult {
  AccuracyStat accuracy;
  Tensor mean_vector;
  std::size_t degenerate_rows = 0;
};

/// Feature extraction of the base set, averaging, standardization of the
/// evaluation pool and NCM over `plans`. Every feature is produced by
/// `model` under `qc`; the mean vector and standardized features are
/// quantized onto the activation grid when qc is enabled.
PipelineResult evaluate_pipeline(const BackboneModel& model,
                                 const QuantConfig& qc,
                                 const Tensor& base_images,
                                 const Tensor& pool_images,
                                 std::span<const EpisodePlan> plans,
                                 StandardizeMode mode);

/// evaluate_pipeline with a precomputed (already quantized) mean vector.
PipelineResult evaluate_with_mean(const BackboneModel& model,
                                  const QuantConfig& qc, const Tensor& mean,
                                  const Tensor& pool_images,
                                  std::span<const EpisodePlan> plans,
                                  StandardizeMode mode);

struct PtqArtifacts {
  BackboneModel quantized_model;
  Tensor mean_vector;
  QuantConfig quant;
  StandardizeMode standardize = StandardizeMode::kCenterNormalize;
  std::string source_sha256;
};

struct PtqResult {
  PtqArtifacts artifacts;
  TransferReport transfer;
  AccuracyStat accuracy;
  std::size_t degenerate_rows = 0;
};

/// Post-training quantization: transfer the float weights into the
/// quantized model, extract and average base features with it, then
/// standardize and classify the evaluation episodes.
PtqResult run_ptq(const WeightStore& float_weights, const BackboneModel& arch,
                  const QuantConfig& qc, const Tensor& base_images,
                  const Tensor& pool_images, std::span<const EpisodePlan> plans,
                  StandardizeMode mode = StandardizeMode::kCenterNormalize);

/// JSON sidecar: mean_vector, formats, standardize mode, source hash.
std::string artifacts_sidecar_json(const PtqArtifacts& artifacts);

struct Sidecar {
  Tensor mean_vector;
  QuantConfig quant;
  StandardizeMode standardize = StandardizeMode::kCenterNormalize;
  std::string source_sha256;
  bool folded = true;
};
Sidecar parse_sidecar_json(const std::string& text);

}  // namespace qfx

#endif  // QFX_PTQ_HPP_
