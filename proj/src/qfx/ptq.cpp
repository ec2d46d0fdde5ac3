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

#include "qfx/ptq.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <set>

#include "qfx/error.hpp"
#include "qfx/weights_io.hpp"

namespace qfx {

std::string to_string(StandardizeMode mode) {
  return mode == StandardizeMode::kCenterOnly ? "center_only"
                                              : "center_normalize";
}

StandardizeMode parse_standardize_mode(const std::string& text) {
  if (text == "center_only") return StandardizeMode::kCenterOnly;
  if (text == "center_normalize") return StandardizeMode::kCenterNormalize;
  throw ConfigError("unknown standardize mode '" + text +
                    "' (expected center_only or center_normalize)");
}

double TransferReport::max_error() const {
  double worst = 0.0;
  for (const auto& item : items) worst = std::max(worst, item.max_error);
  return worst;
}

TransferResult weight_transfer(const WeightStore& float_store,
                               const BackboneModel& arch,
                               const QuantConfig& qc) {
  std::vector<std::string> problems;
  std::set<std::string> expected;
  for (const auto& spec : arch.parameter_specs()) {
    expected.insert(spec.name);
    const auto it = float_store.find(spec.name);
    if (it == float_store.end()) {
      problems.push_back("missing tensor '" + spec.name + "' " +
                         shape_to_string(spec.shape));
    } else if (it->second.shape() != spec.shape) {
      problems.push_back("tensor '" + spec.name + "' has shape " +
                         shape_to_string(it->second.shape()) + ", expected " +
                         shape_to_string(spec.shape));
    }
  }
  for (const auto& [name, t] : float_store) {
    if (!expected.count(name)) problems.push_back("unexpected tensor '" + name + "'");
  }
  if (!problems.empty()) {
    std::string msg = "weight transfer into " + arch.arch + " failed (" +
                      std::to_string(problems.size()) + " problems):";
    for (const auto& p : problems) msg += "\n  " + p;
    throw DataError(msg);
  }

  BackboneModel model = arch;
  model.weights = float_store;
  TransferResult result;
  if (!qc.enabled) {
    for (const auto& [name, t] : model.weights) result.report.items.push_back({name, 0.0});
    result.model = std::move(model);
    return result;
  }
  // Fold first so the quantized model carries no batch-norm layers.
  result.model = fold_batchnorm(model);
  for (auto& [name, t] : result.model.weights) {
    const Tensor q = quantize_tensor(t, qc.weight_format);
    result.report.items.push_back({name, max_abs_diff(q, t)});
    t = q;
  }
  return result;
}

Tensor mean_vector(const Tensor& features) {
  if (features.rank() != 2 || features.dim(0) == 0) {
    throw DataError("mean_vector: need at least one feature row");
  }
  const std::size_t n = features.dim(0), d = features.dim(1);
  Tensor mean({d});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) mean[j] += features.at(i, j);
  for (std::size_t j = 0; j < d; ++j) mean[j] /= static_cast<double>(n);
  return mean;
}

StandardizeResult standardize(const Tensor& features, const Tensor& mean,
                              StandardizeMode mode,
                              const std::optional<QFormat>& quant) {
  if (features.rank() != 2) throw ShapeError("standardize: features must be [n, d]");
  mean.require_shape({features.dim(1)}, "standardize mean");
  const std::size_t n = features.dim(0), d = features.dim(1);
  StandardizeResult out{Tensor(features.shape()), 0};
  for (std::size_t i = 0; i < n; ++i) {
    double sq = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double v = features.at(i, j) - mean[j];
      out.features.at(i, j) = v;
      sq += v * v;
    }
    if (mode == StandardizeMode::kCenterNormalize) {
      if (sq > 0.0) {
        const double norm = std::sqrt(sq);
        for (std::size_t j = 0; j < d; ++j) out.features.at(i, j) /= norm;
      } else {
        ++out.degenerate_rows;
      }
    }
  }
  if (quant) out.features = quantize_tensor(out.features, *quant);
  return out;
}

PipelineResult evaluate_with_mean(const BackboneModel& model,
                                  const QuantConfig& qc, const Tensor& mean,
                                  const Tensor& pool_images,
                                  std::span<const EpisodePlan> plans,
                                  StandardizeMode mode) {
  const std::optional<QFormat> grid =
      qc.enabled ? std::optional<QFormat>(qc.activation_format) : std::nullopt;
  PipelineResult result;
  result.mean_vector = mean;
  const StandardizeResult std_features = standardize(
      extract_features(model, pool_images, qc), mean, mode, grid);
  result.degenerate_rows = std_features.degenerate_rows;
  result.accuracy = evaluate_features(plans, std_features.features, grid);
  return result;
}

PipelineResult evaluate_pipeline(const BackboneModel& model,
                                 const QuantConfig& qc,
                                 const Tensor& base_images,
                                 const Tensor& pool_images,
                                 std::span<const EpisodePlan> plans,
                                 StandardizeMode mode) {
  if (base_images.rank() != 4 || base_images.dim(0) == 0) {
    throw DataError("evaluate: empty base dataset");
  }
  const Tensor mean =
      maybe_quantize(mean_vector(extract_features(model, base_images, qc)), qc);
  return evaluate_with_mean(model, qc, mean, pool_images, plans, mode);
}

PtqResult run_ptq(const WeightStore& float_weights, const BackboneModel& arch,
                  const QuantConfig& qc, const Tensor& base_images,
                  const Tensor& pool_images, std::span<const EpisodePlan> plans,
                  StandardizeMode mode) {
  PtqResult result;
  TransferResult transfer = weight_transfer(float_weights, arch, qc);
  result.transfer = std::move(transfer.report);
  PipelineResult eval = evaluate_pipeline(transfer.model, qc, base_images,
                                          pool_images, plans, mode);
  result.accuracy = eval.accuracy;
  result.degenerate_rows = eval.degenerate_rows;
  result.artifacts.quantized_model = std::move(transfer.model);
  result.artifacts.mean_vector = std::move(eval.mean_vector);
  result.artifacts.quant = qc;
  result.artifacts.standardize = mode;
  result.artifacts.source_sha256 = sha256_hex(save_weights(float_weights));
  return result;
}

std::string artifacts_sidecar_json(const PtqArtifacts& a) {
  nlohmann::ordered_json j;
  j["kind"] = "qfx-ptq";
  j["quantized"] = a.quant.enabled;
  j["weight_format"] = a.quant.weight_format.to_string();
  j["activation_format"] = a.quant.activation_format.to_string();
  j["folded"] = a.quant.enabled;
  j["standardize"] = to_string(a.standardize);
  j["source_sha256"] = a.source_sha256;
  j["mean_vector"] = a.mean_vector.values();
  return j.dump(2) + "\n";
}

Sidecar parse_sidecar_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    Sidecar s;
    s.quant.enabled = j.at("quantized").get<bool>();
    s.quant.weight_format = QFormat::parse(j.at("weight_format").get<std::string>());
    s.quant.activation_format =
        QFormat::parse(j.at("activation_format").get<std::string>());
    s.folded = j.at("folded").get<bool>();
    s.standardize = parse_standardize_mode(j.at("standardize").get<std::string>());
    s.source_sha256 = j.at("source_sha256").get<std::string>();
    auto mean = j.at("mean_vector").get<std::vector<double>>();
    const std::size_t d = mean.size();
    s.mean_vector = Tensor({d}, std::move(mean));
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad PTQ sidecar: ") + e.what());
  }
}

}  // namespace qfx
