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

#ifndef QFX_FEWSHOT_HPP_
#define QFX_FEWSHOT_HPP_

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qfx/fixedpoint.hpp"
#include "qfx/tensor.hpp"

namespace qfx {

using FeatureVector = std::vector<double>;

struct Query {
  FeatureVector z;
  int label = 0;  // class index within the episode
};

/// One n-way k-shot task over feature vectors.
struct Episode {
  std::size_t ways = 0;
  std::size_t shots = 0;
  std::vector<std::vector<FeatureVector>> support;  // [ways][shots]
  std::vector<Query> queries;

  std::size_t dim() const;
  /// Throws DataError on ragged support sets or out-of-range labels.
  void validate() const;
};

/// Class barycenters, one row per class.
struct ClassCenters {
  Tensor centers;  // [ways, dim]
};

/// Mean of each support set. With `quant`, support vectors are quantized
/// first and the means are quantized after.
ClassCenters class_means(const Episode& episode,
                         const std::optional<QFormat>& quant = std::nullopt);

/// Index of the nearest center in Euclidean distance, lowest index on ties.
/// With `quant`, z and each difference are quantized before the (exact)
/// squared-distance accumulation.
std::size_t classify(std::span<const double> z, const ClassCenters& centers,
                     const std::optional<QFormat>& quant = std::nullopt);

/// Mean accuracy (percent) with a normal-approximation 95% interval:
/// half_width = 1.96 * s / sqrt(episodes), s the sample standard deviation.
struct AccuracyStat {
  double mean = 0.0;
  double half_width = 0.0;
  std::size_t episodes = 0;
  std::size_t runs = 1;

  /// "mean±half_width" with two decimals.
  std::string to_string() const;
};

AccuracyStat summarize(std::span<const double> episode_accuracies);

/// Pool indices making up one episode. classes[i] is the pool label
/// playing episode class i.
struct EpisodePlan {
  std::vector<int> classes;
  std::vector<std::vector<std::size_t>> support;  // [ways][shots]
  std::vector<std::vector<std::size_t>> queries;  // [ways][queries]
};

/// Uniform sampling without replacement within each episode; episode e
/// draws from its own counter stream, so the result depends only on the
/// arguments. Throws DataError when a class has fewer than k+q samples.
std::vector<EpisodePlan> sample_episodes(std::span<const int> labels,
                                         std::size_t num_classes,
                                         std::size_t ways, std::size_t shots,
                                         std::size_t queries,
                                         std::size_t count,
                                         std::uint64_t seed);

/// Builds the episode from rows of a [pool, dim] feature matrix.
Episode materialize(const EpisodePlan& plan, const Tensor& features);

/// Accuracy (percent) of NCM on one episode.
double episode_accuracy(const Episode& episode,
                        const std::optional<QFormat>& quant = std::nullopt);

/// NCM over every plan, statistics merged in plan order. Optionally
/// returns the per-episode accuracies.
AccuracyStat evaluate_features(std::span<const EpisodePlan> plans,
                               const Tensor& features,
                               const std::optional<QFormat>& quant,
                               std::vector<double>* per_episode = nullptr);

}  // namespace qfx

#endif  // QFX_FEWSHOT_HPP_
