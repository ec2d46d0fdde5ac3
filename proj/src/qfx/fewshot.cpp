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

#include "qfx/fewshot.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>

#include "qfx/error.hpp"
#include "qfx/rng.hpp"

namespace qfx {

std::size_t Episode::dim() const {
  if (!support.empty() && !support.front().empty()) {
    return support.front().front().size();
  }
  return queries.empty() ? 0 : queries.front().z.size();
}

void Episode::validate() const {
  if (ways == 0 || shots == 0) throw DataError("episode: ways and shots must be positive");
  if (support.size() != ways) throw DataError("episode: support has wrong class count");
  const std::size_t d = dim();
  for (std::size_t i = 0; i < ways; ++i) {
    if (support[i].size() != shots) {
      throw DataError("episode: class " + std::to_string(i) + " has " +
                      std::to_string(support[i].size()) + " support vectors, expected " +
                      std::to_string(shots));
    }
    for (const auto& z : support[i]) {
      if (z.size() != d) throw DataError("episode: inconsistent feature dimension");
    }
  }
  for (const auto& q : queries) {
    if (q.z.size() != d) throw DataError("episode: inconsistent query dimension");
    if (q.label < 0 || static_cast<std::size_t>(q.label) >= ways) {
      throw DataError("episode: query label out of range");
    }
  }
}

ClassCenters class_means(const Episode& episode,
                         const std::optional<QFormat>& quant) {
  episode.validate();
  const std::size_t d = episode.dim();
  ClassCenters out{Tensor({episode.ways, d})};
  for (std::size_t i = 0; i < episode.ways; ++i) {
    const auto& set = episode.support[i];
    if (set.empty()) throw DataError("class_means: empty class");
    for (std::size_t j = 0; j < d; ++j) {
      double sum = 0.0;
      for (const auto& z : set) sum += quant ? quantize(z[j], *quant) : z[j];
      const double mean = sum / static_cast<double>(set.size());
      out.centers.at(i, j) = quant ? quantize(mean, *quant) : mean;
    }
  }
  return out;
}

std::size_t classify(std::span<const double> z, const ClassCenters& centers,
                     const std::optional<QFormat>& quant) {
  const std::size_t n = centers.centers.dim(0), d = centers.centers.dim(1);
  if (z.size() != d) {
    throw ShapeError("classify: feature has dimension " + std::to_string(z.size()) +
                     ", centers have " + std::to_string(d));
  }
  std::size_t best = 0;
  double best_dist = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double dist = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      double diff;
      if (quant) {
        diff = quantize(quantize(z[j], *quant) - centers.centers.at(i, j), *quant);
      } else {
        diff = z[j] - centers.centers.at(i, j);
      }
      dist += diff * diff;
    }
    if (i == 0 || dist < best_dist) {
      best = i;
      best_dist = dist;
    }
  }
  return best;
}

std::string AccuracyStat::to_string() const {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f\xC2\xB1%.2f", mean, half_width);
  return buf;
}

AccuracyStat summarize(std::span<const double> acc) {
  AccuracyStat stat;
  stat.episodes = acc.size();
  if (acc.empty()) return stat;
  double sum = 0.0;
  for (double a : acc) sum += a;
  stat.mean = sum / static_cast<double>(acc.size());
  if (acc.size() > 1) {
    double sq = 0.0;
    for (double a : acc) sq += (a - stat.mean) * (a - stat.mean);
    const double sd = std::sqrt(sq / static_cast<double>(acc.size() - 1));
    stat.half_width = 1.96 * sd / std::sqrt(static_cast<double>(acc.size()));
  }
  return stat;
}

std::vector<EpisodePlan> sample_episodes(std::span<const int> labels,
                                         std::size_t num_classes,
                                         std::size_t ways, std::size_t shots,
                                         std::size_t queries,
                                         std::size_t count,
                                         std::uint64_t seed) {
  if (ways == 0 || shots == 0) {
    throw ConfigError("sample_episodes: ways and shots must be positive");
  }
  if (ways > num_classes) {
    throw DataError("sample_episodes: " + std::to_string(ways) +
                    "-way episodes need at least that many classes, pool has " +
                    std::to_string(num_classes));
  }
  std::vector<std::vector<std::size_t>> by_class(num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int l = labels[i];
    if (l < 0 || static_cast<std::size_t>(l) >= num_classes) {
      throw DataError("sample_episodes: label out of range");
    }
    by_class[static_cast<std::size_t>(l)].push_back(i);
  }
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (by_class[c].size() < shots + queries) {
      throw DataError("sample_episodes: class " + std::to_string(c) + " has " +
                      std::to_string(by_class[c].size()) +
                      " samples, need shots+queries = " +
                      std::to_string(shots + queries));
    }
  }

  std::vector<EpisodePlan> plans;
  plans.reserve(count);
  std::vector<int> class_ids(num_classes);
  for (std::size_t e = 0; e < count; ++e) {
    CounterRng rng(derive_key(seed, e));
    std::iota(class_ids.begin(), class_ids.end(), 0);
    // Partial Fisher-Yates: the first `ways` entries are the draw.
    for (std::size_t i = 0; i < ways; ++i) {
      const std::size_t j = i + rng.below(num_classes - i);
      std::swap(class_ids[i], class_ids[j]);
    }
    EpisodePlan plan;
    for (std::size_t i = 0; i < ways; ++i) {
      std::vector<std::size_t> pool = by_class[static_cast<std::size_t>(class_ids[i])];
      const std::size_t take = shots + queries;
      for (std::size_t t = 0; t < take; ++t) {
        const std::size_t j = t + rng.below(pool.size() - t);
        std::swap(pool[t], pool[j]);
      }
      plan.classes.push_back(class_ids[i]);
      plan.support.emplace_back(pool.begin(), pool.begin() + shots);
      plan.queries.emplace_back(pool.begin() + shots, pool.begin() + take);
    }
    plans.push_back(std::move(plan));
  }
  return plans;
}

Episode materialize(const EpisodePlan& plan, const Tensor& features) {
  const std::size_t d = features.dim(1);
  auto row = [&](std::size_t i) {
    if (i >= features.dim(0)) throw DataError("episode index outside feature pool");
    const auto src = features.data().subspan(i * d, d);
    return FeatureVector(src.begin(), src.end());
  };
  Episode ep;
  ep.ways = plan.classes.size();
  ep.shots = plan.support.empty() ? 0 : plan.support.front().size();
  for (std::size_t c = 0; c < ep.ways; ++c) {
    auto& set = ep.support.emplace_back();
    for (std::size_t i : plan.support[c]) set.push_back(row(i));
    for (std::size_t i : plan.queries[c]) {
      ep.queries.push_back({row(i), static_cast<int>(c)});
    }
  }
  return ep;
}

double episode_accuracy(const Episode& episode,
                        const std::optional<QFormat>& quant) {
  const ClassCenters centers = class_means(episode, quant);
  if (episode.queries.empty()) return 0.0;
  std::size_t correct = 0;
  for (const auto& q : episode.queries) {
    correct += classify(q.z, centers, quant) == static_cast<std::size_t>(q.label);
  }
  return 100.0 * static_cast<double>(correct) /
         static_cast<double>(episode.queries.size());
}

AccuracyStat evaluate_features(std::span<const EpisodePlan> plans,
                               const Tensor& features,
                               const std::optional<QFormat>& quant,
                               std::vector<double>* per_episode) {
  if (plans.empty()) throw DataError("evaluate: empty episode stream");
  std::vector<double> acc;
  acc.reserve(plans.size());
  for (const auto& plan : plans) {
    acc.push_back(episode_accuracy(materialize(plan, features), quant));
  }
  if (per_episode) *per_episode = acc;
  return summarize(acc);
}

}  // namespace qfx
