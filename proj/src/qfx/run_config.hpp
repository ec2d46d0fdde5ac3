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

#ifndef QFX_RUN_CONFIG_HPP_
#define QFX_RUN_CONFIG_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "qfx/fixedpoint.hpp"
#include "qfx/ptq.hpp"

namespace qfx {

enum class Command { kTrain, kPtq, kEval, kSweep };
enum class Mode { kFloat, kQat, kPtq };

std::string to_string(Command c);
std::string to_string(Mode m);
Command parse_command(const std::string& text);
Mode parse_mode(const std::string& text);

struct ProtocolConfig {
  std::size_t ways = 5;
  std::size_t shots = 1;
  std::size_t queries = 15;
  std::size_t episodes = 2000;
  friend bool operator==(const ProtocolConfig&, const ProtocolConfig&) = default;
};

/// Where images come from. An empty `path` selects the synthetic gratings.
/// The first `base_classes` classes train the backbone; the next
/// `novel_classes` feed the few-shot episodes.
struct DatasetConfig {
  std::string path;
  std::size_t base_classes = 32;
  std::size_t novel_classes = 16;
  std::size_t samples_per_class = 40;
  std::size_t image_size = 16;
  double noise = 0.4;
  double orientation_jitter = 0.2;
  double frequency_jitter = 0.15;
  std::uint64_t seed = 7;
  friend bool operator==(const DatasetConfig&, const DatasetConfig&) = default;
};

struct TrainingConfig {
  std::size_t epochs = 3;
  std::size_t batch_size = 32;
  double learning_rate = 0.05;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  bool cosine_decay = true;
  friend bool operator==(const TrainingConfig&, const TrainingConfig&) = default;
};

/// Everything a command needs; reports embed it verbatim so that any
/// output can be regenerated from its own header.
struct RunConfig {
  Command command = Command::kEval;
  std::string arch = "resnet_lite";
  std::size_t base_width = 64;
  /// Exactly one for train/ptq/eval; any non-empty subset for sweep.
  std::vector<Mode> modes{Mode::kFloat};
  QFormat qformat{8, 8};
  /// Sweep formats; ignored by other commands.
  std::vector<QFormat> formats;
  ProtocolConfig protocol;
  DatasetConfig dataset;
  TrainingConfig training;
  StandardizeMode standardize = StandardizeMode::kCenterNormalize;
  std::uint64_t seed = 1;
  std::string weights;  // input checkpoint (ptq, eval)
  std::string out;      // output directory; empty writes nothing
  std::string timestamp;  // copied into report metadata when set

  /// Rejects inconsistent combinations. Throws ConfigError.
  void validate() const;

  Mode mode() const { return modes.front(); }

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

/// Serialized form with every field present, keys in a fixed order.
std::string to_json(const RunConfig& cfg, int indent = -1);
/// Missing keys take their defaults; unknown keys are rejected.
/// Validates the result. Throws ConfigError.
RunConfig run_config_from_json(const std::string& text);

/// The Q3.3 ... Q8.8, Q16.16 row set.
std::vector<QFormat> default_sweep_formats();

}  // namespace qfx

#endif  // QFX_RUN_CONFIG_HPP_
