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

#ifndef QFX_COMMANDS_HPP_
#define QFX_COMMANDS_HPP_

#include <functional>
#include <string>
#include <vector>

#include "qfx/backbone.hpp"
#include "qfx/dataset.hpp"
#include "qfx/fewshot.hpp"
#include "qfx/report.hpp"
#include "qfx/run_config.hpp"
#include "qfx/training.hpp"

namespace qfx {

using LogFn = std::function<void(const std::string&)>;

/// Images and episode plans shared by every row of a command.
struct ExperimentData {
  LabeledImages base;   // pre-training classes
  LabeledImages novel;  // few-shot evaluation pool
  std::vector<EpisodePlan> plans;
};

ExperimentData load_experiment_data(const RunConfig& cfg);

/// Untrained backbone for cfg (arch, width, channels of `data`), seeded
/// from cfg.seed.
BackboneModel initial_model(const RunConfig& cfg, const ExperimentData& data);
TrainConfig train_config(const RunConfig& cfg, const QuantConfig& quant);

struct TrainedModel {
  BackboneModel model;  // weights rounded to float32
  TrainResult result;
};

/// Pre-trains a fresh backbone on the base classes.
TrainedModel train_backbone(const RunConfig& cfg, const ExperimentData& data,
                            const QuantConfig& quant, const LogFn& log = {});

/// Files written under cfg.out (none when it is empty):
///   train: weights.qfxw, loss.csv
///   ptq:   ptq_weights.qfxw, ptq_weights.qfxw.json
///   sweep: weights.qfxw (when it trained the float model)
/// and report.{csv,md,json} for every command.
Report cmd_train(const RunConfig& cfg, const LogFn& log = {});
Report cmd_ptq(const RunConfig& cfg, const LogFn& log = {});
Report cmd_eval(const RunConfig& cfg, const LogFn& log = {});
Report cmd_sweep(const RunConfig& cfg, const LogFn& log = {});

/// Dispatches on cfg.command after validating it.
Report run_command(const RunConfig& cfg, const LogFn& log = {});

/// The sidecar path belonging to a PTQ weight file.
std::string sidecar_path(const std::string& weights_path);

}  // namespace qfx

#endif  // QFX_COMMANDS_HPP_
