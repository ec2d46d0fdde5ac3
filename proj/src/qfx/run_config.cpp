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

#include "qfx/run_config.hpp"

#include <json.hpp>

#include <algorithm>
#include <set>

#include "qfx/error.hpp"

namespace qfx {

using nlohmann::ordered_json;

std::string to_string(Command c) {
  switch (c) {
    case Command::kTrain: return "train";
    case Command::kPtq: return "ptq";
    case Command::kEval: return "eval";
    case Command::kSweep: return "sweep";
  }
  return "?";
}

std::string to_string(Mode m) {
  switch (m) {
    case Mode::kFloat: return "float";
    case Mode::kQat: return "qat";
    case Mode::kPtq: return "ptq";
  }
  return "?";
}

Command parse_command(const std::string& text) {
  for (Command c : {Command::kTrain, Command::kPtq, Command::kEval, Command::kSweep}) {
    if (to_string(c) == text) return c;
  }
  throw ConfigError("unknown command '" + text + "' (expected train, ptq, eval or sweep)");
}

Mode parse_mode(const std::string& text) {
  for (Mode m : {Mode::kFloat, Mode::kQat, Mode::kPtq}) {
    if (to_string(m) == text) return m;
  }
  throw ConfigError("unknown mode '" + text + "' (expected float, qat or ptq)");
}

std::vector<QFormat> default_sweep_formats() {
  return {{3, 3}, {4, 4}, {5, 5}, {6, 6}, {7, 7}, {8, 8}, {16, 16}};
}

void RunConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError(msg); };
  if (arch != "resnet12" && arch != "resnet_lite") {
    fail("unknown arch '" + arch + "' (expected resnet12 or resnet_lite)");
  }
  if (base_width == 0) fail("base_width must be positive");
  if (modes.empty()) fail("at least one mode is required");
  std::set<Mode> unique(modes.begin(), modes.end());
  if (unique.size() != modes.size()) fail("duplicate mode");
  const std::string cmd = to_string(command);
  if (command != Command::kSweep && modes.size() != 1) {
    fail(cmd + " takes exactly one --mode");
  }
  switch (command) {
    case Command::kTrain:
      if (mode() == Mode::kPtq) {
        fail("train supports --mode float or qat; use the ptq command for PTQ");
      }
      break;
    case Command::kPtq:
      if (mode() != Mode::kPtq) fail("the ptq command requires --mode ptq");
      if (weights.empty()) fail("ptq needs float source weights (--weights)");
      break;
    case Command::kEval:
      if (mode() == Mode::kPtq && weights.empty()) {
        fail("eval --mode ptq needs float source weights (--weights)");
      }
      break;
    case Command::kSweep:
      if ((unique.count(Mode::kQat) || unique.count(Mode::kPtq)) && formats.empty()) {
        fail("sweep with qat/ptq rows needs at least one format");
      }
      if (std::set<QFormat>(formats.begin(), formats.end()).size() != formats.size()) {
        fail("duplicate sweep format");
      }
      break;
  }
  if (protocol.ways < 2) fail("ways must be >= 2");
  if (protocol.shots == 0 || protocol.queries == 0 || protocol.episodes == 0) {
    fail("shots, queries and episodes must be positive");
  }
  if (dataset.base_classes < 2) fail("dataset needs at least 2 base classes");
  if (dataset.novel_classes < protocol.ways) {
    fail("dataset has " + std::to_string(dataset.novel_classes) +
         " novel classes, fewer than --ways " + std::to_string(protocol.ways));
  }
  if (dataset.path.empty()) {
    if (dataset.samples_per_class < protocol.shots + protocol.queries) {
      fail("samples_per_class must be >= shots + queries");
    }
    const std::size_t blocks = arch == "resnet12" ? 4 : 2;
    if ((dataset.image_size >> blocks) == 0) {
      fail("image_size " + std::to_string(dataset.image_size) +
           " is too small for " + arch);
    }
    if (!(dataset.noise >= 0.0)) fail("noise must be >= 0");
  }
  if (training.batch_size == 0) fail("batch_size must be positive");
  if (!(training.learning_rate >= 0.0)) fail("learning_rate must be >= 0");
  if (!(training.momentum >= 0.0 && training.momentum < 1.0)) {
    fail("momentum must be in [0, 1)");
  }
  if (!(training.weight_decay >= 0.0)) fail("weight_decay must be >= 0");
}

std::string to_json(const RunConfig& c, int indent) {
  ordered_json j;
  j["command"] = to_string(c.command);
  j["arch"] = c.arch;
  j["base_width"] = c.base_width;
  j["modes"] = ordered_json::array();
  for (Mode m : c.modes) j["modes"].push_back(to_string(m));
  j["qformat"] = c.qformat.to_string();
  j["formats"] = ordered_json::array();
  for (const auto& f : c.formats) j["formats"].push_back(f.to_string());
  j["protocol"] = {{"ways", c.protocol.ways},
                   {"shots", c.protocol.shots},
                   {"queries", c.protocol.queries},
                   {"episodes", c.protocol.episodes}};
  j["dataset"] = {{"path", c.dataset.path},
                  {"base_classes", c.dataset.base_classes},
                  {"novel_classes", c.dataset.novel_classes},
                  {"samples_per_class", c.dataset.samples_per_class},
                  {"image_size", c.dataset.image_size},
                  {"noise", c.dataset.noise},
                  {"orientation_jitter", c.dataset.orientation_jitter},
                  {"frequency_jitter", c.dataset.frequency_jitter},
                  {"seed", c.dataset.seed}};
  j["training"] = {{"epochs", c.training.epochs},
                   {"batch_size", c.training.batch_size},
                   {"learning_rate", c.training.learning_rate},
                   {"momentum", c.training.momentum},
                   {"weight_decay", c.training.weight_decay},
                   {"cosine_decay", c.training.cosine_decay}};
  j["standardize"] = to_string(c.standardize);
  j["seed"] = c.seed;
  j["weights"] = c.weights;
  j["out"] = c.out;
  j["timestamp"] = c.timestamp;
  return j.dump(indent);
}

namespace {

void reject_unknown(const ordered_json& j, std::initializer_list<const char*> keys,
                    const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (std::none_of(keys.begin(), keys.end(),
                     [&](const char* k) { return key == k; })) {
      throw ConfigError("unknown config key '" + where + key + "'");
    }
  }
}

template <typename T>
void read(const ordered_json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

RunConfig run_config_from_json(const std::string& text) {
  RunConfig c;
  try {
    const ordered_json j = ordered_json::parse(text);
    reject_unknown(j,
                   {"command", "arch", "base_width", "modes", "qformat",
                    "formats", "protocol", "dataset", "training", "standardize",
                    "seed", "weights", "out", "timestamp"},
                   "");
    if (j.contains("command")) c.command = parse_command(j.at("command").get<std::string>());
    read(j, "arch", c.arch);
    read(j, "base_width", c.base_width);
    if (j.contains("modes")) {
      c.modes.clear();
      for (const auto& m : j.at("modes")) c.modes.push_back(parse_mode(m.get<std::string>()));
    }
    if (j.contains("qformat")) c.qformat = QFormat::parse(j.at("qformat").get<std::string>());
    if (j.contains("formats")) {
      for (const auto& f : j.at("formats")) c.formats.push_back(QFormat::parse(f.get<std::string>()));
    }
    if (j.contains("protocol")) {
      const auto& p = j.at("protocol");
      reject_unknown(p, {"ways", "shots", "queries", "episodes"}, "protocol.");
      read(p, "ways", c.protocol.ways);
      read(p, "shots", c.protocol.shots);
      read(p, "queries", c.protocol.queries);
      read(p, "episodes", c.protocol.episodes);
    }
    if (j.contains("dataset")) {
      const auto& d = j.at("dataset");
      reject_unknown(d,
                     {"path", "base_classes", "novel_classes", "samples_per_class",
                      "image_size", "noise", "orientation_jitter",
                      "frequency_jitter", "seed"},
                     "dataset.");
      read(d, "path", c.dataset.path);
      read(d, "base_classes", c.dataset.base_classes);
      read(d, "novel_classes", c.dataset.novel_classes);
      read(d, "samples_per_class", c.dataset.samples_per_class);
      read(d, "image_size", c.dataset.image_size);
      read(d, "noise", c.dataset.noise);
      read(d, "orientation_jitter", c.dataset.orientation_jitter);
      read(d, "frequency_jitter", c.dataset.frequency_jitter);
      read(d, "seed", c.dataset.seed);
    }
    if (j.contains("training")) {
      const auto& t = j.at("training");
      reject_unknown(t,
                     {"epochs", "batch_size", "learning_rate", "momentum",
                      "weight_decay", "cosine_decay"},
                     "training.");
      read(t, "epochs", c.training.epochs);
      read(t, "batch_size", c.training.batch_size);
      read(t, "learning_rate", c.training.learning_rate);
      read(t, "momentum", c.training.momentum);
      read(t, "weight_decay", c.training.weight_decay);
      read(t, "cosine_decay", c.training.cosine_decay);
    }
    if (j.contains("standardize")) {
      c.standardize = parse_standardize_mode(j.at("standardize").get<std::string>());
    }
    read(j, "seed", c.seed);
    read(j, "weights", c.weights);
    read(j, "out", c.out);
    read(j, "timestamp", c.timestamp);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad run config: ") + e.what());
  }
  c.validate();
  return c;
}

}  // namespace qfx
