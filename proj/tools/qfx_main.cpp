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

// qfx command-line driver. Builds a run configuration from defaults, an
// optional JSON file and flags, then hands it to the C API.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "qfx/qfx.h"

namespace {

using nlohmann::ordered_json;

struct Flags {
  std::string config_file;
  std::optional<int> int_bits, frac_bits;
  std::optional<std::string> qformat;
  std::vector<std::string> modes;
  std::vector<std::string> formats;
  std::optional<std::string> arch;
  std::optional<std::size_t> width;
  std::optional<std::size_t> ways, shots, queries, episodes;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> dataset, weights, out, timestamp, standardize;
  std::optional<std::size_t> epochs, batch_size;
  std::optional<double> lr;
  bool print_config = false;
  bool quiet = false;
};

// Message for a status; also the process exit code.
int report_failure(qfx_status status, const char* what) {
  std::fprintf(stderr, "qfx: %s%s%s\n", what, *qfx_last_error() ? ": " : "",
               qfx_last_error());
  return static_cast<int>(status);
}

struct CString {
  char* p = nullptr;
  ~CString() { qfx_string_free(p); }
};

void add_options(CLI::App& sub, Flags& f) {
  sub.add_option("--config", f.config_file, "JSON run configuration");
  sub.add_option("--int-bits", f.int_bits, "Integer bits, sign included");
  sub.add_option("--frac-bits", f.frac_bits, "Fraction bits");
  sub.add_option("--qformat", f.qformat, "Fixed-point format, e.g. Q4.4")
      ->excludes(sub.get_option("--int-bits"))
      ->excludes(sub.get_option("--frac-bits"));
  sub.add_option("--mode", f.modes, "float, qat or ptq (repeatable for sweep)");
  sub.add_option("--arch", f.arch, "resnet_lite or resnet12");
  sub.add_option("--width", f.width, "Base channel width");
  sub.add_option("--ways", f.ways, "Classes per episode");
  sub.add_option("--shots", f.shots, "Support samples per class");
  sub.add_option("--queries", f.queries, "Query samples per class");
  sub.add_option("--episodes", f.episodes, "Number of episodes");
  sub.add_option("--seed", f.seed, "Run seed");
  sub.add_option("--dataset", f.dataset, "Image directory; synthetic when omitted");
  sub.add_option("--weights", f.weights, "Input weight file");
  sub.add_option("--out", f.out, "Output directory");
  sub.add_option("--epochs", f.epochs, "Training epochs");
  sub.add_option("--batch-size", f.batch_size, "Training batch size");
  sub.add_option("--lr", f.lr, "Learning rate");
  sub.add_option("--standardize", f.standardize, "center_normalize or center_only");
  sub.add_option("--timestamp", f.timestamp, "Text recorded in report metadata");
  sub.add_flag("--print-config", f.print_config, "Print the resolved config and exit");
  sub.add_flag("-q,--quiet", f.quiet, "No progress messages");
}

// Flags override the config file, which overrides the defaults.
ordered_json resolve(const std::string& command, const Flags& f) {
  CString defaults;
  if (qfx_status s = qfx_config_default(command.c_str(), &defaults.p); s != QFX_OK) {
    throw s;
  }
  ordered_json j = ordered_json::parse(defaults.p);
  if (!f.config_file.empty()) {
    std::ifstream in(f.config_file);
    if (!in) {
      std::fprintf(stderr, "qfx: cannot read config '%s'\n", f.config_file.c_str());
      throw QFX_ERR_CONFIG;
    }
    ordered_json file;
    try {
      file = ordered_json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      std::fprintf(stderr, "qfx: config '%s': %s\n", f.config_file.c_str(), e.what());
      throw QFX_ERR_CONFIG;
    }
    j.merge_patch(file);
    j["command"] = command;
  }
  if (f.qformat) {
    j["qformat"] = *f.qformat;
  } else if (f.int_bits || f.frac_bits) {
    if (!f.int_bits || !f.frac_bits) {
      std::fprintf(stderr, "qfx: --int-bits and --frac-bits go together\n");
      throw QFX_ERR_CONFIG;
    }
    j["qformat"] = "Q" + std::to_string(*f.int_bits) + "." + std::to_string(*f.frac_bits);
  }
  if (!f.modes.empty()) j["modes"] = f.modes;
  if (!f.formats.empty()) j["formats"] = f.formats;
  if (command == "sweep" && f.formats.empty() && (f.qformat || f.int_bits)) {
    j["formats"] = ordered_json::array({j["qformat"]});
  }
  if (f.arch) j["arch"] = *f.arch;
  if (f.width) j["base_width"] = *f.width;
  if (f.ways) j["protocol"]["ways"] = *f.ways;
  if (f.shots) j["protocol"]["shots"] = *f.shots;
  if (f.queries) j["protocol"]["queries"] = *f.queries;
  if (f.episodes) j["protocol"]["episodes"] = *f.episodes;
  if (f.seed) j["seed"] = *f.seed;
  if (f.dataset) j["dataset"]["path"] = *f.dataset;
  if (f.weights) j["weights"] = *f.weights;
  if (f.out) j["out"] = *f.out;
  if (f.epochs) j["training"]["epochs"] = *f.epochs;
  if (f.batch_size) j["training"]["batch_size"] = *f.batch_size;
  if (f.lr) j["training"]["learning_rate"] = *f.lr;
  if (f.standardize) j["standardize"] = *f.standardize;
  if (f.timestamp) j["timestamp"] = *f.timestamp;
  return j;
}

void log_to_stderr(const char* message, void*) {
  std::fprintf(stderr, "qfx: %s\n", message);
}

int run(const std::string& command, const Flags& f) {
  ordered_json j;
  try {
    j = resolve(command, f);
  } catch (qfx_status s) {
    return s == QFX_ERR_CONFIG ? static_cast<int>(s) : report_failure(s, "defaults");
  }
  qfx_config* raw = nullptr;
  if (qfx_status s = qfx_config_from_json(j.dump().c_str(), &raw); s != QFX_OK) {
    return report_failure(s, "invalid configuration");
  }
  std::unique_ptr<qfx_config, decltype(&qfx_config_free)> cfg(raw, qfx_config_free);
  if (f.print_config) {
    CString text;
    if (qfx_status s = qfx_config_to_json(cfg.get(), 2, &text.p); s != QFX_OK) {
      return report_failure(s, "config");
    }
    std::printf("%s\n", text.p);
    return 0;
  }
  qfx_report* rep_raw = nullptr;
  if (qfx_status s = qfx_run(cfg.get(), f.quiet ? nullptr : log_to_stderr, nullptr, &rep_raw);
      s != QFX_OK) {
    return report_failure(s, command.c_str());
  }
  std::unique_ptr<qfx_report, decltype(&qfx_report_free)> rep(rep_raw, qfx_report_free);
  CString md;
  if (qfx_status s = qfx_report_markdown(rep.get(), &md.p); s != QFX_OK) {
    return report_failure(s, "report");
  }
  std::fputs(md.p, stdout);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fixed-point quantization and few-shot evaluation of small ResNets"};
  app.set_version_flag("--version", std::string(qfx_version()));
  app.require_subcommand(1);

  Flags flags;
  std::string chosen;
  const std::vector<std::pair<std::string, std::string>> commands = {
      {"train", "Pre-train a backbone (float or QAT) and evaluate it"},
      {"ptq", "Quantize float weights after training and evaluate"},
      {"eval", "Evaluate weights (or a fresh model) on few-shot episodes"},
      {"sweep", "Accuracy table across fixed-point formats"},
  };
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    add_options(*sub, flags);
    if (name == "sweep") {
      sub->add_option("--formats", flags.formats, "Formats to sweep, e.g. Q3.3 Q4.4")
          ->delimiter(',');
    }
    sub->callback([&chosen, n = name] { chosen = n; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return static_cast<int>(QFX_ERR_CONFIG);
  }
  return run(chosen, flags);
}
