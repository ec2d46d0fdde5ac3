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

#include "qfx/commands.hpp"

#include <algorithm>
#include <filesystem>
#include <optional>

#include "qfx/error.hpp"
#include "qfx/ptq.hpp"
#include "qfx/rng.hpp"
#include "qfx/weights_io.hpp"

namespace qfx {
namespace {

// Stream tags under cfg.seed.
constexpr std::uint64_t kInitTag = 1;
constexpr std::uint64_t kOrderTag = 2;
constexpr std::uint64_t kEpisodeTag = 3;
constexpr std::uint64_t kHeadTag = 4;

namespace fs = std::filesystem;

void say(const LogFn& log, const std::string& msg) {
  if (log) log(msg);
}

void write_report(const RunConfig& cfg, const Report& report) {
  if (cfg.out.empty()) return;
  const fs::path dir(cfg.out);
  write_text_file(dir / "report.csv", report.to_csv());
  write_text_file(dir / "report.md", report.to_markdown());
  write_text_file(dir / "report.json", report.to_json());
}

void prepare_out(const RunConfig& cfg) {
  if (cfg.out.empty()) return;
  std::error_code ec;
  fs::create_directories(cfg.out, ec);
  if (ec) throw DataError("cannot create output directory '" + cfg.out + "': " + ec.message());
}

QuantConfig quant_for(const QFormat& f) { return QuantConfig::uniform(f); }

ReportRow row_from(Mode mode, const std::optional<QFormat>& f,
                   const PipelineResult& r) {
  ReportRow row;
  row.mode = mode;
  row.format = f;
  row.accuracy = r.accuracy;
  row.degenerate_rows = r.degenerate_rows;
  return row;
}

void note_degenerate(Report& report, const ReportRow& row, const LogFn& log) {
  if (row.degenerate_rows == 0) return;
  const std::string msg =
      to_string(row.mode) + (row.format ? " " + row.format->to_string() : "") +
      ": " + std::to_string(row.degenerate_rows) +
      " features equal to the mean vector were left unnormalized";
  report.add_note(msg);
  say(log, "warning: " + msg);
}

std::string failure_status(const Error& e) {
  return "failed (" + std::string(to_string(e.kind())) + "): " + e.what();
}

// Loads a plain checkpoint into the architecture of cfg.
BackboneModel load_checkpoint(const RunConfig& cfg, const ExperimentData& data) {
  BackboneModel arch = initial_model(cfg, data);
  arch.weights.clear();
  return weight_transfer(load_weights_file(cfg.weights), arch,
                         QuantConfig::disabled())
      .model;
}

PipelineResult evaluate(const BackboneModel& model, const QuantConfig& qc,
                        const RunConfig& cfg, const ExperimentData& data) {
  return evaluate_pipeline(model, qc, data.base.images, data.novel.images,
                           data.plans, cfg.standardize);
}

}  // namespace

std::string sidecar_path(const std::string& weights_path) {
  return weights_path + ".json";
}

ExperimentData load_experiment_data(const RunConfig& cfg) {
  const auto& d = cfg.dataset;
  LabeledImages all;
  if (d.path.empty()) {
    SyntheticDatasetSpec spec;
    spec.classes = d.base_classes + d.novel_classes;
    spec.samples_per_class = d.samples_per_class;
    spec.image_size = d.image_size;
    spec.seed = d.seed;
    spec.noise = d.noise;
    spec.orientation_jitter = d.orientation_jitter;
    spec.frequency_jitter = d.frequency_jitter;
    all = generate_synthetic(spec);
  } else {
    all = load_cifar_like(d.path);
    if (all.num_classes < d.base_classes + d.novel_classes) {
      throw DataError("dataset '" + d.path + "' has " +
                      std::to_string(all.num_classes) + " classes, " +
                      std::to_string(d.base_classes + d.novel_classes) +
                      " needed (base + novel)");
    }
  }
  ExperimentData data;
  data.base = all.class_range(0, static_cast<int>(d.base_classes));
  data.novel = all.class_range(static_cast<int>(d.base_classes),
                               static_cast<int>(d.novel_classes));
  const auto& p = cfg.protocol;
  data.plans = sample_episodes(data.novel.labels, data.novel.num_classes,
                               p.ways, p.shots, p.queries, p.episodes,
                               derive_key(cfg.seed, kEpisodeTag));
  return data;
}

BackboneModel initial_model(const RunConfig& cfg, const ExperimentData& data) {
  BackboneModel model =
      build_arch(cfg.arch, data.base.images.dim(1), cfg.base_width);
  init_weights(model, derive_key(cfg.seed, kInitTag));
  return model;
}

TrainConfig train_config(const RunConfig& cfg, const QuantConfig& quant) {
  TrainConfig tc;
  tc.epochs = cfg.training.epochs;
  tc.batch_size = cfg.training.batch_size;
  tc.learning_rate = cfg.training.learning_rate;
  tc.momentum = cfg.training.momentum;
  tc.weight_decay = cfg.training.weight_decay;
  tc.cosine_decay = cfg.training.cosine_decay;
  tc.seed = derive_key(cfg.seed, kOrderTag);
  tc.quant = quant;
  return tc;
}

TrainedModel train_backbone(const RunConfig& cfg, const ExperimentData& data,
                            const QuantConfig& quant, const LogFn& log) {
  TrainedModel out{initial_model(cfg, data), {}};
  LinearHead head = LinearHead::create(data.base.num_classes,
                                       out.model.feature_dim,
                                       derive_key(cfg.seed, kHeadTag));
  say(log, "training " + cfg.arch +
               (quant.enabled ? " (qat " + quant.weight_format.to_string() + ")"
                              : " (float)") +
               " for " + std::to_string(cfg.training.epochs) + " epochs");
  out.result = train(out.model, head, data.base, train_config(cfg, quant));
  if (!out.result.history.empty()) {
    const auto& last = out.result.history.back();
    say(log, "final batch loss " + std::to_string(last.loss));
  }
  out.model.weights = round_to_float32(out.model.weights);
  return out;
}

Report cmd_train(const RunConfig& cfg, const LogFn& log) {
  prepare_out(cfg);
  const ExperimentData data = load_experiment_data(cfg);
  const QuantConfig qc = cfg.mode() == Mode::kQat ? quant_for(cfg.qformat)
                                                  : QuantConfig::disabled();
  TrainedModel trained = train_backbone(cfg, data, qc, log);
  if (!cfg.out.empty()) {
    save_weights_file(trained.model.weights, fs::path(cfg.out) / "weights.qfxw");
    write_text_file(fs::path(cfg.out) / "loss.csv", history_csv(trained.result));
  }
  Report report(cfg);
  ReportRow row = row_from(cfg.mode(),
                           qc.enabled ? std::optional(cfg.qformat) : std::nullopt,
                           evaluate(trained.model, qc, cfg, data));
  note_degenerate(report, row, log);
  report.add(std::move(row));
  write_report(cfg, report);
  return report;
}

Report cmd_ptq(const RunConfig& cfg, const LogFn& log) {
  prepare_out(cfg);
  const ExperimentData data = load_experiment_data(cfg);
  BackboneModel arch = initial_model(cfg, data);
  arch.weights.clear();
  const QuantConfig qc = quant_for(cfg.qformat);
  say(log, "post-training quantization to " + cfg.qformat.to_string());
  const PtqResult r = run_ptq(load_weights_file(cfg.weights), arch, qc,
                              data.base.images, data.novel.images, data.plans,
                              cfg.standardize);
  say(log, "max weight transfer error " + std::to_string(r.transfer.max_error()));
  if (!cfg.out.empty()) {
    const fs::path w = fs::path(cfg.out) / "ptq_weights.qfxw";
    save_weights_file(r.artifacts.quantized_model.weights, w);
    write_text_file(sidecar_path(w.string()), artifacts_sidecar_json(r.artifacts));
  }
  Report report(cfg);
  ReportRow row;
  row.mode = Mode::kPtq;
  row.format = cfg.qformat;
  row.accuracy = r.accuracy;
  row.degenerate_rows = r.degenerate_rows;
  note_degenerate(report, row, log);
  report.add(std::move(row));
  write_report(cfg, report);
  return report;
}

Report cmd_eval(const RunConfig& cfg, const LogFn& log) {
  prepare_out(cfg);
  const ExperimentData data = load_experiment_data(cfg);
  Report report(cfg);
  ReportRow row;
  const bool has_sidecar =
      !cfg.weights.empty() && fs::exists(sidecar_path(cfg.weights));

  if (has_sidecar) {
    if (cfg.mode() != Mode::kPtq) {
      throw ConfigError("'" + cfg.weights +
                        "' holds PTQ artifacts; evaluate them with --mode ptq");
    }
    const Sidecar side = parse_sidecar_json(
        [&] {
          const auto bytes = read_file(sidecar_path(cfg.weights));
          return std::string(bytes.begin(), bytes.end());
        }());
    BackboneModel arch = initial_model(cfg, data);
    if (side.folded) arch = fold_batchnorm(arch);
    arch.weights.clear();
    BackboneModel model =
        weight_transfer(load_weights_file(cfg.weights), arch, QuantConfig::disabled())
            .model;
    if (side.quant.enabled) {
      // Stored grid values are float32; snap them back onto the grid.
      for (auto& [name, t] : model.weights) {
        t = quantize_tensor(t, side.quant.weight_format);
      }
    }
    say(log, "evaluating PTQ artifacts at " + side.quant.weight_format.to_string());
    const PipelineResult r =
        evaluate_with_mean(model, side.quant, side.mean_vector,
                           data.novel.images, data.plans, side.standardize);
    row = row_from(Mode::kPtq,
                   side.quant.enabled ? std::optional(side.quant.weight_format)
                                      : std::nullopt,
                   r);
  } else {
    const BackboneModel model = cfg.weights.empty()
                                    ? initial_model(cfg, data)
                                    : load_checkpoint(cfg, data);
    switch (cfg.mode()) {
      case Mode::kFloat:
        row = row_from(Mode::kFloat, std::nullopt,
                       evaluate(model, QuantConfig::disabled(), cfg, data));
        break;
      case Mode::kQat:
        row = row_from(Mode::kQat, cfg.qformat,
                       evaluate(model, quant_for(cfg.qformat), cfg, data));
        break;
      case Mode::kPtq: {
        BackboneModel arch = model;
        arch.weights.clear();
        const PtqResult r = run_ptq(model.weights, arch, quant_for(cfg.qformat),
                                    data.base.images, data.novel.images,
                                    data.plans, cfg.standardize);
        row.mode = Mode::kPtq;
        row.format = cfg.qformat;
        row.accuracy = r.accuracy;
        row.degenerate_rows = r.degenerate_rows;
        break;
      }
    }
  }
  note_degenerate(report, row, log);
  report.add(std::move(row));
  write_report(cfg, report);
  return report;
}

Report cmd_sweep(const RunConfig& cfg, const LogFn& log) {
  prepare_out(cfg);
  const ExperimentData data = load_experiment_data(cfg);
  Report report(cfg);
  const auto wants = [&](Mode m) {
    return std::find(cfg.modes.begin(), cfg.modes.end(), m) != cfg.modes.end();
  };

  // One float checkpoint backs the baseline and every PTQ row.
  std::optional<BackboneModel> float_model;
  std::optional<Error> float_error;
  try {
    if (cfg.weights.empty()) {
      float_model = train_backbone(cfg, data, QuantConfig::disabled(), log).model;
      if (!cfg.out.empty()) {
        save_weights_file(float_model->weights, fs::path(cfg.out) / "weights.qfxw");
      }
    } else {
      float_model = load_checkpoint(cfg, data);
    }
  } catch (const Error& e) {
    float_error = e;
    say(log, "float model: " + failure_status(e));
  }

  const auto add_row = [&](Mode mode, const std::optional<QFormat>& f,
                           const std::function<ReportRow()>& run) {
    ReportRow row;
    try {
      row = run();
    } catch (const Error& e) {
      row = ReportRow{};
      row.status = failure_status(e);
    }
    row.mode = mode;
    row.format = f;
    say(log, to_string(mode) + (f ? " " + f->to_string() : std::string()) + ": " +
                 (row.ok() ? row.accuracy.to_string() : row.status));
    note_degenerate(report, row, log);
    report.add(std::move(row));
  };

  add_row(Mode::kFloat, std::nullopt, [&] {
    if (float_error) throw *float_error;
    return row_from(Mode::kFloat, std::nullopt,
                    evaluate(*float_model, QuantConfig::disabled(), cfg, data));
  });

  for (const QFormat& f : cfg.formats) {
    if (wants(Mode::kQat)) {
      add_row(Mode::kQat, f, [&] {
        const TrainedModel qat = train_backbone(cfg, data, quant_for(f), log);
        return row_from(Mode::kQat, f, evaluate(qat.model, quant_for(f), cfg, data));
      });
    }
    if (wants(Mode::kPtq)) {
      add_row(Mode::kPtq, f, [&] {
        if (float_error) throw *float_error;
        BackboneModel arch = *float_model;
        arch.weights.clear();
        const PtqResult r =
            run_ptq(float_model->weights, arch, quant_for(f), data.base.images,
                    data.novel.images, data.plans, cfg.standardize);
        ReportRow row;
        row.accuracy = r.accuracy;
        row.degenerate_rows = r.degenerate_rows;
        return row;
      });
    }
  }
  write_report(cfg, report);
  return report;
}

Report run_command(const RunConfig& cfg, const LogFn& log) {
  cfg.validate();
  switch (cfg.command) {
    case Command::kTrain: return cmd_train(cfg, log);
    case Command::kPtq: return cmd_ptq(cfg, log);
    case Command::kEval: return cmd_eval(cfg, log);
    case Command::kSweep: return cmd_sweep(cfg, log);
  }
  throw Error(ErrorKind::kInternal, "unhandled command");
}

}  // namespace qfx
