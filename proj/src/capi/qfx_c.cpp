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

#include "qfx/qfx.h"

#include <cstdlib>
#include <cstring>
#include <exception>
#include <memory>
#include <new>
#include <string>
#include <vector>

#include "qfx/commands.hpp"
#include "qfx/error.hpp"
#include "qfx/fixedpoint.hpp"
#include "qfx/report.hpp"
#include "qfx/run_config.hpp"
#include "qfx/weights_io.hpp"

struct qfx_weights {
  qfx::WeightStore store;
  std::vector<std::string> names;
};

struct qfx_config {
  qfx::RunConfig config;
};

struct qfx_report {
  qfx::Report report;
};

namespace {

thread_local std::string g_last_error;

qfx_status fail(qfx_status status, const std::string& message) {
  g_last_error = message;
  return status;
}

// Runs `body`, translating exceptions into status codes.
template <typename F>
qfx_status guarded(F&& body) {
  try {
    body();
    g_last_error.clear();
    return QFX_OK;
  } catch (const qfx::Error& e) {
    return fail(static_cast<qfx_status>(e.kind()), e.what());
  } catch (const std::bad_alloc&) {
    return fail(QFX_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(QFX_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(QFX_ERR_INTERNAL, "unknown exception");
  }
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out == nullptr) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void require(bool ok, const char* what) {
  if (!ok) throw qfx::Error(qfx::ErrorKind::kInvalidArgument, what);
}

qfx::QFormat to_format(qfx_qformat f) { return qfx::QFormat(f.int_bits, f.frac_bits); }

}  // namespace

extern "C" {

const char* qfx_version(void) { return QFX_VERSION_STRING; }

const char* qfx_last_error(void) { return g_last_error.c_str(); }

void qfx_string_free(char* s) { std::free(s); }

qfx_status qfx_qformat_parse(const char* text, qfx_qformat* out) {
  return guarded([&] {
    require(text != nullptr && out != nullptr, "qfx_qformat_parse: null argument");
    const qfx::QFormat f = qfx::QFormat::parse(text);
    *out = {f.int_bits(), f.frac_bits()};
  });
}

qfx_status qfx_qformat_range(qfx_qformat format, double* min_value,
                             double* max_value, double* step) {
  return guarded([&] {
    const qfx::QFormat f = to_format(format);
    if (min_value) *min_value = f.min_value();
    if (max_value) *max_value = f.max_value();
    if (step) *step = f.step();
  });
}

qfx_status qfx_quantize(qfx_qformat format, const double* in, double* out,
                        size_t n) {
  return guarded([&] {
    require(n == 0 || (in != nullptr && out != nullptr), "qfx_quantize: null buffer");
    const qfx::Quantizer q(to_format(format));
    for (size_t i = 0; i < n; ++i) out[i] = q(in[i]);
  });
}

qfx_status qfx_encode(qfx_qformat format, double x, int64_t* code) {
  return guarded([&] {
    require(code != nullptr, "qfx_encode: null output");
    *code = qfx::encode(x, to_format(format)).raw;
  });
}

qfx_status qfx_decode(qfx_qformat format, int64_t code, double* out) {
  return guarded([&] {
    require(out != nullptr, "qfx_decode: null output");
    const qfx::QFormat f = to_format(format);
    if (code < f.min_code() || code > f.max_code()) {
      throw qfx::Error(qfx::ErrorKind::kInvalidArgument,
                       "code " + std::to_string(code) + " is outside " + f.to_string());
    }
    *out = qfx::dequantize(qfx::FixedValue{code, f});
  });
}

qfx_status qfx_weights_load(const char* path, qfx_weights** out) {
  return guarded([&] {
    require(path != nullptr && out != nullptr, "qfx_weights_load: null argument");
    auto w = std::make_unique<qfx_weights>();
    w->store = qfx::load_weights_file(path);
    for (const auto& [name, t] : w->store) w->names.push_back(name);
    *out = w.release();
  });
}

qfx_status qfx_weights_save(const qfx_weights* weights, const char* path) {
  return guarded([&] {
    require(weights != nullptr && path != nullptr, "qfx_weights_save: null argument");
    qfx::save_weights_file(weights->store, path);
  });
}

qfx_status qfx_weights_count(const qfx_weights* weights, size_t* out) {
  return guarded([&] {
    require(weights != nullptr && out != nullptr, "qfx_weights_count: null argument");
    *out = weights->names.size();
  });
}

qfx_status qfx_weights_info(const qfx_weights* weights, size_t index,
                            const char** name, size_t* numel) {
  return guarded([&] {
    require(weights != nullptr, "qfx_weights_info: null handle");
    require(index < weights->names.size(), "qfx_weights_info: index out of range");
    const std::string& n = weights->names[index];
    if (name) *name = n.c_str();
    if (numel) *numel = weights->store.at(n).size();
  });
}

qfx_status qfx_weights_sha256(const qfx_weights* weights, char** out) {
  return guarded([&] {
    require(weights != nullptr && out != nullptr, "qfx_weights_sha256: null argument");
    *out = dup_string(qfx::sha256_hex(qfx::save_weights(weights->store)));
  });
}

void qfx_weights_free(qfx_weights* weights) { delete weights; }

qfx_status qfx_config_default(const char* command, char** json_out) {
  return guarded([&] {
    require(command != nullptr && json_out != nullptr,
            "qfx_config_default: null argument");
    qfx::RunConfig cfg;
    cfg.command = qfx::parse_command(command);
    if (cfg.command == qfx::Command::kPtq) cfg.modes = {qfx::Mode::kPtq};
    if (cfg.command == qfx::Command::kSweep) {
      cfg.modes = {qfx::Mode::kQat, qfx::Mode::kPtq};
      cfg.formats = qfx::default_sweep_formats();
    }
    *json_out = dup_string(qfx::to_json(cfg, 2));
  });
}

qfx_status qfx_config_from_json(const char* json, qfx_config** out) {
  return guarded([&] {
    require(json != nullptr && out != nullptr, "qfx_config_from_json: null argument");
    auto c = std::make_unique<qfx_config>();
    c->config = qfx::run_config_from_json(json);
    *out = c.release();
  });
}

qfx_status qfx_config_to_json(const qfx_config* config, int indent, char** out) {
  return guarded([&] {
    require(config != nullptr && out != nullptr, "qfx_config_to_json: null argument");
    *out = dup_string(qfx::to_json(config->config, indent));
  });
}

void qfx_config_free(qfx_config* config) { delete config; }

qfx_status qfx_run(const qfx_config* config, qfx_log_fn log, void* user_data,
                   qfx_report** out) {
  return guarded([&] {
    require(config != nullptr && out != nullptr, "qfx_run: null argument");
    qfx::LogFn sink;
    if (log != nullptr) {
      sink = [log, user_data](const std::string& msg) { log(msg.c_str(), user_data); };
    }
    auto r = std::make_unique<qfx_report>(
        qfx_report{qfx::run_command(config->config, sink)});
    *out = r.release();
  });
}

qfx_status qfx_report_row_count(const qfx_report* report, size_t* out) {
  return guarded([&] {
    require(report != nullptr && out != nullptr, "qfx_report_row_count: null argument");
    *out = report->report.rows().size();
  });
}

qfx_status qfx_report_row_get(const qfx_report* report, size_t index,
                              qfx_report_row* out) {
  return guarded([&] {
    require(report != nullptr && out != nullptr, "qfx_report_row_get: null argument");
    const auto& rows = report->report.rows();
    require(index < rows.size(), "qfx_report_row_get: index out of range");
    const qfx::ReportRow& r = rows[index];
    out->mode = static_cast<qfx_mode>(static_cast<int>(r.mode));
    out->int_bits = r.format ? r.format->int_bits() : 0;
    out->frac_bits = r.format ? r.format->frac_bits() : 0;
    out->mean = r.accuracy.mean;
    out->half_width = r.accuracy.half_width;
    out->episodes = r.accuracy.episodes;
    out->ok = r.ok() ? 1 : 0;
  });
}

qfx_status qfx_report_csv(const qfx_report* report, char** out) {
  return guarded([&] {
    require(report != nullptr && out != nullptr, "qfx_report_csv: null argument");
    *out = dup_string(report->report.to_csv());
  });
}

qfx_status qfx_report_markdown(const qfx_report* report, char** out) {
  return guarded([&] {
    require(report != nullptr && out != nullptr, "qfx_report_markdown: null argument");
    *out = dup_string(report->report.to_markdown());
  });
}

qfx_status qfx_report_json(const qfx_report* report, char** out) {
  return guarded([&] {
    require(report != nullptr && out != nullptr, "qfx_report_json: null argument");
    *out = dup_string(report->report.to_json());
  });
}

void qfx_report_free(qfx_report* report) { delete report; }

}  // extern "C"
