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

/* C interface to the qfx fixed-point few-shot engine.
 *
 * Every function returns a qfx_status. On failure, qfx_last_error() returns
 * a message for the calling thread that stays valid until its next call.
 * Strings handed out through char** parameters are owned by the caller and
 * released with qfx_string_free(). */

#ifndef QFX_QFX_H_
#define QFX_QFX_H_

#include <stddef.h>
#include <stdint.h>

#if defined(QFX_BUILDING_LIBRARY)
#define QFX_API __attribute__((visibility("default")))
#else
#define QFX_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum qfx_status {
  QFX_OK = 0,
  QFX_ERR_INTERNAL = 1,
  QFX_ERR_CONFIG = 2,
  QFX_ERR_DATA = 3,
  QFX_ERR_NUMERIC = 4,
  QFX_ERR_INVALID_ARGUMENT = 5
} qfx_status;

typedef enum qfx_mode {
  QFX_MODE_FLOAT = 0,
  QFX_MODE_QAT = 1,
  QFX_MODE_PTQ = 2
} qfx_mode;

QFX_API const char* qfx_version(void);
QFX_API const char* qfx_last_error(void);
QFX_API void qfx_string_free(char* s);

/* ---- Fixed point ------------------------------------------------------ */

/* Signed Q(int_bits, frac_bits); int_bits counts the sign bit. */
typedef struct qfx_qformat {
  int int_bits;
  int frac_bits;
} qfx_qformat;

QFX_API qfx_status qfx_qformat_parse(const char* text, qfx_qformat* out);
QFX_API qfx_status qfx_qformat_range(qfx_qformat format, double* min_value,
                                     double* max_value, double* step);
/* Round half to even onto the grid, saturating at the range ends. `in` and
 * `out` may alias. */
QFX_API qfx_status qfx_quantize(qfx_qformat format, const double* in,
                                double* out, size_t n);
QFX_API qfx_status qfx_encode(qfx_qformat format, double x, int64_t* code);
QFX_API qfx_status qfx_decode(qfx_qformat format, int64_t code, double* out);

/* ---- Weight files ----------------------------------------------------- */

typedef struct qfx_weights qfx_weights;

QFX_API qfx_status qfx_weights_load(const char* path, qfx_weights** out);
QFX_API qfx_status qfx_weights_save(const qfx_weights* weights,
                                    const char* path);
QFX_API qfx_status qfx_weights_count(const qfx_weights* weights, size_t* out);
/* Tensors are ordered by name. `name` points into the handle. */
QFX_API qfx_status qfx_weights_info(const qfx_weights* weights, size_t index,
                                    const char** name, size_t* numel);
QFX_API qfx_status qfx_weights_sha256(const qfx_weights* weights, char** out);
QFX_API void qfx_weights_free(qfx_weights* weights);

/* ---- Run configuration ------------------------------------------------ */

typedef struct qfx_config qfx_config;

/* Defaults for `command` ("train", "ptq", "eval" or "sweep"), unvalidated. */
QFX_API qfx_status qfx_config_default(const char* command, char** json_out);
/* Parses and validates; unknown keys are rejected. */
QFX_API qfx_status qfx_config_from_json(const char* json, qfx_config** out);
QFX_API qfx_status qfx_config_to_json(const qfx_config* config, int indent,
                                      char** out);
QFX_API void qfx_config_free(qfx_config* config);

/* ---- Running commands ------------------------------------------------- */

typedef struct qfx_report qfx_report;

typedef void (*qfx_log_fn)(const char* message, void* user_data);

typedef struct qfx_report_row {
  qfx_mode mode;
  int int_bits;  /* 0 for the float row */
  int frac_bits; /* 0 for the float row */
  double mean;
  double half_width;
  size_t episodes;
  int ok; /* 0 when the row's run failed */
} qfx_report_row;

/* Runs the configured command; output files go to the config's "out". */
QFX_API qfx_status qfx_run(const qfx_config* config, qfx_log_fn log,
                           void* user_data, qfx_report** out);
QFX_API qfx_status qfx_report_row_count(const qfx_report* report, size_t* out);
QFX_API qfx_status qfx_report_row_get(const qfx_report* report, size_t index,
                                      qfx_report_row* out);
QFX_API qfx_status qfx_report_csv(const qfx_report* report, char** out);
QFX_API qfx_status qfx_report_markdown(const qfx_report* report, char** out);
QFX_API qfx_status qfx_report_json(const qfx_report* report, char** out);
QFX_API void qfx_report_free(qfx_report* report);

#ifdef __cplusplus
}
#endif

#endif /* QFX_QFX_H_ */
