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

#ifndef QFX_REPORT_HPP_
#define QFX_REPORT_HPP_

#include <optional>
#include <string>
#include <vector>

#include "qfx/fewshot.hpp"
#include "qfx/fixedpoint.hpp"
#include "qfx/run_config.hpp"

namespace qfx {

struct ReportRow {
  std::optional<QFormat> format;  // empty for the float baseline
  Mode mode = Mode::kFloat;
  AccuracyStat accuracy;
  std::string status = "ok";
  std::size_t degenerate_rows = 0;

  bool ok() const { return status == "ok"; }
};

/// Accuracy table of one command. Rows are kept with the float baseline
/// first, then by total bits, integer bits and mode (qat before ptq).
class Report {
 public:
  explicit Report(RunConfig config) : config_(std::move(config)) {}

  void add(ReportRow row);
  void add_note(std::string note) { notes_.push_back(std::move(note)); }

  const RunConfig& config() const { return config_; }
  const std::vector<ReportRow>& rows() const { return rows_; }
  const std::vector<std::string>& notes() const { return notes_; }
  const ReportRow* find(Mode mode,
                        const std::optional<QFormat>& format = std::nullopt) const;

  /// "# config: {...}" header, then
  /// int_bits,frac_bits,mode,mean,half_width,episodes,status.
  std::string to_csv() const;
  /// Table in the "mean±half_width" style with QAT and PTQ columns.
  std::string to_markdown() const;
  std::string to_json() const;

 private:
  RunConfig config_;
  std::vector<ReportRow> rows_;
  std::vector<std::string> notes_;
};

}  // namespace qfx

#endif  // QFX_REPORT_HPP_
