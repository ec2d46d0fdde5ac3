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

#include "qfx/report.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <map>
#include <sstream>

namespace qfx {
namespace {

constexpr const char* kCiNote =
    "mean accuracy over episodes (percent) with a normal-approximation 95% "
    "interval, 1.96 * sample std / sqrt(episodes)";
constexpr const char* kDefaultsNote =
    "training hyperparameters and the synthetic task are project defaults";

auto sort_key(const ReportRow& r) {
  const int bits = r.format ? r.format->total_bits() : -1;
  const int ibits = r.format ? r.format->int_bits() : -1;
  return std::tuple(bits, ibits, static_cast<int>(r.mode));
}

std::string fixed4(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

// Keeps one CSV field per column.
std::string csv_safe(std::string s) {
  for (char& c : s) {
    if (c == ',' || c == '\n' || c == '\r' || c == '"') c = ';';
  }
  return s;
}

std::string cell(const ReportRow* r) {
  if (r == nullptr) return "";
  if (!r->ok()) return "failed";
  return r->accuracy.to_string();
}

}  // namespace

void Report::add(ReportRow row) {
  auto pos = std::upper_bound(
      rows_.begin(), rows_.end(), row,
      [](const ReportRow& a, const ReportRow& b) { return sort_key(a) < sort_key(b); });
  rows_.insert(pos, std::move(row));
}

const ReportRow* Report::find(Mode mode, const std::optional<QFormat>& format) const {
  for (const auto& r : rows_) {
    if (r.mode == mode && r.format == format) return &r;
  }
  return nullptr;
}

std::string Report::to_csv() const {
  std::ostringstream os;
  os << "# config: " << qfx::to_json(config_) << "\n";
  os << "int_bits,frac_bits,mode,mean,half_width,episodes,status\n";
  for (const auto& r : rows_) {
    if (r.format) {
      os << r.format->int_bits() << ',' << r.format->frac_bits();
    } else {
      os << ',';
    }
    os << ',' << to_string(r.mode) << ',' << fixed4(r.accuracy.mean) << ','
       << fixed4(r.accuracy.half_width) << ',' << r.accuracy.episodes << ','
       << csv_safe(r.status) << '\n';
  }
  return os.str();
}

std::string Report::to_markdown() const {
  std::ostringstream os;
  const auto& p = config_.protocol;
  os << "# qfx " << to_string(config_.command) << " report\n\n";
  os << p.ways << "-way " << p.shots << "-shot, " << p.queries
     << " queries per class, " << p.episodes << " episodes, arch "
     << config_.arch << ", standardize " << to_string(config_.standardize)
     << ".\n\n";

  std::vector<QFormat> formats;
  for (const auto& r : rows_) {
    if (r.format && std::find(formats.begin(), formats.end(), *r.format) == formats.end()) {
      formats.push_back(*r.format);
    }
  }
  os << "| int bits | frac bits | QAT | PTQ |\n";
  os << "|---:|---:|:---:|:---:|\n";
  for (const auto& f : formats) {
    os << "| " << f.int_bits() << " | " << f.frac_bits() << " | "
       << cell(find(Mode::kQat, f)) << " | " << cell(find(Mode::kPtq, f)) << " |\n";
  }
  if (const ReportRow* fl = find(Mode::kFloat)) {
    os << "| floating point | | " << cell(fl) << " | |\n";
  }
  os << "\nAccuracy: " << kCiNote << ".\nNote: " << kDefaultsNote << ".\n";
  for (const auto& r : rows_) {
    if (!r.ok()) {
      os << "\n- " << to_string(r.mode)
         << (r.format ? " " + r.format->to_string() : std::string())
         << ": " << r.status;
    }
  }
  for (const auto& n : notes_) os << "\n- " << n;
  if (!config_.timestamp.empty()) os << "\n\nGenerated: " << config_.timestamp << "\n";
  os << "\n\n```json\n" << qfx::to_json(config_, 2) << "\n```\n";
  return os.str();
}

std::string Report::to_json() const {
  nlohmann::ordered_json j;
  j["config"] = nlohmann::ordered_json::parse(qfx::to_json(config_));
  j["metadata"] = {{"accuracy", kCiNote}, {"note", kDefaultsNote}};
  if (!config_.timestamp.empty()) j["metadata"]["timestamp"] = config_.timestamp;
  j["rows"] = nlohmann::ordered_json::array();
  for (const auto& r : rows_) {
    nlohmann::ordered_json row;
    row["mode"] = to_string(r.mode);
    if (r.format) {
      row["int_bits"] = r.format->int_bits();
      row["frac_bits"] = r.format->frac_bits();
    }
    row["mean"] = r.accuracy.mean;
    row["half_width"] = r.accuracy.half_width;
    row["episodes"] = r.accuracy.episodes;
    row["display"] = r.accuracy.to_string();
    row["status"] = r.status;
    row["degenerate_rows"] = r.degenerate_rows;
    j["rows"].push_back(std::move(row));
  }
  j["notes"] = notes_;
  return j.dump(2) + "\n";
}

}  // namespace qfx
