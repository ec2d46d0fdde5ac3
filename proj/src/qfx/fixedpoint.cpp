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

#include "qfx/fixedpoint.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>

#include "qfx/error.hpp"

namespace qfx {

QFormat::QFormat(int int_bits, int frac_bits)
    : int_bits_(int_bits), frac_bits_(frac_bits) {
  if (int_bits < 1) {
    throw ConfigError("QFormat: int_bits must be >= 1 (got " +
                      std::to_string(int_bits) + ")");
  }
  if (frac_bits < 0) {
    throw ConfigError("QFormat: frac_bits must be >= 0 (got " +
                      std::to_string(frac_bits) + ")");
  }
  if (int_bits + frac_bits > kMaxTotalBits) {
    throw ConfigError("QFormat: int_bits + frac_bits must be <= " +
                      std::to_string(kMaxTotalBits));
  }
}

QFormat QFormat::parse(std::string_view text) {
  const std::string original(text);
  if (!text.empty() && (text.front() == 'Q' || text.front() == 'q')) {
    text.remove_prefix(1);
  }
  const auto dot = text.find('.');
  if (dot == std::string_view::npos) {
    throw ConfigError("bad Q format '" + original + "', expected e.g. Q4.4");
  }
  auto parse_int = [&](std::string_view part) {
    int value = 0;
    const auto* end = part.data() + part.size();
    auto [ptr, ec] = std::from_chars(part.data(), end, value);
    if (part.empty() || ec != std::errc() || ptr != end) {
      throw ConfigError("bad Q format '" + original + "', expected e.g. Q4.4");
    }
    return value;
  };
  return QFormat(parse_int(text.substr(0, dot)),
                 parse_int(text.substr(dot + 1)));
}

double QFormat::step() const noexcept { return std::ldexp(1.0, -frac_bits_); }

double QFormat::min_value() const noexcept {
  return -std::ldexp(1.0, int_bits_ - 1);
}

double QFormat::max_value() const noexcept {
  return std::ldexp(1.0, int_bits_ - 1) - step();
}

std::int64_t QFormat::min_code() const noexcept {
  return -(std::int64_t{1} << (total_bits() - 1));
}

std::int64_t QFormat::max_code() const noexcept {
  return (std::int64_t{1} << (total_bits() - 1)) - 1;
}

std::uint64_t QFormat::num_values() const noexcept {
  return std::uint64_t{1} << total_bits();
}

bool QFormat::representable(double x) const noexcept {
  if (!std::isfinite(x) || x < min_value() || x > max_value()) return false;
  const double scaled = std::ldexp(x, frac_bits_);
  return scaled == std::floor(scaled);
}

std::string QFormat::to_string() const {
  return "Q" + std::to_string(int_bits_) + "." + std::to_string(frac_bits_);
}

double round_half_even(double y) noexcept {
  const double lower = std::floor(y);
  const double diff = y - lower;
  if (diff < 0.5) return lower;
  if (diff > 0.5) return lower + 1.0;
  return std::fmod(lower, 2.0) == 0.0 ? lower : lower + 1.0;
}

namespace {

void require_finite(double x) {
  if (!std::isfinite(x)) {
    throw NumericError("quantize: non-finite input " + std::to_string(x));
  }
}

// Clamping first keeps the scaled value inside the 64-bit code range; the
// range boundaries are themselves grid points so rounding cannot escape it.
double scaled_code(double x, const QFormat& q) {
  require_finite(x);
  const double clamped = std::clamp(x, q.min_value(), q.max_value());
  return round_half_even(std::ldexp(clamped, q.frac_bits()));
}

}  // namespace

Quantizer::Quantizer(const QFormat& q) noexcept
    : lo_(q.min_value()),
      hi_(q.max_value()),
      scale_(std::ldexp(1.0, q.frac_bits())),
      inv_scale_(std::ldexp(1.0, -q.frac_bits())) {}

double Quantizer::operator()(double x) const {
  require_finite(x);
  // Scaling by a power of two is exact for every in-range value.
  return round_half_even(std::clamp(x, lo_, hi_) * scale_) * inv_scale_;
}

double quantize(double x, const QFormat& q) {
  return std::ldexp(scaled_code(x, q), -q.frac_bits());
}

double dequantize(const FixedValue& v) noexcept {
  return std::ldexp(static_cast<double>(v.raw), -v.format.frac_bits());
}

FixedValue encode(double x, const QFormat& q) {
  return FixedValue{static_cast<std::int64_t>(scaled_code(x, q)), q};
}

}  // namespace qfx
