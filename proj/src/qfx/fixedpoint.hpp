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

#ifndef QFX_FIXEDPOINT_HPP_
#define QFX_FIXEDPOINT_HPP_

#include <compare>
#include <cstdint>
#include <string>
#include <string_view>

namespace qfx {

/// Signed fixed-point format Q(i,f).
///
/// `int_bits` includes the sign bit, so Q(4,4) spans [-8, 7.9375] with a
/// step of 2^-4. Codes are held in 64-bit integers; formats are limited to
/// i + f <= 32 so every grid value is exact in a double.
class QFormat {
 public:
  static constexpr int kMaxTotalBits = 32;

  /// Q(16,16).
  QFormat() : QFormat(16, 16) {}
  /// Throws ConfigError on int_bits < 1, frac_bits < 0 or too many bits.
  QFormat(int int_bits, int frac_bits);

  /// Parses "Q4.4" (case-insensitive leading Q).
  static QFormat parse(std::string_view text);

  int int_bits() const noexcept { return int_bits_; }
  int frac_bits() const noexcept { return frac_bits_; }
  int total_bits() const noexcept { return int_bits_ + frac_bits_; }

  double step() const noexcept;
  double min_value() const noexcept;
  double max_value() const noexcept;
  std::int64_t min_code() const noexcept;
  std::int64_t max_code() const noexcept;
  /// 2^(i+f).
  std::uint64_t num_values() const noexcept;

  /// True when `x` is a grid point inside the representable range.
  bool representable(double x) const noexcept;

  std::string to_string() const;

  friend bool operator==(const QFormat&, const QFormat&) = default;
  friend auto operator<=>(const QFormat&, const QFormat&) = default;

 private:
  int int_bits_;
  int frac_bits_;
};

/// Integer code plus the format it lives in.
struct FixedValue {
  std::int64_t raw = 0;
  QFormat format;
};

/// Nearest grid point of `q`, saturating outside [min, max]; ties go to the
/// even code. Throws NumericError for NaN/Inf.
double quantize(double x, const QFormat& q);

/// Exact raw * 2^-f.
double dequantize(const FixedValue& v) noexcept;

/// Code of quantize(x, q). Throws NumericError for NaN/Inf.
FixedValue encode(double x, const QFormat& q);

/// quantize() with the format's constants precomputed, for tight loops.
class Quantizer {
 public:
  explicit Quantizer(const QFormat& q) noexcept;
  /// Same result as quantize(x, q); throws NumericError for NaN/Inf.
  double operator()(double x) const;

 private:
  double lo_, hi_, scale_, inv_scale_;
};

/// Round-half-to-even to an integer-valued double.
double round_half_even(double y) noexcept;

}  // namespace qfx

#endif  // QFX_FIXEDPOINT_HPP_
