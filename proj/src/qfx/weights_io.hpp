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

#ifndef QFX_WEIGHTS_IO_HPP_
#define QFX_WEIGHTS_IO_HPP_

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "qfx/backbone.hpp"
#include "qfx/error.hpp"

namespace qfx {

// QFXW weight file, all integers little-endian:
//
//   char[4]  magic "QFXW"
//   u32      version (1)
//   u32      tensor count
//   per tensor:
//     u16    name length, then that many UTF-8 bytes
//     u8     dtype code (1 = float32)
//     u8     ndim, then ndim x u32 dims
//     u64    byte offset of the payload from the start of the file
//   payloads: IEEE-754 float32, little-endian, row-major
//
// Tensors are written in name order with contiguous payloads.

inline constexpr std::uint32_t kWeightFileVersion = 1;
inline constexpr std::uint8_t kDtypeFloat32 = 1;

class WeightFileError : public DataError {
 public:
  enum class Kind {
    kBadMagic,
    kBadVersion,
    kCorruptHeader,
    kOutOfBounds,
    kTruncatedPayload,
    kOverlap,
    kDuplicateName,
  };
  WeightFileError(Kind kind, const std::string& what)
      : DataError("weight file: " + what), kind_(kind) {}
  Kind file_error() const noexcept { return kind_; }

 private:
  Kind kind_;
};

std::vector<std::uint8_t> save_weights(const WeightStore& store);
WeightStore load_weights(std::span<const std::uint8_t> bytes);

void save_weights_file(const WeightStore& store,
                       const std::filesystem::path& path);
WeightStore load_weights_file(const std::filesystem::path& path);

/// Reads a whole file; throws DataError if it cannot be opened.
std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path,
                std::span<const std::uint8_t> bytes);
void write_text_file(const std::filesystem::path& path,
                     const std::string& text);

/// Rounds every value to float32, the precision of a saved checkpoint.
WeightStore round_to_float32(const WeightStore& store);

/// Lowercase hex SHA-256.
std::string sha256_hex(std::span<const std::uint8_t> bytes);

}  // namespace qfx

#endif  // QFX_WEIGHTS_IO_HPP_
