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

#include "qfx/weights_io.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>
#include <utility>

namespace qfx {
namespace {

constexpr char kMagic[4] = {'Q', 'F', 'X', 'W'};

void put_u8(std::vector<std::uint8_t>& out, std::uint8_t v) { out.push_back(v); }

void put_le(std::vector<std::uint8_t>& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void patch_le(std::vector<std::uint8_t>& out, std::size_t at, std::uint64_t v,
              int bytes) {
  for (int i = 0; i < bytes; ++i) out[at + i] = static_cast<std::uint8_t>(v >> (8 * i));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint64_t le(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) {
      v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    }
    pos_ += static_cast<std::size_t>(n);
    return v;
  }

  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) {
      throw WeightFileError(WeightFileError::Kind::kCorruptHeader,
                            "header runs past the end of the file");
    }
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

struct Entry {
  std::string name;
  Shape shape;
  std::uint64_t offset;
};

}  // namespace

std::vector<std::uint8_t> save_weights(const WeightStore& store) {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_le(out, kWeightFileVersion, 4);
  put_le(out, store.size(), 4);
  std::vector<std::size_t> offset_slots;
  for (const auto& [name, t] : store) {
    if (name.size() > 0xffff) throw DataError("weight name too long: " + name);
    if (t.rank() > 0xff) throw DataError("tensor rank too large: " + name);
    put_le(out, name.size(), 2);
    out.insert(out.end(), name.begin(), name.end());
    put_u8(out, kDtypeFloat32);
    put_u8(out, static_cast<std::uint8_t>(t.rank()));
    for (std::size_t d : t.shape()) {
      if (d > 0xffffffffULL) throw DataError("tensor dimension too large: " + name);
      put_le(out, d, 4);
    }
    offset_slots.push_back(out.size());
    put_le(out, 0, 8);
  }
  std::size_t k = 0;
  for (const auto& [name, t] : store) {
    patch_le(out, offset_slots[k++], out.size(), 8);
    for (double v : t.data()) {
      put_le(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)), 4);
    }
  }
  return out;
}

WeightStore load_weights(std::span<const std::uint8_t> bytes) {
  using Kind = WeightFileError::Kind;
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw WeightFileError(Kind::kBadMagic, "bad magic (expected \"QFXW\")");
  }
  Reader r(bytes);
  r.str(4);
  const auto version = r.le(4);
  if (version != kWeightFileVersion) {
    throw WeightFileError(Kind::kBadVersion,
                          "unsupported version " + std::to_string(version));
  }
  const auto count = r.le(4);
  std::vector<Entry> entries;
  std::set<std::string> names;
  for (std::uint64_t i = 0; i < count; ++i) {
    Entry e;
    e.name = r.str(r.le(2));
    const auto dtype = r.le(1);
    if (dtype != kDtypeFloat32) {
      throw WeightFileError(Kind::kCorruptHeader,
                            "tensor '" + e.name + "' has unknown dtype code " +
                                std::to_string(dtype));
    }
    const auto ndim = r.le(1);
    for (std::uint64_t d = 0; d < ndim; ++d) e.shape.push_back(r.le(4));
    e.offset = r.le(8);
    if (!names.insert(e.name).second) {
      throw WeightFileError(Kind::kDuplicateName,
                            "duplicate tensor name '" + e.name + "'");
    }
    entries.push_back(std::move(e));
  }
  const std::size_t header_end = r.pos();

  std::vector<std::pair<std::uint64_t, std::uint64_t>> ranges;
  WeightStore store;
  for (const auto& e : entries) {
    const std::uint64_t len = 4 * shape_numel(e.shape);
    if (e.offset < header_end || e.offset > bytes.size() ||
        (len > 0 && e.offset == bytes.size())) {
      throw WeightFileError(Kind::kOutOfBounds,
                            "tensor '" + e.name + "' offset " +
                                std::to_string(e.offset) +
                                " is outside the payload area (file is " +
                                std::to_string(bytes.size()) + " bytes)");
    }
    if (e.offset + len > bytes.size()) {
      throw WeightFileError(Kind::kTruncatedPayload,
                            "tensor '" + e.name + "' payload is truncated");
    }
    ranges.emplace_back(e.offset, e.offset + len);
    std::vector<double> data(len / 4);
    for (std::size_t k = 0; k < data.size(); ++k) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) {
        bits |= static_cast<std::uint32_t>(bytes[e.offset + 4 * k + b]) << (8 * b);
      }
      data[k] = static_cast<double>(std::bit_cast<float>(bits));
    }
    store.emplace(e.name, Tensor(e.shape, std::move(data)));
  }
  std::sort(ranges.begin(), ranges.end());
  for (std::size_t i = 1; i < ranges.size(); ++i) {
    if (ranges[i].first < ranges[i - 1].second) {
      throw WeightFileError(Kind::kOverlap, "tensor payloads overlap");
    }
  }
  return store;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file(const std::filesystem::path& path,
                std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("cannot write " + path.string());
}

void write_text_file(const std::filesystem::path& path,
                     const std::string& text) {
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()),
                             text.size()));
}

void save_weights_file(const WeightStore& store,
                       const std::filesystem::path& path) {
  write_file(path, save_weights(store));
}

WeightStore load_weights_file(const std::filesystem::path& path) {
  return load_weights(read_file(path));
}

WeightStore round_to_float32(const WeightStore& store) {
  WeightStore out = store;
  for (auto& [name, t] : out) {
    for (double& v : t.data()) v = static_cast<double>(static_cast<float>(v));
  }
  return out;
}

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(),
                 nullptr) != 1) {
    throw Error(ErrorKind::kInternal, "sha256 failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += kHex[digest[i] >> 4];
    out += kHex[digest[i] & 15];
  }
  return out;
}

}  // namespace qfx
