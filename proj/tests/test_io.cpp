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

#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>

#include "qfx/dataset.hpp"
#include "qfx/error.hpp"
#include "qfx/rng.hpp"
#include "qfx/weights_io.hpp"

namespace fs = std::filesystem;
using qfx::Tensor;
using qfx::WeightFileError;
using Kind = qfx::WeightFileError::Kind;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("qfx_test_" + name);
  fs::remove_all(p);
  return p;
}

qfx::WeightStore random_store(std::uint64_t seed) {
  qfx::CounterRng rng(seed);
  qfx::WeightStore s;
  s["block1.conv1.weight"] = Tensor({4, 1, 3, 3});
  s["block1.bn1.bias"] = Tensor({4});
  s["head"] = Tensor({2, 3});
  s["scalar"] = Tensor({1});
  for (auto& [name, t] : s)
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.normal();
  return qfx::round_to_float32(s);
}

Kind load_error(const std::vector<std::uint8_t>& bytes) {
  try {
    qfx::load_weights(bytes);
  } catch (const WeightFileError& e) {
    return e.file_error();
  }
  FAIL("expected a WeightFileError");
  return Kind::kCorruptHeader;
}

void put_u64(std::vector<std::uint8_t>& b, std::size_t at, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) b[at + i] = static_cast<std::uint8_t>(v >> (8 * i));
}

}  // namespace

TEST_CASE("weight files round trip bit-exactly") {
  const qfx::WeightStore s = random_store(1);
  const auto bytes = qfx::save_weights(s);
  const qfx::WeightStore back = qfx::load_weights(bytes);
  CHECK(back == s);
  CHECK(qfx::save_weights(back) == bytes);
  const fs::path dir = scratch("weights");
  fs::create_directories(dir);
  qfx::save_weights_file(s, dir / "w.qfxw");
  CHECK(qfx::load_weights_file(dir / "w.qfxw") == s);
}

TEST_CASE("weight file errors are distinct") {
  qfx::WeightStore two;
  two["a"] = Tensor({2}, 1.0);
  two["b"] = Tensor({2}, 2.0);
  const auto good = qfx::save_weights(two);
  // Header: 12 bytes, then 17 bytes per one-letter rank-1 entry.
  REQUIRE(good.size() == 12 + 2 * 17 + 16);

  auto bad = good;
  bad[0] = 'X';
  CHECK(load_error(bad) == Kind::kBadMagic);
  bad = good;
  bad[4] = 2;
  CHECK(load_error(bad) == Kind::kBadVersion);
  bad = good;
  bad[12 + 3] = 9;  // dtype of "a"
  CHECK(load_error(bad) == Kind::kCorruptHeader);
  bad = good;
  put_u64(bad, 12 + 9, 1000);
  CHECK(load_error(bad) == Kind::kOutOfBounds);
  bad = good;
  bad.resize(bad.size() - 4);
  CHECK(load_error(bad) == Kind::kTruncatedPayload);
  bad = good;
  put_u64(bad, 29 + 9, 50);
  CHECK(load_error(bad) == Kind::kOverlap);
  bad = good;
  bad[29 + 2] = 'a';
  CHECK(load_error(bad) == Kind::kDuplicateName);
  bad = good;
  bad.resize(20);
  CHECK(load_error(bad) == Kind::kCorruptHeader);
  CHECK_THROWS_AS(qfx::load_weights_file("/nonexistent/qfx.qfxw"), qfx::DataError);
}

TEST_CASE("sha256") {
  const std::string abc = "abc";
  const std::vector<std::uint8_t> bytes(abc.begin(), abc.end());
  CHECK(qfx::sha256_hex(bytes) ==
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("synthetic gratings") {
  qfx::SyntheticDatasetSpec spec;
  spec.classes = 6;
  spec.samples_per_class = 5;
  spec.seed = 4;
  const qfx::LabeledImages d = qfx::generate_synthetic(spec);
  CHECK(d.images.shape() == qfx::Shape{30, 1, 32, 32});
  CHECK(d.num_classes == 6);
  for (double v : d.images.data()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  const auto params = qfx::default_classes(40, 4);
  std::set<std::pair<double, double>> distinct;
  for (const auto& p : params) distinct.insert({p.orientation, p.frequency});
  CHECK(distinct.size() == 40);

  // Generation is a pure function of (spec, index).
  CHECK(qfx::render_grating(spec, 2, 3) == d.sample(2 * 5 + 3));
  CHECK_THROWS_AS(qfx::render_grating(spec, 6, 0), qfx::DataError);
  CHECK(qfx::generate_synthetic(spec).images == d.images);
  spec.noise = 0.0;
  CHECK(qfx::render_grating(spec, 1, 1) == qfx::render_grating(spec, 1, 1));
  spec.seed = 5;
  CHECK(qfx::generate_synthetic(spec).images != d.images);
}

TEST_CASE("pixel-space nearest neighbour beats chance at low noise") {
  qfx::SyntheticDatasetSpec spec;
  spec.classes = 5;
  spec.samples_per_class = 10;
  spec.image_size = 16;
  spec.noise = 0.05;
  spec.seed = 6;
  const qfx::LabeledImages d = qfx::generate_synthetic(spec);
  const std::size_t dim = 16 * 16;
  std::size_t correct = 0, total = 0;
  for (std::size_t q = 0; q < d.size(); ++q) {
    if (q % 10 < 2) continue;  // two references per class
    double best = INFINITY;
    int label = -1;
    for (std::size_t r = 0; r < d.size(); ++r) {
      if (r % 10 >= 2) continue;
      double s = 0;
      for (std::size_t j = 0; j < dim; ++j) {
        const double diff = d.images[q * dim + j] - d.images[r * dim + j];
        s += diff * diff;
      }
      if (s < best) { best = s; label = d.labels[r]; }
    }
    correct += label == d.labels[q];
    ++total;
  }
  CHECK(static_cast<double>(correct) / total > 0.2 + 0.1);
}

TEST_CASE("raw image directories") {
  qfx::SyntheticDatasetSpec spec;
  spec.classes = 3;
  spec.samples_per_class = 4;
  spec.image_size = 8;
  spec.seed = 7;
  qfx::LabeledImages d = qfx::generate_synthetic(spec);
  // Snap to the byte grid so the export is lossless.
  for (std::size_t i = 0; i < d.images.size(); ++i) {
    d.images[i] = std::round(d.images[i] * 255.0) / 255.0;
  }
  d.images[0] = 1.0;
  const fs::path dir = scratch("images");
  qfx::save_cifar_like(d, dir);
  const qfx::LabeledImages back = qfx::load_cifar_like(dir);
  CHECK(back.labels == d.labels);
  CHECK(back.images == d.images);
  CHECK(back.images[0] == 1.0);

  SUBCASE("record count mismatch names the file") {
    std::ofstream(dir / "class_0001.bin", std::ios::app | std::ios::binary)
        << std::string(1 + 64, '\1');
    try {
      qfx::load_cifar_like(dir);
      FAIL("expected DataError");
    } catch (const qfx::DataError& e) {
      CHECK(std::string(e.what()).find("class_0001.bin") != std::string::npos);
    }
  }
  SUBCASE("malformed record length") {
    std::ofstream(dir / "class_0002.bin", std::ios::app | std::ios::binary) << "xyz";
    try {
      qfx::load_cifar_like(dir);
      FAIL("expected DataError");
    } catch (const qfx::DataError& e) {
      CHECK(std::string(e.what()).find("malformed record length") != std::string::npos);
    }
  }
  CHECK_THROWS_AS(qfx::load_cifar_like(scratch("missing")), qfx::DataError);
}

TEST_CASE("class_range relabels from zero") {
  qfx::SyntheticDatasetSpec spec;
  spec.classes = 5;
  spec.samples_per_class = 3;
  spec.image_size = 8;
  const qfx::LabeledImages d = qfx::generate_synthetic(spec);
  const qfx::LabeledImages part = d.class_range(2, 2);
  CHECK(part.num_classes == 2);
  CHECK(part.size() == 6);
  CHECK(part.labels == std::vector<int>{0, 0, 0, 1, 1, 1});
  CHECK(part.sample(0) == d.sample(6));
}
