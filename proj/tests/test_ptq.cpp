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
#include <string>

#include "oracles.hpp"
#include "qfx/dataset.hpp"
#include "qfx/error.hpp"
#include "qfx/ptq.hpp"
#include "qfx/rng.hpp"

using qfx::BackboneModel;
using qfx::QFormat;
using qfx::QuantConfig;
using qfx::StandardizeMode;
using qfx::Tensor;

namespace {

BackboneModel identity_bn_model(std::uint64_t seed) {
  qfx::ResNetOptions opt;
  opt.bn_eps = 0.0;
  BackboneModel m = qfx::build_resnet(1, {4, 8}, opt);
  m.arch = "custom";
  qfx::init_weights(m, seed);
  return m;
}

BackboneModel arch_of(const BackboneModel& m) {
  BackboneModel a = m;
  a.weights.clear();
  return a;
}

struct Data {
  qfx::LabeledImages base, novel;
  std::vector<qfx::EpisodePlan> plans;
};

Data small_data(std::size_t episodes) {
  qfx::SyntheticDatasetSpec spec;
  spec.classes = 14;
  spec.samples_per_class = 20;
  spec.image_size = 16;
  spec.seed = 3;
  const qfx::LabeledImages all = qfx::generate_synthetic(spec);
  Data d{all.class_range(0, 6), all.class_range(6, 8), {}};
  d.plans = qfx::sample_episodes(d.novel.labels, 8, 5, 1, 15, episodes, 4);
  return d;
}

}  // namespace

TEST_CASE("identity batch-norm folds to the original weights") {
  const BackboneModel m = identity_bn_model(1);
  const BackboneModel f = qfx::fold_batchnorm(m);
  for (const auto& [name, w] : f.weights) {
    if (name.ends_with(".weight")) {
      CHECK(w == m.weights.at(name));
    } else {
      CHECK(w == Tensor(w.shape()));  // folded bias of a bias-free conv
    }
  }
}

TEST_CASE("transfer of on-grid weights is lossless") {
  BackboneModel m = identity_bn_model(2);
  for (auto& [name, w] : m.weights) {
    if (name.find(".bn") == std::string::npos && name.find("_bn") == std::string::npos) {
      w = oracle::quantize(w, 4, 4);
    }
  }
  const auto r = qfx::weight_transfer(m.weights, arch_of(m), QuantConfig::uniform(QFormat(4, 4)));
  CHECK(r.report.max_error() == 0.0);
  for (const auto& [name, w] : r.model.weights) {
    if (name.ends_with(".weight")) CHECK(w == m.weights.at(name));
  }
}

TEST_CASE("Q3.3 transfer error is at most half a step") {
  BackboneModel m = identity_bn_model(3);
  const auto r = qfx::weight_transfer(m.weights, arch_of(m), QuantConfig::uniform(QFormat(3, 3)));
  const BackboneModel folded = qfx::fold_batchnorm(m);
  for (const auto& item : r.report.items) {
    const Tensor& src = folded.weights.at(item.name);
    bool saturated = false;
    for (double v : src.data()) saturated = saturated || v < -4.0 || v > 3.875;
    CAPTURE(item.name);
    if (!saturated) CHECK(item.max_error <= 0.0625);
    CHECK(r.model.weights.at(item.name) == oracle::quantize(src, 3, 3));
  }
}

TEST_CASE("transfer lists every name problem") {
  BackboneModel m = identity_bn_model(4);
  qfx::WeightStore store = m.weights;
  store.erase("block1.conv2.weight");
  store.erase("block2.bn3.running_var");
  store["extra.weight"] = Tensor({1});
  store["block2.conv1.weight"] = Tensor({1, 1, 3, 3});
  try {
    qfx::weight_transfer(store, arch_of(m), QuantConfig::uniform(QFormat(8, 8)));
    FAIL("expected DataError");
  } catch (const qfx::DataError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("block1.conv2.weight") != std::string::npos);
    CHECK(msg.find("block2.bn3.running_var") != std::string::npos);
    CHECK(msg.find("extra.weight") != std::string::npos);
    CHECK(msg.find("block2.conv1.weight") != std::string::npos);
    CHECK(msg.find("4 problems") != std::string::npos);
  }
}

TEST_CASE("mean vector") {
  const Tensor one({1, 3}, std::vector<double>{0.1, -2.5, 7.0});
  CHECK(qfx::mean_vector(one).values() == std::vector<double>{0.1, -2.5, 7.0});
  const Tensor two({2, 2}, std::vector<double>{1, 2, 3, 6});
  CHECK(qfx::mean_vector(two).values() == std::vector<double>{2, 4});
  CHECK_THROWS_AS(qfx::mean_vector(Tensor({0, 3})), qfx::DataError);
}

TEST_CASE("standardize") {
  const Tensor mean({3}, std::vector<double>{1, 2, 3});
  SUBCASE("row equal to the mean") {
    const auto r = qfx::standardize(Tensor({1, 3}, std::vector<double>{1, 2, 3}), mean,
                                    StandardizeMode::kCenterNormalize);
    CHECK(r.degenerate_rows == 1);
    CHECK(r.features == Tensor({1, 3}));
  }
  SUBCASE("unit residual") {
    const auto r = qfx::standardize(Tensor({1, 3}, std::vector<double>{2, 2, 3}), mean,
                                    StandardizeMode::kCenterNormalize);
    CHECK(r.features.values() == std::vector<double>{1, 0, 0});
  }
  SUBCASE("random rows have unit norm") {
    qfx::CounterRng rng(5);
    Tensor f({50, 3});
    for (std::size_t i = 0; i < f.size(); ++i) f[i] = rng.uniform(-5, 5);
    const auto r = qfx::standardize(f, mean, StandardizeMode::kCenterNormalize);
    for (std::size_t i = 0; i < 50; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < 3; ++j) s += r.features.at(i, j) * r.features.at(i, j);
      CHECK(std::abs(std::sqrt(s) - 1.0) <= 1e-6);
    }
    const auto c = qfx::standardize(f, mean, StandardizeMode::kCenterOnly);
    CHECK(c.features.at(7, 1) == f.at(7, 1) - 2.0);
    const auto q = qfx::standardize(f, mean, StandardizeMode::kCenterNormalize, QFormat(3, 3));
    CHECK(q.features == oracle::quantize(r.features, 3, 3));
  }
  CHECK_THROWS_AS(qfx::standardize(Tensor({1, 2}), mean, StandardizeMode::kCenterOnly),
                  qfx::ShapeError);
  CHECK(qfx::parse_standardize_mode("center_only") == StandardizeMode::kCenterOnly);
  CHECK_THROWS_AS(qfx::parse_standardize_mode("zscore"), qfx::ConfigError);
}

TEST_CASE("PTQ pipeline") {
  BackboneModel m = qfx::build_resnet_lite(1, 4);
  qfx::init_weights(m, 6);
  const BackboneModel arch = arch_of(m);
  const Data d = small_data(300);

  SUBCASE("disabled quantization equals the float pipeline") {
    const auto ptq = qfx::run_ptq(m.weights, arch, QuantConfig::disabled(), d.base.images,
                                  d.novel.images, d.plans);
    const auto fl = qfx::evaluate_pipeline(m, QuantConfig::disabled(), d.base.images,
                                           d.novel.images, d.plans,
                                           StandardizeMode::kCenterNormalize);
    CHECK(ptq.accuracy.mean == fl.accuracy.mean);
    CHECK(ptq.accuracy.half_width == fl.accuracy.half_width);
  }
  SUBCASE("Q16.16 is within half a point of float") {
    const auto fl = qfx::run_ptq(m.weights, arch, QuantConfig::disabled(), d.base.images,
                                 d.novel.images, d.plans);
    const auto q = qfx::run_ptq(m.weights, arch, QuantConfig::uniform(QFormat(16, 16)),
                                d.base.images, d.novel.images, d.plans);
    CHECK(std::abs(q.accuracy.mean - fl.accuracy.mean) <= 0.5);
  }
  SUBCASE("deterministic, and features come from the quantized model") {
    const QuantConfig qc = QuantConfig::uniform(QFormat(5, 5));
    const auto a = qfx::run_ptq(m.weights, arch, qc, d.base.images, d.novel.images, d.plans);
    const auto b = qfx::run_ptq(m.weights, arch, qc, d.base.images, d.novel.images, d.plans);
    CHECK(a.artifacts.mean_vector == b.artifacts.mean_vector);
    CHECK(a.accuracy.mean == b.accuracy.mean);
    const Tensor want = oracle::quantize(
        qfx::mean_vector(qfx::extract_features(a.artifacts.quantized_model, d.base.images, qc)),
        5, 5);
    CHECK(a.artifacts.mean_vector == want);
    for (const auto& [name, w] : a.artifacts.quantized_model.weights) {
      bool ok = true;
      for (double v : w.data()) ok = ok && QFormat(5, 5).representable(v);
      CHECK(ok);
    }
    CHECK(a.artifacts.source_sha256.size() == 64);
  }
  SUBCASE("single base sample") {
    const Tensor one = d.base.sample(0);
    const QuantConfig qc = QuantConfig::uniform(QFormat(8, 8));
    const auto r = qfx::run_ptq(m.weights, arch, qc, one, d.novel.images, d.plans);
    const Tensor feat = qfx::forward(r.artifacts.quantized_model, one, qc);
    CHECK(r.artifacts.mean_vector == feat.reshaped({feat.size()}));
  }
}

TEST_CASE("sidecar round trip") {
  qfx::PtqArtifacts a;
  a.mean_vector = Tensor({3}, std::vector<double>{0.1, -0.3, 1.0 / 3.0});
  a.quant = QuantConfig::uniform(QFormat(6, 6));
  a.standardize = StandardizeMode::kCenterOnly;
  a.source_sha256 = std::string(64, 'a');
  const qfx::Sidecar s = qfx::parse_sidecar_json(qfx::artifacts_sidecar_json(a));
  CHECK(s.mean_vector == a.mean_vector);
  CHECK(s.quant.weight_format == QFormat(6, 6));
  CHECK(s.quant.enabled);
  CHECK(s.folded);
  CHECK(s.standardize == StandardizeMode::kCenterOnly);
  CHECK(s.source_sha256 == a.source_sha256);
  CHECK_THROWS_AS(qfx::parse_sidecar_json("{}"), qfx::DataError);
}
