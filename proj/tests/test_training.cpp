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
#include <vector>

#include "qfx/backbone.hpp"
#include "qfx/error.hpp"
#include "qfx/rng.hpp"
#include "qfx/training.hpp"

using qfx::BackboneModel;
using qfx::BatchNormMode;
using qfx::LinearHead;
using qfx::QFormat;
using qfx::QuantConfig;
using qfx::Tensor;

namespace {

// Two classes: bright left half vs bright right half, plus noise.
qfx::LabeledImages toy_set(std::size_t per_class, std::uint64_t seed) {
  qfx::CounterRng rng(seed);
  qfx::LabeledImages d;
  d.num_classes = 2;
  d.images = Tensor({2 * per_class, 1, 8, 8});
  for (std::size_t i = 0; i < 2 * per_class; ++i) {
    const int label = static_cast<int>(i % 2);
    d.labels.push_back(label);
    for (std::size_t y = 0; y < 8; ++y)
      for (std::size_t x = 0; x < 8; ++x) {
        const bool lit = label == 0 ? x < 4 : x >= 4;
        d.images.at(i, 0, y, x) = (lit ? 0.8 : 0.2) + rng.uniform(-0.1, 0.1);
      }
  }
  return d;
}

BackboneModel small_net(std::uint64_t seed) {
  BackboneModel m = qfx::build_resnet(1, {4});
  qfx::init_weights(m, seed);
  return m;
}

std::vector<double> losses(const qfx::TrainResult& r) {
  std::vector<double> out;
  for (const auto& s : r.history) out.push_back(s.loss);
  return out;
}

}  // namespace

TEST_CASE("ste_backward contract") {
  const QFormat q(4, 4);
  const Tensor g({4}, 1.0);
  const Tensor pre({4}, std::vector<double>{0.5, 9.0, -8.5, 7.9375});
  const Tensor out = qfx::ste_backward(g, pre, q);
  CHECK(out[0] == 1.0);
  CHECK(out[1] == 0.0);
  CHECK(out[2] == 0.0);
  CHECK(out[3] == 0.0);  // at the boundary, not strictly inside
  CHECK(qfx::ste_backward(g, Tensor({4}, -7.99), q) == g);
}

TEST_CASE("1x1 conv with a linear head matches the closed form") {
  BackboneModel m;
  m.arch = "custom";
  m.input_channels = 1;
  m.feature_dim = 1;
  m.layers.emplace_back(qfx::ConvLayer{"c", 1, 1, 1, 1, 0, true});
  m.layers.emplace_back(qfx::GlobalAvgPoolLayer{});
  const double w = 0.7, b = -0.2, x = 1.3;
  m.weights["c.weight"] = Tensor({1, 1, 1, 1}, w);
  m.weights["c.bias"] = Tensor({1}, b);
  LinearHead head{Tensor({2, 1}, std::vector<double>{0.5, -1.5}),
                  Tensor({2}, std::vector<double>{0.1, 0.3})};
  const Tensor input({1, 1, 1, 1}, x);
  const std::vector<int> label{1};

  const double z = w * x + b;
  const double l0 = 0.5 * z + 0.1, l1 = -1.5 * z + 0.3;
  const double p0 = std::exp(l0) / (std::exp(l0) + std::exp(l1));
  const double p1 = 1.0 - p0;
  const double dz = p0 * 0.5 + (p1 - 1.0) * -1.5;

  const auto r = qfx::loss_and_gradients(m, head, input, label, QuantConfig::disabled(),
                                         BatchNormMode::kBatchStats);
  CHECK(r.loss == doctest::Approx(-std::log(p1)).epsilon(1e-12));
  CHECK(r.grads.at("c.weight")[0] == doctest::Approx(dz * x).epsilon(1e-12));
  CHECK(r.grads.at("c.bias")[0] == doctest::Approx(dz).epsilon(1e-12));
  CHECK(r.grads.at("head.weight").at(0, 0) == doctest::Approx(p0 * z).epsilon(1e-12));
  CHECK(r.grads.at("head.weight").at(1, 0) == doctest::Approx((p1 - 1.0) * z).epsilon(1e-12));
  CHECK(r.grads.at("head.bias")[0] == doctest::Approx(p0).epsilon(1e-12));
  CHECK(r.grads.at("head.bias")[1] == doctest::Approx(p1 - 1.0).epsilon(1e-12));
}

TEST_CASE("lite gradients agree with central differences") {
  BackboneModel m = qfx::build_resnet_lite(1, 2);
  qfx::init_weights(m, 4);
  const qfx::LabeledImages d = toy_set(2, 5);
  const LinearHead head = LinearHead::create(2, m.feature_dim, 6);
  qfx::GradCheckOptions opt;
  opt.max_per_tensor = 6;
  const auto report = qfx::grad_check(m, head, d.images, d.labels, opt);
  CHECK(report.all_finite);
  for (const auto& e : report.entries) {
    CAPTURE(e.name);
    CHECK(e.max_rel_error <= 1e-3);
  }
  // Zero biases over uncentred activations put exact zeros on ReLU kinks;
  // move the statistics off them and keep the step well inside a linear piece.
  qfx::CounterRng rng(17);
  for (auto& [name, t] : m.weights) {
    const bool shift = name.ends_with(".bias") || name.ends_with(".running_mean");
    if (!shift && !name.ends_with(".running_var")) continue;
    for (double& v : t.data()) v = shift ? rng.uniform(-0.3, 0.3) : rng.uniform(0.5, 2.0);
  }
  opt.bn_mode = BatchNormMode::kRunningStats;
  opt.epsilon = 1e-6;
  CHECK(qfx::grad_check(m, head, d.images, d.labels, opt).max_rel_error() <= 1e-3);
}

TEST_CASE("zero input gives finite gradients") {
  BackboneModel m = qfx::build_resnet_lite(1, 2);
  qfx::init_weights(m, 7);
  const LinearHead head = LinearHead::create(2, m.feature_dim, 8);
  const std::vector<int> labels{0, 1};
  const auto r = qfx::loss_and_gradients(m, head, Tensor({2, 1, 8, 8}), labels,
                                         QuantConfig::disabled(), BatchNormMode::kBatchStats);
  CHECK(std::isfinite(r.loss));
  for (const auto& [name, g] : r.grads) CHECK_NOTHROW(g.require_finite(name));
  for (const auto& [name, w] : m.weights) {
    if (qfx::is_trainable(name)) CHECK(r.grads.at(name).shape() == w.shape());
  }
}

TEST_CASE("high-precision QAT gradients track float gradients") {
  BackboneModel m = qfx::build_resnet_lite(1, 2);
  qfx::init_weights(m, 9);
  const qfx::LabeledImages d = toy_set(2, 10);
  const LinearHead head = LinearHead::create(2, m.feature_dim, 11);
  const auto fp = qfx::loss_and_gradients(m, head, d.images, d.labels, QuantConfig::disabled(),
                                          BatchNormMode::kBatchStats);
  const auto q = qfx::loss_and_gradients(m, head, d.images, d.labels,
                                         QuantConfig::uniform(QFormat(16, 16)),
                                         BatchNormMode::kBatchStats);
  // Grid noise is absolute, so compare against the largest gradient overall.
  double scale = 0.0;
  for (const auto& [name, g] : fp.grads)
    for (double v : g.data()) scale = std::max(scale, std::abs(v));
  for (const auto& [name, g] : fp.grads) {
    CAPTURE(name);
    CHECK(qfx::max_abs_diff(g, q.grads.at(name)) <= 1e-3 * scale);
  }
}

TEST_CASE("saturated quantization points block the gradient") {
  // Q(2,2) spans [-2, 1.75].
  BackboneModel m;
  m.arch = "custom";
  m.input_channels = 1;
  m.feature_dim = 1;
  m.layers.emplace_back(qfx::ConvLayer{"c", 1, 1, 1, 1, 0, false});
  m.layers.emplace_back(qfx::GlobalAvgPoolLayer{});
  const LinearHead head{Tensor({2, 1}, std::vector<double>{1.0, -1.0}), Tensor({2})};
  const std::vector<int> label{1};
  const Tensor input({1, 1, 1, 1}, 1.5);
  const QuantConfig qc = QuantConfig::uniform(QFormat(2, 2));

  m.weights["c.weight"] = Tensor({1, 1, 1, 1}, 1.0);  // output 1.5: interior
  const auto inside = qfx::loss_and_gradients(m, head, input, label, qc,
                                              BatchNormMode::kBatchStats);
  const auto fp = qfx::loss_and_gradients(m, head, input, label, QuantConfig::disabled(),
                                          BatchNormMode::kBatchStats);
  CHECK(inside.grads.at("c.weight")[0] != 0.0);
  CHECK(inside.grads.at("c.weight")[0] == doctest::Approx(fp.grads.at("c.weight")[0]));

  m.weights["c.weight"] = Tensor({1, 1, 1, 1}, 1.5);  // output 2.25: saturated
  const auto clipped = qfx::loss_and_gradients(m, head, input, label, qc,
                                               BatchNormMode::kBatchStats);
  CHECK(clipped.grads.at("c.weight")[0] == 0.0);
  CHECK(clipped.grads.at("head.weight").at(0, 0) != 0.0);
}

TEST_CASE("tape forward matches inference forward") {
  qfx::ResNetOptions opt;
  opt.batchnorm = false;
  BackboneModel plain = qfx::build_resnet(1, {4, 8}, opt);
  qfx::init_weights(plain, 14);
  const qfx::LabeledImages d = toy_set(2, 15);
  for (const QFormat q : {QFormat(3, 3), QFormat(6, 6)}) {
    const QuantConfig qc = QuantConfig::uniform(q);
    qfx::GradientTape tape(plain, qc, BatchNormMode::kBatchStats);
    CHECK(tape.forward(d.images) == qfx::forward(plain, d.images, qc));
  }
  BackboneModel bn = qfx::build_resnet_lite(1, 4);
  qfx::init_weights(bn, 16);
  const QuantConfig qc = QuantConfig::uniform(QFormat(5, 5));
  qfx::GradientTape tape(bn, qc, BatchNormMode::kRunningStats);
  CHECK(tape.forward(d.images) == qfx::forward(bn, d.images, qc));
}

TEST_CASE("training fits a separable toy set") {
  BackboneModel m = small_net(17);
  LinearHead head = LinearHead::create(2, m.feature_dim, 18);
  const qfx::LabeledImages d = toy_set(8, 19);
  qfx::TrainConfig cfg;
  cfg.epochs = 50;
  cfg.batch_size = 8;
  cfg.learning_rate = 0.05;
  cfg.seed = 20;
  const auto r = qfx::train(m, head, d, cfg);
  CHECK(r.history.size() == 50 * 2);
  CHECK(qfx::classification_accuracy(m, head, d, QuantConfig::disabled()) == 100.0);
}

TEST_CASE("Q16.16 QAT follows the float loss trajectory") {
  const qfx::LabeledImages d = toy_set(8, 21);
  qfx::TrainConfig cfg;
  cfg.epochs = 10;
  cfg.batch_size = 8;
  cfg.seed = 22;
  BackboneModel a = small_net(23), b = small_net(23);
  LinearHead ha = LinearHead::create(2, a.feature_dim, 24), hb = ha;
  const auto fl = losses(qfx::train(a, ha, d, cfg));
  cfg.quant = QuantConfig::uniform(QFormat(16, 16));
  const auto qt = losses(qfx::train(b, hb, d, cfg));
  REQUIRE(fl.size() == qt.size());
  for (std::size_t i = 0; i < fl.size(); ++i) {
    CHECK(std::abs(qt[i] - fl[i]) <= 0.05 * std::abs(fl[i]));
  }
}

TEST_CASE("zero learning rate freezes the weights") {
  BackboneModel m = small_net(25);
  const BackboneModel before = m;
  LinearHead head = LinearHead::create(2, m.feature_dim, 26);
  const LinearHead head_before = head;
  qfx::TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 4;
  cfg.learning_rate = 0.0;
  qfx::train(m, head, toy_set(4, 27), cfg);
  for (const auto& [name, w] : before.weights) {
    if (qfx::is_trainable(name)) CHECK(m.weights.at(name) == w);
  }
  CHECK(head.weight == head_before.weight);
  cfg.weight_decay = 0.0;
  qfx::train(m, head, toy_set(4, 27), cfg);
  for (const auto& [name, w] : before.weights) {
    if (qfx::is_trainable(name)) CHECK(m.weights.at(name) == w);
  }
}

TEST_CASE("training is deterministic") {
  const qfx::LabeledImages d = toy_set(4, 28);
  qfx::TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 3;
  cfg.seed = 29;
  cfg.quant = QuantConfig::uniform(QFormat(4, 4));
  BackboneModel a = small_net(30), b = small_net(30);
  LinearHead ha = LinearHead::create(2, a.feature_dim, 31), hb = ha;
  const auto ra = qfx::train(a, ha, d, cfg);
  const auto rb = qfx::train(b, hb, d, cfg);
  CHECK(a.weights == b.weights);
  CHECK(qfx::history_csv(ra) == qfx::history_csv(rb));
  CHECK(qfx::history_csv(ra).starts_with("epoch,batch,loss,train_acc\n"));
  CHECK(ra.history.size() == 2 * 3);
}

TEST_CASE("divergence and bad configs are reported") {
  qfx::TrainConfig cfg;
  cfg.epochs = 5;
  cfg.batch_size = 4;
  cfg.learning_rate = 1e30;
  cfg.weight_decay = 0.0;
  // Without batch norm nothing rescales the exploding weights.
  BackboneModel m = qfx::build_resnet(1, {4}, {.batchnorm = false});
  qfx::init_weights(m, 32);
  LinearHead head = LinearHead::create(2, m.feature_dim, 33);
  CHECK_THROWS_AS(qfx::train(m, head, toy_set(4, 34), cfg), qfx::NumericError);

  qfx::TrainConfig bad;
  bad.batch_size = 0;
  CHECK_THROWS_AS(bad.validate(), qfx::ConfigError);
  bad = {};
  bad.learning_rate = -1.0;
  CHECK_THROWS_AS(bad.validate(), qfx::ConfigError);
  BackboneModel m2 = small_net(35);
  LinearHead wrong = LinearHead::create(3, m2.feature_dim, 36);
  CHECK_THROWS_AS(qfx::train(m2, wrong, toy_set(2, 37), qfx::TrainConfig{}), qfx::Error);
}
