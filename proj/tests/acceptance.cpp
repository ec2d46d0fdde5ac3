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

// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit when any
// criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "qfx/backbone.hpp"
#include "qfx/commands.hpp"
#include "qfx/error.hpp"
#include "qfx/fewshot.hpp"
#include "qfx/fixedpoint.hpp"
#include "qfx/ops.hpp"
#include "qfx/ptq.hpp"
#include "qfx/rng.hpp"
#include "qfx/training.hpp"
#include "qfx/weights_io.hpp"

namespace fs = std::filesystem;
using qfx::QFormat;
using qfx::QuantConfig;
using qfx::Tensor;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const char* budget_name, double budget_s,
            const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const bool in_time = budget_s <= 0 || secs <= budget_s;
  const bool pass = o.pass && in_time;
  if (!pass) ++failures;
  std::printf("criterion %d: %s  %s (%.1fs, budget %s)%s\n", id, pass ? "PASS" : "FAIL",
              o.detail.c_str(), secs, budget_name, in_time ? "" : " over budget");
  std::fflush(stdout);
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

Tensor random_tensor(qfx::Shape shape, qfx::CounterRng& rng, double lo, double hi) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// ---------------------------------------------------------------------------

Outcome grid_round_trip() {
  std::size_t checked = 0;
  for (int i = 1; i <= 8; ++i) {
    for (int f = 0; f <= 8; ++f) {
      const QFormat q(i, f);
      const double step = std::ldexp(1.0, -f);
      for (std::int64_t c = q.min_code(); c <= q.max_code(); ++c) {
        const double v = static_cast<double>(c) * step;
        if (qfx::quantize(v, q) != v || qfx::encode(v, q).raw != c) {
          return {false, fmt("Q%g.%g code %g not a fixed point", i, f, double(c))};
        }
        // Midpoints round to the even neighbour.
        if (c < q.max_code()) {
          const double mid = v + step / 2;
          const double want = (c % 2 == 0) ? v : v + step;
          if (qfx::quantize(mid, q) != want) {
            return {false, fmt("Q%g.%g midpoint above code %g", i, f, double(c))};
          }
        }
        ++checked;
      }
      if (qfx::quantize(1e9, q) != q.max_value() || qfx::quantize(-1e9, q) != q.min_value()) {
        return {false, fmt("Q%g.%g does not saturate", i, f)};
      }
    }
  }
  const QFormat q44(4, 4);
  const bool q44_ok = q44.min_value() == -8.0 && q44.max_value() == 7.9375 &&
                      q44.step() == 0.0625 && q44.num_values() == 256;
  return {q44_ok, fmt("%g grid points, Q4.4 range [%g, %g] step %g", double(checked),
                      q44.min_value(), q44.max_value(), q44.step())};
}

Outcome conv_oracles() {
  qfx::CounterRng rng(qfx::derive_key(2026, 2));
  double worst = 0;
  std::size_t mismatched = 0, off_grid = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.below(3), c = 1 + rng.below(4), o = 1 + rng.below(4);
    const std::size_t k = 1 + rng.below(3), stride = 1 + rng.below(2), pad = rng.below(2);
    const std::size_t h = k + rng.below(9), w = k + rng.below(9);
    qfx::ConvParams p;
    p.out_channels = o;
    p.in_channels = c;
    p.kernel_h = p.kernel_w = k;
    p.stride = stride;
    p.padding = pad;
    p.weights = random_tensor({o, c, k, k}, rng, -1, 1);
    if (trial % 2 == 0) p.bias = random_tensor({o}, rng, -1, 1);
    const Tensor x = random_tensor({n, c, h, w}, rng, -2, 2);
    worst = std::max(worst, qfx::max_abs_diff(qfx::conv2d(x, p),
                                              oracle::conv(x, p.weights, p.bias, stride, pad)));

    const int qi = 2 + static_cast<int>(rng.below(7)), qf = static_cast<int>(rng.below(9));
    const QFormat q(qi, qf);
    const Tensor xq = oracle::quantize(x, qi, qf);
    std::optional<Tensor> bq;
    if (p.bias) bq = oracle::quantize(*p.bias, qi, qf);
    const Tensor want =
        oracle::quantize(oracle::conv(xq, oracle::quantize(p.weights, qi, qf), bq, stride, pad),
                         qi, qf);
    const Tensor got = qfx::conv2d_quant(xq, p, QuantConfig::uniform(q));
    if (!(got == want)) ++mismatched;
    for (double v : got.data()) off_grid += !q.representable(v);
  }
  return {worst <= 1e-6 && mismatched == 0 && off_grid == 0,
          fmt("float max diff %.3g, quant mismatches %g, off-grid %g", worst,
              double(mismatched), double(off_grid))};
}

Outcome ncm_oracles() {
  qfx::CounterRng rng(qfx::derive_key(2026, 3));
  std::size_t disagreements = 0, ties = 0, queries = 0;
  const std::optional<QFormat> formats[] = {std::nullopt, QFormat(4, 4), QFormat(3, 3)};
  for (int e = 0; e < 1000; ++e) {
    const std::optional<QFormat> q = formats[e % 3];
    const std::optional<std::pair<int, int>> qp =
        q ? std::optional(std::pair{q->int_bits(), q->frac_bits()}) : std::nullopt;
    const std::size_t ways = 2 + rng.below(4), shots = 1 + rng.below(5),
                      dim = 1 + rng.below(6);
    // Coarse dyadic values make equal distances common.
    const auto draw = [&] { return (static_cast<double>(rng.below(17)) - 8.0) / 4.0; };
    qfx::Episode ep;
    ep.ways = ways;
    ep.shots = shots;
    std::vector<std::vector<std::vector<double>>> support(ways);
    for (std::size_t w = 0; w < ways; ++w) {
      for (std::size_t s = 0; s < shots; ++s) {
        std::vector<double> v(dim);
        for (auto& x : v) x = draw();
        support[w].push_back(v);
      }
      if (rng.below(4) == 0 && w > 0) support[w] = support[w - 1];  // duplicate class
    }
    ep.support = support;
    const auto centers = qfx::class_means(ep, q);
    const auto want_centers = oracle::class_means(support, qp);
    for (std::size_t w = 0; w < ways; ++w) {
      for (std::size_t d = 0; d < dim; ++d) {
        disagreements += centers.centers.at(w, d) != want_centers[w][d];
      }
    }
    for (int k = 0; k < 10; ++k) {
      std::vector<double> z(dim);
      for (auto& x : z) x = draw();
      const std::size_t got = qfx::classify(z, centers, q);
      const std::size_t want = oracle::classify(z, want_centers, qp);
      disagreements += got != want;
      // Count queries with more than one nearest center.
      std::vector<double> dists;
      for (const auto& c : want_centers) {
        double acc = 0;
        for (std::size_t j = 0; j < dim; ++j) {
          double diff = (qp ? oracle::quantize(z[j], qp->first, qp->second) : z[j]) - c[j];
          if (qp) diff = oracle::quantize(diff, qp->first, qp->second);
          acc += diff * diff;
        }
        dists.push_back(acc);
      }
      const double best = *std::min_element(dists.begin(), dists.end());
      ties += std::count(dists.begin(), dists.end(), best) > 1;
      ++queries;
    }
  }
  return {disagreements == 0 && ties > 0,
          fmt("%g queries, %g ties, %g disagreements", double(queries), double(ties),
              double(disagreements))};
}

Outcome gradients() {
  qfx::BackboneModel m = qfx::build_resnet_lite(1, 16);
  qfx::init_weights(m, 11);
  qfx::CounterRng rng(qfx::derive_key(2026, 4));
  const Tensor images = random_tensor({4, 1, 8, 8}, rng, -1, 1);
  const std::vector<int> labels{0, 1, 2, 1};
  const qfx::LinearHead head = qfx::LinearHead::create(3, m.feature_dim, 12);
  qfx::GradCheckOptions opt;
  opt.max_per_tensor = 16;
  opt.seed = 5;
  // Small enough that no perturbation straddles a ReLU or max-pool switch.
  opt.epsilon = 1e-6;
  const auto fd = qfx::grad_check(m, head, images, labels, opt);
  double worst = 0;
  std::string worst_name;
  for (const auto& e : fd.entries) {
    if (e.max_rel_error > worst) {
      worst = e.max_rel_error;
      worst_name = e.name;
    }
  }

  // Clipped straight-through estimator: gradient passes strictly inside
  // the representable range and nowhere else.
  std::size_t ste_bad = 0;
  for (int i = 1; i <= 6; ++i) {
    for (int f = 0; f <= 4; ++f) {
      const QFormat q(i, f);
      Tensor pre({601});
      for (std::size_t k = 0; k < pre.size(); ++k) {
        pre[k] = (q.min_value() - 1.0) +
                 (q.max_value() - q.min_value() + 2.0) * static_cast<double>(k) / 600.0;
      }
      pre[0] = q.min_value();
      pre[1] = q.max_value();
      const Tensor g = random_tensor({601}, rng, -1, 1);
      const Tensor out = qfx::ste_backward(g, pre, q);
      for (std::size_t k = 0; k < pre.size(); ++k) {
        const bool inside = pre[k] > q.min_value() && pre[k] < q.max_value();
        ste_bad += out[k] != (inside ? g[k] : 0.0);
      }
    }
  }
  return {fd.all_finite && worst <= 1e-3 && ste_bad == 0,
          fmt("%g tensors, worst FD rel error %.2e", double(fd.entries.size()), worst) +
              " (" + worst_name + "), STE violations " + std::to_string(ste_bad)};
}

// ---------------------------------------------------------------------------
// Few-shot accuracy criteria share one experiment.

struct Experiment {
  qfx::RunConfig cfg;
  qfx::ExperimentData data;
  std::optional<qfx::BackboneModel> float_model;
  qfx::AccuracyStat float_acc;
};

qfx::AccuracyStat evaluate(const Experiment& x, const qfx::BackboneModel& m,
                           const QuantConfig& qc) {
  return qfx::evaluate_pipeline(m, qc, x.data.base.images, x.data.novel.images, x.data.plans,
                                x.cfg.standardize)
      .accuracy;
}

qfx::AccuracyStat qat(const Experiment& x, const QFormat& f) {
  const auto qc = QuantConfig::uniform(f);
  const auto trained = qfx::train_backbone(x.cfg, x.data, qc);
  return evaluate(x, trained.model, qc);
}

qfx::AccuracyStat ptq(const Experiment& x, const QFormat& f) {
  qfx::BackboneModel arch = *x.float_model;
  arch.weights.clear();
  return qfx::run_ptq(x.float_model->weights, arch, QuantConfig::uniform(f),
                      x.data.base.images, x.data.novel.images, x.data.plans,
                      x.cfg.standardize)
      .accuracy;
}

Experiment& experiment() {
  static Experiment x = [] {
    Experiment e;
    e.cfg.command = qfx::Command::kSweep;
    e.cfg.modes = {qfx::Mode::kQat, qfx::Mode::kPtq};
    e.cfg.formats = {QFormat(16, 16), QFormat(3, 3), QFormat(5, 5), QFormat(6, 6)};
    e.cfg.validate();
    e.data = qfx::load_experiment_data(e.cfg);
    e.float_model = qfx::train_backbone(e.cfg, e.data, QuantConfig::disabled()).model;
    e.float_acc = evaluate(e, *e.float_model, QuantConfig::disabled());
    std::printf("float baseline %s over %zu episodes\n", e.float_acc.to_string().c_str(),
                e.float_acc.episodes);
    return e;
  }();
  return x;
}

Outcome high_precision() {
  const Experiment& x = experiment();
  const QFormat q(16, 16);
  const auto p = ptq(x, q), t = qat(x, q);
  const double dp = p.mean - x.float_acc.mean, dt = t.mean - x.float_acc.mean;
  return {std::abs(dp) <= 1.0 && std::abs(dt) <= 1.0 && x.float_acc.episodes == 2000,
          "float " + x.float_acc.to_string() + ", PTQ " + p.to_string() + " (" +
              fmt("%+.2f", dp) + "), QAT " + t.to_string() + " (" + fmt("%+.2f", dt) + ")"};
}

Outcome low_precision_gap() {
  const Experiment& x = experiment();
  const QFormat q(3, 3);
  const auto p = ptq(x, q), t = qat(x, q);
  const double gap = (x.float_acc.mean - p.mean) - (x.float_acc.mean - t.mean);
  return {gap >= 15.0, "Q3.3 PTQ " + p.to_string() + ", QAT " + t.to_string() +
                           fmt(", PTQ drop exceeds QAT drop by %.2f (need >= 15)", gap)};
}

Outcome mid_precision() {
  const Experiment& x = experiment();
  const auto t = qat(x, QFormat(5, 5));
  const auto p = ptq(x, QFormat(6, 6));
  const double dt = t.mean - x.float_acc.mean, dp = p.mean - x.float_acc.mean;
  return {std::abs(dt) <= 2.0 && std::abs(dp) <= 2.0,
          "QAT Q5.5 " + t.to_string() + " (" + fmt("%+.2f", dt) + "), PTQ Q6.6 " +
              p.to_string() + " (" + fmt("%+.2f", dp) + ")"};
}

Outcome reproducible_csv() {
  qfx::RunConfig c;
  c.command = qfx::Command::kSweep;
  c.modes = {qfx::Mode::kQat, qfx::Mode::kPtq};
  c.formats = {QFormat(4, 4), QFormat(8, 8)};
  c.base_width = 4;
  c.protocol = {5, 1, 5, 100};
  c.dataset.base_classes = 6;
  c.dataset.novel_classes = 8;
  c.dataset.samples_per_class = 10;
  c.dataset.image_size = 8;
  c.training.epochs = 2;
  c.training.batch_size = 8;
  // The output directory is part of the config, so both runs share it.
  c.out = (fs::temp_directory_path() / "qfx_acceptance_sweep").string();
  std::vector<std::string> csv;
  for (int run = 0; run < 2; ++run) {
    fs::remove_all(c.out);
    qfx::run_command(c);
    const auto bytes = qfx::read_file(fs::path(c.out) / "report.csv");
    csv.emplace_back(bytes.begin(), bytes.end());
  }
  return {csv[0] == csv[1] && !csv[0].empty(),
          fmt("two sweeps, %g and %g CSV bytes", double(csv[0].size()), double(csv[1].size())) +
              (csv[0] == csv[1] ? ", identical" : ", different")};
}

}  // namespace

int main() {
  report(1, "1s", 1.0, grid_round_trip);
  report(2, "10s", 10.0, conv_oracles);
  report(3, "5s", 5.0, ncm_oracles);
  report(4, "60s", 60.0, gradients);
  // The shared float training is charged to criterion 5.
  report(5, "10min", 600.0, high_precision);
  report(6, "15min", 900.0, low_precision_gap);
  report(7, "none", 0.0, mid_precision);
  report(8, "none", 0.0, reproducible_csv);
  std::printf("%s: %d of 8 criteria failed\n", failures ? "FAIL" : "PASS", failures);
  return failures ? 1 : 0;
}
