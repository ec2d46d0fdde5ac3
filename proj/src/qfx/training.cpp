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

#include "qfx/training.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

#include "qfx/error.hpp"
#include "qfx/rng.hpp"

namespace qfx {

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("train: batch_size must be positive");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("train: learning_rate must be finite and >= 0");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw ConfigError("train: momentum must be in [0, 1)");
  }
  if (!(weight_decay >= 0.0)) {
    throw ConfigError("train: weight_decay must be >= 0");
  }
  if (!(bn_momentum >= 0.0 && bn_momentum <= 1.0)) {
    throw ConfigError("train: bn_momentum must be in [0, 1]");
  }
}

LinearHead LinearHead::create(std::size_t classes, std::size_t feature_dim,
                              std::uint64_t seed) {
  LinearHead head;
  head.weight = Tensor({classes, feature_dim});
  head.bias = Tensor({classes});
  const double bound = 1.0 / std::sqrt(static_cast<double>(feature_dim));
  CounterRng rng(derive_key(seed, 0x68656164ULL));
  for (double& v : head.weight.data()) v = rng.uniform(-bound, bound);
  for (double& v : head.bias.data()) v = rng.uniform(-bound, bound);
  return head;
}

bool is_trainable(const std::string& name) {
  const auto ends_with = [&](std::string_view s) {
    return name.size() >= s.size() &&
           name.compare(name.size() - s.size(), s.size(), s) == 0;
  };
  return !ends_with(".running_mean") && !ends_with(".running_var");
}

Tensor ste_backward(const Tensor& grad_out, const Tensor& pre_quant_input,
                    const QFormat& q) {
  grad_out.require_shape(pre_quant_input.shape(), "ste_backward");
  Tensor g = grad_out;
  const double lo = q.min_value(), hi = q.max_value();
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double x = pre_quant_input[i];
    if (!(x > lo && x < hi)) g[i] = 0.0;
  }
  return g;
}

namespace {

void accumulate(WeightStore& grads, const std::string& name, const Tensor& g) {
  auto [it, inserted] = grads.try_emplace(name, g);
  if (!inserted) {
    for (std::size_t i = 0; i < g.size(); ++i) it->second[i] += g[i];
  }
}

}  // namespace

GradientTape::GradientTape(const BackboneModel& model, const QuantConfig& qc,
                           BatchNormMode bn_mode)
    : model_(model), qc_(qc), bn_mode_(bn_mode) {}

Tensor GradientTape::ste(const Tensor& g, const Tensor& pre_quant) const {
  return qc_.enabled ? ste_backward(g, pre_quant, qc_.activation_format) : g;
}

Tensor GradientTape::conv_forward(const ConvLayer& layer, const Tensor& x,
                                  std::optional<ConvRecord>& rec) {
  ConvParams p = conv_params(model_, layer);
  if (qc_.enabled) {
    p.weights = quantize_tensor(p.weights, qc_.weight_format);
    if (p.bias) p.bias = quantize_tensor(*p.bias, qc_.activation_format);
  }
  Tensor y = conv2d(x, p);
  y.require_finite(layer.name);
  Tensor out = maybe_quantize(y, qc_);
  rec = ConvRecord{&layer, x, std::move(p), std::move(y)};
  return out;
}

Tensor GradientTape::bn_forward(const BatchNormLayer& layer, const Tensor& x,
                                std::optional<BnRecord>& rec) {
  const BatchNormParams bn = bn_params(model_, layer);
  const std::size_t nb = x.dim(0), ch = x.dim(1);
  const std::size_t plane = x.dim(2) * x.dim(3);
  const std::size_t count = nb * plane;
  Tensor y;
  Tensor x_hat(x.shape());
  Tensor inv_std({ch});
  if (bn_mode_ == BatchNormMode::kRunningStats) {
    y = batchnorm_inference(x, bn);
    for (std::size_t c = 0; c < ch; ++c) {
      inv_std[c] = 1.0 / std::sqrt(bn.running_var[c] + bn.eps);
    }
    for (std::size_t n = 0; n < nb; ++n)
      for (std::size_t c = 0; c < ch; ++c)
        for (std::size_t q = 0; q < plane; ++q) {
          const std::size_t i = (n * ch + c) * plane + q;
          x_hat[i] = (x[i] - bn.running_mean[c]) * inv_std[c];
        }
  } else {
    y = Tensor(x.shape());
    BatchStats stats{Tensor({ch}), Tensor({ch})};
    for (std::size_t c = 0; c < ch; ++c) {
      double sum = 0.0;
      for (std::size_t n = 0; n < nb; ++n)
        for (std::size_t q = 0; q < plane; ++q) sum += x[(n * ch + c) * plane + q];
      const double mean = sum / static_cast<double>(count);
      double sq = 0.0;
      for (std::size_t n = 0; n < nb; ++n)
        for (std::size_t q = 0; q < plane; ++q) {
          const double d = x[(n * ch + c) * plane + q] - mean;
          sq += d * d;
        }
      const double var = sq / static_cast<double>(count);
      inv_std[c] = 1.0 / std::sqrt(var + bn.eps);
      stats.mean[c] = mean;
      stats.var_unbiased[c] =
          count > 1 ? sq / static_cast<double>(count - 1) : var;
      for (std::size_t n = 0; n < nb; ++n)
        for (std::size_t q = 0; q < plane; ++q) {
          const std::size_t i = (n * ch + c) * plane + q;
          x_hat[i] = (x[i] - mean) * inv_std[c];
          y[i] = bn.gamma[c] * x_hat[i] + bn.beta[c];
        }
    }
    batch_stats_[layer.name] = std::move(stats);
  }
  y.require_finite(layer.name);
  Tensor out = maybe_quantize(y, qc_);
  rec = BnRecord{&layer, std::move(x_hat), std::move(inv_std), bn.gamma,
                 std::move(y)};
  return out;
}

Tensor GradientTape::forward(const Tensor& input) {
  if (input.rank() != 4 || input.dim(1) != model_.input_channels) {
    throw ShapeError("forward: expected input [N," +
                     std::to_string(model_.input_channels) + ",H,W], got " +
                     shape_to_string(input.shape()));
  }
  records_.clear();
  batch_stats_.clear();
  Tensor x = maybe_quantize(input, qc_);
  std::vector<Tensor> saved;
  for (const auto& layer : model_.layers) {
    if (const auto* c = std::get_if<ConvLayer>(&layer)) {
      std::optional<ConvRecord> rec;
      x = conv_forward(*c, x, rec);
      records_.emplace_back(std::move(*rec));
    } else if (const auto* b = std::get_if<BatchNormLayer>(&layer)) {
      std::optional<BnRecord> rec;
      x = bn_forward(*b, x, rec);
      records_.emplace_back(std::move(*rec));
    } else if (std::holds_alternative<ReluLayer>(layer)) {
      records_.emplace_back(ReluRecord{x});
      x = relu_quant(x, qc_);
    } else if (const auto* m = std::get_if<MaxPoolLayer>(&layer)) {
      records_.emplace_back(PoolRecord{x, m->window, m->stride});
      x = maxpool2d(x, m->window, m->stride);
    } else if (std::holds_alternative<ResidualBeginLayer>(layer)) {
      records_.emplace_back(BeginRecord{});
      saved.push_back(x);
    } else if (const auto* r = std::get_if<ResidualAddLayer>(&layer)) {
      AddRecord rec;
      Tensor shortcut = std::move(saved.back());
      saved.pop_back();
      if (r->projection) {
        shortcut = conv_forward(*r->projection, shortcut, rec.projection);
      }
      if (r->projection_bn) {
        shortcut = bn_forward(*r->projection_bn, shortcut, rec.projection_bn);
      }
      rec.pre_quant = add(x, shortcut);
      rec.pre_quant.require_finite("residual_add");
      x = maybe_quantize(rec.pre_quant, qc_);
      records_.emplace_back(std::move(rec));
    } else {
      AvgRecord rec{x.shape(), global_avgpool(x)};
      x = maybe_quantize(rec.pre_quant, qc_);
      records_.emplace_back(std::move(rec));
    }
  }
  return x;
}

Tensor GradientTape::conv_backward(const ConvRecord& rec, const Tensor& g_out,
                                   bool need_input, WeightStore& grads) const {
  const Tensor g = ste(g_out, rec.pre_quant);
  ConvGrads cg = conv2d_backward(rec.input, rec.used, g, need_input);
  if (qc_.enabled) {
    // Straight-through onto the float weights, clipped where they saturate.
    const Tensor& w = model_.weights.at(rec.layer->name + ".weight");
    cg.weights = ste_backward(cg.weights, w, qc_.weight_format);
    if (rec.layer->has_bias) {
      const Tensor& b = model_.weights.at(rec.layer->name + ".bias");
      cg.bias = ste_backward(cg.bias, b, qc_.activation_format);
    }
  }
  accumulate(grads, rec.layer->name + ".weight", cg.weights);
  if (rec.layer->has_bias) accumulate(grads, rec.layer->name + ".bias", cg.bias);
  return std::move(cg.input);
}

Tensor GradientTape::bn_backward(const BnRecord& rec, const Tensor& g_out,
                                 WeightStore& grads) const {
  const Tensor g = ste(g_out, rec.pre_quant);
  const std::size_t nb = g.dim(0), ch = g.dim(1);
  const std::size_t plane = g.dim(2) * g.dim(3);
  const double count = static_cast<double>(nb * plane);
  Tensor dgamma({ch}), dbeta({ch});
  Tensor dx(g.shape());
  for (std::size_t c = 0; c < ch; ++c) {
    double sum_g = 0.0, sum_gx = 0.0;
    for (std::size_t n = 0; n < nb; ++n)
      for (std::size_t q = 0; q < plane; ++q) {
        const std::size_t i = (n * ch + c) * plane + q;
        sum_g += g[i];
        sum_gx += g[i] * rec.x_hat[i];
      }
    dgamma[c] = sum_gx;
    dbeta[c] = sum_g;
    const double scale = rec.gamma[c] * rec.inv_std[c];
    for (std::size_t n = 0; n < nb; ++n)
      for (std::size_t q = 0; q < plane; ++q) {
        const std::size_t i = (n * ch + c) * plane + q;
        if (bn_mode_ == BatchNormMode::kRunningStats) {
          dx[i] = scale * g[i];
        } else {
          dx[i] = scale / count *
                  (count * g[i] - sum_g - rec.x_hat[i] * sum_gx);
        }
      }
  }
  accumulate(grads, rec.layer->name + ".weight", dgamma);
  accumulate(grads, rec.layer->name + ".bias", dbeta);
  return dx;
}

WeightStore GradientTape::backward(const Tensor& grad_features) const {
  if (records_.empty()) throw Error(ErrorKind::kInternal, "backward before forward");
  WeightStore grads;
  Tensor g = grad_features;
  std::vector<Tensor> shortcut_grads;
  for (std::size_t k = records_.size(); k-- > 0;) {
    const Record& record = records_[k];
    if (const auto* c = std::get_if<ConvRecord>(&record)) {
      g = conv_backward(*c, g, true, grads);
    } else if (const auto* b = std::get_if<BnRecord>(&record)) {
      g = bn_backward(*b, g, grads);
    } else if (const auto* r = std::get_if<ReluRecord>(&record)) {
      Tensor gr = g;
      const double hi = qc_.activation_format.max_value();
      for (std::size_t i = 0; i < gr.size(); ++i) {
        const double x = r->input[i];
        const bool pass = x > 0.0 && (!qc_.enabled || x < hi);
        if (!pass) gr[i] = 0.0;
      }
      g = std::move(gr);
    } else if (const auto* p = std::get_if<PoolRecord>(&record)) {
      g = maxpool2d_backward(p->input, p->window, p->stride, g);
    } else if (std::holds_alternative<BeginRecord>(record)) {
      g = add(g, shortcut_grads.back());
      shortcut_grads.pop_back();
    } else if (const auto* a = std::get_if<AddRecord>(&record)) {
      g = ste(g, a->pre_quant);
      Tensor gs = g;
      if (a->projection_bn) gs = bn_backward(*a->projection_bn, gs, grads);
      if (a->projection) gs = conv_backward(*a->projection, gs, true, grads);
      shortcut_grads.push_back(std::move(gs));
    } else {
      const auto& avg = std::get<AvgRecord>(record);
      g = global_avgpool_backward(avg.input_shape, ste(g, avg.pre_quant));
    }
  }
  return grads;
}

LossAndGrads loss_and_gradients(const BackboneModel& model,
                                const LinearHead& head, const Tensor& images,
                                std::span<const int> labels,
                                const QuantConfig& qc, BatchNormMode bn_mode,
                                bool with_grads) {
  if (images.rank() != 4 || images.dim(0) != labels.size()) {
    throw ShapeError("loss: images/labels batch mismatch");
  }
  GradientTape tape(model, qc, bn_mode);
  const Tensor features = tape.forward(images);
  const Tensor logits = linear(features, head.weight, head.bias);
  const std::size_t n = logits.dim(0), classes = logits.dim(1);

  LossAndGrads out;
  Tensor dlogits({n, classes});
  for (std::size_t i = 0; i < n; ++i) {
    const int label = labels[i];
    if (label < 0 || static_cast<std::size_t>(label) >= classes) {
      throw DataError("label " + std::to_string(label) +
                      " outside the head's " + std::to_string(classes) +
                      " classes");
    }
    double mx = logits.at(i, 0);
    std::size_t arg = 0;
    for (std::size_t j = 1; j < classes; ++j) {
      if (logits.at(i, j) > mx) {
        mx = logits.at(i, j);
        arg = j;
      }
    }
    out.correct += arg == static_cast<std::size_t>(label);
    double z = 0.0;
    for (std::size_t j = 0; j < classes; ++j) z += std::exp(logits.at(i, j) - mx);
    out.loss += (std::log(z) + mx - logits.at(i, static_cast<std::size_t>(label)));
    for (std::size_t j = 0; j < classes; ++j) {
      const double p = std::exp(logits.at(i, j) - mx) / z;
      dlogits.at(i, j) =
          (p - (j == static_cast<std::size_t>(label) ? 1.0 : 0.0)) /
          static_cast<double>(n);
    }
  }
  out.loss /= static_cast<double>(n);
  out.batch_stats = tape.batch_stats();
  if (!with_grads || !std::isfinite(out.loss)) return out;

  const std::size_t d = features.dim(1);
  Tensor dw({classes, d}), db({classes}), dfeat({n, d});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < classes; ++j) {
      const double gl = dlogits.at(i, j);
      db[j] += gl;
      for (std::size_t k = 0; k < d; ++k) {
        dw.at(j, k) += gl * features.at(i, k);
        dfeat.at(i, k) += gl * head.weight.at(j, k);
      }
    }
  out.grads = tape.backward(dfeat);
  out.grads["head.weight"] = std::move(dw);
  out.grads["head.bias"] = std::move(db);
  return out;
}

TrainResult train(BackboneModel& model, LinearHead& head,
                  const LabeledImages& data, const TrainConfig& cfg) {
  cfg.validate();
  model.validate();
  if (data.size() == 0) throw DataError("train: empty dataset");
  if (head.weight.dim(0) != data.num_classes) {
    throw DataError("train: head has " + std::to_string(head.weight.dim(0)) +
                    " outputs but the dataset has " +
                    std::to_string(data.num_classes) + " classes");
  }
  const std::size_t n = data.size();
  const std::size_t batches = (n + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = cfg.epochs * batches;
  std::map<std::string, Tensor> velocity;
  TrainResult result;
  std::vector<std::size_t> order(n);

  auto sgd = [&](const std::string& name, Tensor& w, const Tensor& g,
                 double lr) {
    auto [it, inserted] = velocity.try_emplace(name, Tensor(w.shape()));
    Tensor& v = it->second;
    for (std::size_t i = 0; i < w.size(); ++i) {
      v[i] = cfg.momentum * v[i] + g[i] + cfg.weight_decay * w[i];
      w[i] -= lr * v[i];
    }
  };

  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    CounterRng rng(derive_key(cfg.seed, 0x65706f6368ULL + epoch));
    shuffle(order.begin(), order.end(), rng);
    for (std::size_t b = 0; b < batches; ++b, ++step) {
      const std::size_t lo = b * cfg.batch_size;
      const std::size_t hi = std::min(n, lo + cfg.batch_size);
      std::vector<std::size_t> idx(order.begin() + lo, order.begin() + hi);
      std::vector<int> labels;
      for (std::size_t i : idx) labels.push_back(data.labels[i]);
      LossAndGrads r =
          loss_and_gradients(model, head, data.gather(idx), labels, cfg.quant,
                             BatchNormMode::kBatchStats);
      if (!std::isfinite(r.loss)) {
        throw NumericError("training diverged: loss " + std::to_string(r.loss) +
                           " at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(b) + " (learning_rate " +
                           std::to_string(cfg.learning_rate) + ")");
      }
      double lr = cfg.learning_rate;
      if (cfg.cosine_decay && total_steps > 0) {
        lr *= 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) /
                                    static_cast<double>(total_steps)));
      }
      for (auto& [name, w] : model.weights) {
        if (!is_trainable(name)) continue;
        sgd(name, w, r.grads.at(name), lr);
      }
      sgd("head.weight", head.weight, r.grads.at("head.weight"), lr);
      sgd("head.bias", head.bias, r.grads.at("head.bias"), lr);
      const double m = cfg.bn_momentum;
      for (const auto& [name, stats] : r.batch_stats) {
        Tensor& rm = model.weights.at(name + ".running_mean");
        Tensor& rv = model.weights.at(name + ".running_var");
        for (std::size_t c = 0; c < rm.size(); ++c) {
          rm[c] = (1.0 - m) * rm[c] + m * stats.mean[c];
          rv[c] = (1.0 - m) * rv[c] + m * stats.var_unbiased[c];
        }
      }
      result.history.push_back(
          {epoch, b, r.loss,
           100.0 * static_cast<double>(r.correct) / static_cast<double>(idx.size())});
    }
  }
  return result;
}

std::string history_csv(const TrainResult& result) {
  std::ostringstream out;
  out.precision(17);
  out << "epoch,batch,loss,train_acc\n";
  for (const auto& s : result.history) {
    out << s.epoch << "," << s.batch << "," << s.loss << "," << s.train_acc
        << "\n";
  }
  return out.str();
}

double classification_accuracy(const BackboneModel& model,
                               const LinearHead& head,
                               const LabeledImages& data,
                               const QuantConfig& qc) {
  const Tensor features = extract_features(model, data.images, qc);
  const Tensor logits = linear(features, head.weight, head.bias);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    std::size_t arg = 0;
    for (std::size_t j = 1; j < logits.dim(1); ++j) {
      if (logits.at(i, j) > logits.at(i, arg)) arg = j;
    }
    correct += arg == static_cast<std::size_t>(data.labels[i]);
  }
  return 100.0 * static_cast<double>(correct) /
         static_cast<double>(std::max<std::size_t>(1, data.size()));
}

double GradCheckReport::max_rel_error() const {
  double worst = 0.0;
  for (const auto& e : entries) worst = std::max(worst, e.max_rel_error);
  return worst;
}

GradCheckReport grad_check(const BackboneModel& model, const LinearHead& head,
                           const Tensor& images, std::span<const int> labels,
                           const GradCheckOptions& options) {
  const QuantConfig fp = QuantConfig::disabled();
  const LossAndGrads analytic =
      loss_and_gradients(model, head, images, labels, fp, options.bn_mode);
  GradCheckReport report;
  BackboneModel probe = model;
  LinearHead probe_head = head;
  auto loss_at = [&]() {
    return loss_and_gradients(probe, probe_head, images, labels, fp,
                              options.bn_mode, false)
        .loss;
  };
  auto tensor_ref = [&](const std::string& name) -> Tensor& {
    if (name == "head.weight") return probe_head.weight;
    if (name == "head.bias") return probe_head.bias;
    return probe.weights.at(name);
  };

  std::vector<std::string> names;
  for (const auto& [name, t] : model.weights) {
    if (is_trainable(name)) names.push_back(name);
  }
  names.push_back("head.weight");
  names.push_back("head.bias");

  CounterRng rng(derive_key(options.seed, 0x67636b));
  for (const auto& name : names) {
    Tensor& t = tensor_ref(name);
    const Tensor& grad = analytic.grads.at(name);
    std::vector<std::size_t> coords(t.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (options.max_per_tensor > 0 && coords.size() > options.max_per_tensor) {
      shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.max_per_tensor);
    }
    GradCheckEntry entry;
    entry.name = name;
    for (std::size_t i : coords) {
      const double saved = t[i];
      t[i] = saved + options.epsilon;
      const double up = loss_at();
      t[i] = saved - options.epsilon;
      const double down = loss_at();
      t[i] = saved;
      const double numeric = (up - down) / (2.0 * options.epsilon);
      if (!std::isfinite(numeric) || !std::isfinite(grad[i])) {
        report.all_finite = false;
      }
      entry.max_abs_error =
          std::max(entry.max_abs_error, std::abs(numeric - grad[i]));
      entry.max_abs_grad =
          std::max({entry.max_abs_grad, std::abs(grad[i]), std::abs(numeric)});
      ++entry.checked;
    }
    entry.max_rel_error =
        entry.max_abs_grad > 0.0 ? entry.max_abs_error / entry.max_abs_grad
                                 : entry.max_abs_error;
    report.entries.push_back(entry);
  }
  return report;
}

}  // namespace qfx
