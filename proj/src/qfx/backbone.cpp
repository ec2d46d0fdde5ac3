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

#include "qfx/backbone.hpp"

#include <cmath>
#include <string>

#include "qfx/error.hpp"
#include "qfx/rng.hpp"

namespace qfx {
namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

void append_conv_specs(const ConvLayer& c, std::vector<ParamSpec>& out) {
  out.push_back({c.name + ".weight",
                 {c.out_channels, c.in_channels, c.kernel, c.kernel}});
  if (c.has_bias) out.push_back({c.name + ".bias", {c.out_channels}});
}

void append_bn_specs(const BatchNormLayer& b, std::vector<ParamSpec>& out) {
  for (const char* suffix : {".weight", ".bias", ".running_mean",
                             ".running_var"}) {
    out.push_back({b.name + suffix, {b.channels}});
  }
}

const Tensor& lookup(const WeightStore& store, const std::string& name) {
  const auto it = store.find(name);
  if (it == store.end()) throw ShapeError("missing weight tensor '" + name + "'");
  return it->second;
}

ConvLayer make_conv(const std::string& name, std::size_t in, std::size_t out,
                    std::size_t kernel) {
  ConvLayer c;
  c.name = name;
  c.in_channels = in;
  c.out_channels = out;
  c.kernel = kernel;
  c.stride = 1;
  c.padding = kernel / 2;
  return c;
}

}  // namespace

std::string layer_kind(const LayerSpec& layer) {
  return std::visit(
      Overloaded{
          [](const ConvLayer&) { return std::string("conv"); },
          [](const BatchNormLayer&) { return std::string("batchnorm"); },
          [](const ReluLayer&) { return std::string("relu"); },
          [](const MaxPoolLayer&) { return std::string("maxpool"); },
          [](const ResidualBeginLayer&) { return std::string("residual_begin"); },
          [](const ResidualAddLayer&) { return std::string("residual_add"); },
          [](const GlobalAvgPoolLayer&) { return std::string("global_avgpool"); },
      },
      layer);
}

std::vector<ParamSpec> BackboneModel::parameter_specs() const {
  std::vector<ParamSpec> specs;
  for (const auto& layer : layers) {
    if (const auto* c = std::get_if<ConvLayer>(&layer)) {
      append_conv_specs(*c, specs);
    } else if (const auto* b = std::get_if<BatchNormLayer>(&layer)) {
      append_bn_specs(*b, specs);
    } else if (const auto* r = std::get_if<ResidualAddLayer>(&layer)) {
      if (r->projection) append_conv_specs(*r->projection, specs);
      if (r->projection_bn) append_bn_specs(*r->projection_bn, specs);
    }
  }
  return specs;
}

std::size_t BackboneModel::parameter_count() const {
  std::size_t total = 0;
  for (const auto& spec : parameter_specs()) total += shape_numel(spec.shape);
  return total;
}

std::size_t BackboneModel::conv_layer_count() const {
  std::size_t n = 0;
  for (const auto& layer : layers) n += std::holds_alternative<ConvLayer>(layer);
  return n;
}

void BackboneModel::validate() const {
  int depth = 0;
  std::size_t pools = 0;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& layer = layers[i];
    if (std::holds_alternative<ResidualBeginLayer>(layer)) ++depth;
    if (std::holds_alternative<ResidualAddLayer>(layer) && --depth < 0) {
      throw ShapeError("layer " + std::to_string(i) +
                       ": residual_add without matching residual_begin");
    }
    if (std::holds_alternative<GlobalAvgPoolLayer>(layer)) {
      ++pools;
      if (i + 1 != layers.size()) {
        throw ShapeError("global_avgpool must be the last layer");
      }
    }
  }
  if (depth != 0) throw ShapeError("unbalanced residual_begin/residual_add");
  if (pools != 1) throw ShapeError("model needs exactly one global_avgpool");
  for (const auto& spec : parameter_specs()) {
    lookup(weights, spec.name).require_shape(spec.shape, spec.name);
  }
}

BackboneModel build_resnet(std::size_t input_channels,
                           const std::vector<std::size_t>& widths,
                           const ResNetOptions& options) {
  if (input_channels == 0 || widths.empty()) {
    throw ConfigError("build_resnet: need positive input channels and widths");
  }
  BackboneModel model;
  model.arch = "custom";
  model.input_channels = input_channels;
  std::size_t in = input_channels;
  for (std::size_t b = 0; b < widths.size(); ++b) {
    const std::size_t out = widths[b];
    if (out == 0) throw ConfigError("build_resnet: zero block width");
    const std::string prefix = "block" + std::to_string(b + 1);
    model.layers.emplace_back(ResidualBeginLayer{});
    for (int c = 1; c <= 3; ++c) {
      const std::string idx = std::to_string(c);
      model.layers.emplace_back(
          make_conv(prefix + ".conv" + idx, c == 1 ? in : out, out, 3));
      if (options.batchnorm) {
        model.layers.emplace_back(
            BatchNormLayer{prefix + ".bn" + idx, out, options.bn_eps});
      }
      if (c < 3) model.layers.emplace_back(ReluLayer{});
    }
    ResidualAddLayer add;
    if (in != out) {
      add.projection = make_conv(prefix + ".shortcut", in, out, 1);
      if (options.batchnorm) {
        add.projection_bn =
            BatchNormLayer{prefix + ".shortcut_bn", out, options.bn_eps};
      }
    }
    model.layers.emplace_back(std::move(add));
    model.layers.emplace_back(ReluLayer{});
    model.layers.emplace_back(MaxPoolLayer{2, 2});
    in = out;
  }
  model.layers.emplace_back(GlobalAvgPoolLayer{});
  model.feature_dim = widths.back();
  return model;
}

BackboneModel build_resnet12(std::size_t input_channels,
                             std::size_t base_width) {
  BackboneModel m = build_resnet(
      input_channels,
      {base_width, 2 * base_width, 4 * base_width, 8 * base_width});
  m.arch = "resnet12";
  return m;
}

BackboneModel build_resnet_lite(std::size_t input_channels,
                                std::size_t base_width) {
  BackboneModel m =
      build_resnet(input_channels, {base_width, 2 * base_width});
  m.arch = "resnet_lite";
  return m;
}

BackboneModel build_arch(const std::string& arch, std::size_t input_channels,
                         std::size_t base_width) {
  if (arch == "resnet12") return build_resnet12(input_channels, base_width);
  if (arch == "resnet_lite") return build_resnet_lite(input_channels, base_width);
  throw ConfigError("unknown architecture '" + arch +
                    "' (expected resnet12 or resnet_lite)");
}

void init_weights(BackboneModel& model, std::uint64_t seed) {
  model.weights.clear();
  const auto specs = model.parameter_specs();
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto& spec = specs[i];
    Tensor t(spec.shape);
    const auto ends_with = [&](const char* suffix) {
      const std::string s(suffix);
      return spec.name.size() >= s.size() &&
             spec.name.compare(spec.name.size() - s.size(), s.size(), s) == 0;
    };
    if (spec.shape.size() == 4) {
      const double fan_in =
          static_cast<double>(spec.shape[1] * spec.shape[2] * spec.shape[3]);
      const double stddev = std::sqrt(2.0 / fan_in);
      CounterRng rng(derive_key(seed, i));
      for (double& v : t.data()) v = stddev * rng.normal();
    } else if (ends_with(".running_var") ||
               (ends_with(".weight") && spec.name.find("bn") != std::string::npos)) {
      t = Tensor(spec.shape, 1.0);
    }
    model.weights.emplace(spec.name, std::move(t));
  }
}

ConvParams conv_params(const BackboneModel& model, const ConvLayer& layer) {
  ConvParams p;
  p.out_channels = layer.out_channels;
  p.in_channels = layer.in_channels;
  p.kernel_h = p.kernel_w = layer.kernel;
  p.stride = layer.stride;
  p.padding = layer.padding;
  p.weights = lookup(model.weights, layer.name + ".weight");
  if (layer.has_bias) p.bias = lookup(model.weights, layer.name + ".bias");
  return p;
}

BatchNormParams bn_params(const BackboneModel& model,
                          const BatchNormLayer& layer) {
  BatchNormParams p;
  p.gamma = lookup(model.weights, layer.name + ".weight");
  p.beta = lookup(model.weights, layer.name + ".bias");
  p.running_mean = lookup(model.weights, layer.name + ".running_mean");
  p.running_var = lookup(model.weights, layer.name + ".running_var");
  p.eps = layer.eps;
  return p;
}

namespace {

void store_conv(BackboneModel& out, const ConvLayer& layer,
                const ConvParams& p) {
  out.weights[layer.name + ".weight"] = p.weights;
  if (p.bias) out.weights[layer.name + ".bias"] = *p.bias;
}

}  // namespace

BackboneModel fold_batchnorm(const BackboneModel& model) {
  BackboneModel out;
  out.arch = model.arch + "-folded";
  out.input_channels = model.input_channels;
  out.feature_dim = model.feature_dim;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const auto& layer = model.layers[i];
    if (const auto* c = std::get_if<ConvLayer>(&layer)) {
      ConvParams p = conv_params(model, *c);
      ConvLayer folded = *c;
      if (i + 1 < model.layers.size()) {
        if (const auto* b = std::get_if<BatchNormLayer>(&model.layers[i + 1])) {
          p = batchnorm_fold(p, bn_params(model, *b));
          ++i;
        }
      }
      folded.has_bias = p.bias.has_value();
      store_conv(out, folded, p);
      out.layers.emplace_back(folded);
    } else if (std::holds_alternative<BatchNormLayer>(layer)) {
      throw ShapeError("fold_batchnorm: batch-norm layer " +
                       std::get<BatchNormLayer>(layer).name +
                       " does not follow a convolution");
    } else if (const auto* r = std::get_if<ResidualAddLayer>(&layer)) {
      ResidualAddLayer folded;
      if (r->projection) {
        ConvParams p = conv_params(model, *r->projection);
        if (r->projection_bn) p = batchnorm_fold(p, bn_params(model, *r->projection_bn));
        ConvLayer c = *r->projection;
        c.has_bias = p.bias.has_value();
        store_conv(out, c, p);
        folded.projection = c;
      }
      out.layers.emplace_back(folded);
    } else {
      out.layers.push_back(layer);
    }
  }
  out.validate();
  return out;
}

namespace {

Tensor apply_conv(const BackboneModel& model, const ConvLayer& layer,
                  const Tensor& x, const QuantConfig& qc) {
  Tensor y = conv2d_quant(x, conv_params(model, layer), qc);
  y.require_finite(layer.name);
  return y;
}

Tensor apply_bn(const BackboneModel& model, const BatchNormLayer& layer,
                const Tensor& x, const QuantConfig& qc) {
  Tensor y = maybe_quantize(batchnorm_inference(x, bn_params(model, layer)), qc);
  y.require_finite(layer.name);
  return y;
}

}  // namespace

Tensor forward(const BackboneModel& model, const Tensor& input,
               const QuantConfig& qc) {
  if (input.rank() != 4 || input.dim(1) != model.input_channels) {
    throw ShapeError("forward: expected input [N," +
                     std::to_string(model.input_channels) + ",H,W], got " +
                     shape_to_string(input.shape()));
  }
  input.require_finite("forward input");
  Tensor x = maybe_quantize(input, qc);
  std::vector<Tensor> saved;
  for (const auto& layer : model.layers) {
    std::visit(
        Overloaded{
            [&](const ConvLayer& c) { x = apply_conv(model, c, x, qc); },
            [&](const BatchNormLayer& b) { x = apply_bn(model, b, x, qc); },
            [&](const ReluLayer&) { x = relu_quant(x, qc); },
            [&](const MaxPoolLayer& m) { x = maxpool2d(x, m.window, m.stride); },
            [&](const ResidualBeginLayer&) { saved.push_back(x); },
            [&](const ResidualAddLayer& r) {
              Tensor shortcut = std::move(saved.back());
              saved.pop_back();
              if (r.projection) {
                shortcut = apply_conv(model, *r.projection, shortcut, qc);
              }
              if (r.projection_bn) {
                shortcut = apply_bn(model, *r.projection_bn, shortcut, qc);
              }
              x = maybe_quantize(add(x, shortcut), qc);
              x.require_finite("residual_add");
            },
            [&](const GlobalAvgPoolLayer&) {
              x = maybe_quantize(global_avgpool(x), qc);
            },
        },
        layer);
  }
  if (x.rank() != 2 || x.dim(1) != model.feature_dim) {
    throw ShapeError("forward: model produced " + shape_to_string(x.shape()) +
                     ", expected feature_dim " +
                     std::to_string(model.feature_dim));
  }
  return x;
}

Tensor extract_features(const BackboneModel& model, const Tensor& images,
                        const QuantConfig& qc, std::size_t chunk) {
  if (images.rank() != 4) {
    throw ShapeError("extract_features: expected NCHW images, got " +
                     shape_to_string(images.shape()));
  }
  const std::size_t n = images.dim(0);
  const std::size_t per = images.size() / std::max<std::size_t>(n, 1);
  Tensor features({n, model.feature_dim});
  for (std::size_t start = 0; start < n; start += chunk) {
    const std::size_t count = std::min(chunk, n - start);
    std::vector<double> block(images.data().begin() + start * per,
                              images.data().begin() + (start + count) * per);
    Shape shape = images.shape();
    shape[0] = count;
    const Tensor out = forward(model, Tensor(shape, std::move(block)), qc);
    std::copy(out.data().begin(), out.data().end(),
              features.data().begin() + start * model.feature_dim);
  }
  return features;
}

}  // namespace qfx
