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

#include "qfx/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>
#include <sstream>

#include "qfx/error.hpp"
#include "qfx/rng.hpp"

namespace qfx {

namespace {

std::size_t sample_stride(const Tensor& images) {
  return images.dim(1) * images.dim(2) * images.dim(3);
}

}  // namespace

Tensor LabeledImages::sample(std::size_t index) const {
  return gather({index});
}

Tensor LabeledImages::gather(const std::vector<std::size_t>& indices) const {
  const std::size_t stride = sample_stride(images);
  Shape shape = images.shape();
  shape[0] = indices.size();
  Tensor out(shape);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= size()) throw DataError("sample index out of range");
    const auto src = images.data().subspan(indices[i] * stride, stride);
    std::copy(src.begin(), src.end(), out.data().begin() + i * stride);
  }
  return out;
}

LabeledImages LabeledImages::class_range(int first, int count) const {
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < size(); ++i) {
    if (labels[i] >= first && labels[i] < first + count) keep.push_back(i);
  }
  LabeledImages out;
  out.images = gather(keep);
  out.num_classes = static_cast<std::size_t>(count);
  for (std::size_t i : keep) out.labels.push_back(labels[i] - first);
  return out;
}

std::vector<GratingClass> default_classes(std::size_t count,
                                          std::uint64_t seed) {
  // Lattice over (orientation, frequency); cells are shuffled by the seed
  // and each class is jittered inside its cell, so classes never coincide.
  const auto freq_levels = static_cast<std::size_t>(
      std::max(2.0, std::ceil(std::sqrt(static_cast<double>(count) / 2.0))));
  const std::size_t orient_levels = (count + freq_levels - 1) / freq_levels;
  std::vector<std::size_t> cells(orient_levels * freq_levels);
  for (std::size_t i = 0; i < cells.size(); ++i) cells[i] = i;
  CounterRng rng(derive_key(seed, 0x636c6173ULL));
  shuffle(cells.begin(), cells.end(), rng);

  constexpr double kMinFreq = 0.05;
  constexpr double kMaxFreq = 0.30;
  std::vector<GratingClass> classes;
  for (std::size_t c = 0; c < count; ++c) {
    const std::size_t oi = cells[c] / freq_levels;
    const std::size_t fi = cells[c] % freq_levels;
    const double ou = (oi + 0.25 + 0.5 * rng.uniform()) / orient_levels;
    const double fu = (fi + 0.25 + 0.5 * rng.uniform()) / freq_levels;
    classes.push_back({std::numbers::pi * ou,
                       kMinFreq * std::pow(kMaxFreq / kMinFreq, fu)});
  }
  return classes;
}

Tensor render_grating(const SyntheticDatasetSpec& spec, std::size_t cls,
                      std::size_t index) {
  if (cls >= spec.classes) {
    throw DataError("render_grating: class " + std::to_string(cls) + " of " +
                    std::to_string(spec.classes));
  }
  const GratingClass g = spec.class_params.empty()
                             ? default_classes(spec.classes, spec.seed)[cls]
                             : spec.class_params.at(cls);
  CounterRng rng(derive_key(derive_key(spec.seed, cls + 1), index));
  const double theta = g.orientation + spec.orientation_jitter * rng.normal();
  const double freq =
      g.frequency * std::exp(spec.frequency_jitter * rng.normal());
  const double phase = 2.0 * std::numbers::pi * rng.uniform();
  const double contrast = rng.uniform(0.6, 1.0);
  const double ct = std::cos(theta), st = std::sin(theta);
  const std::size_t s = spec.image_size;
  Tensor img({1, spec.channels, s, s});
  for (std::size_t c = 0; c < spec.channels; ++c)
    for (std::size_t y = 0; y < s; ++y)
      for (std::size_t x = 0; x < s; ++x) {
        const double u = static_cast<double>(x) * ct + static_cast<double>(y) * st;
        double v = 0.5 + 0.5 * contrast *
                             std::sin(2.0 * std::numbers::pi * freq * u + phase);
        if (spec.noise > 0.0) v += spec.noise * rng.normal();
        img.at(0, c, y, x) = std::clamp(v, 0.0, 1.0);
      }
  return img;
}

LabeledImages generate_synthetic(const SyntheticDatasetSpec& spec_in) {
  SyntheticDatasetSpec spec = spec_in;
  if (spec.classes == 0 || spec.samples_per_class == 0 ||
      spec.image_size == 0 || spec.channels == 0) {
    throw ConfigError("synthetic dataset: counts and sizes must be positive");
  }
  if (spec.class_params.empty()) {
    spec.class_params = default_classes(spec.classes, spec.seed);
  }
  if (spec.class_params.size() != spec.classes) {
    throw ConfigError("synthetic dataset: class_params has " +
                      std::to_string(spec.class_params.size()) +
                      " entries for " + std::to_string(spec.classes) +
                      " classes");
  }
  const std::size_t n = spec.classes * spec.samples_per_class;
  const std::size_t per = spec.channels * spec.image_size * spec.image_size;
  LabeledImages out;
  out.num_classes = spec.classes;
  out.images = Tensor({n, spec.channels, spec.image_size, spec.image_size});
  out.labels.reserve(n);
  std::size_t k = 0;
  for (std::size_t c = 0; c < spec.classes; ++c) {
    for (std::size_t i = 0; i < spec.samples_per_class; ++i, ++k) {
      const Tensor img = render_grating(spec, c, i);
      std::copy(img.data().begin(), img.data().end(),
                out.images.data().begin() + k * per);
      out.labels.push_back(static_cast<int>(c));
    }
  }
  return out;
}

namespace {

std::string class_file_name(std::size_t c) {
  std::string digits = std::to_string(c);
  return "class_" + std::string(4 - std::min<std::size_t>(4, digits.size()), '0') +
         digits + ".bin";
}

}  // namespace

void save_cifar_like(const LabeledImages& data,
                     const std::filesystem::path& dir) {
  if (data.num_classes > 256) {
    throw DataError("raw image layout stores labels in one byte (<= 256 classes)");
  }
  std::filesystem::create_directories(dir);
  const std::size_t c = data.images.dim(1), h = data.images.dim(2),
                    w = data.images.dim(3);
  std::vector<std::vector<unsigned char>> files(data.num_classes);
  for (std::size_t i = 0; i < data.size(); ++i) {
    auto& bytes = files.at(static_cast<std::size_t>(data.labels[i]));
    bytes.push_back(static_cast<unsigned char>(data.labels[i]));
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        for (std::size_t ch = 0; ch < c; ++ch) {
          const double v = std::clamp(data.images.at(i, ch, y, x), 0.0, 1.0);
          bytes.push_back(static_cast<unsigned char>(std::lround(v * 255.0)));
        }
  }
  std::ofstream meta(dir / "meta.txt");
  meta << "qfx-images 1\nsize " << h << " " << w << " " << c << "\n";
  const std::size_t record = 1 + h * w * c;
  for (std::size_t k = 0; k < files.size(); ++k) {
    meta << class_file_name(k) << " " << files[k].size() / record << "\n";
    std::ofstream out(dir / class_file_name(k), std::ios::binary);
    out.write(reinterpret_cast<const char*>(files[k].data()),
              static_cast<std::streamsize>(files[k].size()));
    if (!out) throw DataError("cannot write " + (dir / class_file_name(k)).string());
  }
  if (!meta) throw DataError("cannot write " + (dir / "meta.txt").string());
}

LabeledImages load_cifar_like(const std::filesystem::path& dir) {
  std::ifstream meta(dir / "meta.txt");
  if (!meta) throw DataError("cannot open " + (dir / "meta.txt").string());
  std::string magic, size_tag;
  int version = 0;
  std::size_t h = 0, w = 0, c = 0;
  if (!(meta >> magic >> version) || magic != "qfx-images" || version != 1 ||
      !(meta >> size_tag >> h >> w >> c) || size_tag != "size" || h == 0 ||
      w == 0 || c == 0) {
    throw DataError((dir / "meta.txt").string() + ": malformed header");
  }
  std::vector<std::pair<std::string, std::size_t>> entries;
  std::string name;
  std::size_t count = 0;
  while (meta >> name >> count) entries.emplace_back(name, count);
  if (entries.empty() || entries.size() > 256) {
    throw DataError((dir / "meta.txt").string() + ": bad class list");
  }

  const std::size_t record = 1 + h * w * c;
  LabeledImages out;
  out.num_classes = entries.size();
  std::vector<double> pixels;
  for (std::size_t k = 0; k < entries.size(); ++k) {
    const auto path = dir / entries[k].first;
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    const std::vector<unsigned char> bytes(std::istreambuf_iterator<char>(in),
                                           {});
    if (bytes.size() % record != 0) {
      throw DataError(path.string() + ": malformed record length (" +
                      std::to_string(bytes.size()) + " bytes is not a multiple of " +
                      std::to_string(record) + ")");
    }
    if (bytes.size() / record != entries[k].second) {
      throw DataError(path.string() + ": record count mismatch, meta.txt says " +
                      std::to_string(entries[k].second) + ", file holds " +
                      std::to_string(bytes.size() / record));
    }
    for (std::size_t r = 0; r < entries[k].second; ++r) {
      const unsigned char* rec = bytes.data() + r * record;
      if (rec[0] != k) {
        throw DataError(path.string() + ": record " + std::to_string(r) +
                        " has label " + std::to_string(rec[0]) +
                        ", expected " + std::to_string(k));
      }
      out.labels.push_back(static_cast<int>(k));
      // HWC on disk, CHW in memory.
      const std::size_t base = pixels.size();
      pixels.resize(base + h * w * c);
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
          for (std::size_t ch = 0; ch < c; ++ch) {
            pixels[base + (ch * h + y) * w + x] =
                static_cast<double>(rec[1 + (y * w + x) * c + ch]) / 255.0;
          }
    }
  }
  out.images = Tensor({out.labels.size(), c, h, w}, std::move(pixels));
  return out;
}

}  // namespace qfx
