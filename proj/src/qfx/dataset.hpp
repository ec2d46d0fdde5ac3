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

#ifndef QFX_DATASET_HPP_
#define QFX_DATASET_HPP_

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "qfx/tensor.hpp"

namespace qfx {

/// Images [N,C,H,W] in [0,1] with integer class labels in [0, num_classes).
struct LabeledImages {
  Tensor images;
  std::vector<int> labels;
  std::size_t num_classes = 0;

  std::size_t size() const noexcept { return labels.size(); }
  /// Copies sample `index` into a [1,C,H,W] tensor.
  Tensor sample(std::size_t index) const;
  /// Gathers the given samples into one batch.
  Tensor gather(const std::vector<std::size_t>& indices) const;
  /// Samples whose label lies in [first, first+count), relabelled from 0.
  LabeledImages class_range(int first, int count) const;
};

/// Generative parameters of one grating class.
struct GratingClass {
  double orientation = 0.0;  // radians in [0, pi)
  double frequency = 0.1;    // cycles per pixel
};

struct SyntheticDatasetSpec {
  std::size_t classes = 20;
  std::size_t samples_per_class = 100;
  std::size_t image_size = 32;
  std::size_t channels = 1;
  std::uint64_t seed = 0;
  double noise = 0.25;               // Gaussian pixel noise stddev
  double orientation_jitter = 0.08;  // radians, per sample
  double frequency_jitter = 0.06;    // relative, per sample
  /// One entry per class. Filled from `seed` by default_classes() when
  /// empty.
  std::vector<GratingClass> class_params;
};

/// Distinct per-class orientation/frequency pairs derived from `seed`.
std::vector<GratingClass> default_classes(std::size_t count,
                                          std::uint64_t seed);

/// Oriented sinusoidal gratings with random phase plus Gaussian noise,
/// clamped to [0,1]. Image (class c, index i) depends only on the spec.
LabeledImages generate_synthetic(const SyntheticDatasetSpec& spec);

/// Renders one image; exposed so callers can check purity per index.
Tensor render_grating(const SyntheticDatasetSpec& spec, std::size_t cls,
                      std::size_t index);

/// Directory layout: one "class_XXXX.bin" file per class, each a sequence
/// of records [label byte][H*W*C pixel bytes, HWC order], plus "meta.txt"
/// holding "height width channels".
LabeledImages load_cifar_like(const std::filesystem::path& dir);
void save_cifar_like(const LabeledImages& data,
                     const std::filesystem::path& dir);

}  // namespace qfx

#endif  // QFX_DATASET_HPP_
