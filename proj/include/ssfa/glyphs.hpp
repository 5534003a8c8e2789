/*
 * Copyright 2026 The ssfa-lab Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ssfa/rng.hpp"

namespace ssfa::data {

// Single-channel square image in [0,1], stored as float32 so that bundle
// files round-trip losslessly. Rendered glyphs are rotation-asymmetric by
// construction (orientation frame along the left and bottom edges).
struct Glyph {
  int size = 16;
  std::vector<float> pixels;  // size*size, row-major
  int label = -1;
  int domain_tag = 0;  // 0 = clean, 1..K = training corruption, >K = unseen

  float at(int r, int c) const { return pixels[static_cast<size_t>(r) * size + c]; }
  float& at(int r, int c) { return pixels[static_cast<size_t>(r) * size + c]; }
};

// Corruption registry. The first kNumTrainCorruptions kinds form the
// training mixture; the remaining five are reserved for unseen-domain
// evaluation and never enter the unlabeled pool.
enum class Corruption : int {
  kGaussianNoise = 0,
  kSaltPepper,
  kBoxBlur,
  kContrast,
  kBrightness,
  kHBandOcclude,
  kPixelDropout,
  kElasticJitter,
  kQuantize,
  kCheckerShade,
  kMultNoise,  // unseen kinds start here
  kVBandOcclude,
  kGammaWarp,
  kRowShuffle,
  kRingVignette,
};

inline constexpr int kNumTrainCorruptions = 10;
inline constexpr int kNumCorruptions = 15;
inline constexpr int kSeverityMin = 1;
inline constexpr int kSeverityMax = 5;

const char* corruption_name(Corruption kind);

// Applies `kind` at `severity` in 1..5. Pixels stay in [0,1]; the label and
// the underlying geometry are untouched. Mean absolute pixel change is
// nondecreasing in severity for every kind (statistically).
Glyph corrupt(const Glyph& g, Corruption kind, int severity, rng::Rng& rng);

// Additive clamped Gaussian pixel noise; sigma = 0 returns the input
// unchanged. Backs the gaussian_noise corruption and the render noise.
Glyph with_gaussian_noise(const Glyph& g, double sigma, rng::Rng& rng);

// Weak augmentation: shift by at most one pixel on each axis plus an
// optional horizontal flip.
Glyph weak_aug(const Glyph& g, rng::Rng& rng);

// Strong augmentation: two random training corruptions at random severity,
// then a cutout square of side size/4 filled with mid gray.
Glyph strong_aug(const Glyph& g, rng::Rng& rng);

// Exact k*90deg clockwise rotation; throws on non-square grids.
Glyph rotate90(const Glyph& g, int k);

// Deterministic class prototype (no per-sample variation); used for the
// rotation-asymmetry guarantee and by tests.
Glyph class_prototype(int label, int n_classes, int size);

// One sample of class `label` with per-sample jitter, stroke intensity
// variation and light background noise.
Glyph render_glyph(int label, int n_classes, int size, rng::Rng& rng);

// Unlabeled-pool mixture p_u = w0 * clean + sum_k w[k] * corruption_k.
struct MixtureSpec {
  double w0 = 1.0;
  std::vector<double> w;  // one weight per training corruption domain

  // ratio = 1 - w0 spread uniformly over the K training corruptions.
  static MixtureSpec from_ratio(double ratio, int k_domains = kNumTrainCorruptions);
  double ratio() const { return 1.0 - w0; }
  void validate() const;  // throws on weight-sum or sign violations
};

struct BundleParams {
  int n_labeled = 400;
  int n_unlabeled = 4000;
  int n_classes = 10;
  int glyph_size = 16;
  int n_test_labeled = 1000;
  int n_test_unlabeled = 1000;
  int n_test_unseen = 1000;
  MixtureSpec mixture = MixtureSpec::from_ratio(1.0);
  uint64_t seed = 0;
};

// Labeled / unlabeled / test split. The unlabeled pool's labels and domain
// tags ride along for diagnostics but are only reachable through the
// audited hidden() accessor, so the training path cannot touch them.
class DatasetBundle {
 public:
  int glyph_size = 16;
  int n_classes = 10;
  std::vector<Glyph> labeled;
  std::vector<Glyph> test_labeled;
  std::vector<Glyph> test_unlabeled;
  std::vector<Glyph> test_unseen;

  struct HiddenInfo {
    int label;
    int domain_tag;
  };

  size_t unlabeled_count() const { return unlabeled_.size(); }
  // Identity-stripped view for the training path.
  const Glyph& unlabeled(size_t i) const { return unlabeled_[i].masked; }
  // Diagnostics-only accessor; every call bumps the global audit counter.
  HiddenInfo hidden(size_t i) const;

  void add_unlabeled(Glyph g);  // stores g, strips label/tag from the view
  uint64_t content_hash() const;

 private:
  struct UnlabeledSample {
    Glyph masked;  // label = -1, domain_tag = -1
    int label;
    int domain_tag;
  };
  std::vector<UnlabeledSample> unlabeled_;
};

// Global count of hidden() calls; lets tests pin down exactly which paths
// read ground truth they should not see.
uint64_t hidden_access_count();
void reset_hidden_access_count();

DatasetBundle make_bundle(const BundleParams& params);

// Flat binary bundle file, little-endian:
//   magic "SSFA" | u32 version | u32 S | u32 C |
//   u64 counts[5]: labeled, unlabeled, test_L, test_UL, test_US |
//   per sample (in that section order):
//     S*S float32 pixels (row-major) | i32 label | i32 domain_tag | u8 hidden
// Hidden is 1 exactly for unlabeled-pool samples. Round-trips losslessly.
void save_bundle(const DatasetBundle& bundle, const std::string& path);
DatasetBundle load_bundle(const std::string& path);

}  // namespace ssfa::data
