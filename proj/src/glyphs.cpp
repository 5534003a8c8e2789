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
#include "ssfa/glyphs.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "ssfa/common.hpp"

namespace ssfa::data {

namespace {

std::atomic<uint64_t> g_hidden_accesses{0};

float clamp01(double v) {
  return static_cast<float>(std::min(1.0, std::max(0.0, v)));
}

Glyph blank(int size) {
  Glyph g;
  g.size = size;
  g.pixels.assign(static_cast<size_t>(size) * size, 0.0f);
  return g;
}

void check_severity(Corruption kind, int severity) {
  if (static_cast<int>(kind) < 0 || static_cast<int>(kind) >= kNumCorruptions)
    throw std::invalid_argument("corrupt: unknown corruption kind " +
                                std::to_string(static_cast<int>(kind)));
  if (severity < kSeverityMin || severity > kSeverityMax)
    throw std::invalid_argument(std::string("corrupt: severity ") + std::to_string(severity) +
                                " out of range for " + corruption_name(kind));
}

Glyph box_blur3(const Glyph& g) {
  Glyph out = g;
  int s = g.size;
  for (int r = 0; r < s; ++r) {
    for (int c = 0; c < s; ++c) {
      double acc = 0.0;
      int cnt = 0;
      for (int dr = -1; dr <= 1; ++dr) {
        for (int dc = -1; dc <= 1; ++dc) {
          int rr = r + dr, cc = c + dc;
          if (rr < 0 || rr >= s || cc < 0 || cc >= s) continue;
          acc += g.at(rr, cc);
          ++cnt;
        }
      }
      out.at(r, c) = static_cast<float>(acc / cnt);
    }
  }
  return out;
}

Glyph shift(const Glyph& g, int dr, int dc) {
  Glyph out = blank(g.size);
  out.label = g.label;
  out.domain_tag = g.domain_tag;
  int s = g.size;
  for (int r = 0; r < s; ++r) {
    int rr = r - dr;
    if (rr < 0 || rr >= s) continue;
    for (int c = 0; c < s; ++c) {
      int cc = c - dc;
      if (cc < 0 || cc >= s) continue;
      out.at(r, c) = g.at(rr, cc);
    }
  }
  return out;
}

// Class patterns: three 3x3 blobs on a 4x4 anchor grid. The first classes
// are canonical representatives of full orbits of the rotation/flip group
// acting on grid cells, so every (class, rotation, flip) image is a
// distinct cell pattern: rotation prediction and classification read the
// same anchor-occupancy features, and no image of one class collides with
// another. Classes beyond the orbit supply fall back to salted random
// placement.
struct BlobPattern {
  int rows[3];
  int cols[3];
};

struct CellPattern {
  int cells[3];  // cell index = 4*row + col on the 4x4 grid
};

std::vector<CellPattern> orbit_class_patterns() {
  auto rot_cell = [](int cell) {
    int r = cell / 4, c = cell % 4;
    return 4 * c + (3 - r);
  };
  auto flip_cell = [](int cell) {
    int r = cell / 4, c = cell % 4;
    return 4 * r + (3 - c);
  };
  auto key = [](std::array<int, 3> cells) {
    std::sort(cells.begin(), cells.end());
    return cells[0] * 10000 + cells[1] * 100 + cells[2];
  };
  std::vector<CellPattern> reps;
  std::vector<int> seen;
  for (int a = 0; a < 16; ++a) {
    for (int b = a + 1; b < 16; ++b) {
      for (int c = b + 1; c < 16; ++c) {
        std::array<int, 3> subset{a, b, c};
        if (std::find(seen.begin(), seen.end(), key(subset)) != seen.end()) continue;
        // build the orbit under rot^4 x flip^2
        std::vector<int> orbit;
        for (int f = 0; f < 2; ++f) {
          std::array<int, 3> img = subset;
          if (f) for (int& cell : img) cell = flip_cell(cell);
          for (int k = 0; k < 4; ++k) {
            int kk = key(img);
            if (std::find(orbit.begin(), orbit.end(), kk) == orbit.end()) orbit.push_back(kk);
            for (int& cell : img) cell = rot_cell(cell);
          }
        }
        seen.insert(seen.end(), orbit.begin(), orbit.end());
        if (orbit.size() == 8)  // trivial stabilizer: rotation stays decodable
          reps.push_back(CellPattern{{a, b, c}});
      }
    }
  }
  return reps;
}

int cell_position(int cell_index, int size) {
  // top-left pixel of the blob for this grid coordinate
  return 1 + static_cast<int>(std::lround(cell_index * (size - 4) / 3.0));
}

BlobPattern grid_pattern(int label, int size) {
  static const std::vector<CellPattern> reps = orbit_class_patterns();
  const CellPattern& p = reps[static_cast<size_t>(label)];
  BlobPattern out{};
  for (int b = 0; b < 3; ++b) {
    out.rows[b] = cell_position(p.cells[b] / 4, size) + 1;  // blob center
    out.cols[b] = cell_position(p.cells[b] % 4, size) + 1;
  }
  return out;
}

constexpr int kOrbitClasses = 10;

BlobPattern draw_pattern(int label, int n_classes, int size, uint64_t salt) {
  if (label < kOrbitClasses) return grid_pattern(label, size);
  rng::Rng rng(rng::hash2(rng::hash2(0xC1A55u, static_cast<uint64_t>(label)),
                          rng::hash2(static_cast<uint64_t>(n_classes), salt)));
  int row_lo = 1, row_hi = size - 4;
  int col_lo = 1, col_hi = size - 4;
  BlobPattern p{};
  for (int b = 0; b < 3; ++b) {
    // prefer non-overlapping blobs; tiny canvases may not allow it
    for (int attempt = 0; attempt < 64; ++attempt) {
      p.rows[b] = row_lo + rng.uniform_int(row_hi - row_lo);
      p.cols[b] = col_lo + rng.uniform_int(col_hi - col_lo);
      bool ok = true;
      for (int j = 0; j < b; ++j) {
        int dr = p.rows[b] - p.rows[j], dc = p.cols[b] - p.cols[j];
        if (std::abs(dr) < 3 && std::abs(dc) < 3) ok = false;
      }
      if (ok) break;
    }
  }
  return p;
}

void paint(Glyph& g, const BlobPattern& p, const double blob_intensity[3]) {
  int s = g.size;
  for (int b = 0; b < 3; ++b) {
    for (int dr = -1; dr <= 1; ++dr) {
      for (int dc = -1; dc <= 1; ++dc) {
        int r = p.rows[b] + dr, c = p.cols[b] + dc;
        if (r < 0 || r >= s || c < 0 || c >= s) continue;
        g.at(r, c) = clamp01(blob_intensity[b]);
      }
    }
  }
}

int pattern_salt(int label, int n_classes, int size);

Glyph prototype_with_salt(int label, int n_classes, int size, uint64_t salt) {
  Glyph g = blank(size);
  g.label = label;
  BlobPattern p = draw_pattern(label, n_classes, size, salt);
  double blobs[3] = {0.55, 0.55, 0.55};
  paint(g, p, blobs);
  return g;
}

int pixels_differing(const Glyph& a, const Glyph& b, float thresh = 0.25f) {
  int n = 0;
  for (size_t i = 0; i < a.pixels.size(); ++i)
    if (std::fabs(a.pixels[i] - b.pixels[i]) > thresh) ++n;
  return n;
}

// Deterministic salts: each class keeps bumping its salt until its pattern
// is far from every lower class. Min separation makes classes learnable and
// never collapses two of them onto near-identical prototypes.
int pattern_salt(int label, int n_classes, int size) {
  static thread_local std::vector<int> cache;
  static thread_local int cached_classes = -1, cached_size = -1;
  if (cached_classes == n_classes && cached_size == size &&
      label < static_cast<int>(cache.size()))
    return cache[static_cast<size_t>(label)];

  std::vector<int> salts(static_cast<size_t>(n_classes), 0);
  std::vector<Glyph> protos;
  int min_sep = std::max(6, size * size / 24);
  for (int c = 0; c < n_classes; ++c) {
    int salt = 0;
    Glyph cand;
    if (c < kOrbitClasses) {  // orbit classes are fixed; verify, never re-salt
      cand = prototype_with_salt(c, n_classes, size, 0);
      for (const Glyph& prev : protos)
        if (pixels_differing(cand, prev) < min_sep)
          throw std::runtime_error("glyphs: orbit prototypes too close at size " +
                                   std::to_string(size));
    } else {
      for (;; ++salt) {
        cand = prototype_with_salt(c, n_classes, size, static_cast<uint64_t>(salt));
        bool ok = true;
        for (const Glyph& prev : protos)
          if (pixels_differing(cand, prev) < min_sep) ok = false;
        if (ok) break;
        if (salt > 10000)
          throw std::runtime_error("glyphs: could not separate class prototypes");
      }
    }
    salts[static_cast<size_t>(c)] = salt;
    protos.push_back(cand);
  }
  cache = salts;
  cached_classes = n_classes;
  cached_size = size;
  return cache[static_cast<size_t>(label)];
}

void check_rotation_asymmetry(int n_classes, int size) {
  int min_diff = static_cast<int>(std::ceil(0.05 * size * size));
  for (int c = 0; c < n_classes; ++c) {
    Glyph proto = class_prototype(c, n_classes, size);
    for (int k = 1; k < 4; ++k) {
      if (pixels_differing(proto, rotate90(proto, k)) < min_diff)
        throw std::runtime_error("glyphs: class " + std::to_string(c) +
                                 " is not rotation-asymmetric at k=" + std::to_string(k));
    }
  }
}

}  // namespace

const char* corruption_name(Corruption kind) {
  switch (kind) {
    case Corruption::kGaussianNoise: return "gaussian_noise";
    case Corruption::kSaltPepper: return "salt_pepper";
    case Corruption::kBoxBlur: return "box_blur";
    case Corruption::kContrast: return "contrast";
    case Corruption::kBrightness: return "brightness";
    case Corruption::kHBandOcclude: return "h_band_occlude";
    case Corruption::kPixelDropout: return "pixel_dropout";
    case Corruption::kElasticJitter: return "elastic_jitter";
    case Corruption::kQuantize: return "quantize";
    case Corruption::kCheckerShade: return "checker_shade";
    case Corruption::kMultNoise: return "mult_noise";
    case Corruption::kVBandOcclude: return "v_band_occlude";
    case Corruption::kGammaWarp: return "gamma_warp";
    case Corruption::kRowShuffle: return "row_shuffle";
    case Corruption::kRingVignette: return "ring_vignette";
  }
  return "?";
}

Glyph with_gaussian_noise(const Glyph& g, double sigma, rng::Rng& rng) {
  if (sigma == 0.0) return g;
  Glyph out = g;
  for (auto& p : out.pixels) p = clamp01(p + sigma * rng.normal());
  return out;
}

Glyph corrupt(const Glyph& g, Corruption kind, int severity, rng::Rng& rng) {
  check_severity(kind, severity);
  Glyph out = g;
  int s = g.size;
  double sev = static_cast<double>(severity);
  switch (kind) {
    case Corruption::kGaussianNoise:
      out = with_gaussian_noise(out, 0.09 * sev, rng);
      break;
    case Corruption::kSaltPepper: {
      double p = 0.06 * sev;
      for (auto& px : out.pixels) {
        double u = rng.uniform();
        if (u < p / 2) px = 0.0f;
        else if (u < p) px = 1.0f;
      }
      break;
    }
    case Corruption::kBoxBlur: {
      double alpha = 0.2 * sev;
      Glyph blurred = box_blur3(g);
      if (sev >= 4) blurred = box_blur3(blurred);
      for (size_t i = 0; i < out.pixels.size(); ++i)
        out.pixels[i] = clamp01((1.0 - alpha) * g.pixels[i] + alpha * blurred.pixels[i]);
      break;
    }
    case Corruption::kContrast: {
      double gamma = 1.0 - 0.17 * sev;
      for (auto& px : out.pixels) px = clamp01(0.5 + (px - 0.5) * gamma);
      break;
    }
    case Corruption::kBrightness: {
      double shift_v = 0.12 * sev;
      for (auto& px : out.pixels) px = clamp01(px + shift_v);
      break;
    }
    case Corruption::kHBandOcclude: {
      int h = severity + 1;
      int r0 = rng.uniform_int(std::max(1, s - h + 1));
      for (int r = r0; r < std::min(s, r0 + h); ++r)
        for (int c = 0; c < s; ++c) out.at(r, c) = 0.5f;
      break;
    }
    case Corruption::kPixelDropout: {
      double p = 0.08 * sev;
      for (auto& px : out.pixels)
        if (rng.uniform() < p) px = 0.0f;
      break;
    }
    case Corruption::kElasticJitter: {
      double amp = 0.7 * sev;
      double phase = rng.uniform(0.0, 6.283185307179586);
      double freq = 1.0 + rng.uniform_int(2);
      Glyph src = g;
      for (int r = 0; r < s; ++r) {
        int dx = static_cast<int>(std::lround(
            amp * std::sin(6.283185307179586 * freq * r / s + phase)));
        for (int c = 0; c < s; ++c) {
          int cc = c - dx;
          out.at(r, c) = (cc >= 0 && cc < s) ? src.at(r, cc) : 0.0f;
        }
      }
      break;
    }
    case Corruption::kQuantize: {
      int levels = 12 - 2 * severity;  // 10,8,6,4,2
      double q = levels - 1;
      for (auto& px : out.pixels)
        px = clamp01(std::round(static_cast<double>(px) * q) / q);
      break;
    }
    case Corruption::kCheckerShade: {
      double f = 1.0 - 0.16 * sev;
      for (int r = 0; r < s; ++r)
        for (int c = 0; c < s; ++c)
          if (((r / 2) + (c / 2)) % 2 == 0)
            out.at(r, c) = clamp01(out.at(r, c) * f);
      break;
    }
    case Corruption::kMultNoise: {
      double a = 0.14 * sev;
      for (auto& px : out.pixels) px = clamp01(px * (1.0 + rng.uniform(-a, a)));
      break;
    }
    case Corruption::kVBandOcclude: {
      int w = severity + 1;
      int c0 = rng.uniform_int(std::max(1, s - w + 1));
      for (int r = 0; r < s; ++r)
        for (int c = c0; c < std::min(s, c0 + w); ++c) out.at(r, c) = 0.5f;
      break;
    }
    case Corruption::kGammaWarp: {
      double gamma = 1.0 + 0.45 * sev;
      for (auto& px : out.pixels)
        px = clamp01(std::pow(static_cast<double>(px), gamma));
      break;
    }
    case Corruption::kRowShuffle: {
      int win = severity + 1;
      for (int r0 = 0; r0 < s; r0 += win) {
        int r1 = std::min(s, r0 + win);
        for (int r = r1 - 1; r > r0; --r) {  // Fisher-Yates within window
          int j = r0 + rng.uniform_int(r - r0 + 1);
          for (int c = 0; c < s; ++c) std::swap(out.at(r, c), out.at(j, c));
        }
      }
      break;
    }
    case Corruption::kRingVignette: {
      double mid = (s - 1) / 2.0;
      double r0 = s / 3.0, sr = s / 6.0;
      for (int r = 0; r < s; ++r) {
        for (int c = 0; c < s; ++c) {
          double d = std::sqrt((r - mid) * (r - mid) + (c - mid) * (c - mid));
          double wgt = std::exp(-((d - r0) / sr) * ((d - r0) / sr));
          out.at(r, c) = clamp01(out.at(r, c) * (1.0 - 0.1 * sev * wgt));
        }
      }
      break;
    }
  }
  return out;
}

Glyph weak_aug(const Glyph& g, rng::Rng& rng) {
  int dr = rng.uniform_int(3) - 1;
  int dc = rng.uniform_int(3) - 1;
  bool flip = rng.bernoulli(0.5);
  Glyph out = (dr != 0 || dc != 0) ? shift(g, dr, dc) : g;
  if (flip) {
    int s = out.size;
    for (int r = 0; r < s; ++r)
      for (int c = 0; c < s / 2; ++c) std::swap(out.at(r, c), out.at(r, s - 1 - c));
  }
  return out;
}

Glyph strong_aug(const Glyph& g, rng::Rng& rng) {
  Glyph out = g;
  for (int i = 0; i < 2; ++i) {
    auto kind = static_cast<Corruption>(rng.uniform_int(kNumTrainCorruptions));
    int severity = kSeverityMin + rng.uniform_int(kSeverityMax - kSeverityMin + 1);
    out = corrupt(out, kind, severity, rng);
  }
  int side = std::max(1, g.size / 4);
  int r0 = rng.uniform_int(g.size - side + 1);
  int c0 = rng.uniform_int(g.size - side + 1);
  for (int r = r0; r < r0 + side; ++r)
    for (int c = c0; c < c0 + side; ++c) out.at(r, c) = 0.5f;
  return out;
}

Glyph rotate90(const Glyph& g, int k) {
  if (g.pixels.size() != static_cast<size_t>(g.size) * g.size)
    throw std::invalid_argument("rotate90: grid is not square");
  k = ((k % 4) + 4) % 4;
  if (k == 0) return g;
  Glyph out = g;
  int s = g.size;
  // one clockwise step: (r, c) -> (c, s-1-r)
  for (int step = 0; step < k; ++step) {
    Glyph tmp = out;
    for (int r = 0; r < s; ++r)
      for (int c = 0; c < s; ++c) out.at(c, s - 1 - r) = tmp.at(r, c);
  }
  return out;
}

Glyph class_prototype(int label, int n_classes, int size) {
  if (size < 8) throw std::invalid_argument("glyphs: size must be >= 8");
  if (label < 0 || label >= n_classes)
    throw std::invalid_argument("glyphs: label out of range");
  return prototype_with_salt(label, n_classes, size,
                             static_cast<uint64_t>(pattern_salt(label, n_classes, size)));
}

Glyph render_glyph(int label, int n_classes, int size, rng::Rng& rng) {
  if (size < 8) throw std::invalid_argument("glyphs: size must be >= 8");
  Glyph g = blank(size);
  g.label = label;
  BlobPattern p = draw_pattern(label, n_classes, size,
                               static_cast<uint64_t>(pattern_salt(label, n_classes, size)));
  // per-blob jitter: anchors stay nearest-cell decodable but a small labeled
  // set cannot cover the variation
  for (int b = 0; b < 3; ++b) {
    p.rows[b] = std::min(size - 2, std::max(1, p.rows[b] + rng.uniform_int(5) - 2));
    p.cols[b] = std::min(size - 2, std::max(1, p.cols[b] + rng.uniform_int(5) - 2));
  }
  double blobs[3];
  for (double& b : blobs) b = rng.uniform(0.4, 0.7);
  paint(g, p, blobs);
  int dr = rng.uniform_int(3) - 1;
  int dc = rng.uniform_int(3) - 1;
  if (dr != 0 || dc != 0) g = shift(g, dr, dc);
  g = with_gaussian_noise(g, 0.04, rng);
  g.label = label;
  return g;
}

MixtureSpec MixtureSpec::from_ratio(double ratio, int k_domains) {
  if (ratio < 0.0 || ratio > 1.0)
    throw std::invalid_argument("mixture: ratio must be in [0,1]");
  MixtureSpec m;
  m.w0 = 1.0 - ratio;
  m.w.assign(static_cast<size_t>(k_domains), ratio / k_domains);
  return m;
}

void MixtureSpec::validate() const {
  double total = w0;
  for (double wk : w) {
    if (wk < 0.0) throw std::invalid_argument("mixture: negative weight");
    total += wk;
  }
  if (w0 < 0.0) throw std::invalid_argument("mixture: negative w0");
  if (std::fabs(total - 1.0) > 1e-12)
    throw std::invalid_argument("mixture: weights sum to " + std::to_string(total) +
                                ", expected 1");
  if (w.size() > static_cast<size_t>(kNumTrainCorruptions))
    throw std::invalid_argument("mixture: more domains than registered training corruptions");
}

DatasetBundle::HiddenInfo DatasetBundle::hidden(size_t i) const {
  g_hidden_accesses.fetch_add(1, std::memory_order_relaxed);
  const UnlabeledSample& s = unlabeled_.at(i);
  return {s.label, s.domain_tag};
}

void DatasetBundle::add_unlabeled(Glyph g) {
  UnlabeledSample s;
  s.label = g.label;
  s.domain_tag = g.domain_tag;
  g.label = -1;
  g.domain_tag = -1;
  s.masked = std::move(g);
  unlabeled_.push_back(std::move(s));
}

uint64_t DatasetBundle::content_hash() const {
  uint64_t h = 0xcbf29ce484222325ull;
  auto fold = [&h](const Glyph& g, int label, int tag) {
    h = hash_bytes(g.pixels.data(), g.pixels.size() * sizeof(float), h);
    h = hash_bytes(&label, sizeof(label), h);
    h = hash_bytes(&tag, sizeof(tag), h);
  };
  for (const Glyph& g : labeled) fold(g, g.label, g.domain_tag);
  for (const auto& s : unlabeled_) fold(s.masked, s.label, s.domain_tag);
  for (const Glyph& g : test_labeled) fold(g, g.label, g.domain_tag);
  for (const Glyph& g : test_unlabeled) fold(g, g.label, g.domain_tag);
  for (const Glyph& g : test_unseen) fold(g, g.label, g.domain_tag);
  return h;
}

uint64_t hidden_access_count() { return g_hidden_accesses.load(std::memory_order_relaxed); }
void reset_hidden_access_count() { g_hidden_accesses.store(0, std::memory_order_relaxed); }

namespace {

// Balanced label sequence (round-robin then shuffled) so class balance is
// uniform within rounding.
std::vector<int> balanced_labels(int n, int n_classes, rng::Rng& rng) {
  std::vector<int> labels(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) labels[static_cast<size_t>(i)] = i % n_classes;
  for (int i = n - 1; i > 0; --i)
    std::swap(labels[static_cast<size_t>(i)], labels[static_cast<size_t>(rng.uniform_int(i + 1))]);
  return labels;
}

int sample_domain_tag(const MixtureSpec& m, rng::Rng& rng) {
  double u = rng.uniform();
  if (u < m.w0) return 0;
  double acc = m.w0;
  for (size_t k = 0; k < m.w.size(); ++k) {
    acc += m.w[k];
    if (u < acc) return static_cast<int>(k) + 1;
  }
  return static_cast<int>(m.w.size());  // guard against fp roundoff at u ~ 1
}

Glyph make_sample(int label, int domain_tag, const BundleParams& p, uint64_t sample_index) {
  rng::Rng render = rng::stream_rng(p.seed, rng::Stream::kBundleRender, sample_index);
  Glyph g = render_glyph(label, p.n_classes, p.glyph_size, render);
  g.domain_tag = 0;
  if (domain_tag > 0) {
    rng::Rng crng = rng::stream_rng(p.seed, rng::Stream::kBundleCorrupt, sample_index);
    int severity = kSeverityMin + crng.uniform_int(kSeverityMax - kSeverityMin + 1);
    g = corrupt(g, static_cast<Corruption>(domain_tag - 1), severity, crng);
    g.domain_tag = domain_tag;
  }
  g.label = label;
  return g;
}

}  // namespace

DatasetBundle make_bundle(const BundleParams& p) {
  if (p.n_classes < 2) throw std::invalid_argument("make_bundle: need at least 2 classes");
  if (p.n_unlabeled < p.n_labeled)
    throw std::invalid_argument("make_bundle: n_unlabeled must be >= n_labeled");
  p.mixture.validate();
  check_rotation_asymmetry(p.n_classes, p.glyph_size);

  DatasetBundle b;
  b.glyph_size = p.glyph_size;
  b.n_classes = p.n_classes;

  uint64_t idx = 0;
  {
    rng::Rng lrng = rng::stream_rng(p.seed, rng::Stream::kBundleLabels, 0);
    for (int label : balanced_labels(p.n_labeled, p.n_classes, lrng))
      b.labeled.push_back(make_sample(label, 0, p, idx++));
  }
  {
    rng::Rng lrng = rng::stream_rng(p.seed, rng::Stream::kBundleLabels, 1);
    rng::Rng drng = rng::stream_rng(p.seed, rng::Stream::kBundleDomains, 0);
    for (int label : balanced_labels(p.n_unlabeled, p.n_classes, lrng)) {
      int tag = sample_domain_tag(p.mixture, drng);
      b.add_unlabeled(make_sample(label, tag, p, idx++));
    }
  }
  {
    rng::Rng lrng = rng::stream_rng(p.seed, rng::Stream::kBundleLabels, 2);
    for (int label : balanced_labels(p.n_test_labeled, p.n_classes, lrng))
      b.test_labeled.push_back(make_sample(label, 0, p, idx++));
  }
  {
    rng::Rng lrng = rng::stream_rng(p.seed, rng::Stream::kBundleLabels, 3);
    rng::Rng drng = rng::stream_rng(p.seed, rng::Stream::kBundleDomains, 1);
    for (int label : balanced_labels(p.n_test_unlabeled, p.n_classes, lrng)) {
      int tag = sample_domain_tag(p.mixture, drng);
      b.test_unlabeled.push_back(make_sample(label, tag, p, idx++));
    }
  }
  {
    rng::Rng lrng = rng::stream_rng(p.seed, rng::Stream::kBundleLabels, 4);
    rng::Rng drng = rng::stream_rng(p.seed, rng::Stream::kBundleDomains, 2);
    for (int label : balanced_labels(p.n_test_unseen, p.n_classes, lrng)) {
      int tag = kNumTrainCorruptions + 1 + drng.uniform_int(kNumCorruptions - kNumTrainCorruptions);
      b.test_unseen.push_back(make_sample(label, tag, p, idx++));
    }
  }
  return b;
}

namespace {

template <typename T>
void put(std::ofstream& f, const T& v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T take(std::ifstream& f) {
  T v;
  f.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!f) throw std::runtime_error("bundle file: unexpected end of file");
  return v;
}

void put_sample(std::ofstream& f, const Glyph& g, int label, int tag, uint8_t hidden) {
  f.write(reinterpret_cast<const char*>(g.pixels.data()),
          static_cast<std::streamsize>(g.pixels.size() * sizeof(float)));
  put<int32_t>(f, label);
  put<int32_t>(f, tag);
  put<uint8_t>(f, hidden);
}

Glyph take_sample(std::ifstream& f, int size, int* label, int* tag, uint8_t* hidden) {
  Glyph g;
  g.size = size;
  g.pixels.resize(static_cast<size_t>(size) * size);
  f.read(reinterpret_cast<char*>(g.pixels.data()),
         static_cast<std::streamsize>(g.pixels.size() * sizeof(float)));
  *label = take<int32_t>(f);
  *tag = take<int32_t>(f);
  *hidden = take<uint8_t>(f);
  if (!f) throw std::runtime_error("bundle file: unexpected end of file");
  return g;
}

constexpr uint32_t kBundleVersion = 1;

}  // namespace

void save_bundle(const DatasetBundle& b, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("save_bundle: cannot open " + path);
  f.write("SSFA", 4);
  put<uint32_t>(f, kBundleVersion);
  put<uint32_t>(f, static_cast<uint32_t>(b.glyph_size));
  put<uint32_t>(f, static_cast<uint32_t>(b.n_classes));
  put<uint64_t>(f, b.labeled.size());
  put<uint64_t>(f, b.unlabeled_count());
  put<uint64_t>(f, b.test_labeled.size());
  put<uint64_t>(f, b.test_unlabeled.size());
  put<uint64_t>(f, b.test_unseen.size());
  for (const Glyph& g : b.labeled) put_sample(f, g, g.label, g.domain_tag, 0);
  for (size_t i = 0; i < b.unlabeled_count(); ++i) {
    auto info = b.hidden(i);  // serialization is a sanctioned diagnostic path
    put_sample(f, b.unlabeled(i), info.label, info.domain_tag, 1);
  }
  for (const Glyph& g : b.test_labeled) put_sample(f, g, g.label, g.domain_tag, 0);
  for (const Glyph& g : b.test_unlabeled) put_sample(f, g, g.label, g.domain_tag, 0);
  for (const Glyph& g : b.test_unseen) put_sample(f, g, g.label, g.domain_tag, 0);
  if (!f) throw std::runtime_error("save_bundle: write failed for " + path);
}

DatasetBundle load_bundle(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_bundle: cannot open " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, "SSFA", 4) != 0)
    throw std::runtime_error("load_bundle: bad magic in " + path);
  uint32_t version = take<uint32_t>(f);
  if (version != kBundleVersion)
    throw std::runtime_error("load_bundle: unsupported version " + std::to_string(version));
  DatasetBundle b;
  b.glyph_size = static_cast<int>(take<uint32_t>(f));
  b.n_classes = static_cast<int>(take<uint32_t>(f));
  uint64_t n_l = take<uint64_t>(f);
  uint64_t n_u = take<uint64_t>(f);
  uint64_t n_tl = take<uint64_t>(f);
  uint64_t n_tu = take<uint64_t>(f);
  uint64_t n_ts = take<uint64_t>(f);
  auto read_into = [&](std::vector<Glyph>& dst, uint64_t n) {
    for (uint64_t i = 0; i < n; ++i) {
      int label, tag;
      uint8_t hidden;
      Glyph g = take_sample(f, b.glyph_size, &label, &tag, &hidden);
      g.label = label;
      g.domain_tag = tag;
      dst.push_back(std::move(g));
    }
  };
  read_into(b.labeled, n_l);
  for (uint64_t i = 0; i < n_u; ++i) {
    int label, tag;
    uint8_t hidden;
    Glyph g = take_sample(f, b.glyph_size, &label, &tag, &hidden);
    g.label = label;
    g.domain_tag = tag;
    b.add_unlabeled(std::move(g));
  }
  read_into(b.test_labeled, n_tl);
  read_into(b.test_unlabeled, n_tu);
  read_into(b.test_unseen, n_ts);
  return b;
}

}  // namespace ssfa::data
