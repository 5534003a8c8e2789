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

#include <string>
#include <vector>

#include "ssfa/glyphs.hpp"
#include "ssfa/model.hpp"
#include "ssfa/rng.hpp"

namespace ssfa::diag {

// Pair of convex quadratics over a feasible ball of given radius:
//   main(h) = c_main/2 * |h - main_target|^2
//   self(h) = c_self/2 * |h - self_target|^2
// Smoothness and gradient bounds hold by construction, so the one-step
// descent hypothesis can be checked without estimation.
struct QuadraticPair {
  std::vector<double> main_target;
  std::vector<double> self_target;
  double c_main = 1.0;
  double c_self = 1.0;
  double radius = 1.0;

  int dim() const { return static_cast<int>(main_target.size()); }
  double beta() const;        // max curvature
  double grad_bound() const;  // sup of both gradient norms over the ball

  double main_value(const std::vector<double>& h) const;
  double self_value(const std::vector<double>& h) const;
  std::vector<double> main_grad(const std::vector<double>& h) const;
  std::vector<double> self_grad(const std::vector<double>& h) const;
};

QuadraticPair random_pair(rng::Rng& rng, int max_dim = 8);

struct DescentVerdict {
  bool condition_held = false;  // <grad main, grad self> > eps
  bool decrease_held = false;   // main(h') < main(h) after the step
  double inner_product = 0.0;
  double eta = 0.0;  // eps / (beta * G^2)
  double loss_before = 0.0;
  double loss_after = 0.0;
  // Largest eta for which the descent claim would still hold (closed form
  // for quadratics); recorded for the report.
  double eta_max_descent = 0.0;
};

// Checks the one-step descent claim: if the gradient inner product at h0
// exceeds eps, stepping h' = h0 - eta * grad_self with eta = eps/(beta*G^2)
// must strictly decrease the main loss. Throws if h0 leaves the feasible
// ball (the gradient bound would be invalid).
DescentVerdict lemma1_check(const QuadraticPair& pair, const std::vector<double>& h0, double eps);

// Same check at the empirical-risk level: per-sample quadratics around
// sample-specific targets, risks averaged over the dataset.
struct QuadraticDataset {
  std::vector<std::vector<double>> main_targets;
  std::vector<std::vector<double>> self_targets;
  double c_main = 1.0;
  double c_self = 1.0;
  double radius = 1.0;

  int dim() const { return main_targets.empty() ? 0 : static_cast<int>(main_targets[0].size()); }
  size_t size() const { return main_targets.size(); }
  QuadraticPair mean_pair() const;  // means of quadratics are quadratics
};

QuadraticDataset random_dataset(rng::Rng& rng, int max_dim = 8, int max_samples = 12);

DescentVerdict empirical_risk_check(const QuadraticDataset& dataset,
                                    const std::vector<double>& h, double eps);

// Randomized descent suite: draws instances, keeps those where the inner
// product is positive, sets eps to a random fraction of it, and counts
// descent violations (expected: zero).
struct DescentTrialStats {
  int trials = 0;
  int condition_held = 0;
  int decrease_held = 0;
  int violations = 0;
  std::vector<DescentVerdict> verdicts;
};

DescentTrialStats run_lemma1_trials(int n_trials, uint64_t seed);
DescentTrialStats run_empirical_risk_trials(int n_datasets, uint64_t seed);

// --- gradient inner product vs adaptation improvement (scatter diagnostic)

struct SampleGroup {
  int group_id = 0;
  int domain_tag = 0;
  std::vector<data::Glyph> samples;
  std::vector<int> labels;  // hidden ground truth, diagnostics only
};

struct IppSample {
  int group_id = 0;
  int domain_tag = 0;
  int n = 0;
  double inner_product = 0.0;
  double improvement = 0.0;  // accuracy delta after one-step adaptation
};

// Per group: <grad_shared main CE, grad_shared self loss>, then the accuracy
// change of a one-step-adapted scratch model on that same group. Groups
// smaller than 16 are skipped (logged to stderr). Deterministic: the group
// rng is derived from the group's content hash.
std::vector<IppSample> ipp_scatter(nn::ModelParams& params,
                                   const std::vector<SampleGroup>& groups,
                                   nn::AuxTaskKind task, int shared_count, double lr_adapt,
                                   double contrastive_temperature = 0.5);

// Splits the bundle's unlabeled pool into (domain, chunk-of-`group_size`)
// groups using the audited hidden-label accessor.
std::vector<SampleGroup> group_unlabeled_pool(const data::DatasetBundle& bundle, int group_size = 64);

double spearman_correlation(const std::vector<double>& xs, const std::vector<double>& ys);

// --- proxy A-distance

// 2 * (1 - 2 * balanced validation error) of a linear logistic domain
// classifier (200 full-batch epochs, lr 0.1), clamped to [0, 2]. Each side
// needs >= 50 feature vectors; identical degenerate inputs return 0.
struct ADistanceResult {
  double value = 0.0;
  double validation_error = 0.5;
  bool degenerate = false;
};

ADistanceResult a_distance(const std::vector<std::vector<double>>& features_a,
                           const std::vector<std::vector<double>>& features_b);

// Encoder features for every sample in the list.
std::vector<std::vector<double>> extract_features(nn::ModelParams& params,
                                                  const std::vector<data::Glyph>& samples);

}  // namespace ssfa::diag
