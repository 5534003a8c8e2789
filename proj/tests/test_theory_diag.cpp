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
#include <cmath>
#include <stdexcept>

#include "doctest.h"
#include "ssfa/theory_diag.hpp"

using namespace ssfa;

namespace {

diag::QuadraticPair spec_pair() {
  // main(h) = (h-1)^2/2, self(h) = (h-2)^2/2 on the ball |h| <= 3
  diag::QuadraticPair p;
  p.main_target = {1.0};
  p.self_target = {2.0};
  p.c_main = 1.0;
  p.c_self = 1.0;
  p.radius = 3.0;
  return p;
}

}  // namespace

TEST_SUITE("theory_diag") {

TEST_CASE("quadratic pair exposes closed-form beta and gradient bound") {
  diag::QuadraticPair p = spec_pair();
  CHECK(p.beta() == 1.0);
  CHECK(p.grad_bound() == 5.0);  // 1 * (3 + max(|1|, |2|))
}

TEST_CASE("descent check on the 1d frozen instance") {
  diag::QuadraticPair p = spec_pair();
  std::vector<double> h0 = {0.0};

  // inner product at 0 is (-1)(-2) = 2, not > 2: boundary case fails
  diag::DescentVerdict at_boundary = diag::lemma1_check(p, h0, 2.0);
  CHECK(at_boundary.inner_product == 2.0);
  CHECK_FALSE(at_boundary.condition_held);

  // eps = 1: eta = 1/25, h' = 0.08, main loss 0.5 -> 0.4232
  diag::DescentVerdict v = diag::lemma1_check(p, h0, 1.0);
  CHECK(v.condition_held);
  CHECK(v.eta == doctest::Approx(0.04).epsilon(1e-15));
  CHECK(v.loss_before == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(v.loss_after == doctest::Approx(0.4232).epsilon(1e-12));
  CHECK(v.decrease_held);
  CHECK(v.eta_max_descent >= v.eta);
}

TEST_CASE("aligned objectives always descend") {
  // identical targets: gradients are parallel, any eps below |h0-a|^2 works
  diag::QuadraticPair p;
  p.main_target = {1.5, -0.5};
  p.self_target = {1.5, -0.5};
  p.c_main = 1.0;
  p.c_self = 1.0;
  p.radius = 4.0;
  std::vector<double> h0 = {0.0, 1.0};
  double dist_sq = (1.5 * 1.5) + (1.5 * 1.5);
  diag::DescentVerdict v = diag::lemma1_check(p, h0, 0.9 * dist_sq);
  CHECK(v.condition_held);
  CHECK(v.decrease_held);
}

TEST_CASE("points outside the feasible ball are rejected") {
  diag::QuadraticPair p = spec_pair();
  std::vector<double> outside = {3.5};
  CHECK_THROWS_AS(diag::lemma1_check(p, outside, 0.5), std::invalid_argument);
}

TEST_CASE("single-sample empirical risk reduces to the pointwise check") {
  diag::QuadraticDataset ds;
  ds.main_targets = {{1.0}};
  ds.self_targets = {{2.0}};
  ds.c_main = 1.0;
  ds.c_self = 1.0;
  ds.radius = 3.0;
  std::vector<double> h = {0.0};
  diag::DescentVerdict emp = diag::empirical_risk_check(ds, h, 1.0);
  diag::DescentVerdict point = diag::lemma1_check(spec_pair(), h, 1.0);
  CHECK(emp.condition_held == point.condition_held);
  CHECK(emp.inner_product == point.inner_product);
  CHECK(emp.eta == point.eta);
  CHECK(emp.loss_before == point.loss_before);
  CHECK(emp.loss_after == point.loss_after);
}

TEST_CASE("orthogonal empirical gradients never satisfy the condition") {
  diag::QuadraticDataset ds;
  // at h = 0: main grad along -x, self grad along -y
  ds.main_targets = {{2.0, 0.0}};
  ds.self_targets = {{0.0, 2.0}};
  ds.radius = 3.0;
  std::vector<double> h = {0.0, 0.0};
  for (double eps : {1e-6, 0.1, 1.0}) {
    diag::DescentVerdict v = diag::empirical_risk_check(ds, h, eps);
    CHECK(v.inner_product == 0.0);
    CHECK_FALSE(v.condition_held);
  }
}

TEST_CASE("randomized descent trials never violate the lemma") {
  diag::DescentTrialStats lemma = diag::run_lemma1_trials(1000, 1234);
  CHECK(lemma.condition_held == 1000);
  CHECK(lemma.decrease_held == 1000);
  CHECK(lemma.violations == 0);
  for (const diag::DescentVerdict& v : lemma.verdicts)
    if (v.condition_held) CHECK(v.eta_max_descent > v.eta);

  diag::DescentTrialStats emp = diag::run_empirical_risk_trials(100, 5678);
  CHECK(emp.condition_held == 100);
  CHECK(emp.violations == 0);
}

TEST_CASE("spearman correlation on known rankings") {
  std::vector<double> xs = {1, 2, 3, 4, 5};
  std::vector<double> up = {10, 20, 30, 40, 50};
  std::vector<double> down = {5, 4, 3, 2, 1};
  CHECK(diag::spearman_correlation(xs, up) == doctest::Approx(1.0));
  CHECK(diag::spearman_correlation(xs, down) == doctest::Approx(-1.0));
  std::vector<double> flat = {1, 1, 1, 1, 1};
  CHECK(diag::spearman_correlation(xs, flat) == 0.0);
  std::vector<double> one = {1.0};
  CHECK_THROWS_AS(diag::spearman_correlation(one, one), std::invalid_argument);
}

TEST_CASE("a_distance separates what is separable") {
  rng::Rng rng(2024);
  auto blob = [&](int n, int d, double shift) {
    std::vector<std::vector<double>> out;
    for (int i = 0; i < n; ++i) {
      std::vector<double> f(static_cast<size_t>(d));
      for (double& v : f) v = rng.normal() + shift;
      out.push_back(std::move(f));
    }
    return out;
  };

  auto same_a = blob(1200, 8, 0.0);
  auto same_b = blob(1200, 8, 0.0);
  diag::ADistanceResult close = diag::a_distance(same_a, same_b);
  CHECK(std::fabs(close.value - 0.0) <= 0.15);

  auto far_b = blob(1200, 8, 5.0);
  diag::ADistanceResult far = diag::a_distance(same_a, far_b);
  CHECK(std::fabs(far.value - 2.0) <= 0.1);

  // symmetry under swapping sides
  diag::ADistanceResult swapped = diag::a_distance(far_b, same_a);
  CHECK(std::fabs(far.value - swapped.value) <= 0.05);
}

TEST_CASE("a_distance flags degenerate inputs and small sides") {
  std::vector<std::vector<double>> constant(60, std::vector<double>(4, 1.0));
  diag::ADistanceResult r = diag::a_distance(constant, constant);
  CHECK(r.degenerate);
  CHECK(r.value == 0.0);

  std::vector<std::vector<double>> small(10, std::vector<double>(4, 0.0));
  CHECK_THROWS_AS(diag::a_distance(small, constant), std::invalid_argument);
}

TEST_CASE("ipp_scatter skips small groups and is deterministic per content") {
  nn::ArchConfig arch;
  arch.input_size = 12;
  arch.widths = {10, 8, 6, 6};
  arch.n_classes = 3;
  arch.shared_count = 2;
  nn::ModelParams m = nn::init_model(arch, 77);

  diag::SampleGroup small;
  small.group_id = 0;
  for (int i = 0; i < 8; ++i) {
    rng::Rng rng(static_cast<uint64_t>(i));
    small.samples.push_back(data::render_glyph(i % 3, 3, 12, rng));
    small.labels.push_back(i % 3);
  }
  diag::SampleGroup big;
  big.group_id = 1;
  for (int i = 0; i < 20; ++i) {
    rng::Rng rng(static_cast<uint64_t>(i) + 100);
    big.samples.push_back(data::render_glyph(i % 3, 3, 12, rng));
    big.labels.push_back(i % 3);
  }
  diag::SampleGroup duplicate = big;
  duplicate.group_id = 2;

  auto samples = diag::ipp_scatter(m, {small, big, duplicate}, nn::AuxTaskKind::kRot, 2, 0.05);
  REQUIRE(samples.size() == 2);  // the 8-sample group was skipped
  CHECK(samples[0].group_id == 1);
  CHECK(samples[1].group_id == 2);
  CHECK(samples[0].inner_product == samples[1].inner_product);
  CHECK(samples[0].improvement == samples[1].improvement);
}

TEST_CASE("a group the model already classifies perfectly cannot improve") {
  nn::ArchConfig arch;
  arch.input_size = 12;
  arch.widths = {10, 8, 6, 6};
  arch.n_classes = 3;
  arch.shared_count = 2;
  nn::ModelParams m = nn::init_model(arch, 78);
  for (double& v : m.main_head.W.value) v = 0.0;
  m.main_head.b.value = {1000.0, 0.0, 0.0};  // constant class-0 predictor

  diag::SampleGroup group;
  group.group_id = 0;
  for (int i = 0; i < 20; ++i) {
    rng::Rng rng(static_cast<uint64_t>(i) + 500);
    group.samples.push_back(data::render_glyph(0, 3, 12, rng));
    group.labels.push_back(0);  // the predictor is already perfect here
  }
  auto samples = diag::ipp_scatter(m, {group}, nn::AuxTaskKind::kRot, 2, 0.05);
  REQUIRE(samples.size() == 1);
  CHECK(samples[0].improvement <= 0.0);
}

TEST_CASE("group_unlabeled_pool partitions by domain in chunks") {
  data::BundleParams p;
  p.n_labeled = 30;
  p.n_unlabeled = 300;
  p.n_classes = 3;
  p.glyph_size = 12;
  p.n_test_labeled = 30;
  p.n_test_unlabeled = 30;
  p.n_test_unseen = 30;
  p.mixture = data::MixtureSpec::from_ratio(1.0);
  p.seed = 17;
  data::DatasetBundle bundle = data::make_bundle(p);
  auto groups = diag::group_unlabeled_pool(bundle, 16);
  CHECK(groups.size() >= 10);
  size_t total = 0;
  for (const auto& g : groups) {
    CHECK(g.samples.size() <= 16);
    CHECK(g.samples.size() == g.labels.size());
    total += g.samples.size();
  }
  CHECK(total == bundle.unlabeled_count());
}

}  // TEST_SUITE
