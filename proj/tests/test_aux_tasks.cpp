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
#include "ssfa/aux_tasks.hpp"

using namespace ssfa;

namespace {

nn::ArchConfig tiny_arch(nn::AuxTaskKind task) {
  nn::ArchConfig arch;
  arch.input_size = 12;
  arch.widths = {8, 6};
  arch.n_classes = 3;
  arch.shared_count = 1;
  arch.aux_task = task;
  arch.contrastive_dim = 4;
  return arch;
}

std::vector<data::Glyph> tiny_batch(int n, uint64_t seed = 60) {
  std::vector<data::Glyph> out;
  for (int i = 0; i < n; ++i) {
    rng::Rng rng(rng::hash2(seed, static_cast<uint64_t>(i)));
    out.push_back(data::render_glyph(i % 3, 3, 12, rng));
  }
  return out;
}

}  // namespace

TEST_SUITE("aux_tasks") {

TEST_CASE("rot loss equals ln 4 under a uniform predictor") {
  nn::ModelParams m = nn::init_model(tiny_arch(nn::AuxTaskKind::kRot), 1);
  for (double& v : m.aux_head.W.value) v = 0.0;
  for (double& v : m.aux_head.b.value) v = 0.0;
  rng::Rng rng(2);
  ad::Graph g;
  double loss = g.item(aux::rot_loss(g, tiny_batch(8), m, 1, rng));
  CHECK(loss == doctest::Approx(std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("rot loss vanishes for a perfect predictor") {
  nn::ModelParams m = nn::init_model(tiny_arch(nn::AuxTaskKind::kRot), 1);
  for (double& v : m.aux_head.W.value) v = 0.0;
  m.aux_head.b.value = {1000.0, 0.0, 0.0, 0.0};  // always predicts k = 0
  // find a seed whose four rotation draws are all 0
  for (uint64_t seed = 0;; ++seed) {
    REQUIRE(seed < 100000);
    rng::Rng probe(seed);
    bool all_zero = true;
    for (int i = 0; i < 4; ++i)
      if (probe.uniform_int(4) != 0) all_zero = false;
    if (!all_zero) continue;
    rng::Rng rng(seed);
    ad::Graph g;
    double loss = g.item(aux::rot_loss(g, tiny_batch(4), m, 1, rng));
    CHECK(loss >= 0.0);
    CHECK(loss < 1e-9);
    break;
  }
}

TEST_CASE("rot loss rejects non-square glyphs") {
  nn::ModelParams m = nn::init_model(tiny_arch(nn::AuxTaskKind::kRot), 1);
  data::Glyph bad;
  bad.size = 4;
  bad.pixels.assign(12, 0.0f);
  rng::Rng rng(3);
  ad::Graph g;
  std::vector<data::Glyph> batch{bad};
  CHECK_THROWS_AS(aux::rot_loss(g, batch, m, 1, rng), std::invalid_argument);
}

TEST_CASE("rot gradient passes finite differences") {
  nn::ModelParams m = nn::init_model(tiny_arch(nn::AuxTaskKind::kRot), 5);
  auto batch = tiny_batch(4);
  std::vector<ad::Param*> trainable = m.encoder_params(1);
  for (ad::Param* p : m.aux_head_params()) trainable.push_back(p);
  double err = ad::grad_check(
      [&](ad::Graph& g) {
        rng::Rng rng(77);  // same rotations every evaluation
        return aux::rot_loss(g, batch, m, 1, rng);
      },
      trainable, 1e-4);
  CHECK(err <= 1e-4);
}

TEST_CASE("contrastive loss equals ln 3 when all embeddings coincide") {
  nn::ModelParams m = nn::init_model(tiny_arch(nn::AuxTaskKind::kContrastive), 1);
  for (double& v : m.aux_head.W.value) v = 0.0;
  m.aux_head.b.value = {0.3, -0.2, 0.5, 0.1};
  rng::Rng rng(4);
  ad::Graph g;
  double loss = g.item(aux::contrastive_loss(g, tiny_batch(2), m, 1, rng, {}));
  CHECK(loss == doctest::Approx(std::log(3.0)).epsilon(1e-9));
}

TEST_CASE("contrastive loss rejects singleton batches") {
  nn::ModelParams m = nn::init_model(tiny_arch(nn::AuxTaskKind::kContrastive), 1);
  rng::Rng rng(5);
  ad::Graph g;
  auto batch = tiny_batch(1);
  CHECK_THROWS_AS(aux::contrastive_loss(g, batch, m, 1, rng, {}), std::invalid_argument);
}

TEST_CASE("contrastive loss is invariant to an orthogonal embedding transform") {
  nn::ModelParams m = nn::init_model(tiny_arch(nn::AuxTaskKind::kContrastive), 6);
  auto batch = tiny_batch(5);
  auto eval_loss = [&](nn::ModelParams& model) {
    rng::Rng rng(91);
    ad::Graph g;
    return g.item(aux::contrastive_loss(g, batch, model, 1, rng, {}));
  };
  double base = eval_loss(m);

  // rotate embedding coordinates (0,1) and (2,3) by fixed angles
  nn::ModelParams rotated = m;
  auto rotate_cols = [&](int c0, int c1, double angle) {
    double cs = std::cos(angle), sn = std::sin(angle);
    int dim = rotated.arch.aux_dim();
    for (size_t r = 0; r < rotated.aux_head.W.value.size() / static_cast<size_t>(dim); ++r) {
      double* row = &rotated.aux_head.W.value[r * static_cast<size_t>(dim)];
      double a = row[c0], b = row[c1];
      row[c0] = cs * a - sn * b;
      row[c1] = sn * a + cs * b;
    }
    double a = rotated.aux_head.b.value[static_cast<size_t>(c0)];
    double b = rotated.aux_head.b.value[static_cast<size_t>(c1)];
    rotated.aux_head.b.value[static_cast<size_t>(c0)] = cs * a - sn * b;
    rotated.aux_head.b.value[static_cast<size_t>(c1)] = sn * a + cs * b;
  };
  rotate_cols(0, 1, 0.7);
  rotate_cols(2, 3, -1.3);
  CHECK(eval_loss(rotated) == doctest::Approx(base).epsilon(1e-9));
}

TEST_CASE("contrastive gradient passes finite differences") {
  nn::ModelParams m = nn::init_model(tiny_arch(nn::AuxTaskKind::kContrastive), 7);
  auto batch = tiny_batch(3);
  std::vector<ad::Param*> trainable = m.encoder_params(1);
  for (ad::Param* p : m.aux_head_params()) trainable.push_back(p);
  double err = ad::grad_check(
      [&](ad::Graph& g) {
        rng::Rng rng(55);
        return aux::contrastive_loss(g, batch, m, 1, rng, {});
      },
      trainable, 1e-4);
  CHECK(err <= 1e-4);
}

TEST_CASE("entropy loss hits its closed-form endpoints") {
  nn::ModelParams m = nn::init_model(tiny_arch(nn::AuxTaskKind::kEntropyMin), 1);
  auto batch = tiny_batch(6);
  for (double& v : m.main_head.W.value) v = 0.0;
  for (double& v : m.main_head.b.value) v = 0.0;
  {
    ad::Graph g;
    double loss = g.item(aux::entropy_loss(g, batch, m, 1));
    CHECK(loss == doctest::Approx(std::log(3.0)).epsilon(1e-12));  // uniform
  }
  m.main_head.b.value = {1000.0, 0.0, 0.0};
  {
    ad::Graph g;
    double loss = g.item(aux::entropy_loss(g, batch, m, 1));
    CHECK(loss >= 0.0);
    CHECK(loss < 1e-9);  // one-hot
  }
}

TEST_CASE("entropy never exceeds ln C") {
  for (uint64_t seed = 0; seed < 20; ++seed) {
    nn::ModelParams m = nn::init_model(tiny_arch(nn::AuxTaskKind::kEntropyMin), seed);
    ad::Graph g;
    double loss = g.item(aux::entropy_loss(g, tiny_batch(5, seed), m, 1));
    CHECK(loss >= 0.0);
    CHECK(loss <= std::log(3.0) + 1e-12);
  }
}

TEST_CASE("entropy gradient passes finite differences and skips the aux head") {
  nn::ModelParams m = nn::init_model(tiny_arch(nn::AuxTaskKind::kEntropyMin), 8);
  auto batch = tiny_batch(4);
  std::vector<ad::Param*> trainable = m.encoder_params(1);
  double err = ad::grad_check(
      [&](ad::Graph& g) { return aux::entropy_loss(g, batch, m, 1); }, trainable, 1e-4);
  CHECK(err <= 1e-4);

  ad::zero_grad(m.all_params());
  ad::Graph g;
  g.backward(aux::entropy_loss(g, batch, m, 1));
  for (ad::Param* p : m.aux_head_params())
    for (double gv : p->grad) CHECK(gv == 0.0);
  for (ad::Param* p : m.main_head_params())
    for (double gv : p->grad) CHECK(gv == 0.0);  // read-only main head
}

TEST_CASE("losses are deterministic given the rng seed") {
  nn::ModelParams m = nn::init_model(tiny_arch(nn::AuxTaskKind::kRot), 9);
  auto batch = tiny_batch(6);
  auto once = [&]() {
    rng::Rng rng(123);
    ad::Graph g;
    return g.item(aux::rot_loss(g, batch, m, 1, rng));
  };
  CHECK(once() == once());
}

}  // TEST_SUITE
