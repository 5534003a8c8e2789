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
#include <filesystem>
#include <stdexcept>

#include "doctest.h"
#include "ssfa/aux_tasks.hpp"
#include "ssfa/model.hpp"

using namespace ssfa;

namespace {

nn::ArchConfig small_arch() {
  nn::ArchConfig arch;
  arch.input_size = 12;
  arch.widths = {10, 8, 6, 6};
  arch.n_classes = 3;
  arch.shared_count = 2;
  arch.aux_task = nn::AuxTaskKind::kRot;
  return arch;
}

std::vector<data::Glyph> small_batch(int n, int size = 12, int n_classes = 3,
                                     uint64_t seed = 50) {
  std::vector<data::Glyph> out;
  for (int i = 0; i < n; ++i) {
    rng::Rng rng(rng::hash2(seed, static_cast<uint64_t>(i)));
    out.push_back(data::render_glyph(i % n_classes, n_classes, size, rng));
  }
  return out;
}

bool grads_all_zero(const std::vector<ad::Param*>& params) {
  for (const ad::Param* p : params)
    for (double g : p->grad)
      if (g != 0.0) return false;
  return true;
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("init_model is deterministic per seed") {
  nn::ModelParams a = nn::init_model(small_arch(), 4);
  nn::ModelParams b = nn::init_model(small_arch(), 4);
  nn::ModelParams c = nn::init_model(small_arch(), 5);
  CHECK(a.value_hash() == b.value_hash());
  CHECK(a.value_hash() != c.value_hash());
}

TEST_CASE("init_model validates the architecture") {
  nn::ArchConfig arch = small_arch();
  arch.widths[1] = 0;
  CHECK_THROWS_AS(nn::init_model(arch, 0), std::invalid_argument);
  arch = small_arch();
  arch.shared_count = 5;
  CHECK_THROWS_AS(nn::init_model(arch, 0), std::invalid_argument);
  arch = small_arch();
  arch.n_classes = 1;
  CHECK_THROWS_AS(nn::init_model(arch, 0), std::invalid_argument);
}

TEST_CASE("zero input with a zero main head gives a uniform softmax") {
  nn::ModelParams m = nn::init_model(small_arch(), 1);
  for (double& v : m.main_head.W.value) v = 0.0;
  for (double& v : m.main_head.b.value) v = 0.0;
  data::Glyph zero;
  zero.size = 12;
  zero.pixels.assign(144, 0.0f);
  zero.label = 0;
  ad::Graph g;
  ad::Value probs = g.softmax(
      nn::classify(g, nn::encode(g, nn::batch_input(g, {zero}), m, 0), m, false));
  for (double p : g.value(probs)) CHECK(p == doctest::Approx(1.0 / 3).epsilon(1e-12));
}

TEST_CASE("encode is deterministic and batch-shaped") {
  nn::ModelParams m = nn::init_model(small_arch(), 2);
  auto batch = small_batch(5);
  ad::Graph g1, g2;
  ad::Value f1 = nn::encode(g1, nn::batch_input(g1, batch), m, 0);
  ad::Value f2 = nn::encode(g2, nn::batch_input(g2, batch), m, 0);
  CHECK(g1.value(f1) == g2.value(f2));
  CHECK(g1.shape(f1) == ad::Shape{5, 6});
  ad::Value logits = nn::classify(g1, f1, m, false);
  CHECK(g1.shape(logits) == ad::Shape{5, 3});
}

TEST_CASE("auxiliary gradients stop at shared_count and never reach the main head") {
  nn::ModelParams m = nn::init_model(small_arch(), 3);
  auto batch = small_batch(6);
  ad::zero_grad(m.all_params());
  rng::Rng rng(99);
  ad::Graph g;
  g.backward(aux::rot_loss(g, batch, m, m.arch.shared_count, rng));

  CHECK_FALSE(grads_all_zero(m.encoder_params(2)));
  CHECK_FALSE(grads_all_zero(m.aux_head_params()));
  std::vector<ad::Param*> deep = {&m.encoder[2].W, &m.encoder[2].b, &m.encoder[3].W,
                                  &m.encoder[3].b};
  CHECK(grads_all_zero(deep));
  CHECK(grads_all_zero(m.main_head_params()));
}

TEST_CASE("main-loss gradients never reach the aux head") {
  nn::ModelParams m = nn::init_model(small_arch(), 3);
  auto batch = small_batch(6);
  ad::zero_grad(m.all_params());
  ad::Graph g;
  ad::Value logits = nn::classify(
      g, nn::encode(g, nn::batch_input(g, batch), m, static_cast<int>(m.encoder.size())), m, true);
  g.backward(g.mean(g.neg_entropy(g.softmax(logits))));
  CHECK_FALSE(grads_all_zero(m.main_path_params()));
  CHECK(grads_all_zero(m.aux_head_params()));
}

TEST_CASE("snapshot and restore are exact, subset-scoped and idempotent") {
  nn::ModelParams m = nn::init_model(small_arch(), 7);
  auto enc = m.all_encoder_params();
  nn::ParamSnapshot snap = nn::snapshot(enc);
  uint64_t before = m.value_hash();

  for (ad::Param* p : enc)
    for (double& v : p->value) v += 0.5;
  double perturbed_head = m.main_head.W.value[0] += 1.25;
  CHECK(m.value_hash() != before);

  nn::restore(enc, snap);
  CHECK(m.main_head.W.value[0] == perturbed_head);  // untouched subset survives
  nn::restore(enc, snap);                           // idempotent
  m.main_head.W.value[0] -= 1.25;
  CHECK(m.value_hash() == before);
}

TEST_CASE("restore rejects identity mismatches") {
  nn::ModelParams m = nn::init_model(small_arch(), 7);
  nn::ParamSnapshot snap = nn::snapshot({&m.encoder[0].W});
  snap.values[0].first = "nonexistent";
  std::vector<ad::Param*> target{&m.encoder[0].W};
  CHECK_THROWS_AS(nn::restore(target, snap), std::invalid_argument);
}

TEST_CASE("checkpoints round-trip losslessly") {
  nn::ArchConfig arch = small_arch();
  arch.aux_task = nn::AuxTaskKind::kContrastive;
  arch.contrastive_dim = 5;
  nn::ModelParams m = nn::init_model(arch, 123);
  std::string path = (std::filesystem::temp_directory_path() / "ssfa_test_ckpt.bin").string();
  nn::save_checkpoint(m, path);
  nn::ModelParams loaded = nn::load_checkpoint(path);
  CHECK(loaded.value_hash() == m.value_hash());
  CHECK(loaded.arch.widths == m.arch.widths);
  CHECK(loaded.arch.shared_count == m.arch.shared_count);
  CHECK(loaded.arch.aux_task == m.arch.aux_task);
  std::filesystem::remove(path);
}

TEST_CASE("load_checkpoint rejects bad magic") {
  std::string path = (std::filesystem::temp_directory_path() / "ssfa_bad_ckpt.bin").string();
  std::FILE* f = std::fopen(path.c_str(), "wb");
  std::fputs("SSFAnope....", f);
  std::fclose(f);
  CHECK_THROWS_AS(nn::load_checkpoint(path), std::runtime_error);
  std::filesystem::remove(path);
}

}  // TEST_SUITE
