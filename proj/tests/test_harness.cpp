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
#include <fstream>
#include <stdexcept>

#include "doctest.h"
#include "ssfa/harness.hpp"
#include "ssfa/theory_diag.hpp"

using namespace ssfa;
namespace fs = std::filesystem;

namespace {

data::BundleParams harness_bundle_params(double ratio, uint64_t seed) {
  data::BundleParams p;
  p.n_labeled = 30;
  p.n_unlabeled = 120;
  p.n_classes = 3;
  p.glyph_size = 12;
  p.n_test_labeled = 300;
  p.n_test_unlabeled = 300;
  p.n_test_unseen = 120;
  p.mixture = data::MixtureSpec::from_ratio(ratio);
  p.seed = seed;
  return p;
}

engine::TrainConfig harness_config(uint64_t seed) {
  engine::TrainConfig cfg;
  cfg.batch_size = 4;
  cfg.mu = 2;
  cfg.steps = 40;
  cfg.widths = {10, 8, 6, 6};
  cfg.shared_count = 2;
  cfg.seed = seed;
  return cfg;
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f);
  return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_SUITE("harness") {

TEST_CASE("random models evaluate at chance level") {
  data::DatasetBundle bundle = data::make_bundle(harness_bundle_params(0.5, 100));
  nn::ArchConfig arch;
  arch.input_size = 12;
  arch.widths = {10, 8, 6, 6};
  arch.n_classes = 3;
  nn::ModelParams m = nn::init_model(arch, 100);
  double acc = harness::evaluate(m, bundle, harness::Protocol::kLabeled);
  // 300 draws at p = 1/3: allow 5 sigma
  CHECK(std::fabs(acc - 1.0 / 3) <= 5.0 * std::sqrt((1.0 / 3) * (2.0 / 3) / 300.0));
}

TEST_CASE("a constant oracle on a single-class test set scores 1.0") {
  data::DatasetBundle bundle = data::make_bundle(harness_bundle_params(0.0, 101));
  for (data::Glyph& g : bundle.test_labeled) g.label = 0;
  nn::ArchConfig arch;
  arch.input_size = 12;
  arch.widths = {10, 8, 6, 6};
  arch.n_classes = 3;
  nn::ModelParams m = nn::init_model(arch, 101);
  for (double& v : m.main_head.W.value) v = 0.0;
  m.main_head.b.value = {1000.0, 0.0, 0.0};
  CHECK(harness::evaluate(m, bundle, harness::Protocol::kLabeled) == 1.0);
}

TEST_CASE("ratio 0 makes L and UL statistically indistinguishable") {
  data::DatasetBundle bundle = data::make_bundle(harness_bundle_params(0.0, 102));
  engine::TrainConfig cfg = harness_config(102);
  engine::TrainResult r = engine::train(cfg, bundle);
  double l = harness::evaluate(r.params, bundle, harness::Protocol::kLabeled);
  double ul = harness::evaluate(r.params, bundle, harness::Protocol::kUnlabeled);
  CHECK(std::fabs(l - ul) <= 0.12);  // binomial noise at 300 samples per side
}

TEST_CASE("per-domain breakdown weights recompose the UL accuracy") {
  data::DatasetBundle bundle = data::make_bundle(harness_bundle_params(0.8, 103));
  engine::TrainConfig cfg = harness_config(103);
  cfg.steps = 10;
  engine::TrainResult r = engine::train(cfg, bundle);
  double ul = harness::evaluate(r.params, bundle, harness::Protocol::kUnlabeled);
  auto breakdown = harness::per_domain_breakdown(r.params, bundle);
  double weighted = 0.0;
  int total = 0;
  for (const auto& d : breakdown) {
    weighted += d.accuracy * d.count;
    total += d.count;
  }
  CHECK(total == 300);
  CHECK(weighted / total == doctest::Approx(ul).epsilon(1e-12));
}

TEST_CASE("UU with an underconfident model is undefined, not zero") {
  data::DatasetBundle bundle = data::make_bundle(harness_bundle_params(0.5, 104));
  nn::ArchConfig arch;
  arch.input_size = 12;
  arch.widths = {10, 8, 6, 6};
  arch.n_classes = 3;
  nn::ModelParams m = nn::init_model(arch, 104);
  for (double& v : m.main_head.W.value) v = 0.0;
  for (double& v : m.main_head.b.value) v = 0.0;  // uniform: max conf = 1/3
  engine::TrainConfig cfg = harness_config(104);
  cfg.ssfa_enabled = false;
  harness::UUResult uu = harness::evaluate_uu(m, bundle, cfg, 0.95);
  CHECK_FALSE(uu.defined);
  CHECK(uu.mask_rate == 0.0);
}

TEST_CASE("training never touches hidden labels unless telemetry asks for them") {
  data::DatasetBundle bundle = data::make_bundle(harness_bundle_params(1.0, 105));
  engine::TrainConfig cfg = harness_config(105);
  cfg.steps = 6;
  cfg.ssfa_enabled = true;
  cfg.record_uu = false;
  cfg.diag_ipp = false;
  data::reset_hidden_access_count();
  engine::train(cfg, bundle);
  CHECK(data::hidden_access_count() == 0);

  cfg.record_uu = true;
  cfg.tau = 0.3;  // low enough that some samples pass the mask
  data::reset_hidden_access_count();
  engine::train(cfg, bundle);
  CHECK(data::hidden_access_count() > 0);
}

TEST_CASE("run_experiment emits every declared artifact deterministically") {
  fs::path out_dir = fs::temp_directory_path() / "ssfa_test_grid";
  fs::remove_all(out_dir);

  harness::ExperimentSpec spec;
  spec.bundle = harness_bundle_params(1.0, 0);
  spec.base = harness_config(0);
  spec.base.steps = 12;
  spec.seeds = {1, 2};
  harness::MethodSpec base_method;
  base_method.name = "fm";
  base_method.ssfa_enabled = false;
  harness::MethodSpec ssfa_method;
  ssfa_method.name = "fm_ssfa";
  ssfa_method.ssfa_enabled = true;
  spec.methods = {base_method, ssfa_method};
  spec.out_dir = (out_dir / "a").string();
  spec.dump_features = true;

  auto runs = harness::run_experiment(spec);
  REQUIRE(runs.size() == 4);
  for (const auto& run : runs) {
    INFO(run.method, " seed ", run.seed, ": ", run.error);
    CHECK(run.ok);
  }

  for (const char* method : {"fm", "fm_ssfa"}) {
    for (const char* seed : {"seed_1", "seed_2"}) {
      fs::path run_dir = fs::path(spec.out_dir) / "runs" / method / seed;
      for (const char* f : {"history.csv", "ckpt.bin", "eval.csv", "features.csv"})
        CHECK(fs::exists(run_dir / f));
    }
  }
  CHECK(fs::exists(fs::path(spec.out_dir) / "summary.csv"));
  CHECK(fs::exists(fs::path(spec.out_dir) / "aggregate.csv"));

  // same bundle per seed across methods
  CHECK(runs[0].bundle_hash == runs[2].bundle_hash);
  CHECK(runs[1].bundle_hash == runs[3].bundle_hash);
  CHECK(runs[0].bundle_hash != runs[1].bundle_hash);
  CHECK(runs[0].config_hash != runs[2].config_hash);

  // a rerun into a fresh directory reproduces the files bit for bit
  harness::ExperimentSpec again = spec;
  again.out_dir = (out_dir / "b").string();
  auto runs2 = harness::run_experiment(again);
  REQUIRE(runs2.size() == 4);
  CHECK(slurp(spec.out_dir + "/summary.csv") == slurp(again.out_dir + "/summary.csv"));
  CHECK(slurp(spec.out_dir + "/runs/fm/seed_1/history.csv") ==
        slurp(again.out_dir + "/runs/fm/seed_1/history.csv"));
  CHECK(slurp(spec.out_dir + "/runs/fm_ssfa/seed_2/ckpt.bin") ==
        slurp(again.out_dir + "/runs/fm_ssfa/seed_2/ckpt.bin"));
  fs::remove_all(out_dir);
}

TEST_CASE("feature dumps round-trip into the same a-distance") {
  data::DatasetBundle bundle = data::make_bundle(harness_bundle_params(1.0, 106));
  engine::TrainConfig cfg = harness_config(106);
  cfg.steps = 15;
  engine::TrainResult r = engine::train(cfg, bundle);

  fs::path path = fs::temp_directory_path() / "ssfa_test_features.csv";
  harness::dump_features(r.params, bundle, path.string());
  harness::LoadedFeatures loaded = harness::load_features_csv(path.string());
  size_t expected_rows =
      bundle.test_labeled.size() + bundle.test_unlabeled.size() + bundle.test_unseen.size();
  REQUIRE(loaded.features.size() == expected_rows);
  CHECK(loaded.features[0].size() == static_cast<size_t>(r.params.arch.feature_dim()));

  std::vector<std::vector<double>> dumped_l, dumped_ul;
  for (size_t i = 0; i < loaded.features.size(); ++i) {
    if (loaded.sets[i] == "L") dumped_l.push_back(loaded.features[i]);
    if (loaded.sets[i] == "UL") dumped_ul.push_back(loaded.features[i]);
  }
  auto in_process_l = diag::extract_features(r.params, bundle.test_labeled);
  auto in_process_ul = diag::extract_features(r.params, bundle.test_unlabeled);
  CHECK(dumped_l == in_process_l);  // round-trip precision is exact
  double from_dump = diag::a_distance(dumped_l, dumped_ul).value;
  double in_process = diag::a_distance(in_process_l, in_process_ul).value;
  CHECK(std::fabs(from_dump - in_process) <= 1e-9);
  fs::remove(path);
}

TEST_CASE("failed runs are recorded without stopping the matrix") {
  fs::path out_dir = fs::temp_directory_path() / "ssfa_test_grid_fail";
  fs::remove_all(out_dir);
  harness::ExperimentSpec spec;
  spec.bundle = harness_bundle_params(0.5, 0);
  spec.base = harness_config(0);
  spec.base.steps = 5;
  spec.seeds = {3};
  harness::MethodSpec ok;
  ok.name = "fm";
  harness::MethodSpec broken;
  broken.name = "broken";
  broken.lambda_a = 1e308;  // overflows into a non-finite loss abort
  spec.methods = {ok, broken};
  spec.out_dir = out_dir.string();
  auto runs = harness::run_experiment(spec);
  REQUIRE(runs.size() == 2);
  CHECK(runs[0].ok);
  CHECK_FALSE(runs[1].ok);
  CHECK(runs[1].error.find("non-finite") != std::string::npos);
  std::string summary = slurp((out_dir / "summary.csv").string());
  CHECK(summary.find("error") != std::string::npos);
  fs::remove_all(out_dir);
}

TEST_CASE("protocol parsing") {
  CHECK(harness::protocol_from_string("L") == harness::Protocol::kLabeled);
  CHECK(harness::protocol_from_string("UU") == harness::Protocol::kUU);
  CHECK_THROWS_AS(harness::protocol_from_string("nope"), std::invalid_argument);
}

}  // TEST_SUITE
