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

#include <optional>
#include <string>
#include <vector>

#include "ssfa/glyphs.hpp"
#include "ssfa/model.hpp"
#include "ssfa/ssl_engine.hpp"

namespace ssfa::harness {

enum class Protocol { kLabeled, kUnlabeled, kUnseen, kUU };

Protocol protocol_from_string(const std::string& s);  // L | UL | US | UU

struct DomainAccuracy {
  int domain_tag = 0;
  int count = 0;
  double accuracy = 0.0;
};

struct UUResult {
  double accuracy = 0.0;  // undefined when mask selects nothing
  bool defined = false;
  double mask_rate = 0.0;
};

struct EvalResult {
  double acc_labeled = 0.0;
  double acc_unlabeled = 0.0;
  double acc_unseen = 0.0;
  UUResult uu;
  std::vector<DomainAccuracy> per_domain;  // breakdown of the UL protocol
};

// Top-1 accuracy on the protocol's test set. For kUU use evaluate_uu.
double evaluate(nn::ModelParams& params, const data::DatasetBundle& bundle, Protocol protocol);

// Re-derives the final mask decisions over the whole unlabeled pool with the
// given pseudo-label path (adapted when cfg.ssfa_enabled) and measures hard
// pseudo-labels against the hidden truth. An empty masked-in set reports
// undefined, not zero.
UUResult evaluate_uu(nn::ModelParams& params, const data::DatasetBundle& bundle,
                     const engine::TrainConfig& cfg, double tau);

EvalResult evaluate_all(nn::ModelParams& params, const data::DatasetBundle& bundle,
                        const engine::TrainConfig& cfg, double tau);

std::vector<DomainAccuracy> per_domain_breakdown(nn::ModelParams& params,
                                                 const data::DatasetBundle& bundle);

// CSV rows: set,index,label,domain_tag,f0..f{D-1} for every test sample
// (sets L, UL, US). Values print with round-trip precision so downstream
// A-distance runs match the in-process value exactly.
void dump_features(nn::ModelParams& params, const data::DatasetBundle& bundle,
                   const std::string& path);

struct LoadedFeatures {
  std::vector<std::vector<double>> features;
  std::vector<int> labels;
  std::vector<int> domain_tags;
  std::vector<std::string> sets;
};
LoadedFeatures load_features_csv(const std::string& path);

// One method of the experiment matrix; fields override the base config.
struct MethodSpec {
  std::string name;
  engine::LearnerKind learner = engine::LearnerKind::kFixedThreshold;
  bool ssfa_enabled = false;
  nn::AuxTaskKind aux_task = nn::AuxTaskKind::kRot;
  std::optional<double> lambda_a;  // defaults: 0 when ssfa off, base when on
  std::optional<double> tau;
  std::optional<int> shared_count;

  engine::TrainConfig resolve(const engine::TrainConfig& base, uint64_t seed) const;
};

struct ExperimentSpec {
  data::BundleParams bundle;  // seed field is replaced by each run seed
  std::vector<MethodSpec> methods;
  std::vector<uint64_t> seeds;
  engine::TrainConfig base;
  std::string out_dir;
  bool dump_features = false;
};

struct RunSummary {
  std::string method;
  uint64_t seed = 0;
  bool ok = false;
  std::string error;
  std::string config_hash;
  std::string bundle_hash;
  EvalResult eval;
  double final_tau = 0.0;
};

// Trains and evaluates every (method, seed) cell, one directory per run
// (history.csv, ckpt.bin, eval.csv, optional features.csv, optional
// ipp.csv), then writes out_dir/summary.csv and out_dir/aggregate.csv.
// Failed runs are recorded and do not stop the rest. Parallelism is capped
// by SSFA_LAB_THREADS.
std::vector<RunSummary> run_experiment(const ExperimentSpec& spec);

void write_summary_csv(const std::vector<RunSummary>& runs, const std::string& path);
void write_aggregate_csv(const std::vector<RunSummary>& runs, const std::string& path);

int thread_cap();  // SSFA_LAB_THREADS, default hardware concurrency

}  // namespace ssfa::harness
