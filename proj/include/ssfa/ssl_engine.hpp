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

#include "ssfa/aux_tasks.hpp"
#include "ssfa/feature_adaptation.hpp"
#include "ssfa/glyphs.hpp"
#include "ssfa/model.hpp"

namespace ssfa::engine {

enum class LearnerKind { kFixedThreshold, kAdaptiveThreshold };

LearnerKind learner_from_string(const std::string& s);  // fixed | adaptive
const char* learner_name(LearnerKind k);

struct TrainConfig {
  int batch_size = 16;  // B
  int mu = 4;           // unlabeled-to-labeled batch ratio
  double lambda_u = 1.0;
  double lambda_a = 0.5;
  double tau = 0.95;
  double lr_main = 0.05;
  double lr_adapt = 0.05;
  int steps = 3000;
  LearnerKind learner = LearnerKind::kFixedThreshold;
  bool ssfa_enabled = true;
  nn::AuxTaskKind aux_task = nn::AuxTaskKind::kRot;
  int shared_count = 2;
  uint64_t seed = 0;
  double contrastive_temperature = 0.5;
  int contrastive_dim = 32;
  std::vector<int> widths = {256, 256, 128, 128};
  bool record_uu = true;  // per-step pseudo-label accuracy telemetry
  bool diag_ipp = false;  // per-step gradient-inner-product telemetry

  void validate() const;
  uint64_t config_hash() const;
};

struct StepReport {
  int step = 0;
  double loss_x = 0.0;
  double loss_u = 0.0;
  double loss_aux = 0.0;
  double loss_apt = 0.0;  // NaN when the adaptation pipeline did not run
  double mask_rate = 0.0;
  double uu_acc = 0.0;  // NaN when undefined (empty masked-in set)
  bool uu_defined = false;
  double tau_t = 0.0;
  double ipp = 0.0;
  bool ipp_defined = false;
  bool adapt_fallback = false;
};

// Pseudo-labels for one unlabeled batch: full class distribution plus the
// hard argmax labels (ties broken by lowest class index).
struct PseudoLabels {
  int n = 0;
  int n_classes = 0;
  std::vector<double> q;  // [n, C]
  std::vector<int> hard;
  std::vector<double> max_confidence() const;
};

int argmax_lowest_tie(const double* row, int n);

// Eq-1 style supervised loss: mean cross-entropy of the main head on the
// labeled batch.
ad::Value supervised_loss(ad::Graph& g, const std::vector<data::Glyph>& labeled_batch,
                          nn::ModelParams& params);

// Threshold-masked cross-entropy on the strong views, divided by the full
// batch size regardless of how many samples pass the confidence mask.
ad::Value unsupervised_loss(ad::Graph& g, const std::vector<data::Glyph>& strong_views,
                            const PseudoLabels& pseudo, nn::ModelParams& params, double tau);

// Joint auxiliary loss over the three streams (raw labeled, weak views,
// strong views), normalized by (2*mu+1)*B where B = labeled size and
// mu*B = unlabeled size.
ad::Value aux_loss_streams(ad::Graph& g, const std::vector<data::Glyph>& labeled_batch,
                           const std::vector<data::Glyph>& weak_views,
                           const std::vector<data::Glyph>& strong_views,
                           nn::ModelParams& params, nn::AuxTaskKind task, int shared_count,
                           rng::Rng& rng, const aux::AuxHyper& hyper);

// Convenience wrapper that builds the weak/strong views itself.
ad::Value aux_loss(ad::Graph& g, const std::vector<data::Glyph>& labeled_batch,
                   const std::vector<data::Glyph>& unlabeled_batch, nn::ModelParams& params,
                   nn::AuxTaskKind task, int shared_count, rng::Rng& rng,
                   const aux::AuxHyper& hyper);

ad::Value total_loss(ad::Graph& g, ad::Value loss_x, ad::Value loss_u, ad::Value loss_aux,
                     double lambda_u, double lambda_a);

// Unadapted pseudo-labels: main-head softmax on the weak views.
PseudoLabels baseline_pseudo(const std::vector<data::Glyph>& weak_views, nn::ModelParams& params);

// EMA threshold update: tau_t = (1-m)*tau_prev + m*mean(max confidence),
// with m the complement of the 0.999 decay. tau_0 = 1/C.
double adaptive_threshold_update(double tau_prev, const std::vector<double>& max_confidences,
                                 double m = 0.001);

struct TrainResult {
  nn::ModelParams params;
  std::vector<StepReport> history;
  double final_tau = 0.0;
};

TrainResult train(const TrainConfig& cfg, const data::DatasetBundle& bundle);

// History CSV: step,L_x,L_u,L_aux,L_apt,mask_rate,uu_acc,tau_t
void write_history_csv(const std::vector<StepReport>& history, const std::string& path);
std::string history_csv(const std::vector<StepReport>& history);

}  // namespace ssfa::engine
