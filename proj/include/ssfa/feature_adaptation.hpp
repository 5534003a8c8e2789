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
#include <vector>

#include "ssfa/aux_tasks.hpp"
#include "ssfa/glyphs.hpp"
#include "ssfa/model.hpp"

namespace ssfa::fam {

struct FamConfig {
  nn::AuxTaskKind task = nn::AuxTaskKind::kRot;
  int shared_count = 2;
  double lr_adapt = 0.05;
  double tau = 0.95;
  aux::AuxHyper hyper;
  bool diag_ipp = false;
};

// Result of one adaptation pipeline call. q_prime rows sum to 1; hard labels
// follow the lowest-index argmax tie rule; persistent parameters are
// bit-identical before and after the call that produced this.
struct AdaptationOutcome {
  int n = 0;
  int n_classes = 0;
  std::vector<double> q_prime;   // [n, C]
  std::vector<int> hard_labels;  // argmax of q_prime
  std::vector<uint8_t> mask;     // max(q') > tau
  double l_apt = 0.0;
  bool fell_back = false;  // non-finite adaptation loss, baseline labels used
  double ipp = 0.0;        // <grad_shared L_apt, grad_shared main CE>, diag only
  bool ipp_defined = false;
};

// Mean self-supervised loss over the weak views only (the adaptation
// objective). Gradients reach the first shared_count encoder layers and the
// aux head; the pipeline applies only the encoder part of the step.
ad::Value adapt_loss(ad::Graph& g, const std::vector<data::Glyph>& weak_views,
                     nn::ModelParams& params, const FamConfig& cfg, rng::Rng& rng);

// One SGD step on a scratch copy of the model: only encoder layers within
// shared_count move; heads and persistent parameters are untouched. Throws
// std::runtime_error on a non-finite adaptation loss.
nn::ModelParams one_step_adapt(nn::ModelParams& params,
                               const std::vector<data::Glyph>& weak_views, const FamConfig& cfg,
                               rng::Rng& rng, double* l_apt_out);

// Full pipeline: adaptation loss on the weak views, one-step update of a
// scratch encoder, updated predictions with (adapted encoder, main head),
// hard labels + mask, scratch discarded. On a non-finite adaptation loss it
// falls back to the unadapted predictions and flags the event.
// `hidden_labels`, when provided, enables the gradient-inner-product
// diagnostic (ground truth is used for analysis only, never for training).
AdaptationOutcome fam_pipeline(nn::ModelParams& params,
                               const std::vector<data::Glyph>& weak_views, const FamConfig& cfg,
                               rng::Rng& rng,
                               const std::vector<int>* hidden_labels = nullptr);

}  // namespace ssfa::fam
