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
#include "ssfa/feature_adaptation.hpp"

#include <cmath>
#include <stdexcept>

#include "ssfa/ssl_engine.hpp"

namespace ssfa::fam {

ad::Value adapt_loss(ad::Graph& g, const std::vector<data::Glyph>& weak_views,
                     nn::ModelParams& params, const FamConfig& cfg, rng::Rng& rng) {
  if (weak_views.empty()) throw std::invalid_argument("adapt_loss: empty batch");
  aux::StreamLoss s =
      aux::task_loss_sum(g, cfg.task, weak_views, params, cfg.shared_count, rng, cfg.hyper);
  return g.scale(s.sum, 1.0 / s.count);
}

nn::ModelParams one_step_adapt(nn::ModelParams& params,
                               const std::vector<data::Glyph>& weak_views, const FamConfig& cfg,
                               rng::Rng& rng, double* l_apt_out) {
  if (cfg.lr_adapt < 0.0) throw std::invalid_argument("one_step_adapt: negative lr_adapt");
  nn::ModelParams scratch = params;  // deep copy; persistent params never move
  ad::Graph g;
  ad::Value loss = adapt_loss(g, weak_views, scratch, cfg, rng);
  double l_apt = g.item(loss);
  if (l_apt_out != nullptr) *l_apt_out = l_apt;
  if (!std::isfinite(l_apt))
    throw std::runtime_error("one_step_adapt: non-finite adaptation loss");
  auto stepped = scratch.encoder_params(cfg.shared_count);
  ad::zero_grad(scratch.all_params());
  g.backward(loss);
  ad::sgd_step(stepped, cfg.lr_adapt);  // aux-head grads exist but are not applied
  return scratch;
}

namespace {

// <grad_shared L_apt, grad_shared mean-CE(weak views, hidden labels)>.
// Ground-truth labels feed analysis only; nothing here touches training.
double inner_product_diag(nn::ModelParams& params, const std::vector<data::Glyph>& weak_views,
                          const std::vector<int>& hidden_labels, const FamConfig& cfg,
                          rng::Rng& rng) {
  auto shared = params.encoder_params(cfg.shared_count);
  ad::zero_grad(params.all_params());
  std::vector<std::vector<double>> apt_grads;
  {
    ad::Graph g;
    ad::Value loss = adapt_loss(g, weak_views, params, cfg, rng);
    g.backward(loss);
    for (ad::Param* p : shared) apt_grads.push_back(p->grad);
  }
  ad::zero_grad(params.all_params());
  {
    ad::Graph g;
    ad::Value x = nn::batch_input(g, weak_views);
    ad::Value feat = nn::encode(g, x, params, cfg.shared_count);
    ad::Value logp = g.log_softmax(nn::classify(g, feat, params, /*trainable=*/false));
    int n = static_cast<int>(weak_views.size());
    int c = params.arch.n_classes;
    std::vector<double> target(static_cast<size_t>(n) * c, 0.0);
    for (int i = 0; i < n; ++i)
      target[static_cast<size_t>(i) * c + hidden_labels[static_cast<size_t>(i)]] = -1.0 / n;
    g.backward(g.sum(g.mul(logp, g.constant({n, c}, std::move(target)))));
  }
  double ip = 0.0;
  for (size_t i = 0; i < shared.size(); ++i)
    for (size_t j = 0; j < shared[i]->grad.size(); ++j)
      ip += apt_grads[i][j] * shared[i]->grad[j];
  ad::zero_grad(params.all_params());
  return ip;
}

AdaptationOutcome predictions_to_outcome(const std::vector<double>& probs, int n, int c,
                                         double tau) {
  AdaptationOutcome out;
  out.n = n;
  out.n_classes = c;
  out.q_prime = probs;
  out.hard_labels.resize(static_cast<size_t>(n));
  out.mask.resize(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double* row = &probs[static_cast<size_t>(i) * c];
    int best = engine::argmax_lowest_tie(row, c);
    out.hard_labels[static_cast<size_t>(i)] = best;
    out.mask[static_cast<size_t>(i)] = row[best] > tau ? 1 : 0;
  }
  return out;
}

}  // namespace

AdaptationOutcome fam_pipeline(nn::ModelParams& params,
                               const std::vector<data::Glyph>& weak_views, const FamConfig& cfg,
                               rng::Rng& rng, const std::vector<int>* hidden_labels) {
  if (weak_views.empty()) throw std::invalid_argument("fam_pipeline: empty batch");
  int n = static_cast<int>(weak_views.size());
  int c = params.arch.n_classes;

  double ipp = 0.0;
  bool ipp_defined = false;
  if (cfg.diag_ipp && hidden_labels != nullptr) {
    rng::Rng diag_rng = rng;  // same rotations as the adaptation step below
    ipp = inner_product_diag(params, weak_views, *hidden_labels, cfg, diag_rng);
    ipp_defined = true;
  }

  double l_apt = std::numeric_limits<double>::quiet_NaN();
  AdaptationOutcome out;
  try {
    nn::ModelParams adapted = one_step_adapt(params, weak_views, cfg, rng, &l_apt);
    ad::Graph g;
    ad::Value x = nn::batch_input(g, weak_views);
    ad::Value feat = nn::encode(g, x, adapted, /*trainable_encoder_layers=*/0);
    ad::Value probs = g.softmax(nn::classify(g, feat, adapted, /*trainable=*/false));
    out = predictions_to_outcome(g.value(probs), n, c, cfg.tau);
  } catch (const std::runtime_error&) {
    engine::PseudoLabels pl = engine::baseline_pseudo(weak_views, params);
    out = predictions_to_outcome(pl.q, n, c, cfg.tau);
    out.fell_back = true;
  }
  out.l_apt = l_apt;
  out.ipp = ipp;
  out.ipp_defined = ipp_defined;
  return out;
}

}  // namespace ssfa::fam
