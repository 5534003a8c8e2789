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
#include "ssfa/aux_tasks.hpp"

#include <stdexcept>

namespace ssfa::aux {

StreamLoss rot_loss_sum(ad::Graph& g, const std::vector<data::Glyph>& batch,
                        nn::ModelParams& params, int trainable_encoder_layers, rng::Rng& rng) {
  if (batch.empty()) throw std::invalid_argument("rot_loss: empty batch");
  int n = static_cast<int>(batch.size());
  std::vector<data::Glyph> rotated;
  rotated.reserve(batch.size());
  std::vector<int> ks(batch.size());
  for (size_t i = 0; i < batch.size(); ++i) {
    ks[i] = rng.uniform_int(4);
    rotated.push_back(data::rotate90(batch[i], ks[i]));
  }
  ad::Value x = nn::batch_input(g, rotated);
  ad::Value feat = nn::encode_prefix(g, x, params, params.arch.shared_count, trainable_encoder_layers);
  ad::Value logits = nn::aux_head_forward(g, feat, params, /*trainable=*/true);
  ad::Value logp = g.log_softmax(logits);
  // sum_i -log p(k_i): one -1 per row at the drawn rotation index
  std::vector<double> target(static_cast<size_t>(n) * 4, 0.0);
  for (int i = 0; i < n; ++i) target[static_cast<size_t>(i) * 4 + ks[static_cast<size_t>(i)]] = -1.0;
  ad::Value sum = g.sum(g.mul(logp, g.constant({n, 4}, std::move(target))));
  return {sum, n};
}

StreamLoss contrastive_loss_sum(ad::Graph& g, const std::vector<data::Glyph>& batch,
                                nn::ModelParams& params, int trainable_encoder_layers,
                                rng::Rng& rng, const AuxHyper& hyper) {
  int n = static_cast<int>(batch.size());
  if (n < 2) throw std::invalid_argument("contrastive_loss: need a batch of >= 2, got " +
                                         std::to_string(n));
  std::vector<data::Glyph> views;
  views.reserve(batch.size() * 2);
  for (const data::Glyph& glyph : batch) {
    views.push_back(data::weak_aug(glyph, rng));
    views.push_back(data::weak_aug(glyph, rng));
  }
  int m = 2 * n;
  ad::Value x = nn::batch_input(g, views);
  ad::Value feat = nn::encode_prefix(g, x, params, params.arch.shared_count, trainable_encoder_layers);
  ad::Value z = g.l2_normalize(nn::aux_head_forward(g, feat, params, /*trainable=*/true));
  ad::Value sims = g.scale(g.matmul(z, z, /*transpose_b=*/true),
                           1.0 / hyper.contrastive_temperature);
  // Self-similarity is pushed to -inf so each anchor ranks only the other
  // 2n-1 views.
  std::vector<double> diag(static_cast<size_t>(m) * m, 0.0);
  for (int i = 0; i < m; ++i) diag[static_cast<size_t>(i) * m + i] = -1e9;
  ad::Value logp = g.log_softmax(g.add(sims, g.constant({m, m}, std::move(diag))));
  // Positive for anchor 2i is 2i+1 and vice versa; -0.5 so the two anchor
  // losses of a sample average into one per-sample value.
  std::vector<double> target(static_cast<size_t>(m) * m, 0.0);
  for (int i = 0; i < n; ++i) {
    target[static_cast<size_t>(2 * i) * m + (2 * i + 1)] = -0.5;
    target[static_cast<size_t>(2 * i + 1) * m + (2 * i)] = -0.5;
  }
  ad::Value sum = g.sum(g.mul(logp, g.constant({m, m}, std::move(target))));
  return {sum, n};
}

StreamLoss entropy_loss_sum(ad::Graph& g, const std::vector<data::Glyph>& batch,
                            nn::ModelParams& params, int trainable_encoder_layers) {
  if (batch.empty()) throw std::invalid_argument("entropy_loss: empty batch");
  ad::Value x = nn::batch_input(g, batch);
  ad::Value feat = nn::encode(g, x, params, trainable_encoder_layers);
  ad::Value probs = g.softmax(nn::classify(g, feat, params, /*trainable=*/false));
  ad::Value sum = g.scale(g.sum(g.neg_entropy(probs)), -1.0);
  return {sum, static_cast<int>(batch.size())};
}

StreamLoss task_loss_sum(ad::Graph& g, nn::AuxTaskKind task,
                         const std::vector<data::Glyph>& batch, nn::ModelParams& params,
                         int trainable_encoder_layers, rng::Rng& rng, const AuxHyper& hyper) {
  switch (task) {
    case nn::AuxTaskKind::kRot:
      return rot_loss_sum(g, batch, params, trainable_encoder_layers, rng);
    case nn::AuxTaskKind::kContrastive:
      return contrastive_loss_sum(g, batch, params, trainable_encoder_layers, rng, hyper);
    case nn::AuxTaskKind::kEntropyMin:
      return entropy_loss_sum(g, batch, params, trainable_encoder_layers);
  }
  throw std::invalid_argument("task_loss_sum: unknown task");
}

ad::Value rot_loss(ad::Graph& g, const std::vector<data::Glyph>& batch, nn::ModelParams& params,
                   int trainable_encoder_layers, rng::Rng& rng) {
  StreamLoss s = rot_loss_sum(g, batch, params, trainable_encoder_layers, rng);
  return g.scale(s.sum, 1.0 / s.count);
}

ad::Value contrastive_loss(ad::Graph& g, const std::vector<data::Glyph>& batch,
                           nn::ModelParams& params, int trainable_encoder_layers, rng::Rng& rng,
                           const AuxHyper& hyper) {
  StreamLoss s = contrastive_loss_sum(g, batch, params, trainable_encoder_layers, rng, hyper);
  return g.scale(s.sum, 1.0 / s.count);
}

ad::Value entropy_loss(ad::Graph& g, const std::vector<data::Glyph>& batch,
                       nn::ModelParams& params, int trainable_encoder_layers) {
  StreamLoss s = entropy_loss_sum(g, batch, params, trainable_encoder_layers);
  return g.scale(s.sum, 1.0 / s.count);
}

}  // namespace ssfa::aux
