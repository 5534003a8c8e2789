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

#include <vector>

#include "ssfa/autodiff.hpp"
#include "ssfa/glyphs.hpp"
#include "ssfa/model.hpp"

namespace ssfa::aux {

struct AuxHyper {
  double contrastive_temperature = 0.5;
};

// Per-sample self-supervised loss summed over the batch, plus the sample
// count. The sums plug into the (2*mu+1)*B normalization of the joint
// auxiliary objective; divide by `count` for the standalone mean losses.
struct StreamLoss {
  ad::Value sum;
  int count = 0;
};

// Rotation prediction: each glyph is rotated by a uniformly drawn k*90deg
// and the 4-way aux head is trained to recover k.
StreamLoss rot_loss_sum(ad::Graph& g, const std::vector<data::Glyph>& batch,
                        nn::ModelParams& params, int trainable_encoder_layers, rng::Rng& rng);

// SimCLR-style NT-Xent over two weak views per sample; embeddings are the
// l2-normalized aux head outputs. Per-sample value is the mean of the
// sample's two anchor losses. Batch must have at least 2 samples.
StreamLoss contrastive_loss_sum(ad::Graph& g, const std::vector<data::Glyph>& batch,
                                nn::ModelParams& params, int trainable_encoder_layers,
                                rng::Rng& rng, const AuxHyper& hyper);

// Mean Shannon entropy of the main head's softmax. Reads the main head but
// never trains it; only shared encoder layers receive gradients.
StreamLoss entropy_loss_sum(ad::Graph& g, const std::vector<data::Glyph>& batch,
                            nn::ModelParams& params, int trainable_encoder_layers);

StreamLoss task_loss_sum(ad::Graph& g, nn::AuxTaskKind task,
                         const std::vector<data::Glyph>& batch, nn::ModelParams& params,
                         int trainable_encoder_layers, rng::Rng& rng, const AuxHyper& hyper);

// Standalone mean losses.
ad::Value rot_loss(ad::Graph& g, const std::vector<data::Glyph>& batch, nn::ModelParams& params,
                   int trainable_encoder_layers, rng::Rng& rng);
ad::Value contrastive_loss(ad::Graph& g, const std::vector<data::Glyph>& batch,
                           nn::ModelParams& params, int trainable_encoder_layers, rng::Rng& rng,
                           const AuxHyper& hyper);
ad::Value entropy_loss(ad::Graph& g, const std::vector<data::Glyph>& batch,
                       nn::ModelParams& params, int trainable_encoder_layers);

}  // namespace ssfa::aux
