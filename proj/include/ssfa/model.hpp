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

#include "ssfa/autodiff.hpp"
#include "ssfa/glyphs.hpp"

namespace ssfa::nn {

enum class AuxTaskKind { kRot, kContrastive, kEntropyMin };

AuxTaskKind aux_task_from_string(const std::string& s);  // rot | simclr | em
const char* aux_task_name(AuxTaskKind k);

struct ArchConfig {
  int input_size = 16;  // glyph side
  std::vector<int> widths = {256, 256, 128, 128};
  int n_classes = 10;
  int shared_count = 2;  // encoder layers reachable by auxiliary gradients
  AuxTaskKind aux_task = AuxTaskKind::kRot;
  int contrastive_dim = 32;

  int input_dim() const { return input_size * input_size; }
  int feature_dim() const { return widths.back(); }
  int aux_dim() const;
  void validate() const;
};

struct Affine {
  ad::Param W;  // (in, out)
  ad::Param b;  // (out)
};

// Shared encoder (theta_g) + main classification head (theta_c) + auxiliary
// head (theta_s). Both heads consume the full encoder output; shared_count
// gates which encoder layers auxiliary objectives may update.
struct ModelParams {
  ArchConfig arch;
  std::vector<Affine> encoder;
  Affine main_head;
  Affine aux_head;

  std::vector<ad::Param*> encoder_params(int first_n_layers);
  std::vector<ad::Param*> all_encoder_params() { return encoder_params(static_cast<int>(encoder.size())); }
  std::vector<ad::Param*> main_head_params();
  std::vector<ad::Param*> aux_head_params();
  std::vector<ad::Param*> main_path_params();  // encoder + main head
  std::vector<ad::Param*> all_params();
  // Parameter groups stepped by Eq-4 joint training; excludes the aux head
  // for the entropy task, which has no trainable head of its own.
  std::vector<ad::Param*> joint_params();

  uint64_t value_hash() const;
};

ModelParams init_model(const ArchConfig& arch, uint64_t seed);

// Stacks glyph pixels into an [n, S*S] constant input.
ad::Value batch_input(ad::Graph& g, const std::vector<data::Glyph>& batch);

// Forward passes. `trainable_encoder_layers` determines how many leading
// encoder layers bind as trainable leaves; the rest are frozen constants
// that gradients flow through but never accumulate into.
ad::Value encode(ad::Graph& g, ad::Value x, ModelParams& params, int trainable_encoder_layers);
ad::Value encode_prefix(ad::Graph& g, ad::Value x, ModelParams& params, int n_layers,
                        int trainable_encoder_layers);
ad::Value classify(ad::Graph& g, ad::Value feature, ModelParams& params, bool trainable);
ad::Value aux_head_forward(ad::Graph& g, ad::Value feature, ModelParams& params, bool trainable);
// Routes by task: Rot/Contrastive -> aux head, EntropyMin -> frozen main
// head logits.
ad::Value aux_forward(ad::Graph& g, ad::Value feature, ModelParams& params, AuxTaskKind task,
                      bool trainable_head);

// Deep value copy of a parameter subset, keyed by parameter name.
struct ParamSnapshot {
  std::vector<std::pair<std::string, std::vector<double>>> values;
};

ParamSnapshot snapshot(const std::vector<ad::Param*>& params);
// Restores exactly the captured subset; throws if a name or shape does not
// line up with the given parameter set.
void restore(const std::vector<ad::Param*>& params, const ParamSnapshot& snap);

// Checkpoint file: magic "SSFACKPT" | u32 version | u32 S | u32 C |
// u32 n_layers | u32 widths[] | u32 shared_count | u32 aux_task |
// u32 contrastive_dim | float64 values in layer order (encoder W,b per
// layer, then main head W,b, then aux head W,b). Lossless round trip.
void save_checkpoint(const ModelParams& params, const std::string& path);
ModelParams load_checkpoint(const std::string& path);

}  // namespace ssfa::nn
