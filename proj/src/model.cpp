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
#include "ssfa/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "ssfa/common.hpp"

namespace ssfa::nn {

AuxTaskKind aux_task_from_string(const std::string& s) {
  if (s == "rot") return AuxTaskKind::kRot;
  if (s == "simclr") return AuxTaskKind::kContrastive;
  if (s == "em") return AuxTaskKind::kEntropyMin;
  throw std::invalid_argument("aux_task: expected rot|simclr|em, got '" + s + "'");
}

const char* aux_task_name(AuxTaskKind k) {
  switch (k) {
    case AuxTaskKind::kRot: return "rot";
    case AuxTaskKind::kContrastive: return "simclr";
    case AuxTaskKind::kEntropyMin: return "em";
  }
  return "?";
}

int ArchConfig::aux_dim() const {
  switch (aux_task) {
    case AuxTaskKind::kRot: return 4;
    case AuxTaskKind::kContrastive: return contrastive_dim;
    case AuxTaskKind::kEntropyMin: return n_classes;  // head unused by the task
  }
  return 0;
}

void ArchConfig::validate() const {
  if (n_classes < 2) throw std::invalid_argument("arch: need at least 2 classes");
  if (widths.empty()) throw std::invalid_argument("arch: encoder needs at least one layer");
  for (int w : widths)
    if (w <= 0) throw std::invalid_argument("arch: zero-width encoder layer");
  if (shared_count < 1 || shared_count > static_cast<int>(widths.size()))
    throw std::invalid_argument("arch: shared_count " + std::to_string(shared_count) +
                                " out of range 1.." + std::to_string(widths.size()));
  if (input_size < 8) throw std::invalid_argument("arch: input_size must be >= 8");
  if (contrastive_dim <= 0) throw std::invalid_argument("arch: contrastive_dim must be > 0");
}

namespace {

Affine init_affine(const std::string& name, int in, int out, rng::Rng& rng) {
  Affine a{ad::Param(name + ".W", {in, out}), ad::Param(name + ".b", {out})};
  double limit = std::sqrt(6.0 / (in + out));
  for (double& v : a.W.value) v = rng.uniform(-limit, limit);
  return a;  // biases stay zero
}

}  // namespace

ModelParams init_model(const ArchConfig& arch, uint64_t seed) {
  arch.validate();
  rng::Rng rng = rng::stream_rng(seed, rng::Stream::kInit);
  ModelParams m;
  m.arch = arch;
  int in = arch.input_dim();
  for (size_t i = 0; i < arch.widths.size(); ++i) {
    m.encoder.push_back(init_affine("enc" + std::to_string(i), in, arch.widths[i], rng));
    in = arch.widths[i];
  }
  m.main_head = init_affine("main_head", arch.feature_dim(), arch.n_classes, rng);
  m.aux_head = init_affine("aux_head", arch.widths[static_cast<size_t>(arch.shared_count) - 1],
                           arch.aux_dim(), rng);
  return m;
}

std::vector<ad::Param*> ModelParams::encoder_params(int first_n_layers) {
  std::vector<ad::Param*> out;
  int n = std::min<int>(first_n_layers, static_cast<int>(encoder.size()));
  for (int i = 0; i < n; ++i) {
    out.push_back(&encoder[static_cast<size_t>(i)].W);
    out.push_back(&encoder[static_cast<size_t>(i)].b);
  }
  return out;
}

std::vector<ad::Param*> ModelParams::main_head_params() { return {&main_head.W, &main_head.b}; }
std::vector<ad::Param*> ModelParams::aux_head_params() { return {&aux_head.W, &aux_head.b}; }

std::vector<ad::Param*> ModelParams::main_path_params() {
  auto out = all_encoder_params();
  out.push_back(&main_head.W);
  out.push_back(&main_head.b);
  return out;
}

std::vector<ad::Param*> ModelParams::all_params() {
  auto out = main_path_params();
  out.push_back(&aux_head.W);
  out.push_back(&aux_head.b);
  return out;
}

std::vector<ad::Param*> ModelParams::joint_params() {
  return arch.aux_task == AuxTaskKind::kEntropyMin ? main_path_params() : all_params();
}

uint64_t ModelParams::value_hash() const {
  uint64_t h = 0xcbf29ce484222325ull;
  auto fold = [&h](const Affine& a) {
    h = hash_doubles(a.W.value, h);
    h = hash_doubles(a.b.value, h);
  };
  for (const Affine& a : encoder) fold(a);
  fold(main_head);
  fold(aux_head);
  return h;
}

ad::Value batch_input(ad::Graph& g, const std::vector<data::Glyph>& batch) {
  if (batch.empty()) throw std::invalid_argument("batch_input: empty batch");
  int d = batch[0].size * batch[0].size;
  std::vector<double> data;
  data.reserve(batch.size() * static_cast<size_t>(d));
  for (const data::Glyph& glyph : batch) {
    if (static_cast<int>(glyph.pixels.size()) != d)
      throw std::invalid_argument("batch_input: inconsistent glyph sizes in batch");
    for (float p : glyph.pixels) data.push_back(static_cast<double>(p));
  }
  return g.constant({static_cast<int>(batch.size()), d}, std::move(data));
}

ad::Value encode_prefix(ad::Graph& g, ad::Value x, ModelParams& params, int n_layers,
                        int trainable_encoder_layers) {
  ad::Value h = x;
  for (size_t i = 0; i < params.encoder.size() && static_cast<int>(i) < n_layers; ++i) {
    bool trainable = static_cast<int>(i) < trainable_encoder_layers;
    Affine& layer = params.encoder[i];
    h = g.relu(g.add(g.matmul(h, g.leaf(layer.W, trainable)), g.leaf(layer.b, trainable)));
  }
  return h;
}

ad::Value encode(ad::Graph& g, ad::Value x, ModelParams& params, int trainable_encoder_layers) {
  return encode_prefix(g, x, params, static_cast<int>(params.encoder.size()),
                       trainable_encoder_layers);
}

ad::Value classify(ad::Graph& g, ad::Value feature, ModelParams& params, bool trainable) {
  return g.add(g.matmul(feature, g.leaf(params.main_head.W, trainable)),
               g.leaf(params.main_head.b, trainable));
}

ad::Value aux_head_forward(ad::Graph& g, ad::Value feature, ModelParams& params, bool trainable) {
  return g.add(g.matmul(feature, g.leaf(params.aux_head.W, trainable)),
               g.leaf(params.aux_head.b, trainable));
}

ad::Value aux_forward(ad::Graph& g, ad::Value feature, ModelParams& params, AuxTaskKind task,
                      bool trainable_head) {
  if (task == AuxTaskKind::kEntropyMin) return classify(g, feature, params, false);
  return aux_head_forward(g, feature, params, trainable_head);
}

ParamSnapshot snapshot(const std::vector<ad::Param*>& params) {
  ParamSnapshot snap;
  for (const ad::Param* p : params) snap.values.push_back({p->name, p->value});
  return snap;
}

void restore(const std::vector<ad::Param*>& params, const ParamSnapshot& snap) {
  for (const auto& [name, value] : snap.values) {
    ad::Param* match = nullptr;
    for (ad::Param* p : params)
      if (p->name == name) match = p;
    if (match == nullptr)
      throw std::invalid_argument("restore: no parameter named '" + name + "'");
    if (match->value.size() != value.size())
      throw std::invalid_argument("restore: size mismatch for '" + name + "'");
    match->value = value;
  }
}

namespace {

template <typename T>
void put(std::ofstream& f, T v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T take(std::ifstream& f) {
  T v;
  f.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!f) throw std::runtime_error("checkpoint: unexpected end of file");
  return v;
}

constexpr uint32_t kCkptVersion = 1;
constexpr char kCkptMagic[8] = {'S', 'S', 'F', 'A', 'C', 'K', 'P', 'T'};

void put_affine(std::ofstream& f, const Affine& a) {
  f.write(reinterpret_cast<const char*>(a.W.value.data()),
          static_cast<std::streamsize>(a.W.value.size() * sizeof(double)));
  f.write(reinterpret_cast<const char*>(a.b.value.data()),
          static_cast<std::streamsize>(a.b.value.size() * sizeof(double)));
}

void take_affine(std::ifstream& f, Affine& a) {
  f.read(reinterpret_cast<char*>(a.W.value.data()),
         static_cast<std::streamsize>(a.W.value.size() * sizeof(double)));
  f.read(reinterpret_cast<char*>(a.b.value.data()),
         static_cast<std::streamsize>(a.b.value.size() * sizeof(double)));
  if (!f) throw std::runtime_error("checkpoint: unexpected end of file");
}

}  // namespace

void save_checkpoint(const ModelParams& params, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("save_checkpoint: cannot open " + path);
  f.write(kCkptMagic, sizeof(kCkptMagic));
  put<uint32_t>(f, kCkptVersion);
  put<uint32_t>(f, static_cast<uint32_t>(params.arch.input_size));
  put<uint32_t>(f, static_cast<uint32_t>(params.arch.n_classes));
  put<uint32_t>(f, static_cast<uint32_t>(params.arch.widths.size()));
  for (int w : params.arch.widths) put<uint32_t>(f, static_cast<uint32_t>(w));
  put<uint32_t>(f, static_cast<uint32_t>(params.arch.shared_count));
  put<uint32_t>(f, static_cast<uint32_t>(params.arch.aux_task));
  put<uint32_t>(f, static_cast<uint32_t>(params.arch.contrastive_dim));
  for (const Affine& a : params.encoder) put_affine(f, a);
  put_affine(f, params.main_head);
  put_affine(f, params.aux_head);
  if (!f) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

ModelParams load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_checkpoint: cannot open " + path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kCkptMagic, 8) != 0)
    throw std::runtime_error("load_checkpoint: bad magic in " + path);
  uint32_t version = take<uint32_t>(f);
  if (version != kCkptVersion)
    throw std::runtime_error("load_checkpoint: unsupported version " + std::to_string(version));
  ArchConfig arch;
  arch.input_size = static_cast<int>(take<uint32_t>(f));
  arch.n_classes = static_cast<int>(take<uint32_t>(f));
  uint32_t n_layers = take<uint32_t>(f);
  arch.widths.clear();
  for (uint32_t i = 0; i < n_layers; ++i)
    arch.widths.push_back(static_cast<int>(take<uint32_t>(f)));
  arch.shared_count = static_cast<int>(take<uint32_t>(f));
  arch.aux_task = static_cast<AuxTaskKind>(take<uint32_t>(f));
  arch.contrastive_dim = static_cast<int>(take<uint32_t>(f));
  ModelParams m = init_model(arch, 0);
  for (Affine& a : m.encoder) take_affine(f, a);
  take_affine(f, m.main_head);
  take_affine(f, m.aux_head);
  return m;
}

}  // namespace ssfa::nn
