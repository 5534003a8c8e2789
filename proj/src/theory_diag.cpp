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
#include "ssfa/theory_diag.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <stdexcept>

#include "ssfa/aux_tasks.hpp"
#include "ssfa/common.hpp"
#include "ssfa/feature_adaptation.hpp"
#include "ssfa/ssl_engine.hpp"

namespace ssfa::diag {

namespace {

double norm2(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

double QuadraticPair::beta() const { return std::max(c_main, c_self); }

double QuadraticPair::grad_bound() const {
  double t = std::max(norm2(main_target), norm2(self_target));
  return std::max(c_main, c_self) * (radius + t);
}

double QuadraticPair::main_value(const std::vector<double>& h) const {
  double s = 0.0;
  for (size_t i = 0; i < h.size(); ++i) s += (h[i] - main_target[i]) * (h[i] - main_target[i]);
  return 0.5 * c_main * s;
}

double QuadraticPair::self_value(const std::vector<double>& h) const {
  double s = 0.0;
  for (size_t i = 0; i < h.size(); ++i) s += (h[i] - self_target[i]) * (h[i] - self_target[i]);
  return 0.5 * c_self * s;
}

std::vector<double> QuadraticPair::main_grad(const std::vector<double>& h) const {
  std::vector<double> g(h.size());
  for (size_t i = 0; i < h.size(); ++i) g[i] = c_main * (h[i] - main_target[i]);
  return g;
}

std::vector<double> QuadraticPair::self_grad(const std::vector<double>& h) const {
  std::vector<double> g(h.size());
  for (size_t i = 0; i < h.size(); ++i) g[i] = c_self * (h[i] - self_target[i]);
  return g;
}

QuadraticPair random_pair(rng::Rng& rng, int max_dim) {
  QuadraticPair p;
  int d = 1 + rng.uniform_int(max_dim);
  p.radius = rng.uniform(1.0, 5.0);
  p.c_main = rng.uniform(0.2, 3.0);
  p.c_self = rng.uniform(0.2, 3.0);
  p.main_target.resize(static_cast<size_t>(d));
  p.self_target.resize(static_cast<size_t>(d));
  for (int i = 0; i < d; ++i) {
    p.main_target[static_cast<size_t>(i)] = rng.uniform(-p.radius, p.radius);
    p.self_target[static_cast<size_t>(i)] = rng.uniform(-p.radius, p.radius);
  }
  return p;
}

DescentVerdict lemma1_check(const QuadraticPair& pair, const std::vector<double>& h0,
                            double eps) {
  if (static_cast<int>(h0.size()) != pair.dim())
    throw std::invalid_argument("lemma1_check: dimension mismatch");
  if (norm2(h0) > pair.radius)
    throw std::invalid_argument("lemma1_check: h0 outside the feasible ball (|h0| = " +
                                fmt_double(norm2(h0)) + ", radius = " +
                                fmt_double(pair.radius) + ")");
  DescentVerdict v;
  std::vector<double> gm = pair.main_grad(h0);
  std::vector<double> gs = pair.self_grad(h0);
  v.inner_product = dot(gm, gs);
  double g_bound = pair.grad_bound();
  v.eta = eps / (pair.beta() * g_bound * g_bound);
  v.loss_before = pair.main_value(h0);
  v.condition_held = v.inner_product > eps;
  double gs_sq = dot(gs, gs);
  // For quadratics, main(h - eta*gs) - main(h) = -eta*<gm,gs> +
  // c_main/2 * eta^2 * |gs|^2, so descent holds iff eta < 2<gm,gs>/(c|gs|^2).
  v.eta_max_descent = gs_sq > 0.0 ? 2.0 * v.inner_product / (pair.c_main * gs_sq) : 0.0;
  if (v.condition_held) {
    std::vector<double> h1(h0.size());
    for (size_t i = 0; i < h0.size(); ++i) h1[i] = h0[i] - v.eta * gs[i];
    v.loss_after = pair.main_value(h1);
    v.decrease_held = v.loss_after < v.loss_before;
  }
  return v;
}

QuadraticPair QuadraticDataset::mean_pair() const {
  if (main_targets.empty()) throw std::invalid_argument("empirical_risk_check: empty dataset");
  QuadraticPair p;
  p.c_main = c_main;
  p.c_self = c_self;
  p.radius = radius;
  size_t d = main_targets[0].size();
  p.main_target.assign(d, 0.0);
  p.self_target.assign(d, 0.0);
  for (size_t i = 0; i < main_targets.size(); ++i) {
    for (size_t j = 0; j < d; ++j) {
      p.main_target[j] += main_targets[i][j] / static_cast<double>(main_targets.size());
      p.self_target[j] += self_targets[i][j] / static_cast<double>(self_targets.size());
    }
  }
  return p;
}

QuadraticDataset random_dataset(rng::Rng& rng, int max_dim, int max_samples) {
  QuadraticDataset ds;
  int d = 1 + rng.uniform_int(max_dim);
  int n = 1 + rng.uniform_int(max_samples);
  ds.radius = rng.uniform(1.0, 5.0);
  ds.c_main = rng.uniform(0.2, 3.0);
  ds.c_self = rng.uniform(0.2, 3.0);
  for (int i = 0; i < n; ++i) {
    std::vector<double> a(static_cast<size_t>(d)), b(static_cast<size_t>(d));
    for (int j = 0; j < d; ++j) {
      a[static_cast<size_t>(j)] = rng.uniform(-ds.radius, ds.radius);
      b[static_cast<size_t>(j)] = rng.uniform(-ds.radius, ds.radius);
    }
    ds.main_targets.push_back(std::move(a));
    ds.self_targets.push_back(std::move(b));
  }
  return ds;
}

DescentVerdict empirical_risk_check(const QuadraticDataset& dataset,
                                    const std::vector<double>& h, double eps) {
  // The empirical risks of per-sample quadratics are themselves quadratics
  // around the mean targets, except for an h-independent offset that does
  // not move gradients. Account for the offset in the reported losses.
  QuadraticPair mean = dataset.mean_pair();
  DescentVerdict v = lemma1_check(mean, h, eps);
  auto risk = [&](const std::vector<double>& at) {
    double s = 0.0;
    for (const auto& target : dataset.main_targets) {
      double q = 0.0;
      for (size_t j = 0; j < at.size(); ++j) q += (at[j] - target[j]) * (at[j] - target[j]);
      s += 0.5 * dataset.c_main * q;
    }
    return s / static_cast<double>(dataset.size());
  };
  v.loss_before = risk(h);
  if (v.condition_held) {
    std::vector<double> gs = mean.self_grad(h);
    std::vector<double> h1(h.size());
    for (size_t i = 0; i < h.size(); ++i) h1[i] = h[i] - v.eta * gs[i];
    v.loss_after = risk(h1);
    v.decrease_held = v.loss_after < v.loss_before;
  }
  return v;
}

namespace {

std::vector<double> random_point_in_ball(rng::Rng& rng, int d, double radius) {
  // rejection-free: direction * u^(1/d) * radius
  std::vector<double> x(static_cast<size_t>(d));
  double n = 0.0;
  for (int i = 0; i < d; ++i) {
    x[static_cast<size_t>(i)] = rng.normal();
    n += x[static_cast<size_t>(i)] * x[static_cast<size_t>(i)];
  }
  n = std::sqrt(std::max(n, 1e-300));
  double r = radius * std::pow(rng.uniform(), 1.0 / d);
  for (double& v : x) v = v / n * r;
  return x;
}

}  // namespace

DescentTrialStats run_lemma1_trials(int n_trials, uint64_t seed) {
  DescentTrialStats stats;
  rng::Rng rng = rng::stream_rng(seed, rng::Stream::kDiag, 1);
  while (stats.condition_held < n_trials) {
    QuadraticPair pair = random_pair(rng);
    std::vector<double> h0 = random_point_in_ball(rng, pair.dim(), pair.radius);
    std::vector<double> gm = pair.main_grad(h0);
    std::vector<double> gs = pair.self_grad(h0);
    double ip = dot(gm, gs);
    if (ip <= 0.0) continue;  // condition cannot hold for any eps > 0
    double eps = ip * rng.uniform(0.1, 0.9);
    DescentVerdict v = lemma1_check(pair, h0, eps);
    ++stats.trials;
    if (v.condition_held) {
      ++stats.condition_held;
      if (v.decrease_held) ++stats.decrease_held;
      else ++stats.violations;
    }
    stats.verdicts.push_back(v);
  }
  return stats;
}

DescentTrialStats run_empirical_risk_trials(int n_datasets, uint64_t seed) {
  DescentTrialStats stats;
  rng::Rng rng = rng::stream_rng(seed, rng::Stream::kDiag, 2);
  while (stats.condition_held < n_datasets) {
    QuadraticDataset ds = random_dataset(rng);
    std::vector<double> h = random_point_in_ball(rng, ds.dim(), ds.radius);
    QuadraticPair mean = ds.mean_pair();
    double ip = dot(mean.main_grad(h), mean.self_grad(h));
    if (ip <= 0.0) continue;
    double eps = ip * rng.uniform(0.1, 0.9);
    DescentVerdict v = empirical_risk_check(ds, h, eps);
    ++stats.trials;
    if (v.condition_held) {
      ++stats.condition_held;
      if (v.decrease_held) ++stats.decrease_held;
      else ++stats.violations;
    }
    stats.verdicts.push_back(v);
  }
  return stats;
}

std::vector<SampleGroup> group_unlabeled_pool(const data::DatasetBundle& bundle, int group_size) {
  // (domain, chunk) grouping; hidden tags/labels are diagnostics-only here.
  std::vector<std::vector<size_t>> by_domain;
  for (size_t i = 0; i < bundle.unlabeled_count(); ++i) {
    auto info = bundle.hidden(i);
    if (info.domain_tag >= static_cast<int>(by_domain.size()))
      by_domain.resize(static_cast<size_t>(info.domain_tag) + 1);
    by_domain[static_cast<size_t>(info.domain_tag)].push_back(i);
  }
  std::vector<SampleGroup> groups;
  int gid = 0;
  for (size_t tag = 0; tag < by_domain.size(); ++tag) {
    const auto& idx = by_domain[tag];
    for (size_t start = 0; start < idx.size(); start += static_cast<size_t>(group_size)) {
      size_t end = std::min(idx.size(), start + static_cast<size_t>(group_size));
      SampleGroup group;
      group.group_id = gid++;
      group.domain_tag = static_cast<int>(tag);
      for (size_t k = start; k < end; ++k) {
        group.samples.push_back(bundle.unlabeled(idx[k]));
        group.labels.push_back(bundle.hidden(idx[k]).label);
      }
      groups.push_back(std::move(group));
    }
  }
  return groups;
}

namespace {

uint64_t group_content_hash(const SampleGroup& group) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (const data::Glyph& g : group.samples)
    h = hash_bytes(g.pixels.data(), g.pixels.size() * sizeof(float), h);
  return h;
}

double group_accuracy(nn::ModelParams& params, const SampleGroup& group) {
  ad::Graph g;
  ad::Value x = nn::batch_input(g, group.samples);
  ad::Value feat = nn::encode(g, x, params, 0);
  ad::Value probs = g.softmax(nn::classify(g, feat, params, false));
  const auto& q = g.value(probs);
  int c = params.arch.n_classes;
  int correct = 0;
  for (size_t i = 0; i < group.samples.size(); ++i) {
    int pred = engine::argmax_lowest_tie(&q[i * static_cast<size_t>(c)], c);
    if (pred == group.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(group.samples.size());
}

}  // namespace

std::vector<IppSample> ipp_scatter(nn::ModelParams& params,
                                   const std::vector<SampleGroup>& groups,
                                   nn::AuxTaskKind task, int shared_count, double lr_adapt,
                                   double contrastive_temperature) {
  std::vector<IppSample> out;
  aux::AuxHyper hyper{contrastive_temperature};
  for (const SampleGroup& group : groups) {
    if (group.samples.size() < 16) {
      std::cerr << "ipp_scatter: skipping group " << group.group_id << " ("
                << group.samples.size() << " samples < 16)\n";
      continue;
    }
    rng::Rng rng(group_content_hash(group));
    auto shared = params.encoder_params(shared_count);

    // self-supervised gradient on the shared prefix
    ad::zero_grad(params.all_params());
    {
      ad::Graph g;
      aux::StreamLoss s = aux::task_loss_sum(g, task, group.samples, params, shared_count, rng, hyper);
      g.backward(g.scale(s.sum, 1.0 / s.count));
    }
    std::vector<std::vector<double>> self_grads;
    for (ad::Param* p : shared) self_grads.push_back(p->grad);

    // main-task gradient (hidden labels) on the shared prefix
    ad::zero_grad(params.all_params());
    {
      ad::Graph g;
      ad::Value x = nn::batch_input(g, group.samples);
      ad::Value feat = nn::encode(g, x, params, shared_count);
      ad::Value logp = g.log_softmax(nn::classify(g, feat, params, false));
      int n = static_cast<int>(group.samples.size());
      int c = params.arch.n_classes;
      std::vector<double> target(static_cast<size_t>(n) * c, 0.0);
      for (int i = 0; i < n; ++i)
        target[static_cast<size_t>(i) * c + group.labels[static_cast<size_t>(i)]] = -1.0 / n;
      g.backward(g.sum(g.mul(logp, g.constant({n, c}, std::move(target)))));
    }

    IppSample sample;
    sample.group_id = group.group_id;
    sample.domain_tag = group.domain_tag;
    sample.n = static_cast<int>(group.samples.size());
    for (size_t i = 0; i < shared.size(); ++i) sample.inner_product += dot(self_grads[i], shared[i]->grad);
    ad::zero_grad(params.all_params());

    // one-step adaptation with those same self-supervised gradients
    nn::ModelParams adapted = params;
    auto adapted_shared = adapted.encoder_params(shared_count);
    for (size_t i = 0; i < adapted_shared.size(); ++i)
      for (size_t j = 0; j < adapted_shared[i]->value.size(); ++j)
        adapted_shared[i]->value[j] -= lr_adapt * self_grads[i][j];
    sample.improvement = group_accuracy(adapted, group) - group_accuracy(params, group);
    out.push_back(sample);
  }
  return out;
}

double spearman_correlation(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size() || xs.size() < 2)
    throw std::invalid_argument("spearman: need two equal-length series of >= 2 points");
  auto ranks = [](const std::vector<double>& v) {
    std::vector<size_t> order(v.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    size_t i = 0;
    while (i < order.size()) {  // average ranks over ties
      size_t j = i;
      while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
      double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0;
      for (size_t k = i; k <= j; ++k) r[order[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  std::vector<double> rx = ranks(xs), ry = ranks(ys);
  double mx = 0.0, my = 0.0;
  for (size_t i = 0; i < rx.size(); ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= static_cast<double>(rx.size());
  my /= static_cast<double>(ry.size());
  double num = 0.0, dx = 0.0, dy = 0.0;
  for (size_t i = 0; i < rx.size(); ++i) {
    num += (rx[i] - mx) * (ry[i] - my);
    dx += (rx[i] - mx) * (rx[i] - mx);
    dy += (ry[i] - my) * (ry[i] - my);
  }
  if (dx == 0.0 || dy == 0.0) return 0.0;
  return num / std::sqrt(dx * dy);
}

std::vector<std::vector<double>> extract_features(nn::ModelParams& params,
                                                  const std::vector<data::Glyph>& samples) {
  std::vector<std::vector<double>> out;
  out.reserve(samples.size());
  const size_t kChunk = 256;
  for (size_t start = 0; start < samples.size(); start += kChunk) {
    size_t end = std::min(samples.size(), start + kChunk);
    std::vector<data::Glyph> chunk(samples.begin() + static_cast<std::ptrdiff_t>(start),
                                   samples.begin() + static_cast<std::ptrdiff_t>(end));
    ad::Graph g;
    ad::Value feat = nn::encode(g, nn::batch_input(g, chunk), params, 0);
    const auto& v = g.value(feat);
    int d = params.arch.feature_dim();
    for (size_t i = 0; i < chunk.size(); ++i)
      out.emplace_back(v.begin() + static_cast<std::ptrdiff_t>(i * static_cast<size_t>(d)),
                       v.begin() + static_cast<std::ptrdiff_t>((i + 1) * static_cast<size_t>(d)));
  }
  return out;
}

ADistanceResult a_distance(const std::vector<std::vector<double>>& features_a,
                           const std::vector<std::vector<double>>& features_b) {
  if (features_a.size() < 50 || features_b.size() < 50)
    throw std::invalid_argument("a_distance: need >= 50 feature vectors per side");
  size_t d = features_a[0].size();
  for (const auto& f : features_a)
    if (f.size() != d) throw std::invalid_argument("a_distance: ragged feature vectors");
  for (const auto& f : features_b)
    if (f.size() != d) throw std::invalid_argument("a_distance: ragged feature vectors");

  bool all_same = true;
  for (const auto& f : features_a)
    if (f != features_a[0]) { all_same = false; break; }
  if (all_same)
    for (const auto& f : features_b)
      if (f != features_a[0]) { all_same = false; break; }
  if (all_same) {
    std::cerr << "a_distance: degenerate features (all identical), returning 0\n";
    return {0.0, 0.5, true};
  }

  // first half trains the domain classifier, second half validates
  auto split = [](const std::vector<std::vector<double>>& f) {
    size_t half = f.size() / 2;
    return std::pair{std::vector<std::vector<double>>(f.begin(), f.begin() + static_cast<std::ptrdiff_t>(half)),
                     std::vector<std::vector<double>>(f.begin() + static_cast<std::ptrdiff_t>(half), f.end())};
  };
  auto [train_a, val_a] = split(features_a);
  auto [train_b, val_b] = split(features_b);

  // standardize by training statistics
  std::vector<double> mean(d, 0.0), sdev(d, 0.0);
  size_t n_train = train_a.size() + train_b.size();
  for (const auto& f : train_a)
    for (size_t j = 0; j < d; ++j) mean[j] += f[j];
  for (const auto& f : train_b)
    for (size_t j = 0; j < d; ++j) mean[j] += f[j];
  for (size_t j = 0; j < d; ++j) mean[j] /= static_cast<double>(n_train);
  for (const auto& f : train_a)
    for (size_t j = 0; j < d; ++j) sdev[j] += (f[j] - mean[j]) * (f[j] - mean[j]);
  for (const auto& f : train_b)
    for (size_t j = 0; j < d; ++j) sdev[j] += (f[j] - mean[j]) * (f[j] - mean[j]);
  for (size_t j = 0; j < d; ++j) sdev[j] = std::max(std::sqrt(sdev[j] / n_train), 1e-12);

  std::vector<double> w(d, 0.0);
  double bias = 0.0;
  auto margin = [&](const std::vector<double>& f) {
    double s = bias;
    for (size_t j = 0; j < d; ++j) s += w[j] * (f[j] - mean[j]) / sdev[j];
    return s;
  };

  // logistic regression, class-balanced full-batch gradient, 200 epochs
  constexpr int kEpochs = 200;
  constexpr double kLr = 0.1;
  for (int epoch = 0; epoch < kEpochs; ++epoch) {
    std::vector<double> gw(d, 0.0);
    double gb = 0.0;
    auto accumulate = [&](const std::vector<std::vector<double>>& side, double y, double weight) {
      for (const auto& f : side) {
        double p = 1.0 / (1.0 + std::exp(-margin(f)));
        double err = (p - y) * weight;
        for (size_t j = 0; j < d; ++j) gw[j] += err * (f[j] - mean[j]) / sdev[j];
        gb += err;
      }
    };
    accumulate(train_a, 0.0, 0.5 / static_cast<double>(train_a.size()));
    accumulate(train_b, 1.0, 0.5 / static_cast<double>(train_b.size()));
    for (size_t j = 0; j < d; ++j) w[j] -= kLr * gw[j];
    bias -= kLr * gb;
  }

  auto side_error = [&](const std::vector<std::vector<double>>& side, double y) {
    int wrong = 0;
    for (const auto& f : side) {
      double pred = margin(f) > 0.0 ? 1.0 : 0.0;
      if (pred != y) ++wrong;
    }
    return static_cast<double>(wrong) / static_cast<double>(side.size());
  };
  double err = 0.5 * (side_error(val_a, 0.0) + side_error(val_b, 1.0));
  double value = std::clamp(2.0 * (1.0 - 2.0 * err), 0.0, 2.0);
  return {value, err, false};
}

}  // namespace ssfa::diag
