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
#include "ssfa/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>

#include "ssfa/common.hpp"
#include "ssfa/feature_adaptation.hpp"
#include "ssfa/theory_diag.hpp"

namespace ssfa::harness {

namespace fs = std::filesystem;

Protocol protocol_from_string(const std::string& s) {
  if (s == "L") return Protocol::kLabeled;
  if (s == "UL") return Protocol::kUnlabeled;
  if (s == "US") return Protocol::kUnseen;
  if (s == "UU") return Protocol::kUU;
  throw std::invalid_argument("protocol: expected L|UL|US|UU, got '" + s + "'");
}

namespace {

double top1_accuracy(nn::ModelParams& params, const std::vector<data::Glyph>& set) {
  if (set.empty()) throw std::invalid_argument("evaluate: empty test set");
  int c = params.arch.n_classes;
  int correct = 0;
  const size_t kChunk = 256;
  for (size_t start = 0; start < set.size(); start += kChunk) {
    size_t end = std::min(set.size(), start + kChunk);
    std::vector<data::Glyph> chunk(set.begin() + static_cast<std::ptrdiff_t>(start),
                                   set.begin() + static_cast<std::ptrdiff_t>(end));
    ad::Graph g;
    ad::Value logits =
        nn::classify(g, nn::encode(g, nn::batch_input(g, chunk), params, 0), params, false);
    const auto& v = g.value(logits);
    for (size_t i = 0; i < chunk.size(); ++i) {
      int pred = engine::argmax_lowest_tie(&v[i * static_cast<size_t>(c)], c);
      if (pred == chunk[i].label) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(set.size());
}

}  // namespace

double evaluate(nn::ModelParams& params, const data::DatasetBundle& bundle, Protocol protocol) {
  switch (protocol) {
    case Protocol::kLabeled: return top1_accuracy(params, bundle.test_labeled);
    case Protocol::kUnlabeled: return top1_accuracy(params, bundle.test_unlabeled);
    case Protocol::kUnseen: return top1_accuracy(params, bundle.test_unseen);
    case Protocol::kUU:
      throw std::invalid_argument("evaluate: UU needs a config; use evaluate_uu");
  }
  throw std::invalid_argument("evaluate: unknown protocol");
}

UUResult evaluate_uu(nn::ModelParams& params, const data::DatasetBundle& bundle,
                     const engine::TrainConfig& cfg, double tau) {
  size_t n = bundle.unlabeled_count();
  if (n == 0) throw std::invalid_argument("evaluate_uu: bundle has no unlabeled data");
  size_t chunk = static_cast<size_t>(cfg.batch_size) * static_cast<size_t>(cfg.mu);
  aux::AuxHyper hyper{cfg.contrastive_temperature};

  size_t masked_in = 0, correct = 0;
  uint64_t batch_idx = 0;
  for (size_t start = 0; start < n; start += chunk, ++batch_idx) {
    size_t end = std::min(n, start + chunk);
    rng::Rng weak_rng = rng::stream_rng(cfg.seed, rng::Stream::kEval, batch_idx);
    std::vector<data::Glyph> weak_views;
    weak_views.reserve(end - start);
    for (size_t i = start; i < end; ++i)
      weak_views.push_back(data::weak_aug(bundle.unlabeled(i), weak_rng));

    engine::PseudoLabels pl;
    if (cfg.ssfa_enabled) {
      fam::FamConfig fcfg;
      fcfg.task = cfg.aux_task;
      fcfg.shared_count = cfg.shared_count;
      fcfg.lr_adapt = cfg.lr_adapt;
      fcfg.tau = tau;
      fcfg.hyper = hyper;
      rng::Rng adapt_rng =
          rng::stream_rng(cfg.seed, rng::Stream::kEval, rng::hash2(0xADA9, batch_idx));
      fam::AdaptationOutcome out = fam::fam_pipeline(params, weak_views, fcfg, adapt_rng);
      pl.n = out.n;
      pl.n_classes = out.n_classes;
      pl.q = std::move(out.q_prime);
      pl.hard = std::move(out.hard_labels);
    } else {
      pl = engine::baseline_pseudo(weak_views, params);
    }
    for (int i = 0; i < pl.n; ++i) {
      const double* row = &pl.q[static_cast<size_t>(i) * pl.n_classes];
      if (row[pl.hard[static_cast<size_t>(i)]] > tau) {
        ++masked_in;
        if (bundle.hidden(start + static_cast<size_t>(i)).label ==
            pl.hard[static_cast<size_t>(i)])
          ++correct;
      }
    }
  }
  UUResult r;
  r.mask_rate = static_cast<double>(masked_in) / static_cast<double>(n);
  if (masked_in > 0) {
    r.accuracy = static_cast<double>(correct) / static_cast<double>(masked_in);
    r.defined = true;
  }
  return r;
}

std::vector<DomainAccuracy> per_domain_breakdown(nn::ModelParams& params,
                                                 const data::DatasetBundle& bundle) {
  std::map<int, std::pair<int, int>> counts;  // tag -> (correct, total)
  int c = params.arch.n_classes;
  const auto& set = bundle.test_unlabeled;
  const size_t kChunk = 256;
  for (size_t start = 0; start < set.size(); start += kChunk) {
    size_t end = std::min(set.size(), start + kChunk);
    std::vector<data::Glyph> chunk(set.begin() + static_cast<std::ptrdiff_t>(start),
                                   set.begin() + static_cast<std::ptrdiff_t>(end));
    ad::Graph g;
    ad::Value logits =
        nn::classify(g, nn::encode(g, nn::batch_input(g, chunk), params, 0), params, false);
    const auto& v = g.value(logits);
    for (size_t i = 0; i < chunk.size(); ++i) {
      int pred = engine::argmax_lowest_tie(&v[i * static_cast<size_t>(c)], c);
      auto& [corr, total] = counts[chunk[i].domain_tag];
      ++total;
      if (pred == chunk[i].label) ++corr;
    }
  }
  std::vector<DomainAccuracy> out;
  for (const auto& [tag, ct] : counts)
    out.push_back({tag, ct.second, static_cast<double>(ct.first) / ct.second});
  return out;
}

EvalResult evaluate_all(nn::ModelParams& params, const data::DatasetBundle& bundle,
                        const engine::TrainConfig& cfg, double tau) {
  EvalResult r;
  r.acc_labeled = evaluate(params, bundle, Protocol::kLabeled);
  r.acc_unlabeled = evaluate(params, bundle, Protocol::kUnlabeled);
  r.acc_unseen = evaluate(params, bundle, Protocol::kUnseen);
  r.uu = evaluate_uu(params, bundle, cfg, tau);
  r.per_domain = per_domain_breakdown(params, bundle);
  return r;
}

void dump_features(nn::ModelParams& params, const data::DatasetBundle& bundle,
                   const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("dump_features: cannot open " + path);
  int d = params.arch.feature_dim();
  f << "set,index,label,domain_tag";
  for (int j = 0; j < d; ++j) f << ",f" << j;
  f << "\n";
  auto dump_set = [&](const char* name, const std::vector<data::Glyph>& set) {
    auto feats = diag::extract_features(params, set);
    for (size_t i = 0; i < set.size(); ++i) {
      f << name << "," << i << "," << set[i].label << "," << set[i].domain_tag;
      for (double v : feats[i]) f << "," << fmt_double(v);
      f << "\n";
    }
  };
  dump_set("L", bundle.test_labeled);
  dump_set("UL", bundle.test_unlabeled);
  dump_set("US", bundle.test_unseen);
  if (!f) throw std::runtime_error("dump_features: write failed for " + path);
}

LoadedFeatures load_features_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("load_features_csv: cannot open " + path);
  LoadedFeatures out;
  std::string line;
  if (!std::getline(f, line)) throw std::runtime_error("load_features_csv: empty file " + path);
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    std::getline(ss, field, ',');
    out.sets.push_back(field);
    std::getline(ss, field, ',');  // index, unused
    std::getline(ss, field, ',');
    out.labels.push_back(std::stoi(field));
    std::getline(ss, field, ',');
    out.domain_tags.push_back(std::stoi(field));
    std::vector<double> feat;
    while (std::getline(ss, field, ',')) feat.push_back(std::stod(field));
    out.features.push_back(std::move(feat));
  }
  return out;
}

engine::TrainConfig MethodSpec::resolve(const engine::TrainConfig& base, uint64_t seed) const {
  engine::TrainConfig cfg = base;
  cfg.learner = learner;
  cfg.ssfa_enabled = ssfa_enabled;
  cfg.aux_task = aux_task;
  cfg.lambda_a = lambda_a.value_or(ssfa_enabled ? base.lambda_a : 0.0);
  if (tau) cfg.tau = *tau;
  if (shared_count) cfg.shared_count = *shared_count;
  cfg.seed = seed;
  return cfg;
}

int thread_cap() {
  if (const char* env = std::getenv("SSFA_LAB_THREADS")) {
    int v = std::atoi(env);
    if (v >= 1) return v;
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

namespace {

void write_eval_csv(const RunSummary& run, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("run_experiment: cannot open " + path);
  f << "method,seed,config_hash,bundle_hash,acc_L,acc_UL,acc_US,uu_acc,uu_defined,uu_mask_rate,"
       "final_tau\n";
  const EvalResult& e = run.eval;
  f << run.method << "," << run.seed << "," << run.config_hash << "," << run.bundle_hash << ","
    << fmt_double(e.acc_labeled) << "," << fmt_double(e.acc_unlabeled) << ","
    << fmt_double(e.acc_unseen) << ","
    << fmt_double(e.uu.defined ? e.uu.accuracy : std::nan("")) << ","
    << (e.uu.defined ? 1 : 0) << "," << fmt_double(e.uu.mask_rate) << ","
    << fmt_double(run.final_tau) << "\n";
  f << "domain_tag,count,accuracy\n";
  for (const DomainAccuracy& d : e.per_domain)
    f << d.domain_tag << "," << d.count << "," << fmt_double(d.accuracy) << "\n";
}

}  // namespace

std::vector<RunSummary> run_experiment(const ExperimentSpec& spec) {
  if (spec.seeds.empty()) throw std::invalid_argument("run_experiment: empty seed list");
  if (spec.methods.empty()) throw std::invalid_argument("run_experiment: no methods");
  for (const MethodSpec& m : spec.methods)
    m.resolve(spec.base, 0).validate();  // fail fast on bad matrices
  fs::create_directories(spec.out_dir);

  // one bundle per seed, shared read-only across the method matrix
  std::vector<data::DatasetBundle> bundles;
  std::vector<uint64_t> bundle_hashes;
  for (uint64_t seed : spec.seeds) {
    data::BundleParams bp = spec.bundle;
    bp.seed = seed;
    bundles.push_back(data::make_bundle(bp));
    bundle_hashes.push_back(bundles.back().content_hash());
  }

  struct Job {
    size_t method_idx;
    size_t seed_idx;
  };
  std::vector<Job> jobs;
  for (size_t m = 0; m < spec.methods.size(); ++m)
    for (size_t s = 0; s < spec.seeds.size(); ++s) jobs.push_back({m, s});

  std::vector<RunSummary> runs(jobs.size());
  std::atomic<size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      size_t j = next.fetch_add(1);
      if (j >= jobs.size()) return;
      const Job& job = jobs[j];
      const MethodSpec& method = spec.methods[job.method_idx];
      uint64_t seed = spec.seeds[job.seed_idx];
      RunSummary& run = runs[j];
      run.method = method.name;
      run.seed = seed;
      run.bundle_hash = hex64(bundle_hashes[job.seed_idx]);
      try {
        engine::TrainConfig cfg = method.resolve(spec.base, seed);
        run.config_hash = hex64(cfg.config_hash());
        const data::DatasetBundle& bundle = bundles[job.seed_idx];
        fs::path run_dir = fs::path(spec.out_dir) / "runs" / method.name /
                           ("seed_" + std::to_string(seed));
        fs::create_directories(run_dir);
        engine::TrainResult result = engine::train(cfg, bundle);
        engine::write_history_csv(result.history, (run_dir / "history.csv").string());
        nn::save_checkpoint(result.params, (run_dir / "ckpt.bin").string());
        if (cfg.diag_ipp) {
          std::ofstream ipp(run_dir / "ipp.csv");
          ipp << "step,ipp\n";
          for (const engine::StepReport& r : result.history)
            if (r.ipp_defined) ipp << r.step << "," << fmt_double(r.ipp) << "\n";
        }
        run.eval = evaluate_all(result.params, bundle, cfg, result.final_tau);
        run.final_tau = result.final_tau;
        write_eval_csv(run, (run_dir / "eval.csv").string());
        if (spec.dump_features)
          dump_features(result.params, bundle, (run_dir / "features.csv").string());
        run.ok = true;
      } catch (const std::exception& e) {
        run.ok = false;
        run.error = e.what();
      }
    }
  };

  int n_threads = std::min<int>(thread_cap(), static_cast<int>(jobs.size()));
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    for (std::thread& th : pool) th.join();
  }

  write_summary_csv(runs, (fs::path(spec.out_dir) / "summary.csv").string());
  write_aggregate_csv(runs, (fs::path(spec.out_dir) / "aggregate.csv").string());
  return runs;
}

void write_summary_csv(const std::vector<RunSummary>& runs, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("write_summary_csv: cannot open " + path);
  f << "method,seed,status,config_hash,bundle_hash,acc_L,acc_UL,acc_US,uu_acc,uu_defined,"
       "uu_mask_rate,final_tau,error\n";
  for (const RunSummary& r : runs) {
    if (r.ok) {
      f << r.method << "," << r.seed << ",ok," << r.config_hash << "," << r.bundle_hash << ","
        << fmt_double(r.eval.acc_labeled) << "," << fmt_double(r.eval.acc_unlabeled) << ","
        << fmt_double(r.eval.acc_unseen) << ","
        << fmt_double(r.eval.uu.defined ? r.eval.uu.accuracy : std::nan("")) << ","
        << (r.eval.uu.defined ? 1 : 0) << "," << fmt_double(r.eval.uu.mask_rate) << ","
        << fmt_double(r.final_tau) << ",\n";
    } else {
      f << r.method << "," << r.seed << ",error," << r.config_hash << "," << r.bundle_hash
        << ",nan,nan,nan,nan,0,nan,nan," << r.error << "\n";
    }
  }
}

void write_aggregate_csv(const std::vector<RunSummary>& runs, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("write_aggregate_csv: cannot open " + path);
  f << "method,n_seeds,acc_L_mean,acc_L_std,acc_UL_mean,acc_UL_std,acc_US_mean,acc_US_std,"
       "uu_mean,uu_std\n";
  std::vector<std::string> order;
  std::map<std::string, std::vector<const RunSummary*>> by_method;
  for (const RunSummary& r : runs) {
    if (!r.ok) continue;
    if (by_method.find(r.method) == by_method.end()) order.push_back(r.method);
    by_method[r.method].push_back(&r);
  }
  auto mean_std = [](const std::vector<double>& v) {
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    var /= static_cast<double>(v.size());
    return std::pair{mean, std::sqrt(var)};
  };
  for (const std::string& method : order) {
    const auto& group = by_method[method];
    std::vector<double> l, ul, us, uu;
    for (const RunSummary* r : group) {
      l.push_back(r->eval.acc_labeled);
      ul.push_back(r->eval.acc_unlabeled);
      us.push_back(r->eval.acc_unseen);
      if (r->eval.uu.defined) uu.push_back(r->eval.uu.accuracy);
    }
    auto [lm, ls] = mean_std(l);
    auto [ulm, uls] = mean_std(ul);
    auto [usm, uss] = mean_std(us);
    f << method << "," << group.size() << "," << fmt_double(lm) << "," << fmt_double(ls) << ","
      << fmt_double(ulm) << "," << fmt_double(uls) << "," << fmt_double(usm) << ","
      << fmt_double(uss) << ",";
    if (uu.empty()) {
      f << "nan,nan\n";
    } else {
      auto [um, usd] = mean_std(uu);
      f << fmt_double(um) << "," << fmt_double(usd) << "\n";
    }
  }
}

}  // namespace ssfa::harness
