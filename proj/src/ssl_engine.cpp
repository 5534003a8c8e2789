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
#include "ssfa/ssl_engine.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "ssfa/common.hpp"

namespace ssfa::engine {

LearnerKind learner_from_string(const std::string& s) {
  if (s == "fixed") return LearnerKind::kFixedThreshold;
  if (s == "adaptive") return LearnerKind::kAdaptiveThreshold;
  throw std::invalid_argument("learner: expected fixed|adaptive, got '" + s + "'");
}

const char* learner_name(LearnerKind k) {
  return k == LearnerKind::kFixedThreshold ? "fixed" : "adaptive";
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw std::invalid_argument("config: batch_size must be >= 1");
  if (mu < 1) throw std::invalid_argument("config: mu must be >= 1");
  if (tau <= 0.0 || tau > 1.0) throw std::invalid_argument("config: tau must be in (0,1]");
  if (lambda_u < 0.0 || lambda_a < 0.0)
    throw std::invalid_argument("config: lambda weights must be >= 0");
  if (lr_main <= 0.0) throw std::invalid_argument("config: lr_main must be > 0");
  if (lr_adapt < 0.0) throw std::invalid_argument("config: lr_adapt must be >= 0");
  if (steps < 0) throw std::invalid_argument("config: steps must be >= 0");
}

uint64_t TrainConfig::config_hash() const {
  std::string repr = std::to_string(batch_size) + "|" + std::to_string(mu) + "|" +
                     fmt_double(lambda_u) + "|" + fmt_double(lambda_a) + "|" + fmt_double(tau) +
                     "|" + fmt_double(lr_main) + "|" + fmt_double(lr_adapt) + "|" +
                     std::to_string(steps) + "|" + learner_name(learner) + "|" +
                     (ssfa_enabled ? "ssfa" : "base") + "|" + nn::aux_task_name(aux_task) + "|" +
                     std::to_string(shared_count) + "|" + std::to_string(seed) + "|" +
                     fmt_double(contrastive_temperature) + "|" + std::to_string(contrastive_dim);
  for (int w : widths) repr += "|" + std::to_string(w);
  return hash_bytes(repr.data(), repr.size());
}

std::vector<double> PseudoLabels::max_confidence() const {
  std::vector<double> out(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double* row = &q[static_cast<size_t>(i) * n_classes];
    double mx = row[0];
    for (int j = 1; j < n_classes; ++j) mx = std::max(mx, row[j]);
    out[static_cast<size_t>(i)] = mx;
  }
  return out;
}

int argmax_lowest_tie(const double* row, int n) {
  int best = 0;
  for (int j = 1; j < n; ++j)
    if (row[j] > row[best]) best = j;
  return best;
}

ad::Value supervised_loss(ad::Graph& g, const std::vector<data::Glyph>& labeled_batch,
                          nn::ModelParams& params) {
  if (labeled_batch.empty()) throw std::invalid_argument("supervised_loss: empty batch");
  int n = static_cast<int>(labeled_batch.size());
  int c = params.arch.n_classes;
  ad::Value x = nn::batch_input(g, labeled_batch);
  ad::Value feat = nn::encode(g, x, params, static_cast<int>(params.encoder.size()));
  ad::Value logp = g.log_softmax(nn::classify(g, feat, params, /*trainable=*/true));
  std::vector<double> target(static_cast<size_t>(n) * c, 0.0);
  for (int i = 0; i < n; ++i) {
    int y = labeled_batch[static_cast<size_t>(i)].label;
    if (y < 0 || y >= c)
      throw std::invalid_argument("supervised_loss: label " + std::to_string(y) +
                                  " out of range for " + std::to_string(c) + " classes");
    target[static_cast<size_t>(i) * c + y] = -1.0 / n;
  }
  return g.sum(g.mul(logp, g.constant({n, c}, std::move(target))));
}

ad::Value unsupervised_loss(ad::Graph& g, const std::vector<data::Glyph>& strong_views,
                            const PseudoLabels& pseudo, nn::ModelParams& params, double tau) {
  int n = static_cast<int>(strong_views.size());
  if (pseudo.n != n)
    throw std::invalid_argument("unsupervised_loss: " + std::to_string(pseudo.n) +
                                " pseudo-labels for " + std::to_string(n) + " samples");
  int c = params.arch.n_classes;
  ad::Value x = nn::batch_input(g, strong_views);
  ad::Value feat = nn::encode(g, x, params, static_cast<int>(params.encoder.size()));
  ad::Value logp = g.log_softmax(nn::classify(g, feat, params, /*trainable=*/true));
  // Divisor stays mu*B no matter how many samples pass the mask.
  std::vector<double> target(static_cast<size_t>(n) * c, 0.0);
  for (int i = 0; i < n; ++i) {
    const double* row = &pseudo.q[static_cast<size_t>(i) * c];
    double mx = row[argmax_lowest_tie(row, c)];
    if (mx > tau)
      target[static_cast<size_t>(i) * c + pseudo.hard[static_cast<size_t>(i)]] = -1.0 / n;
  }
  return g.sum(g.mul(logp, g.constant({n, c}, std::move(target))));
}

ad::Value aux_loss_streams(ad::Graph& g, const std::vector<data::Glyph>& labeled_batch,
                           const std::vector<data::Glyph>& weak_views,
                           const std::vector<data::Glyph>& strong_views,
                           nn::ModelParams& params, nn::AuxTaskKind task, int shared_count,
                           rng::Rng& rng, const aux::AuxHyper& hyper) {
  if (weak_views.size() != strong_views.size())
    throw std::invalid_argument("aux_loss: weak/strong stream sizes differ (" +
                                std::to_string(weak_views.size()) + " vs " +
                                std::to_string(strong_views.size()) + ")");
  aux::StreamLoss sl = aux::task_loss_sum(g, task, labeled_batch, params, shared_count, rng, hyper);
  aux::StreamLoss sw = aux::task_loss_sum(g, task, weak_views, params, shared_count, rng, hyper);
  aux::StreamLoss ss = aux::task_loss_sum(g, task, strong_views, params, shared_count, rng, hyper);
  int total = sl.count + sw.count + ss.count;  // (2*mu + 1) * B
  return g.scale(g.add(g.add(sl.sum, sw.sum), ss.sum), 1.0 / total);
}

ad::Value aux_loss(ad::Graph& g, const std::vector<data::Glyph>& labeled_batch,
                   const std::vector<data::Glyph>& unlabeled_batch, nn::ModelParams& params,
                   nn::AuxTaskKind task, int shared_count, rng::Rng& rng,
                   const aux::AuxHyper& hyper) {
  if (labeled_batch.empty() || unlabeled_batch.empty())
    throw std::invalid_argument("aux_loss: empty batch");
  if (unlabeled_batch.size() % labeled_batch.size() != 0)
    throw std::invalid_argument("aux_loss: unlabeled batch size " +
                                std::to_string(unlabeled_batch.size()) +
                                " is not a multiple of B = " +
                                std::to_string(labeled_batch.size()));
  std::vector<data::Glyph> weak, strong;
  weak.reserve(unlabeled_batch.size());
  strong.reserve(unlabeled_batch.size());
  for (const data::Glyph& u : unlabeled_batch) weak.push_back(data::weak_aug(u, rng));
  for (const data::Glyph& u : unlabeled_batch) strong.push_back(data::strong_aug(u, rng));
  return aux_loss_streams(g, labeled_batch, weak, strong, params, task, shared_count, rng, hyper);
}

ad::Value total_loss(ad::Graph& g, ad::Value loss_x, ad::Value loss_u, ad::Value loss_aux,
                     double lambda_u, double lambda_a) {
  return g.add(loss_x, g.add(g.scale(loss_u, lambda_u), g.scale(loss_aux, lambda_a)));
}

PseudoLabels baseline_pseudo(const std::vector<data::Glyph>& weak_views,
                             nn::ModelParams& params) {
  if (weak_views.empty()) throw std::invalid_argument("baseline_pseudo: empty batch");
  ad::Graph g;
  ad::Value x = nn::batch_input(g, weak_views);
  ad::Value feat = nn::encode(g, x, params, /*trainable_encoder_layers=*/0);
  ad::Value probs = g.softmax(nn::classify(g, feat, params, /*trainable=*/false));
  PseudoLabels pl;
  pl.n = static_cast<int>(weak_views.size());
  pl.n_classes = params.arch.n_classes;
  pl.q = g.value(probs);
  pl.hard.resize(static_cast<size_t>(pl.n));
  for (int i = 0; i < pl.n; ++i)
    pl.hard[static_cast<size_t>(i)] =
        argmax_lowest_tie(&pl.q[static_cast<size_t>(i) * pl.n_classes], pl.n_classes);
  return pl;
}

double adaptive_threshold_update(double tau_prev, const std::vector<double>& max_confidences,
                                 double m) {
  if (max_confidences.empty()) return tau_prev;
  double mean = 0.0;
  for (double c : max_confidences) mean += c;
  mean /= static_cast<double>(max_confidences.size());
  return (1.0 - m) * tau_prev + m * mean;
}

namespace {

// Cyclic shuffled index stream; reshuffles with a fresh per-epoch rng so the
// order is a pure function of (seed, stream, epoch).
class Cycler {
 public:
  Cycler(size_t n, uint64_t seed, rng::Stream stream) : n_(n), seed_(seed), stream_(stream) {}

  size_t next() {
    if (pos_ == perm_.size()) reshuffle();
    return perm_[pos_++];
  }

 private:
  void reshuffle() {
    rng::Rng rng = rng::stream_rng(seed_, stream_, epoch_++);
    perm_.resize(n_);
    for (size_t i = 0; i < n_; ++i) perm_[i] = i;
    for (size_t i = n_ - 1; i > 0; --i)
      std::swap(perm_[i], perm_[static_cast<size_t>(rng.uniform_int(static_cast<int>(i) + 1))]);
    pos_ = 0;
  }

  size_t n_;
  uint64_t seed_;
  rng::Stream stream_;
  std::vector<size_t> perm_;
  size_t pos_ = 0;
  uint64_t epoch_ = 0;
};

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

}  // namespace

TrainResult train(const TrainConfig& cfg, const data::DatasetBundle& bundle) {
  cfg.validate();
  if (bundle.labeled.empty()) throw std::invalid_argument("train: bundle has no labeled data");
  if (bundle.unlabeled_count() == 0)
    throw std::invalid_argument("train: bundle has no unlabeled data");

  nn::ArchConfig arch;
  arch.input_size = bundle.glyph_size;
  arch.widths = cfg.widths;
  arch.n_classes = bundle.n_classes;
  arch.shared_count = cfg.shared_count;
  arch.aux_task = cfg.aux_task;
  arch.contrastive_dim = cfg.contrastive_dim;

  TrainResult result;
  result.params = nn::init_model(arch, cfg.seed);
  nn::ModelParams& params = result.params;
  auto joint = params.joint_params();

  aux::AuxHyper hyper{cfg.contrastive_temperature};
  const int b = cfg.batch_size;
  const int ub = cfg.batch_size * cfg.mu;
  Cycler labeled_order(bundle.labeled.size(), cfg.seed, rng::Stream::kDataOrderLabeled);
  Cycler unlabeled_order(bundle.unlabeled_count(), cfg.seed, rng::Stream::kDataOrderUnlabeled);

  double tau_t = cfg.learner == LearnerKind::kAdaptiveThreshold
                     ? 1.0 / bundle.n_classes
                     : cfg.tau;
  result.history.reserve(static_cast<size_t>(cfg.steps));

  for (int t = 0; t < cfg.steps; ++t) {
    std::vector<data::Glyph> labeled_batch;
    labeled_batch.reserve(static_cast<size_t>(b));
    for (int i = 0; i < b; ++i) labeled_batch.push_back(bundle.labeled[labeled_order.next()]);

    std::vector<size_t> uidx(static_cast<size_t>(ub));
    for (int i = 0; i < ub; ++i) uidx[static_cast<size_t>(i)] = unlabeled_order.next();

    rng::Rng weak_rng = rng::stream_rng(cfg.seed, rng::Stream::kWeakAug, static_cast<uint64_t>(t));
    rng::Rng strong_rng =
        rng::stream_rng(cfg.seed, rng::Stream::kStrongAug, static_cast<uint64_t>(t));
    std::vector<data::Glyph> weak_views, strong_views;
    weak_views.reserve(uidx.size());
    strong_views.reserve(uidx.size());
    for (size_t i : uidx) weak_views.push_back(data::weak_aug(bundle.unlabeled(i), weak_rng));
    for (size_t i : uidx) strong_views.push_back(data::strong_aug(bundle.unlabeled(i), strong_rng));

    StepReport rep;
    rep.step = t;
    rep.loss_apt = kNaN;
    rep.uu_acc = kNaN;

    PseudoLabels pseudo;
    if (cfg.ssfa_enabled) {
      fam::FamConfig fcfg;
      fcfg.task = cfg.aux_task;
      fcfg.shared_count = cfg.shared_count;
      fcfg.lr_adapt = cfg.lr_adapt;
      fcfg.tau = tau_t;
      fcfg.hyper = hyper;
      fcfg.diag_ipp = cfg.diag_ipp;
      std::vector<int> hidden_labels;
      if (cfg.diag_ipp) {  // sanctioned diagnostic read of ground truth
        hidden_labels.reserve(uidx.size());
        for (size_t i : uidx) hidden_labels.push_back(bundle.hidden(i).label);
      }
      rng::Rng adapt_rng =
          rng::stream_rng(cfg.seed, rng::Stream::kRotAdapt, static_cast<uint64_t>(t));
      fam::AdaptationOutcome out = fam::fam_pipeline(
          params, weak_views, fcfg, adapt_rng, cfg.diag_ipp ? &hidden_labels : nullptr);
      pseudo.n = out.n;
      pseudo.n_classes = out.n_classes;
      pseudo.q = std::move(out.q_prime);
      pseudo.hard = std::move(out.hard_labels);
      rep.loss_apt = out.l_apt;
      rep.adapt_fallback = out.fell_back;
      rep.ipp = out.ipp;
      rep.ipp_defined = out.ipp_defined;
    } else {
      pseudo = baseline_pseudo(weak_views, params);
    }

    if (cfg.learner == LearnerKind::kAdaptiveThreshold)
      tau_t = adaptive_threshold_update(tau_t, pseudo.max_confidence());
    rep.tau_t = tau_t;

    ad::Graph g;
    ad::Value lx = supervised_loss(g, labeled_batch, params);
    ad::Value lu = unsupervised_loss(g, strong_views, pseudo, params, tau_t);
    rng::Rng rot_rng = rng::stream_rng(cfg.seed, rng::Stream::kRotJoint, static_cast<uint64_t>(t));
    ad::Value laux = aux_loss_streams(g, labeled_batch, weak_views, strong_views, params,
                                      cfg.aux_task, cfg.shared_count, rot_rng, hyper);
    ad::Value total = total_loss(g, lx, lu, laux, cfg.lambda_u, cfg.lambda_a);

    rep.loss_x = g.item(lx);
    rep.loss_u = g.item(lu);
    rep.loss_aux = g.item(laux);
    if (!std::isfinite(g.item(total)))
      throw std::runtime_error("train: non-finite loss at step " + std::to_string(t) +
                               " (L_x=" + fmt_double(rep.loss_x) +
                               ", L_u=" + fmt_double(rep.loss_u) +
                               ", L_aux=" + fmt_double(rep.loss_aux) + ")");

    ad::zero_grad(joint);
    g.backward(total);
    ad::sgd_step(joint, cfg.lr_main);

    int masked_in = 0, correct = 0;
    for (int i = 0; i < pseudo.n; ++i) {
      const double* row = &pseudo.q[static_cast<size_t>(i) * pseudo.n_classes];
      if (row[pseudo.hard[static_cast<size_t>(i)]] > tau_t) {
        ++masked_in;
        if (cfg.record_uu &&
            bundle.hidden(uidx[static_cast<size_t>(i)]).label ==
                pseudo.hard[static_cast<size_t>(i)])
          ++correct;
      }
    }
    rep.mask_rate = pseudo.n > 0 ? static_cast<double>(masked_in) / pseudo.n : 0.0;
    if (cfg.record_uu && masked_in > 0) {
      rep.uu_acc = static_cast<double>(correct) / masked_in;
      rep.uu_defined = true;
    }
    result.history.push_back(rep);
  }
  result.final_tau = tau_t;
  return result;
}

std::string history_csv(const std::vector<StepReport>& history) {
  std::string out = "step,L_x,L_u,L_aux,L_apt,mask_rate,uu_acc,tau_t\n";
  for (const StepReport& r : history) {
    out += std::to_string(r.step) + "," + fmt_double(r.loss_x) + "," + fmt_double(r.loss_u) +
           "," + fmt_double(r.loss_aux) + "," + fmt_double(r.loss_apt) + "," +
           fmt_double(r.mask_rate) + "," + fmt_double(r.uu_acc) + "," + fmt_double(r.tau_t) +
           "\n";
  }
  return out;
}

void write_history_csv(const std::vector<StepReport>& history, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("write_history_csv: cannot open " + path);
  f << history_csv(history);
  if (!f) throw std::runtime_error("write_history_csv: write failed for " + path);
}

}  // namespace ssfa::engine
