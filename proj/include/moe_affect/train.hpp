#pragma once

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include "moe_affect/losses.hpp"
#include "moe_affect/metrics.hpp"
#include "moe_affect/moe.hpp"
#include "moe_affect/optim.hpp"

namespace moe_affect {

enum class LossKind : std::uint8_t { ce, focal };

struct TrainConfig {
  double lr0 = 1e-3;
  double lr_end = 1e-4;
  AdamWConfig adamw;
  std::size_t batch_size = 256;  // clamped to dataset size
  std::size_t epochs = 10;
  LossKind loss = LossKind::ce;
  double focal_gamma = 2.0;
  std::vector<float> class_weights;  // optional, focal only
  std::uint64_t seed = 42;

  void validate() const {
    if (!(lr_end > 0 && lr_end <= lr0)) throw std::invalid_argument("train config: need 0 < lr_end <= lr0");
    if (epochs < 1) throw std::invalid_argument("train config: epochs must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("train config: batch size must be >= 1");
    if (focal_gamma < 0) throw std::invalid_argument("train config: focal gamma must be >= 0");
  }
};

struct TrainLogEntry {
  int stage = 1;
  std::size_t epoch = 0;
  std::size_t step = 0;
  double lr = 0;
  double loss = 0;
  std::optional<MetricsReport> val_metrics;
};

struct TrainResult {
  MoeModel<float> model;
  std::vector<TrainLogEntry> log;
  // per-epoch snapshots kept only when a validation set was supplied
  std::optional<ParamStore<float>> best_params;
  double best_val_weighted_f1 = -1;
  std::size_t best_epoch = 0;
};

namespace detail {

inline double run_epochs(MoeModel<float>& model, const EmbeddingBundle& bundle,
                         const TrainConfig& cfg, int stage, double lr0, double lr_end,
                         std::vector<TrainLogEntry>& log, const EmbeddingBundle* val,
                         TrainResult* best_out) {
  std::size_t n = bundle.size();
  if (n == 0) throw std::invalid_argument("train: empty bundle");
  if (!bundle.fully_labeled()) throw std::invalid_argument("train: bundle has unlabeled samples");

  // batches are formed over id-sorted positions, so training is invariant to
  // the on-disk sample order of the bundle
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return bundle.ids[a] < bundle.ids[b]; });

  std::size_t batch = std::min(cfg.batch_size, n);
  std::size_t steps_per_epoch = (n + batch - 1) / batch;
  std::size_t total_steps = cfg.epochs * steps_per_epoch;
  Rng rng(cfg.seed + std::uint64_t(stage));

  std::map<SampleId, Emotion> val_truth;
  if (val)
    for (const auto& id : val->ids) val_truth[id] = val->labels.at(id);

  double last_loss = 0;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order.begin(), order.end());
    double epoch_loss = 0;
    for (std::size_t b0 = 0; b0 < n; b0 += batch) {
      std::vector<std::size_t> idx(order.begin() + b0,
                                   order.begin() + std::min(b0 + batch, n));
      auto inputs = make_batch(bundle, model.config(), idx, /*with_targets=*/true);
      double lr = cosine_lr(step, total_steps, lr0, lr_end);
      Tape<float> tape;
      auto g = model.forward(tape, inputs);
      typename Tape<float>::Id loss_id;
      if (cfg.loss == LossKind::ce)
        loss_id = cross_entropy_loss(tape, g.aggregated, inputs.targets);
      else
        loss_id = focal_loss(tape, g.aggregated, inputs.targets, float(cfg.focal_gamma),
                             cfg.class_weights);
      tape.backward(loss_id);
      model.accumulate_grads(tape, g);
      adamw_step(model.params(), lr, cfg.adamw);
      double loss_val = double(tape.val(loss_id)(0, 0));
      epoch_loss += loss_val * double(idx.size());
      log.push_back({stage, epoch, step, lr, loss_val, std::nullopt});
      ++step;
    }
    last_loss = epoch_loss / double(n);
    if (val) {
      auto preds = model.predict(*val);
      auto metrics = compute_metrics(preds, val_truth);
      log.back().val_metrics = metrics;
      if (best_out && metrics.weighted_f1 > best_out->best_val_weighted_f1) {
        best_out->best_val_weighted_f1 = metrics.weighted_f1;
        best_out->best_params = model.params();
        best_out->best_epoch = epoch;
      }
    }
  }
  return last_loss;
}

}  // namespace detail

/// Supervised training on a fully labeled bundle. When `val` is given, the
/// per-epoch checkpoint with the best validation weighted-F1 is retained.
inline TrainResult train_supervised(const EmbeddingBundle& bundle, const TrainConfig& cfg,
                                    const MoeConfig& moe_cfg,
                                    const EmbeddingBundle* val = nullptr) {
  cfg.validate();
  bundle.validate();
  TrainResult result{MoeModel<float>(moe_cfg, cfg.seed), {}, std::nullopt, -1, 0};
  detail::run_epochs(result.model, bundle, cfg, /*stage=*/1, cfg.lr0, cfg.lr_end, result.log, val,
                     val ? &result : nullptr);
  return result;
}

/// Two-stage paradigm: pretrain on pseudo-labeled data, then fine-tune on the
/// clean labels at one tenth the learning rate with a fresh schedule and
/// fresh optimizer moments. An empty pseudo bundle degenerates to plain
/// fine-tuning.
inline TrainResult two_stage_train(const EmbeddingBundle& pseudo, const EmbeddingBundle& labeled,
                                   const TrainConfig& cfg, const MoeConfig& moe_cfg,
                                   const EmbeddingBundle* val = nullptr) {
  cfg.validate();
  labeled.validate();
  if (!pseudo.ids.empty()) {
    pseudo.validate();
    if (pseudo.branches != labeled.branches)
      throw std::invalid_argument("two_stage_train: branch specs differ between bundles");
  }
  TrainResult result{MoeModel<float>(moe_cfg, cfg.seed), {}, std::nullopt, -1, 0};
  if (!pseudo.ids.empty())
    detail::run_epochs(result.model, pseudo, cfg, /*stage=*/1, cfg.lr0, cfg.lr_end, result.log,
                       nullptr, nullptr);
  result.model.params().reset_moments();
  detail::run_epochs(result.model, labeled, cfg, /*stage=*/2, cfg.lr0 / 10.0, cfg.lr_end / 10.0,
                     result.log, val, val ? &result : nullptr);
  return result;
}

struct FoldPlan {
  std::size_t k = 5;
  std::uint64_t seed = 0;
  struct Fold {
    std::vector<SampleId> train_ids;
    std::vector<SampleId> val_ids;
  };
  std::vector<Fold> folds;
};

/// Seeded shuffle then contiguous partition; fold sizes differ by at most 1.
inline FoldPlan kfold_split(const std::vector<SampleId>& ids, std::size_t k, std::uint64_t seed) {
  if (ids.size() < k) throw std::invalid_argument("kfold: need at least k samples");
  if (k < 2) throw std::invalid_argument("kfold: k must be >= 2");
  FoldPlan plan;
  plan.k = k;
  plan.seed = seed;
  std::vector<SampleId> shuffled = ids;
  Rng rng(seed);
  rng.shuffle(shuffled.begin(), shuffled.end());
  std::size_t n = shuffled.size(), base = n / k, rem = n % k, off = 0;
  for (std::size_t f = 0; f < k; ++f) {
    std::size_t sz = base + (f < rem ? 1 : 0);
    FoldPlan::Fold fold;
    fold.val_ids.assign(shuffled.begin() + off, shuffled.begin() + off + sz);
    for (std::size_t i = 0; i < n; ++i)
      if (i < off || i >= off + sz) fold.train_ids.push_back(shuffled[i]);
    plan.folds.push_back(std::move(fold));
    off += sz;
  }
  return plan;
}

/// Unweighted mean of the fold models' aggregated probabilities (equal-weight
/// fold averaging).
inline PredictionSet fold_ensemble_predict(const std::vector<MoeModel<float>>& models,
                                           const EmbeddingBundle& bundle) {
  if (models.empty()) throw std::invalid_argument("fold ensemble: no models");
  for (const auto& m : models)
    if (m.config().branches != models[0].config().branches)
      throw std::invalid_argument("fold ensemble: model configs differ");
  PredictionSet out;
  out.ids = bundle.ids;
  out.probs = Mat<double>(bundle.size(), kNumClasses);
  for (const auto& m : models) {
    auto p = m.predict(bundle);
    for (std::size_t i = 0; i < p.probs.size(); ++i) out.probs.a[i] += p.probs.a[i];
  }
  for (double& v : out.probs.a) v /= double(models.size());
  out.recompute_labels();
  return out;
}

}  // namespace moe_affect
