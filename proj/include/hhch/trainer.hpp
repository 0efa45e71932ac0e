#pragma once

// Training loop: per epoch, embed the clean dataset and rebuild the
// hierarchy, then for each shuffled batch augment -> forward both views ->
// total loss -> backward -> Adam.

#include "hhch/clustering.hpp"
#include "hhch/core.hpp"
#include "hhch/model.hpp"
#include "hhch/objective.hpp"
#include "hhch/retrieval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace hhch {

struct AugmentConfig {
  // Absolute noise std; unset means 0.1 x the dataset's feature std.
  std::optional<double> noise_sigma;
  double mask_fraction = 0.1;
};

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 64;
  double lr = 0.001;
  double curvature = 0.1;
  ModelShape shape;  // feature_dim is taken from the dataset
  ClusterConfig cluster{.counts = {100, 80, 50}};
  LossConfig loss;
  AugmentConfig augmentation;
  std::uint64_t seed = 0;
  bool log_timing = true;
  std::size_t eval_top_k = 100;

  void validate(std::size_t num_items) const {
    detail::require(epochs >= 1, "epochs must be >= 1");
    detail::require(batch_size >= 2, "batch_size must be >= 2");
    detail::require(batch_size <= num_items, "batch_size exceeds the dataset size");
    detail::require(std::isfinite(lr) && lr >= 0.0, "lr must be nonnegative");
    detail::require(std::isfinite(curvature) && curvature > 0.0, "curvature must be positive");
    detail::require(!augmentation.noise_sigma || (std::isfinite(*augmentation.noise_sigma) && *augmentation.noise_sigma >= 0.0),
                    "noise_sigma must be nonnegative");
    detail::require(augmentation.mask_fraction >= 0.0 && augmentation.mask_fraction <= 1.0,
                    "mask_fraction must be in [0, 1]");
    detail::require(eval_top_k >= 1, "eval_top_k must be positive");
    loss.validate();
    if (loss.objective != Objective::ic) cluster.validate(num_items);
  }
};

struct FeatureDataset {
  RowMatrix features;
  std::optional<std::vector<LabelSet>> labels;  // evaluation only

  std::size_t size() const noexcept { return static_cast<std::size_t>(features.rows()); }
};

// Held-out queries ranked against the labelled training set after each epoch.
struct EvalSplit {
  RowMatrix features;
  std::vector<LabelSet> labels;
};

struct EpochMetrics {
  std::size_t epoch = 0;  // 1-based
  double h_inst = 0.0;
  double h_proto = 0.0;
  double quant = 0.0;
  double total = 0.0;
  std::optional<double> wall_ms;
  std::optional<double> map;
};

struct TrainHooks {
  std::function<void(std::size_t epoch, const Hierarchy&)> on_hierarchy;
  std::function<void(std::size_t epoch, std::size_t batch, const LossValue&)> on_batch;
  std::function<void(const EpochMetrics&)> on_epoch;
};

struct TrainResult {
  HashModel model;
  std::optional<Hierarchy> hierarchy;  // from the final epoch
  std::vector<EpochMetrics> log;
  std::size_t hierarchy_builds = 0;
};

// Two independently noised and masked copies of a feature row.
inline std::pair<Vector, Vector> augment(const ConstVecRef& row, std::mt19937_64& rng, double noise_sigma,
                                         double mask_fraction) {
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  auto view = [&] {
    Vector v = row;
    for (Eigen::Index k = 0; k < v.size(); ++k) {
      const double n = noise(rng);
      const bool masked = coin(rng) < mask_fraction;
      v(k) = masked ? 0.0 : v(k) + noise_sigma * n;
    }
    return v;
  };
  Vector first = view();
  Vector second = view();
  return {std::move(first), std::move(second)};
}

inline double feature_std(const RowMatrix& features) {
  if (features.size() == 0) return 0.0;
  const double mean = features.mean();
  return std::sqrt((features.array() - mean).square().mean());
}

// Hierarchy over the clean dataset under the current model: hyperbolic
// embeddings, or the continuous codes when the cosine metric is selected.
inline Hierarchy build_epoch_hierarchy(const HashModel& model, const RowMatrix& features, const TrainConfig& cfg,
                                       std::uint64_t cluster_seed) {
  ClusterConfig cc = cfg.cluster;
  cc.seed = cluster_seed;
  const RowMatrix codes = encode(model, features);
  if (cfg.loss.metric == Metric::cosine) return hierarchical_spherical_kmeans(codes, cc);
  return hierarchical_kmeans(project_codes(model, codes), Curvature(model.curvature), cc);
}

inline double evaluate_map(const HashModel& model, const RowMatrix& db_features, const std::vector<LabelSet>& db_labels,
                           const EvalSplit& eval, std::size_t top_k) {
  RetrievalSet set;
  set.query_codes = binarize_rows(encode(model, eval.features));
  set.query_labels = eval.labels;
  set.db_codes = binarize_rows(encode(model, db_features));
  set.db_labels = db_labels;
  return map_at_k(set, top_k);
}

inline TrainResult train(const FeatureDataset& dataset, TrainConfig cfg, const std::optional<EvalSplit>& eval = {},
                         const TrainHooks& hooks = {}) {
  const std::size_t N = dataset.size();
  detail::require(N >= 2, "training requires at least two items");
  detail::require(dataset.features.allFinite(), "training features must be finite");
  cfg.shape.feature_dim = static_cast<std::size_t>(dataset.features.cols());
  cfg.validate(N);
  if (eval) {
    detail::require(eval->features.cols() == dataset.features.cols(), "eval features width mismatch");
    detail::require(eval->labels.size() == static_cast<std::size_t>(eval->features.rows()), "eval labels count mismatch");
  }

  TrainResult result{HashModel::initialize(cfg.shape, Curvature(cfg.curvature), detail::mix_seed(cfg.seed, 1)), {}, {}, 0};
  HashModel& model = result.model;
  OptimizerState opt = OptimizerState::for_model(model, cfg.lr);
  std::mt19937_64 shuffle_rng(detail::mix_seed(cfg.seed, 2));
  std::mt19937_64 augment_rng(detail::mix_seed(cfg.seed, 3));
  const double sigma = cfg.augmentation.noise_sigma.value_or(0.1 * feature_std(dataset.features));
  const std::size_t B = cfg.batch_size;
  const std::size_t batches = N / B;  // trailing partial batch is dropped
  const bool hyperbolic = cfg.loss.metric == Metric::hyperbolic;
  const auto F = dataset.features.cols();

  std::vector<std::size_t> order(N);
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::optional<Hierarchy> hierarchy;
    if (cfg.loss.objective != Objective::ic) {
      hierarchy = build_epoch_hierarchy(model, dataset.features, cfg, detail::mix_seed(cfg.seed, 1000 + epoch));
      ++result.hierarchy_builds;
      if (hooks.on_hierarchy) hooks.on_hierarchy(epoch, *hierarchy);
    }
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    EpochMetrics m;
    m.epoch = epoch;
    for (std::size_t b = 0; b < batches; ++b) {
      RowMatrix x(static_cast<Eigen::Index>(2 * B), F);
      BatchEmbeddings batch;
      batch.curvature = model.curvature;
      batch.instance_ids.assign(order.begin() + static_cast<std::ptrdiff_t>(b * B),
                                order.begin() + static_cast<std::ptrdiff_t>((b + 1) * B));
      for (std::size_t i = 0; i < B; ++i) {
        auto [v1, v2] = augment(dataset.features.row(static_cast<Eigen::Index>(batch.instance_ids[i])).transpose(),
                                augment_rng, sigma, cfg.augmentation.mask_fraction);
        x.row(static_cast<Eigen::Index>(i)) = v1.transpose();
        x.row(static_cast<Eigen::Index>(B + i)) = v2.transpose();
      }
      // Both views share one pass: rows [0, B) are view 1, [B, 2B) view 2.
      const ForwardResult fwd = forward(model, x);
      const auto Bi = static_cast<Eigen::Index>(B);
      batch.codes1 = fwd.codes.topRows(Bi);
      batch.codes2 = fwd.codes.bottomRows(Bi);
      if (hyperbolic) {
        batch.view1 = fwd.embeddings.topRows(Bi);
        batch.view2 = fwd.embeddings.bottomRows(Bi);
      }
      const LossValue loss = total_loss(batch, hierarchy ? &*hierarchy : nullptr, cfg.loss);
      if (!std::isfinite(loss.total)) {
        throw NumericalError("non-finite loss in epoch " + std::to_string(epoch) + ", batch " + std::to_string(b), b);
      }
      if (hooks.on_batch) hooks.on_batch(epoch, b, loss);

      RowMatrix d_codes(2 * Bi, fwd.codes.cols());
      d_codes << loss.grads.codes1, loss.grads.codes2;
      RowMatrix d_embed;
      if (hyperbolic) {
        d_embed.resize(2 * Bi, fwd.embeddings.cols());
        d_embed << loss.grads.view1, loss.grads.view2;
      }
      adam_step(model, backward(model, fwd.tape, d_codes, d_embed), opt);

      m.h_inst += loss.h_inst;
      m.h_proto += loss.h_proto;
      m.quant += loss.quant;
      m.total += loss.total;
    }
    const auto nb = static_cast<double>(std::max<std::size_t>(batches, 1));
    m.h_inst /= nb;
    m.h_proto /= nb;
    m.quant /= nb;
    m.total /= nb;
    if (eval && dataset.labels) {
      m.map = evaluate_map(model, dataset.features, *dataset.labels, *eval, cfg.eval_top_k);
    }
    if (cfg.log_timing) {
      m.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    }
    if (hooks.on_epoch) hooks.on_epoch(m);
    result.log.push_back(m);
    if (epoch == cfg.epochs) result.hierarchy = std::move(hierarchy);
  }
  return result;
}

}  // namespace hhch
