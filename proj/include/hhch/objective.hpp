#pragma once

// Hierarchical instance-wise and prototype-wise contrastive losses,
// quantization loss, and their analytic gradients with respect to the batch
// embeddings and continuous codes.
//
// Views are indexed 0 and 1. An anchor (i, v) has positive (i, 1-v) and, for
// the instance loss, negatives (j, u) for both views u of every j in the
// layer-l negative set. Prototypes are constants.

#include "hhch/clustering.hpp"
#include "hhch/core.hpp"
#include "hhch/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace hhch {

enum class Metric { hyperbolic, cosine };

// Which loss terms are active. ic/pc are the flat baselines: every other batch
// member is a negative (ic), or only layer-1 prototypes are contrasted (pc).
enum class Objective { ic, pc, hic, hpc, full };

struct LossConfig {
  double tau = 0.2;
  double lambda = 0.01;
  Metric metric = Metric::hyperbolic;
  Objective objective = Objective::full;
  std::size_t num_layers = 0;  // 0 uses every layer of the hierarchy

  void validate() const {
    detail::require(std::isfinite(tau) && tau > 0.0, "tau must be positive");
    detail::require(std::isfinite(lambda) && lambda >= 0.0, "lambda must be nonnegative");
  }
};

struct BatchEmbeddings {
  RowMatrix view1;  // B x n hyperbolic embeddings (may be empty for the cosine metric)
  RowMatrix view2;
  RowMatrix codes1;  // B x K continuous codes in (-1, 1)
  RowMatrix codes2;
  std::vector<std::size_t> instance_ids;
  double curvature = 0.1;

  std::size_t size() const noexcept { return instance_ids.size(); }

  // Rows compared by the metric: embeddings (hyperbolic) or codes (cosine).
  const RowMatrix& points(std::size_t view, Metric metric) const {
    if (metric == Metric::hyperbolic) return view == 0 ? view1 : view2;
    return view == 0 ? codes1 : codes2;
  }

  void validate(Metric metric) const {
    const auto b = static_cast<Eigen::Index>(size());
    detail::require(codes1.rows() == b && codes2.rows() == b, "batch: code rows must match instance ids");
    detail::require(codes1.cols() == codes2.cols(), "batch: code widths differ");
    detail::require(codes1.allFinite() && codes2.allFinite(), "batch: non-finite codes");
    if (metric == Metric::hyperbolic) {
      detail::require(curvature > 0.0, "batch: hyperbolic metric requires curvature > 0");
      detail::require(view1.rows() == b && view2.rows() == b, "batch: view rows must match instance ids");
      detail::require(view1.cols() == view2.cols(), "batch: view widths differ");
      for (const RowMatrix* v : {&view1, &view2}) {
        detail::require(v->allFinite(), "batch: non-finite embeddings");
        for (Eigen::Index i = 0; i < b; ++i) {
          detail::require(curvature * v->row(i).squaredNorm() < 1.0, "batch: embedding outside the ball");
        }
      }
    }
  }
};

struct BatchGradients {
  RowMatrix view1, view2, codes1, codes2;

  static BatchGradients zeros_like(const BatchEmbeddings& batch) {
    BatchGradients g;
    g.view1 = RowMatrix::Zero(batch.view1.rows(), batch.view1.cols());
    g.view2 = RowMatrix::Zero(batch.view2.rows(), batch.view2.cols());
    g.codes1 = RowMatrix::Zero(batch.codes1.rows(), batch.codes1.cols());
    g.codes2 = RowMatrix::Zero(batch.codes2.rows(), batch.codes2.cols());
    return g;
  }

  RowMatrix& points(std::size_t view, Metric metric) {
    if (metric == Metric::hyperbolic) return view == 0 ? view1 : view2;
    return view == 0 ? codes1 : codes2;
  }

  BatchGradients& add(const BatchGradients& other, double scale = 1.0) {
    view1 += scale * other.view1;
    view2 += scale * other.view2;
    codes1 += scale * other.codes1;
    codes2 += scale * other.codes2;
    return *this;
  }
};

struct LossTerm {
  double value = 0.0;
  BatchGradients grads;
};

struct LossValue {
  double total = 0.0;
  double h_inst = 0.0;
  double h_proto = 0.0;
  double quant = 0.0;
  BatchGradients grads;
};

inline double cosine_distance(const ConstVecRef& a, const ConstVecRef& b) {
  detail::require(a.size() == b.size(), "cosine_distance: dimension mismatch");
  const double na = a.norm();
  const double nb = b.norm();
  detail::require(na > 0.0 && nb > 0.0, "cosine_distance: zero-norm vector");
  const double cosine = std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
  return 0.5 * static_cast<double>(a.size()) * (1.0 - cosine);
}

namespace detail {

// dD/da = a_self * a + a_other * b, dD/db = b_self * b + b_other * a.
struct PairGradient {
  double a_self = 0.0, a_other = 0.0, b_self = 0.0, b_other = 0.0;
};

struct MetricKernel {
  Metric metric;
  double c;

  // From the pair's squared norms, dot product and squared difference.
  double distance_from(double xx, double yy, double xy, double diff, Eigen::Index dim) const {
    if (metric == Metric::cosine) {
      require(xx > 0.0 && yy > 0.0, "cosine_distance: zero-norm vector");
      const double cosine = std::clamp(xy / (std::sqrt(xx) * std::sqrt(yy)), -1.0, 1.0);
      return 0.5 * static_cast<double>(dim) * (1.0 - cosine);
    }
    return ball::distance_from_terms(xx, yy, xy, diff, c);
  }

  PairGradient gradient_from(double xx, double yy, double xy, double diff, Eigen::Index dim) const {
    PairGradient g;
    if (metric == Metric::cosine) {
      const double na = std::sqrt(xx);
      const double nb = std::sqrt(yy);
      const double cosine = xy / (na * nb);
      const double half_k = 0.5 * static_cast<double>(dim);
      g.a_self = half_k * cosine / xx;
      g.a_other = -half_k / (na * nb);
      g.b_self = half_k * cosine / yy;
      g.b_other = g.a_other;
      return g;
    }
    const auto t = ball::distance_gradient_terms(xx, yy, xy, diff, c);
    g.a_self = t.scale * t.self_x;
    g.a_other = -t.scale;
    g.b_self = t.scale * t.self_y;
    g.b_other = -t.scale;
    return g;
  }

  double distance(const ConstVecRef& a, const ConstVecRef& b) const {
    if (metric == Metric::cosine) return cosine_distance(a, b);
    return distance_from(a.squaredNorm(), b.squaredNorm(), a.dot(b), (a - b).squaredNorm(), a.size());
  }

  PairGradient gradient(const ConstVecRef& a, const ConstVecRef& b) const {
    return gradient_from(a.squaredNorm(), b.squaredNorm(), a.dot(b), (a - b).squaredNorm(), a.size());
  }
};

inline void require_matching_hierarchy(const Hierarchy& h, const BatchEmbeddings& batch, const LossConfig& cfg) {
  const bool hyperbolic = cfg.metric == Metric::hyperbolic;
  require(h.geometry == (hyperbolic ? ClusterGeometry::hyperbolic : ClusterGeometry::spherical),
          "hierarchy geometry does not match the loss metric");
  const auto dim = batch.points(0, cfg.metric).cols();
  require(h.layers.front().cols() == dim, "hierarchy prototype dimension does not match the batch");
  for (auto id : batch.instance_ids) {
    require(id < h.num_instances(), "batch instance id " + std::to_string(id) + " not covered by the hierarchy");
  }
}

inline std::size_t effective_layers(const Hierarchy& h, const LossConfig& cfg) {
  if (cfg.objective == Objective::ic || cfg.objective == Objective::pc) return 1;
  const std::size_t L = cfg.num_layers == 0 ? h.num_layers() : cfg.num_layers;
  require(L >= 1 && L <= h.num_layers(), "num_layers exceeds the hierarchy depth");
  return L;
}

// Softmax-of-negative-distance term -log(e^{-Dp/t} / (e^{-Dp/t} + sum e^{-Dn/t}))
// with max-shifted exponentials. Writes dloss/dD for the positive and each
// negative.
inline double contrastive_term(double d_pos, std::span<const double> d_neg, double tau, double& g_pos,
                               std::span<double> g_neg) {
  double best = -d_pos / tau;
  for (double d : d_neg) best = std::max(best, -d / tau);
  double sum = std::exp(-d_pos / tau - best);
  for (double d : d_neg) sum += std::exp(-d / tau - best);
  const double lse = best + std::log(sum);
  g_pos = (1.0 - std::exp(-d_pos / tau - lse)) / tau;
  for (std::size_t n = 0; n < d_neg.size(); ++n) g_neg[n] = -std::exp(-d_neg[n] / tau - lse) / tau;
  return d_pos / tau + lse;
}

// Instance loss given, per layer, each anchor's batch-local negative set.
inline LossTerm instance_loss(const BatchEmbeddings& batch, const std::vector<std::vector<std::vector<std::size_t>>>& negatives,
                              const LossConfig& cfg) {
  const std::size_t B = batch.size();
  const std::size_t L = negatives.size();
  const MetricKernel kernel{cfg.metric, batch.curvature};
  const RowMatrix* pts[2] = {&batch.points(0, cfg.metric), &batch.points(1, cfg.metric)};

  // Pairwise terms over the stacked 2B rows: index v * B + i.
  const std::size_t S = 2 * B;
  const auto Si = static_cast<Eigen::Index>(S);
  const Eigen::Index n = pts[0]->cols();
  RowMatrix X(Si, n);
  X << *pts[0], *pts[1];
  const Vector sq = X.rowwise().squaredNorm();
  const Matrix dot = X * X.transpose();
  Matrix diff = Matrix::Zero(Si, Si);
  Matrix dist = Matrix::Zero(Si, Si);
  for (Eigen::Index a = 0; a < Si; ++a) {
    const double* xa = X.row(a).data();
    for (Eigen::Index b = a + 1; b < Si; ++b) {
      const double* xb = X.row(b).data();
      double d2 = 0.0;
      for (Eigen::Index k = 0; k < n; ++k) d2 += (xa[k] - xb[k]) * (xa[k] - xb[k]);
      diff(a, b) = diff(b, a) = d2;
      dist(a, b) = dist(b, a) = kernel.distance_from(sq(a), sq(b), dot(a, b), d2, n);
    }
  }

  Matrix coef = Matrix::Zero(static_cast<Eigen::Index>(S), static_cast<Eigen::Index>(S));
  LossTerm out;
  out.grads = BatchGradients::zeros_like(batch);
  std::vector<double> d_neg, g_neg;
  std::vector<std::size_t> idx_neg;
  for (std::size_t l = 0; l < L; ++l) {
    const double weight = 1.0 / (static_cast<double>(B) * static_cast<double>(L) * static_cast<double>(l + 1));
    for (std::size_t i = 0; i < B; ++i) {
      const auto& neg = negatives[l][i];
      if (neg.empty()) continue;  // -log(1) = 0 for both views
      for (std::size_t v = 0; v < 2; ++v) {
        const std::size_t a = v * B + i;
        const std::size_t p = (1 - v) * B + i;
        d_neg.clear();
        idx_neg.clear();
        for (std::size_t u = 0; u < 2; ++u) {
          for (auto j : neg) {
            idx_neg.push_back(u * B + j);
            d_neg.push_back(dist(a, u * B + j));
          }
        }
        g_neg.assign(d_neg.size(), 0.0);
        double g_pos = 0.0;
        out.value += weight * contrastive_term(dist(a, p), d_neg, cfg.tau, g_pos, g_neg);
        coef(a, p) += weight * g_pos;
        for (std::size_t n = 0; n < idx_neg.size(); ++n) coef(a, idx_neg[n]) += weight * g_neg[n];
      }
    }
  }

  // grad = diag(self) X + other X, collected pair by pair.
  Vector self = Vector::Zero(Si);
  Matrix other = Matrix::Zero(Si, Si);
  for (Eigen::Index a = 0; a < Si; ++a) {
    for (Eigen::Index b = 0; b < Si; ++b) {
      const double g = coef(a, b);
      if (g == 0.0) continue;
      const PairGradient pg = kernel.gradient_from(sq(a), sq(b), dot(a, b), diff(a, b), n);
      self(a) += g * pg.a_self;
      self(b) += g * pg.b_self;
      other(a, b) += g * pg.a_other;
      other(b, a) += g * pg.b_other;
    }
  }
  const RowMatrix G = self.asDiagonal() * X + other * X;
  const auto Bi = static_cast<Eigen::Index>(B);
  out.grads.points(0, cfg.metric) = G.topRows(Bi);
  out.grads.points(1, cfg.metric) = G.bottomRows(Bi);
  return out;
}

}  // namespace detail

// Batch-local indices j whose layer-`layer` ancestor differs from anchor i's.
inline std::vector<std::vector<std::size_t>> instance_negatives(const Hierarchy& h, const BatchEmbeddings& batch,
                                                                std::size_t layer) {
  const std::size_t B = batch.size();
  std::vector<std::size_t> anc(B);
  for (std::size_t i = 0; i < B; ++i) anc[i] = h.ancestor(batch.instance_ids[i], layer);
  std::vector<std::vector<std::size_t>> out(B);
  for (std::size_t i = 0; i < B; ++i) {
    for (std::size_t j = 0; j < B; ++j) {
      if (anc[j] != anc[i]) out[i].push_back(j);
    }
  }
  return out;
}

// Every other batch member, the negative set of the flat instance baseline.
inline std::vector<std::vector<std::size_t>> all_other_negatives(std::size_t batch_size) {
  std::vector<std::vector<std::size_t>> out(batch_size);
  for (std::size_t i = 0; i < batch_size; ++i) {
    for (std::size_t j = 0; j < batch_size; ++j) {
      if (j != i) out[i].push_back(j);
    }
  }
  return out;
}

// Loss of anchor i in view v (0 or 1) against the given negatives.
inline double instance_contrastive(std::size_t i, std::size_t v, std::span<const std::size_t> negatives,
                                   const BatchEmbeddings& batch, const LossConfig& cfg) {
  detail::require(i < batch.size() && v < 2, "instance_contrastive: anchor out of range");
  if (negatives.empty()) return 0.0;
  const detail::MetricKernel kernel{cfg.metric, batch.curvature};
  const RowMatrix& own = batch.points(v, cfg.metric);
  const RowMatrix& other = batch.points(1 - v, cfg.metric);
  const Vector anchor = own.row(static_cast<Eigen::Index>(i)).transpose();
  const double d_pos = kernel.distance(anchor, other.row(static_cast<Eigen::Index>(i)).transpose());
  std::vector<double> d_neg;
  for (std::size_t u = 0; u < 2; ++u) {
    for (auto j : negatives) {
      d_neg.push_back(kernel.distance(anchor, batch.points(u, cfg.metric).row(static_cast<Eigen::Index>(j)).transpose()));
    }
  }
  std::vector<double> g_neg(d_neg.size());
  double g_pos = 0.0;
  return detail::contrastive_term(d_pos, d_neg, cfg.tau, g_pos, g_neg);
}

inline LossTerm hierarchical_instance_loss(const BatchEmbeddings& batch, const Hierarchy& h, const LossConfig& cfg) {
  cfg.validate();
  batch.validate(cfg.metric);
  detail::require_matching_hierarchy(h, batch, cfg);
  const std::size_t L = detail::effective_layers(h, cfg);
  std::vector<std::vector<std::vector<std::size_t>>> negatives;
  for (std::size_t l = 1; l <= L; ++l) negatives.push_back(instance_negatives(h, batch, l));
  return detail::instance_loss(batch, negatives, cfg);
}

// Instance loss without hierarchy: all other batch members are negatives.
inline LossTerm flat_instance_loss(const BatchEmbeddings& batch, const LossConfig& cfg) {
  cfg.validate();
  batch.validate(cfg.metric);
  return detail::instance_loss(batch, {all_other_negatives(batch.size())}, cfg);
}

// All layer-`layer` prototypes except the ancestor of `instance`.
inline std::vector<std::size_t> prototype_negatives(const Hierarchy& h, std::size_t instance, std::size_t layer) {
  const std::size_t own = h.ancestor(instance, layer);
  std::vector<std::size_t> out;
  for (std::size_t p = 0; p < h.count(layer); ++p) {
    if (p != own) out.push_back(p);
  }
  return out;
}

inline double prototype_contrastive(std::size_t i, std::size_t v, std::size_t layer, const BatchEmbeddings& batch,
                                    const Hierarchy& h, const LossConfig& cfg) {
  detail::require(i < batch.size() && v < 2, "prototype_contrastive: anchor out of range");
  const auto id = batch.instance_ids[i];
  const auto neg = prototype_negatives(h, id, layer);
  if (neg.empty()) return 0.0;
  const detail::MetricKernel kernel{cfg.metric, batch.curvature};
  const RowMatrix& protos = h.layers[layer - 1];
  const Vector anchor = batch.points(v, cfg.metric).row(static_cast<Eigen::Index>(i)).transpose();
  const double d_pos = kernel.distance(anchor, protos.row(static_cast<Eigen::Index>(h.ancestor(id, layer))).transpose());
  std::vector<double> d_neg;
  for (auto p : neg) d_neg.push_back(kernel.distance(anchor, protos.row(static_cast<Eigen::Index>(p)).transpose()));
  std::vector<double> g_neg(d_neg.size());
  double g_pos = 0.0;
  return detail::contrastive_term(d_pos, d_neg, cfg.tau, g_pos, g_neg);
}

inline LossTerm hierarchical_prototype_loss(const BatchEmbeddings& batch, const Hierarchy& h, const LossConfig& cfg) {
  cfg.validate();
  batch.validate(cfg.metric);
  detail::require_matching_hierarchy(h, batch, cfg);
  const std::size_t B = batch.size();
  const std::size_t L = detail::effective_layers(h, cfg);
  const detail::MetricKernel kernel{cfg.metric, batch.curvature};

  LossTerm out;
  out.grads = BatchGradients::zeros_like(batch);
  std::vector<double> d_neg, g_neg;
  for (std::size_t l = 1; l <= L; ++l) {
    const RowMatrix& protos = h.layers[l - 1];
    const auto M = static_cast<std::size_t>(protos.rows());
    if (M < 2) continue;  // no negatives at this layer
    const double weight = 1.0 / (static_cast<double>(B) * static_cast<double>(L) * static_cast<double>(l));
    for (std::size_t v = 0; v < 2; ++v) {
      const RowMatrix& pts = batch.points(v, cfg.metric);
      RowMatrix& grad = out.grads.points(v, cfg.metric);
      for (std::size_t i = 0; i < B; ++i) {
        const auto ri = pts.row(static_cast<Eigen::Index>(i)).transpose();
        const std::size_t own = h.ancestor(batch.instance_ids[i], l);
        d_neg.clear();
        for (std::size_t p = 0; p < M; ++p) {
          if (p != own) d_neg.push_back(kernel.distance(ri, protos.row(static_cast<Eigen::Index>(p)).transpose()));
        }
        g_neg.assign(d_neg.size(), 0.0);
        double g_pos = 0.0;
        const auto r_own = protos.row(static_cast<Eigen::Index>(own)).transpose();
        out.value += weight * detail::contrastive_term(kernel.distance(ri, r_own), d_neg, cfg.tau, g_pos, g_neg);

        Vector g = Vector::Zero(pts.cols());
        auto add_pair = [&](double coef, const auto& proto) {
          if (coef == 0.0) return;
          const auto pg = kernel.gradient(ri, proto);
          g += coef * (pg.a_self * ri + pg.a_other * proto);
        };
        add_pair(weight * g_pos, r_own);
        std::size_t n = 0;
        for (std::size_t p = 0; p < M; ++p) {
          if (p == own) continue;
          add_pair(weight * g_neg[n++], protos.row(static_cast<Eigen::Index>(p)).transpose());
        }
        grad.row(static_cast<Eigen::Index>(i)) += g.transpose();
      }
    }
  }
  return out;
}

namespace detail {

// log cosh(x) without overflow.
inline double log_cosh(double x) {
  const double a = std::abs(x);
  return a + std::log1p(std::exp(-2.0 * a)) - std::log(2.0);
}

}  // namespace detail

// (1/2) sum_i sum_k sum_v log cosh(|h| - 1); subgradient 0 at h = 0.
inline LossTerm quantization_loss(const RowMatrix& codes1, const RowMatrix& codes2) {
  detail::require(codes1.rows() == codes2.rows() && codes1.cols() == codes2.cols(),
                  "quantization_loss: code shapes differ");
  LossTerm out;
  out.grads.codes1 = RowMatrix::Zero(codes1.rows(), codes1.cols());
  out.grads.codes2 = RowMatrix::Zero(codes2.rows(), codes2.cols());
  const RowMatrix* codes[2] = {&codes1, &codes2};
  RowMatrix* grads[2] = {&out.grads.codes1, &out.grads.codes2};
  for (std::size_t v = 0; v < 2; ++v) {
    for (Eigen::Index i = 0; i < codes[v]->rows(); ++i) {
      for (Eigen::Index k = 0; k < codes[v]->cols(); ++k) {
        const double h = (*codes[v])(i, k);
        const double m = std::abs(h) - 1.0;
        out.value += 0.5 * detail::log_cosh(m);
        const double sign = h > 0.0 ? 1.0 : (h < 0.0 ? -1.0 : 0.0);
        (*grads[v])(i, k) = 0.5 * std::tanh(m) * sign;
      }
    }
  }
  return out;
}

// Total objective h_inst + h_proto + lambda * quant for the configured
// objective variant. `h` may be null only for Objective::ic.
inline LossValue total_loss(const BatchEmbeddings& batch, const Hierarchy* h, const LossConfig& cfg) {
  cfg.validate();
  batch.validate(cfg.metric);
  const bool needs_hierarchy = cfg.objective != Objective::ic;
  detail::require(!needs_hierarchy || h != nullptr, "objective requires a hierarchy");

  LossValue out;
  out.grads = BatchGradients::zeros_like(batch);
  switch (cfg.objective) {
    case Objective::ic: {
      const auto t = flat_instance_loss(batch, cfg);
      out.h_inst = t.value;
      out.grads.add(t.grads);
      break;
    }
    case Objective::hic: {
      const auto t = hierarchical_instance_loss(batch, *h, cfg);
      out.h_inst = t.value;
      out.grads.add(t.grads);
      break;
    }
    case Objective::pc:
    case Objective::hpc: {
      const auto t = hierarchical_prototype_loss(batch, *h, cfg);
      out.h_proto = t.value;
      out.grads.add(t.grads);
      break;
    }
    case Objective::full: {
      const auto ti = hierarchical_instance_loss(batch, *h, cfg);
      const auto tp = hierarchical_prototype_loss(batch, *h, cfg);
      out.h_inst = ti.value;
      out.h_proto = tp.value;
      out.grads.add(ti.grads).add(tp.grads);
      break;
    }
  }
  const auto q = quantization_loss(batch.codes1, batch.codes2);
  out.quant = q.value;
  out.grads.codes1 += cfg.lambda * q.grads.codes1;
  out.grads.codes2 += cfg.lambda * q.grads.codes2;
  out.total = out.h_inst + out.h_proto + cfg.lambda * out.quant;
  return out;
}

inline LossValue total_loss(const BatchEmbeddings& batch, const Hierarchy& h, const LossConfig& cfg) {
  return total_loss(batch, &h, cfg);
}

}  // namespace hhch
