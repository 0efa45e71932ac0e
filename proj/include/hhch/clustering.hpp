#pragma once

// Hyperbolic K-Means (K-Means++ seeding, nearest-prototype assignment under
// the hyperbolic distance, Einstein-midpoint prototype update) and the
// bottom-up hierarchical variant that clusters each layer's prototypes into
// the next layer.

#include "hhch/core.hpp"
#include "hhch/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace hhch {

// Geometry the prototypes live in. Spherical is the cosine-distance ablation,
// where codes are clustered directly without the projection head.
enum class ClusterGeometry { hyperbolic, spherical };

struct ClusterConfig {
  std::vector<std::size_t> counts;  // M_1 > M_2 > ... > M_L >= 1
  std::size_t max_iters = 30;
  double tol = 1e-4;
  std::uint64_t seed = 0;

  void validate(std::size_t num_points) const {
    detail::require(!counts.empty(), "cluster counts must not be empty");
    detail::require(max_iters >= 1, "max_iters must be positive");
    detail::require(std::isfinite(tol) && tol >= 0.0, "tol must be nonnegative");
    detail::require(counts.back() >= 1, "cluster counts must be positive");
    for (std::size_t l = 1; l < counts.size(); ++l) {
      detail::require(counts[l] < counts[l - 1], "cluster counts must be strictly decreasing");
    }
    detail::require(counts.front() <= num_points,
                    "M_1 = " + std::to_string(counts.front()) + " exceeds the number of points (" +
                        std::to_string(num_points) + ")");
  }
};

struct IterationStats {
  double objective_before_assign = 0.0;  // old assignment, current prototypes
  double objective_after_assign = 0.0;   // new assignment, current prototypes
  double movement = 0.0;                 // max prototype displacement in the update
};

struct KMeansResult {
  RowMatrix prototypes;
  std::vector<std::size_t> assignment;
  std::vector<IterationStats> trace;
  bool converged = false;
};

struct Hierarchy {
  ClusterGeometry geometry = ClusterGeometry::hyperbolic;
  double curvature = 0.0;
  std::vector<RowMatrix> layers;                      // layer l-1 holds M_l prototypes
  std::vector<std::size_t> instance_parent;           // instance -> layer-1 prototype
  std::vector<std::vector<std::size_t>> proto_parent;  // [l-1]: layer-l prototype -> layer-(l+1)

  std::size_t num_layers() const noexcept { return layers.size(); }
  std::size_t num_instances() const noexcept { return instance_parent.size(); }
  std::size_t count(std::size_t layer) const { return layers.at(layer - 1).rows(); }

  // Prototype index of the instance's ancestor at `layer` (1-based).
  std::size_t ancestor(std::size_t instance, std::size_t layer) const {
    detail::require(layer >= 1 && layer <= num_layers(), "ancestor: layer out of range");
    detail::require(instance < num_instances(), "ancestor: instance out of range");
    std::size_t node = instance_parent[instance];
    for (std::size_t l = 1; l < layer; ++l) node = proto_parent[l - 1][node];
    return node;
  }

  // Checks the structural invariants; throws DataFormatError on violation.
  void validate() const {
    auto fail = [](const std::string& m) { throw DataFormatError("hierarchy: " + m); };
    if (layers.empty()) fail("no layers");
    if (proto_parent.size() + 1 != layers.size()) fail("parent map count does not match layers");
    for (std::size_t l = 0; l < layers.size(); ++l) {
      if (layers[l].rows() < 1) fail("empty layer");
      if (l > 0 && layers[l].rows() >= layers[l - 1].rows()) fail("layer sizes not strictly decreasing");
      if (layers[l].cols() != layers.front().cols()) fail("layer dimension mismatch");
    }
    for (auto p : instance_parent) {
      if (p >= static_cast<std::size_t>(layers.front().rows())) fail("instance parent out of range");
    }
    for (std::size_t l = 0; l < proto_parent.size(); ++l) {
      if (proto_parent[l].size() != static_cast<std::size_t>(layers[l].rows())) fail("parent map size");
      for (auto p : proto_parent[l]) {
        if (p >= static_cast<std::size_t>(layers[l + 1].rows())) fail("prototype parent out of range");
      }
    }
  }
};

namespace detail {

// Pairwise hyperbolic distances between point rows and prototype rows from a
// Gram matrix product.
struct HyperbolicSpace {
  double c;

  // Per-point terms reused by seeding and every Lloyd iteration: squared
  // norms, and Klein coordinates scaled by their Lorentz factors.
  struct Cache {
    Vector norms;
    RowMatrix weighted;
    Vector weights;
  };

  Cache prepare(const RowMatrix& points) const {
    Cache cache{points.rowwise().squaredNorm(), RowMatrix(points.rows(), points.cols()), Vector(points.rows())};
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
      const Vector k = ball::to_klein(points.row(i).transpose(), c);
      cache.weights(i) = ball::lorentz_factor(k, c);
      cache.weighted.row(i) = cache.weights(i) * k.transpose();
    }
    return cache;
  }

  double distance(const ConstVecRef& a, const ConstVecRef& b) const {
    return ball::distance_from_terms(a.squaredNorm(), b.squaredNorm(), a.dot(b),
                                     (a - b).squaredNorm(), c);
  }

  // Distances from every point to point s.
  Vector distances_to(const RowMatrix& points, const Cache& cache, Eigen::Index s) const {
    const Vector dots = points * points.row(s).transpose();
    Vector out(points.rows());
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
      const double dd = (points.row(i) - points.row(s)).squaredNorm();
      out(i) = ball::distance_from_terms(cache.norms(i), cache.norms(s), dots(i), dd, c);
    }
    return out;
  }

  RowMatrix distances(const RowMatrix& points, const Cache& cache, const RowMatrix& protos) const {
    const Vector cn = protos.rowwise().squaredNorm();
    const Matrix dots = points * protos.transpose();
    RowMatrix out(points.rows(), protos.rows());
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
      for (Eigen::Index j = 0; j < protos.rows(); ++j) {
        const double dd = std::max(0.0, cache.norms(i) + cn(j) - 2.0 * dots(i, j));
        out(i, j) = ball::distance_from_terms(cache.norms(i), cn(j), dots(i, j), dd, c);
      }
    }
    return out;
  }

  // Einstein midpoint of the members.
  Vector centroid(const RowMatrix& points, const Cache& cache, std::span<const std::size_t> members) const {
    Vector sum = Vector::Zero(points.cols());
    double total = 0.0;
    for (auto m : members) {
      sum += cache.weighted.row(static_cast<Eigen::Index>(m)).transpose();
      total += cache.weights(static_cast<Eigen::Index>(m));
    }
    return ball::to_poincare(sum / total, c);
  }
};

// Cosine distance (K/2)(1 - cos) with unit-norm mean prototypes.
struct SphericalSpace {
  struct Cache {
    Vector norms;
    RowMatrix unit;
  };

  Cache prepare(const RowMatrix& points) const {
    Cache cache{points.rowwise().norm(), RowMatrix()};
    cache.unit = cache.norms.cwiseInverse().asDiagonal() * points;
    return cache;
  }

  static double distance(const ConstVecRef& a, const ConstVecRef& b) {
    const double cosine = a.dot(b) / (a.norm() * b.norm());
    return 0.5 * static_cast<double>(a.size()) * (1.0 - std::clamp(cosine, -1.0, 1.0));
  }

  Vector distances_to(const RowMatrix& points, const Cache& cache, Eigen::Index s) const {
    const Vector cosine = cache.unit * cache.unit.row(s).transpose();
    const double half_k = 0.5 * static_cast<double>(points.cols());
    return cosine.unaryExpr([half_k](double v) { return half_k * (1.0 - std::clamp(v, -1.0, 1.0)); });
  }

  RowMatrix distances(const RowMatrix& points, const Cache& cache, const RowMatrix& protos) const {
    const Vector cn = protos.rowwise().norm();
    const Matrix dots = points * protos.transpose();
    const double half_k = 0.5 * static_cast<double>(points.cols());
    RowMatrix out(points.rows(), protos.rows());
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
      for (Eigen::Index j = 0; j < protos.rows(); ++j) {
        out(i, j) = half_k * (1.0 - std::clamp(dots(i, j) / (cache.norms(i) * cn(j)), -1.0, 1.0));
      }
    }
    return out;
  }

  Vector centroid(const RowMatrix&, const Cache& cache, std::span<const std::size_t> members) const {
    Vector sum = Vector::Zero(cache.unit.cols());
    for (auto m : members) sum += cache.unit.row(static_cast<Eigen::Index>(m)).transpose();
    const double n = sum.norm();
    if (n == 0.0) return cache.unit.row(static_cast<Eigen::Index>(members.front())).transpose();
    return sum / n;
  }
};

inline std::size_t sample_weighted(std::span<const double> weights, double total, std::mt19937_64& rng) {
  const double u = std::uniform_real_distribution<double>(0.0, total)(rng);
  double acc = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] <= 0.0) continue;
    acc += weights[i];
    last_positive = i;
    if (u < acc) return i;
  }
  return last_positive;
}

template <typename Space>
std::vector<std::size_t> kmeanspp_indices(const RowMatrix& points, std::size_t k, const Space& space,
                                          const typename Space::Cache& cache, std::mt19937_64& rng) {
  const auto n = static_cast<std::size_t>(points.rows());
  detail::require(k >= 1 && k <= n, "kmeans++: k must be in [1, number of points]");
  std::vector<std::size_t> chosen;
  chosen.reserve(k);
  chosen.push_back(std::uniform_int_distribution<std::size_t>(0, n - 1)(rng));
  // Greedy variant: draw several D^2-weighted candidates per step and keep
  // the one that lowers the potential most.
  const std::size_t trials = 2 + static_cast<std::size_t>(std::log(static_cast<double>(k)));
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  std::vector<double> trial(n), best_trial(n);
  auto squared_to = [&](std::size_t s, std::vector<double>& out) {
    const Vector d = space.distances_to(points, cache, static_cast<Eigen::Index>(s));
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      out[i] = std::min(nearest[i], d(static_cast<Eigen::Index>(i)) * d(static_cast<Eigen::Index>(i)));
      total += out[i];
    }
    return total;
  };
  double total = squared_to(chosen.front(), nearest);
  while (chosen.size() < k) {
    if (!(total > 0.0 && std::isfinite(total))) {
      chosen.push_back(std::uniform_int_distribution<std::size_t>(0, n - 1)(rng));
      total = squared_to(chosen.back(), nearest);
      continue;
    }
    std::size_t best = n;
    double best_total = std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < trials; ++t) {
      const std::size_t cand = sample_weighted(nearest, total, rng);
      const double cand_total = squared_to(cand, trial);
      if (cand_total < best_total) {
        best = cand;
        best_total = cand_total;
        best_trial.swap(trial);
      }
    }
    chosen.push_back(best);
    nearest.swap(best_trial);
    total = best_total;
  }
  return chosen;
}

// Moves points into empty clusters: each empty cluster takes the point of the
// largest cluster that is farthest from its prototype.
inline void fill_empty_clusters(std::vector<std::size_t>& assignment, const RowMatrix& dist,
                                std::size_t k) {
  std::vector<std::size_t> sizes(k, 0);
  for (auto a : assignment) ++sizes[a];
  for (std::size_t j = 0; j < k; ++j) {
    if (sizes[j] != 0) continue;
    const auto largest = static_cast<std::size_t>(
        std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
    std::size_t victim = assignment.size();
    double far = -1.0;
    for (std::size_t i = 0; i < assignment.size(); ++i) {
      if (assignment[i] == largest && dist(i, largest) > far) {
        far = dist(i, largest);
        victim = i;
      }
    }
    assignment[victim] = j;
    --sizes[largest];
    ++sizes[j];
  }
}

template <typename Space>
KMeansResult lloyd(const RowMatrix& points, std::size_t k, const Space& space, std::size_t max_iters,
                   double tol, std::uint64_t seed) {
  const auto n = static_cast<std::size_t>(points.rows());
  detail::require(k >= 1 && k <= n, "kmeans: k = " + std::to_string(k) +
                                        " must be in [1, number of points = " + std::to_string(n) + "]");
  std::mt19937_64 rng(seed);
  const auto cache = space.prepare(points);
  const auto seeds = kmeanspp_indices(points, k, space, cache, rng);

  KMeansResult result;
  result.prototypes.resize(static_cast<Eigen::Index>(k), points.cols());
  for (std::size_t j = 0; j < k; ++j) result.prototypes.row(j) = points.row(seeds[j]);
  result.assignment.assign(n, 0);

  std::vector<std::vector<std::size_t>> members(k);
  for (std::size_t it = 0; it < max_iters; ++it) {
    const RowMatrix dist = space.distances(points, cache, result.prototypes);
    IterationStats stats;
    for (std::size_t i = 0; i < n; ++i) {
      if (it > 0) stats.objective_before_assign += dist(i, result.assignment[i]);
      std::size_t best = 0;
      for (std::size_t j = 1; j < k; ++j) {
        if (dist(i, j) < dist(i, best)) best = j;
      }
      result.assignment[i] = best;
      stats.objective_after_assign += dist(i, best);
    }
    if (it == 0) stats.objective_before_assign = stats.objective_after_assign;
    fill_empty_clusters(result.assignment, dist, k);

    for (auto& m : members) m.clear();
    for (std::size_t i = 0; i < n; ++i) members[result.assignment[i]].push_back(i);
    for (std::size_t j = 0; j < k; ++j) {
      const Vector updated = space.centroid(points, cache, members[j]);
      stats.movement = std::max(stats.movement, space.distance(result.prototypes.row(j).transpose(), updated));
      result.prototypes.row(j) = updated.transpose();
    }
    result.trace.push_back(stats);
    if (stats.movement < tol) {
      result.converged = true;
      break;
    }
  }
  return result;
}

inline RowMatrix stack_points(std::span<const PoincarePoint> points) {
  detail::require(!points.empty(), "empty point list");
  RowMatrix out(static_cast<Eigen::Index>(points.size()), points.front().dim());
  for (std::size_t i = 0; i < points.size(); ++i) {
    detail::require_same_space(points[i], points.front(), "kmeans");
    out.row(static_cast<Eigen::Index>(i)) = points[i].coords().transpose();
  }
  return out;
}

inline void require_in_ball(const RowMatrix& points, double c) {
  detail::require(c > 0.0, "hyperbolic clustering requires c > 0");
  detail::require(points.allFinite(), "points must be finite");
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    detail::require(c * points.row(i).squaredNorm() < 1.0, "point " + std::to_string(i) + " lies outside the ball");
  }
}

inline void require_nonzero_rows(const RowMatrix& points) {
  detail::require(points.allFinite(), "points must be finite");
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    detail::require(points.row(i).norm() > 0.0, "cosine clustering: zero-norm row " + std::to_string(i));
  }
}

template <typename Space>
Hierarchy build_hierarchy(const RowMatrix& points, const ClusterConfig& cfg, const Space& space) {
  cfg.validate(static_cast<std::size_t>(points.rows()));
  Hierarchy h;
  KMeansResult bottom = lloyd(points, cfg.counts.front(), space, cfg.max_iters, cfg.tol, cfg.seed);
  h.instance_parent = std::move(bottom.assignment);
  h.layers.push_back(std::move(bottom.prototypes));
  for (std::size_t l = 1; l < cfg.counts.size(); ++l) {
    KMeansResult upper = lloyd(h.layers.back(), cfg.counts[l], space, cfg.max_iters, cfg.tol, mix_seed(cfg.seed, l));
    h.proto_parent.push_back(std::move(upper.assignment));
    h.layers.push_back(std::move(upper.prototypes));
  }
  return h;
}

}  // namespace detail

inline std::vector<std::size_t> kmeanspp_seed(const RowMatrix& points, std::size_t k, Curvature c,
                                              std::mt19937_64& rng) {
  detail::require_in_ball(points, c.value());
  const detail::HyperbolicSpace space{c.value()};
  return detail::kmeanspp_indices(points, k, space, space.prepare(points), rng);
}

inline std::vector<std::size_t> kmeanspp_seed(std::span<const PoincarePoint> points, std::size_t k,
                                              std::mt19937_64& rng) {
  const RowMatrix stacked = detail::stack_points(points);
  return kmeanspp_seed(stacked, k, points.front().curvature(), rng);
}

inline KMeansResult hyperbolic_kmeans(const RowMatrix& points, std::size_t k, Curvature c,
                                      const ClusterConfig& cfg) {
  detail::require_in_ball(points, c.value());
  detail::require(cfg.max_iters >= 1, "max_iters must be positive");
  return detail::lloyd(points, k, detail::HyperbolicSpace{c.value()}, cfg.max_iters, cfg.tol, cfg.seed);
}

inline KMeansResult hyperbolic_kmeans(std::span<const PoincarePoint> points, std::size_t k,
                                      const ClusterConfig& cfg) {
  const RowMatrix stacked = detail::stack_points(points);
  return hyperbolic_kmeans(stacked, k, points.front().curvature(), cfg);
}

inline Hierarchy hierarchical_kmeans(const RowMatrix& embeddings, Curvature c, const ClusterConfig& cfg) {
  detail::require_in_ball(embeddings, c.value());
  Hierarchy h = detail::build_hierarchy(embeddings, cfg, detail::HyperbolicSpace{c.value()});
  h.geometry = ClusterGeometry::hyperbolic;
  h.curvature = c.value();
  return h;
}

inline Hierarchy hierarchical_kmeans(std::span<const PoincarePoint> embeddings, const ClusterConfig& cfg) {
  const RowMatrix stacked = detail::stack_points(embeddings);
  return hierarchical_kmeans(stacked, embeddings.front().curvature(), cfg);
}

// Cosine-distance counterpart used when the projection head is disabled.
inline Hierarchy hierarchical_spherical_kmeans(const RowMatrix& codes, const ClusterConfig& cfg) {
  detail::require_nonzero_rows(codes);
  Hierarchy h = detail::build_hierarchy(codes, cfg, detail::SphericalSpace{});
  h.geometry = ClusterGeometry::spherical;
  h.curvature = 0.0;
  return h;
}

}  // namespace hhch
