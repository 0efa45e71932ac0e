#pragma once

// Planted hierarchical Gaussian mixtures: top-level centers, child centers
// around each parent, and samples around each leaf center.

#include "hhch/core.hpp"
#include "hhch/retrieval.hpp"

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace hhch {

struct SynthConfig {
  std::vector<std::size_t> branching = {8, 4};  // children per node, top level first
  // Root-mean-square distance between sibling centers at each level.
  std::vector<double> separations = {12.0, 6.0};
  double spread = 1.0;  // RMS distance of a sample from its leaf center
  std::size_t dim = 64;
  std::size_t train_size = 2000;
  std::size_t query_size = 400;
  std::uint64_t seed = 0;

  std::size_t num_leaves() const {
    std::size_t n = 1;
    for (auto b : branching) n *= b;
    return n;
  }

  void validate() const {
    detail::require(!branching.empty(), "synth: branching must not be empty");
    detail::require(branching.size() == separations.size(), "synth: one separation per level is required");
    for (auto b : branching) detail::require(b >= 1, "synth: branching factors must be positive");
    for (auto s : separations) detail::require(std::isfinite(s) && s >= 0.0, "synth: separations must be nonnegative");
    detail::require(std::isfinite(spread) && spread >= 0.0, "synth: spread must be nonnegative");
    detail::require(dim >= 1, "synth: dim must be positive");
  }
};

struct SynthSplit {
  RowMatrix features;
  std::vector<LabelSet> labels;                 // leaf class id
  std::vector<std::vector<std::size_t>> paths;  // node index per level, top level first
};

struct SynthData {
  std::vector<RowMatrix> centers;  // per level, nodes in index order
  SynthSplit train;
  SynthSplit query;
};

namespace detail {

inline std::vector<std::size_t> leaf_path(const SynthConfig& cfg, std::size_t leaf) {
  std::vector<std::size_t> path(cfg.branching.size());
  std::size_t below = cfg.num_leaves();
  for (std::size_t l = 0; l < cfg.branching.size(); ++l) {
    below /= cfg.branching[l];
    path[l] = leaf / below;
  }
  return path;
}

}  // namespace detail

// Item i of each split belongs to leaf i mod (number of leaves).
inline SynthData make_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto d = static_cast<Eigen::Index>(cfg.dim);
  const double per_coord = 1.0 / std::sqrt(2.0 * static_cast<double>(cfg.dim));

  SynthData out;
  RowMatrix parents = RowMatrix::Zero(1, d);
  for (std::size_t l = 0; l < cfg.branching.size(); ++l) {
    const auto b = static_cast<Eigen::Index>(cfg.branching[l]);
    RowMatrix level(parents.rows() * b, d);
    for (Eigen::Index p = 0; p < parents.rows(); ++p) {
      for (Eigen::Index c = 0; c < b; ++c) {
        for (Eigen::Index k = 0; k < d; ++k) {
          level(p * b + c, k) = parents(p, k) + cfg.separations[l] * per_coord * normal(rng);
        }
      }
    }
    out.centers.push_back(level);
    parents = std::move(level);
  }

  const RowMatrix& leaves = out.centers.back();
  const double noise = cfg.spread / std::sqrt(static_cast<double>(cfg.dim));
  auto sample = [&](std::size_t n) {
    SynthSplit s;
    s.features.resize(static_cast<Eigen::Index>(n), d);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t leaf = i % cfg.num_leaves();
      for (Eigen::Index k = 0; k < d; ++k) {
        s.features(static_cast<Eigen::Index>(i), k) = leaves(static_cast<Eigen::Index>(leaf), k) + noise * normal(rng);
      }
      s.labels.push_back({static_cast<std::int64_t>(leaf)});
      s.paths.push_back(detail::leaf_path(cfg, leaf));
    }
    return s;
  };
  out.train = sample(cfg.train_size);
  out.query = sample(cfg.query_size);
  return out;
}

// RMS distance between sibling centers at `level` (0 = top).
inline double sibling_separation(const SynthData& data, const SynthConfig& cfg, std::size_t level) {
  const RowMatrix& c = data.centers.at(level);
  const auto b = static_cast<Eigen::Index>(cfg.branching[level]);
  double sum = 0.0;
  std::size_t pairs = 0;
  for (Eigen::Index p = 0; p < c.rows() / b; ++p) {
    for (Eigen::Index i = 0; i < b; ++i) {
      for (Eigen::Index j = i + 1; j < b; ++j) {
        sum += (c.row(p * b + i) - c.row(p * b + j)).squaredNorm();
        ++pairs;
      }
    }
  }
  return pairs ? std::sqrt(sum / static_cast<double>(pairs)) : 0.0;
}

}  // namespace hhch
