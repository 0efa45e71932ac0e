#pragma once

// Shared helpers for the test suites and the acceptance runner.

#include "hhch/hhch.hpp"

#include <boost/multiprecision/cpp_bin_float.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace hhch::testing {

using HighPrecision = boost::multiprecision::cpp_bin_float_50;

inline Vector random_vector(std::mt19937_64& rng, Eigen::Index dim, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Vector v(dim);
  for (Eigen::Index k = 0; k < dim; ++k) v(k) = n(rng);
  return v;
}

// Uniform direction, norm uniform in [0, max_frac / sqrt c).
inline Vector random_ball_point(std::mt19937_64& rng, Eigen::Index dim, double c, double max_frac = 0.95) {
  Vector v = random_vector(rng, dim);
  while (v.norm() == 0.0) v = random_vector(rng, dim);
  std::uniform_real_distribution<double> u(0.0, max_frac);
  return v.normalized() * (u(rng) / std::sqrt(c));
}

inline double relative_error(double got, double want) {
  return std::abs(got - want) / std::max(1.0, std::abs(want));
}

// Adjusted Rand index from the pair-counting contingency table.
inline double adjusted_rand_index(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
  const auto choose2 = [](double n) { return n * (n - 1.0) / 2.0; };
  std::map<std::pair<std::size_t, std::size_t>, double> joint;
  std::map<std::size_t, double> ra, rb;
  for (std::size_t i = 0; i < a.size(); ++i) {
    joint[{a[i], b[i]}] += 1.0;
    ra[a[i]] += 1.0;
    rb[b[i]] += 1.0;
  }
  double sum_joint = 0.0, sum_a = 0.0, sum_b = 0.0;
  for (const auto& [_, n] : joint) sum_joint += choose2(n);
  for (const auto& [_, n] : ra) sum_a += choose2(n);
  for (const auto& [_, n] : rb) sum_b += choose2(n);
  const double total = choose2(static_cast<double>(a.size()));
  const double expected = sum_a * sum_b / total;
  const double max_index = 0.5 * (sum_a + sum_b);
  if (max_index == expected) return 1.0;
  return (sum_joint - expected) / (max_index - expected);
}

// Planted clusters around tangent-space centers mapped into the ball.
struct PlantedHierarchy {
  RowMatrix points;
  std::vector<std::size_t> sub;    // planted subcluster per point
  std::vector<std::size_t> super;  // planted supercluster per point
};

// supers x subs clusters of per_cluster points each. Superclusters sit at
// distance super_sep from the origin in tangent space, subclusters at
// sub_sep around them, points at `spread` around those.
inline PlantedHierarchy planted_hierarchy(std::uint64_t seed, std::size_t supers, std::size_t subs,
                                          std::size_t per_cluster, double c, Eigen::Index dim = 8,
                                          double super_sep = 2.0, double sub_sep = 0.25, double spread = 0.02) {
  std::mt19937_64 rng(seed);
  PlantedHierarchy out;
  out.points.resize(static_cast<Eigen::Index>(supers * subs * per_cluster), dim);
  Eigen::Index row = 0;
  for (std::size_t s = 0; s < supers; ++s) {
    // Superclusters along distinct axes keep their pairwise distances equal.
    Vector top = Vector::Zero(dim);
    top(static_cast<Eigen::Index>(s % static_cast<std::size_t>(dim))) = s < static_cast<std::size_t>(dim) ? super_sep : -super_sep;
    for (std::size_t k = 0; k < subs; ++k) {
      const Vector mid = top + random_vector(rng, dim).normalized() * sub_sep;
      for (std::size_t p = 0; p < per_cluster; ++p) {
        const Vector v = mid + random_vector(rng, dim, spread / std::sqrt(static_cast<double>(dim)));
        out.points.row(row++) = ball::exp_map0(v, c).transpose();
        out.sub.push_back(s * subs + k);
        out.super.push_back(s);
      }
    }
  }
  return out;
}

// Scratch directory removed on destruction.
struct TempDir {
  std::filesystem::path path;

  TempDir() {
    static std::uint64_t counter = 0;
    std::random_device rd;
    path = std::filesystem::temp_directory_path() /
           ("hhch-test-" + std::to_string(rd()) + "-" + std::to_string(counter++));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string file(const std::string& name) const { return (path / name).string(); }
};

inline std::string read_bytes(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

inline void write_bytes(const std::string& path, const std::string& bytes) {
  std::ofstream os(path, std::ios::binary);
  os << bytes;
}

}  // namespace hhch::testing
