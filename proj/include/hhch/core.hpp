#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace hhch {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
// Point sets, batches and code matrices keep one item per row.
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Caller passed arguments that violate a precondition (shape, range, config).
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A file on disk is malformed: bad magic, wrong length, non-finite values.
class DataFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Training produced a non-finite value.
class NumericalError : public std::runtime_error {
 public:
  NumericalError(const std::string& what, std::size_t batch_index)
      : std::runtime_error(what), batch_index_(batch_index) {}

  std::size_t batch_index() const noexcept { return batch_index_; }

 private:
  std::size_t batch_index_;
};

namespace detail {

inline void require(bool condition, const std::string& message) {
  if (!condition) throw UsageError(message);
}

// Derives an independent stream seed from a run seed and a salt (splitmix64 finalizer).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace detail

}  // namespace hhch
