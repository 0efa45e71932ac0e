#pragma once

// Poincaré-ball and Klein-model operations with curvature parameter c
// (sectional curvature -c^2). Every operation that produces a ball point
// rescales it to norm <= (1 - kBallEpsilon) / sqrt(c).

#include "hhch/core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace hhch {

inline constexpr double kBallEpsilon = 1e-5;
// Below this tangent-vector norm exp/log maps use their analytic limit.
inline constexpr double kTangentZero = 1e-12;

class Curvature {
 public:
  explicit Curvature(double c) : c_(c) {
    detail::require(std::isfinite(c) && c >= 0.0, "curvature must be finite and nonnegative");
  }

  double value() const noexcept { return c_; }
  double sqrt() const noexcept { return std::sqrt(c_); }
  bool positive() const noexcept { return c_ > 0.0; }

  friend bool operator==(Curvature a, Curvature b) noexcept { return a.c_ == b.c_; }

 private:
  double c_;
};

// Counts evaluations whose artanh argument had to be clamped below 1.
struct BoundaryDiagnostics {
  std::size_t clamped = 0;
};

using ConstVecRef = Eigen::Ref<const Vector>;

namespace ball {

inline double max_norm(double c) {
  return c > 0.0 ? (1.0 - kBallEpsilon) / std::sqrt(c) : std::numeric_limits<double>::infinity();
}

inline bool inside(const ConstVecRef& x, double c) { return c * x.squaredNorm() < 1.0; }

// Rescales x in place so that its norm does not exceed max_norm(c).
template <typename Derived>
void project(Eigen::MatrixBase<Derived>& x, double c) {
  const double limit = max_norm(c);
  const double norm = x.norm();
  if (norm > limit) x *= limit / norm;
}

inline Vector mobius_add(const ConstVecRef& x, const ConstVecRef& y, double c) {
  const double xy = x.dot(y);
  const double xx = x.squaredNorm();
  const double yy = y.squaredNorm();
  const double den = 1.0 + 2.0 * c * xy + c * c * xx * yy;
  Vector out = ((1.0 + 2.0 * c * xy + c * yy) * x + (1.0 - c * xx) * y) / den;
  project(out, c);
  return out;
}

inline double artanh_clamped(double arg, BoundaryDiagnostics* diag) {
  constexpr double kLimit = 1.0 - kBallEpsilon;
  if (arg > kLimit) {
    if (diag != nullptr) ++diag->clamped;
    arg = kLimit;
  }
  return std::atanh(arg);
}

// Literal form: (2/sqrt c) artanh(sqrt c ||(-x) (+) y||).
inline double distance(const ConstVecRef& x, const ConstVecRef& y, double c,
                       BoundaryDiagnostics* diag = nullptr) {
  detail::require(c > 0.0, "hyperbolic distance requires c > 0");
  const double xy = x.dot(y);
  const double xx = x.squaredNorm();
  const double yy = y.squaredNorm();
  // (-x) (+) y without the output clamp; the artanh clamp below guards the boundary.
  const double den = 1.0 - 2.0 * c * xy + c * c * xx * yy;
  const Vector w = (-(1.0 - 2.0 * c * xy + c * yy) * x + (1.0 - c * xx) * y) / den;
  const double sc = std::sqrt(c);
  return 2.0 / sc * artanh_clamped(sc * w.norm(), diag);
}

// Same distance from precomputed inner products. The numerator of (-x) (+) y
// is rewritten as (1 - c xx)(y - x) - c dd x so that ||.||^2 carries an exact
// factor dd = ||x - y||^2 and does not cancel for nearby points.
inline double distance_from_terms(double xx, double yy, double xy, double dd, double c,
                                  BoundaryDiagnostics* diag = nullptr) {
  const double bx = 1.0 - c * xx;
  const double den = 1.0 - 2.0 * c * xy + c * c * xx * yy;
  const double n2 = std::max(0.0, dd * (bx * bx - 2.0 * bx * c * (xy - xx) + c * c * dd * xx));
  const double sc = std::sqrt(c);
  return 2.0 / sc * artanh_clamped(sc * std::sqrt(n2) / den, diag);
}

// Gradient of the distance with respect to both arguments, expressed as
// grad_x = s * ((1 + c dd / ax) x - y), grad_y = s * ((1 + c dd / ay) y - x)
// with ax = 1 - c xx, ay = 1 - c yy. Derived from the equivalent form
// arcosh(1 + 2c dd / (ax ay)) / sqrt c. Returns s = 0 when the points coincide
// or the distance sits on the boundary clamp.
struct DistanceGradCoefficients {
  double scale = 0.0;
  double self_x = 1.0;
  double self_y = 1.0;
};

inline DistanceGradCoefficients distance_gradient_terms(double xx, double yy, double xy, double dd,
                                                        double c) {
  DistanceGradCoefficients out;
  if (dd <= 0.0) return out;
  const double ax = 1.0 - c * xx;
  const double ay = 1.0 - c * yy;
  const double zm1 = 2.0 * c * dd / (ax * ay);
  if (zm1 <= 0.0) return out;
  BoundaryDiagnostics diag;
  distance_from_terms(xx, yy, xy, dd, c, &diag);
  if (diag.clamped != 0) return out;
  const double root = std::sqrt(zm1 * (zm1 + 2.0));
  out.scale = 4.0 * std::sqrt(c) / (ax * ay * root);
  out.self_x = 1.0 + c * dd / ax;
  out.self_y = 1.0 + c * dd / ay;
  return out;
}

inline Vector exp_map0(const ConstVecRef& v, double c) {
  detail::require(c > 0.0, "exponential map requires c > 0");
  const double r = v.norm();
  if (r < kTangentZero) return Vector::Zero(v.size());
  const double a = std::sqrt(c) * r;
  Vector out = (std::tanh(a) / a) * v;
  project(out, c);
  return out;
}

inline Vector exp_map(const ConstVecRef& v, const ConstVecRef& base, double c) {
  detail::require(c > 0.0, "exponential map requires c > 0");
  detail::require(v.size() == base.size(), "exp_map: dimension mismatch");
  const double r = v.norm();
  if (r < kTangentZero) return base;
  const double lambda = 2.0 / (1.0 - c * base.squaredNorm());
  const double sc = std::sqrt(c);
  const Vector step = std::tanh(sc * lambda * r / 2.0) / (sc * r) * v;
  return mobius_add(base, step, c);
}

inline Vector log_map0(const ConstVecRef& y, double c) {
  detail::require(c > 0.0, "logarithmic map requires c > 0");
  const double r = y.norm();
  if (r < kTangentZero) return Vector::Zero(y.size());
  const double sc = std::sqrt(c);
  return (artanh_clamped(sc * r, nullptr) / (sc * r)) * y;
}

inline Vector log_map(const ConstVecRef& y, const ConstVecRef& base, double c) {
  detail::require(c > 0.0, "logarithmic map requires c > 0");
  detail::require(y.size() == base.size(), "log_map: dimension mismatch");
  const double xx = base.squaredNorm();
  const double xy = base.dot(y);
  const double yy = y.squaredNorm();
  const double den = 1.0 - 2.0 * c * xy + c * c * xx * yy;
  const Vector w = (-(1.0 - 2.0 * c * xy + c * yy) * base + (1.0 - c * xx) * y) / den;
  const double r = w.norm();
  if (r < kTangentZero) return Vector::Zero(y.size());
  const double lambda = 2.0 / (1.0 - c * xx);
  const double sc = std::sqrt(c);
  return (2.0 / (sc * lambda) * artanh_clamped(sc * r, nullptr) / r) * w;
}

inline Vector to_klein(const ConstVecRef& x, double c) {
  return (2.0 / (1.0 + c * x.squaredNorm())) * x;
}

inline Vector to_poincare(const ConstVecRef& x, double c) {
  Vector out = x / (1.0 + std::sqrt(std::max(0.0, 1.0 - c * x.squaredNorm())));
  project(out, c);
  return out;
}

inline double lorentz_factor(const ConstVecRef& klein, double c) {
  return 1.0 / std::sqrt(1.0 - c * klein.squaredNorm());
}

}  // namespace ball

class PoincarePoint {
 public:
  PoincarePoint(Vector coords, Curvature c) : coords_(std::move(coords)), c_(c) {
    detail::require(coords_.allFinite(), "PoincarePoint: non-finite coordinates");
    detail::require(ball::inside(coords_, c_.value()), "PoincarePoint: coordinates outside the ball");
  }

  // Builds a point from coordinates that may lie on or past the boundary by
  // rescaling them onto the clamp radius.
  static PoincarePoint projected(Vector coords, Curvature c) {
    ball::project(coords, c.value());
    return PoincarePoint(std::move(coords), c);
  }

  static PoincarePoint origin(Eigen::Index dim, Curvature c) {
    return PoincarePoint(Vector::Zero(dim), c);
  }

  const Vector& coords() const noexcept { return coords_; }
  Curvature curvature() const noexcept { return c_; }
  Eigen::Index dim() const noexcept { return coords_.size(); }

  PoincarePoint operator-() const { return PoincarePoint(-coords_, c_); }

 private:
  Vector coords_;
  Curvature c_;
};

class KleinPoint {
 public:
  KleinPoint(Vector coords, Curvature c) : coords_(std::move(coords)), c_(c) {
    detail::require(coords_.allFinite(), "KleinPoint: non-finite coordinates");
    detail::require(ball::inside(coords_, c_.value()), "KleinPoint: coordinates outside the ball");
  }

  const Vector& coords() const noexcept { return coords_; }
  Curvature curvature() const noexcept { return c_; }
  Eigen::Index dim() const noexcept { return coords_.size(); }

 private:
  Vector coords_;
  Curvature c_;
};

namespace detail {

template <typename A, typename B>
void require_same_space(const A& a, const B& b, const char* op) {
  require(a.dim() == b.dim(), std::string(op) + ": dimension mismatch");
  require(a.curvature() == b.curvature(), std::string(op) + ": curvature mismatch");
}

}  // namespace detail

inline PoincarePoint mobius_add(const PoincarePoint& x, const PoincarePoint& y) {
  detail::require_same_space(x, y, "mobius_add");
  return PoincarePoint(ball::mobius_add(x.coords(), y.coords(), x.curvature().value()), x.curvature());
}

inline double hyperbolic_distance(const PoincarePoint& x, const PoincarePoint& y,
                                  BoundaryDiagnostics* diag = nullptr) {
  detail::require_same_space(x, y, "hyperbolic_distance");
  return ball::distance(x.coords(), y.coords(), x.curvature().value(), diag);
}

inline PoincarePoint exp_map(const ConstVecRef& v, const PoincarePoint& base) {
  detail::require(v.size() == base.dim(), "exp_map: dimension mismatch");
  return PoincarePoint(ball::exp_map(v, base.coords(), base.curvature().value()), base.curvature());
}

inline PoincarePoint exp_map(const ConstVecRef& v, Curvature c) {
  return PoincarePoint(ball::exp_map0(v, c.value()), c);
}

inline Vector log_map(const PoincarePoint& y, const PoincarePoint& base) {
  detail::require_same_space(y, base, "log_map");
  return ball::log_map(y.coords(), base.coords(), y.curvature().value());
}

inline Vector log_map(const PoincarePoint& y) { return ball::log_map0(y.coords(), y.curvature().value()); }

inline KleinPoint poincare_to_klein(const PoincarePoint& x) {
  return KleinPoint(ball::to_klein(x.coords(), x.curvature().value()), x.curvature());
}

inline PoincarePoint klein_to_poincare(const KleinPoint& x) {
  return PoincarePoint(ball::to_poincare(x.coords(), x.curvature().value()), x.curvature());
}

// Lorentz-factor weighted average in Klein coordinates, mapped back to the
// Poincaré ball. Empty weights mean uniform weights.
inline PoincarePoint einstein_midpoint(std::span<const PoincarePoint> points,
                                       std::span<const double> weights = {}) {
  detail::require(!points.empty(), "einstein_midpoint: empty point list");
  detail::require(weights.empty() || weights.size() == points.size(),
                  "einstein_midpoint: weight count does not match point count");
  const Curvature c = points.front().curvature();
  Vector sum = Vector::Zero(points.front().dim());
  double total = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    detail::require_same_space(points[i], points.front(), "einstein_midpoint");
    const double w = weights.empty() ? 1.0 : weights[i];
    detail::require(std::isfinite(w) && w >= 0.0, "einstein_midpoint: weights must be nonnegative");
    const Vector k = ball::to_klein(points[i].coords(), c.value());
    const double g = w * ball::lorentz_factor(k, c.value());
    sum += g * k;
    total += g;
  }
  detail::require(total > 0.0, "einstein_midpoint: weights sum to zero");
  return PoincarePoint(ball::to_poincare(sum / total, c.value()), c);
}

}  // namespace hhch
