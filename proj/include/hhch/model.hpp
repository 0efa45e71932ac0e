#pragma once

// Trainable hash function over precomputed features:
//   codes      = tanh(W2 relu(W1 x + b1) + b2)           (hash layer)
//   embeddings = exp_0(Wp codes + bp)                    (projection head)
// with exact reverse-mode gradients and bias-corrected Adam.

#include "hhch/core.hpp"
#include "hhch/geometry.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace hhch {

struct ModelShape {
  std::size_t feature_dim = 0;
  std::size_t hidden_dim = 1024;
  std::size_t code_bits = 64;
  std::size_t embed_dim = 128;

  void validate() const {
    detail::require(feature_dim >= 1 && hidden_dim >= 1 && code_bits >= 1 && embed_dim >= 1,
                    "model dimensions must be positive");
  }

  friend bool operator==(const ModelShape&, const ModelShape&) = default;
};

// One set of tensors with the model's parameter layout. Used for the
// parameters themselves, their gradients, and the Adam moments.
struct Parameters {
  Matrix w1;  // hidden x feature
  Vector b1;
  Matrix w2;  // code x hidden
  Vector b2;
  Matrix wp;  // embed x code
  Vector bp;

  static Parameters zeros(const ModelShape& s) {
    Parameters p;
    const auto f = static_cast<Eigen::Index>(s.feature_dim);
    const auto h = static_cast<Eigen::Index>(s.hidden_dim);
    const auto k = static_cast<Eigen::Index>(s.code_bits);
    const auto e = static_cast<Eigen::Index>(s.embed_dim);
    p.w1 = Matrix::Zero(h, f);
    p.b1 = Vector::Zero(h);
    p.w2 = Matrix::Zero(k, h);
    p.b2 = Vector::Zero(k);
    p.wp = Matrix::Zero(e, k);
    p.bp = Vector::Zero(e);
    return p;
  }

  // Blocks in declared (serialization) order.
  std::array<Eigen::Map<Vector>, 6> blocks() {
    return {flat(w1), flat(b1), flat(w2), flat(b2), flat(wp), flat(bp)};
  }
  std::array<Eigen::Map<const Vector>, 6> blocks() const {
    return {flat(w1), flat(b1), flat(w2), flat(b2), flat(wp), flat(bp)};
  }

  std::size_t size() const {
    std::size_t n = 0;
    for (const auto& b : blocks()) n += static_cast<std::size_t>(b.size());
    return n;
  }

  bool operator==(const Parameters& o) const {
    return w1 == o.w1 && b1 == o.b1 && w2 == o.w2 && b2 == o.b2 && wp == o.wp && bp == o.bp;
  }

 private:
  template <typename T>
  static Eigen::Map<Vector> flat(T& m) { return {m.data(), m.size()}; }
  template <typename T>
  static Eigen::Map<const Vector> flat(const T& m) { return {m.data(), m.size()}; }
};

struct HashModel {
  ModelShape shape;
  double curvature = 0.1;
  Parameters params;

  // Glorot-uniform weights, zero biases.
  static HashModel initialize(const ModelShape& shape, Curvature c, std::uint64_t seed) {
    shape.validate();
    detail::require(c.positive(), "model curvature must be positive");
    HashModel m{shape, c.value(), Parameters::zeros(shape)};
    std::mt19937_64 rng(seed);
    auto fill = [&rng](Matrix& w) {
      const double bound = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
      std::uniform_real_distribution<double> u(-bound, bound);
      for (Eigen::Index j = 0; j < w.cols(); ++j) {
        for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = u(rng);
      }
    };
    fill(m.params.w1);
    fill(m.params.w2);
    fill(m.params.wp);
    return m;
  }
};

// Intermediates of a forward pass, consumed by backward().
struct Tape {
  RowMatrix input;     // B x F
  RowMatrix hidden;    // B x H, pre-activation
  RowMatrix codes;     // B x K, tanh output
  RowMatrix tangent;   // B x E, Wp codes + bp
  RowMatrix embedding; // B x E, exp_0(tangent)
};

struct ForwardResult {
  RowMatrix codes;
  RowMatrix embeddings;
  Tape tape;
};

namespace detail {

inline void require_input(const HashModel& m, const RowMatrix& x) {
  require(x.cols() == static_cast<Eigen::Index>(m.shape.feature_dim),
          "input width " + std::to_string(x.cols()) + " does not match feature_dim " +
              std::to_string(m.shape.feature_dim));
  require(x.allFinite(), "forward: non-finite input");
}

inline RowMatrix hidden_preactivation(const HashModel& m, const RowMatrix& x) {
  RowMatrix h = x * m.params.w1.transpose();
  h.rowwise() += m.params.b1.transpose();
  return h;
}

inline RowMatrix codes_from_hidden(const HashModel& m, const RowMatrix& hidden) {
  RowMatrix c = hidden.cwiseMax(0.0) * m.params.w2.transpose();
  c.rowwise() += m.params.b2.transpose();
  return c.array().tanh().matrix();
}

// exp_0 scale s(r) = tanh(sqrt(c) r) / (sqrt(c) r), clamped so that s r does
// not exceed the ball limit, and its derivative ds/dr.
struct ExpScale {
  double s;
  double ds_dr;
};

inline ExpScale exp_scale(double r, double c) {
  const double sc = std::sqrt(c);
  const double a = sc * r;
  const double limit = ball::max_norm(c);
  if (a < 1e-4) {
    // tanh(a)/a = 1 - a^2/3 + 2a^4/15
    const double a2 = a * a;
    return {1.0 - a2 / 3.0 + 2.0 * a2 * a2 / 15.0, sc * (-2.0 * a / 3.0 + 8.0 * a2 * a / 15.0)};
  }
  const double t = std::tanh(a);
  if (t / sc > limit) return {limit / r, -limit / (r * r)};
  const double sech2 = 1.0 - t * t;
  return {t / a, sc * (a * sech2 - t) / (a * a)};
}

}  // namespace detail

// Hash layer only, as used at test time.
inline RowMatrix encode(const HashModel& m, const RowMatrix& x) {
  detail::require_input(m, x);
  return detail::codes_from_hidden(m, detail::hidden_preactivation(m, x));
}

inline RowMatrix project_codes(const HashModel& m, const RowMatrix& codes, RowMatrix* tangent_out = nullptr) {
  RowMatrix tangent = codes * m.params.wp.transpose();
  tangent.rowwise() += m.params.bp.transpose();
  RowMatrix z(tangent.rows(), tangent.cols());
  for (Eigen::Index i = 0; i < tangent.rows(); ++i) {
    const double r = tangent.row(i).norm();
    z.row(i) = r < kTangentZero ? RowMatrix::Zero(1, tangent.cols()) : RowMatrix(detail::exp_scale(r, m.curvature).s * tangent.row(i));
  }
  if (tangent_out != nullptr) *tangent_out = std::move(tangent);
  return z;
}

inline ForwardResult forward(const HashModel& m, const RowMatrix& x) {
  detail::require_input(m, x);
  ForwardResult out;
  out.tape.input = x;
  out.tape.hidden = detail::hidden_preactivation(m, x);
  out.tape.codes = detail::codes_from_hidden(m, out.tape.hidden);
  out.tape.embedding = project_codes(m, out.tape.codes, &out.tape.tangent);
  out.codes = out.tape.codes;
  out.embeddings = out.tape.embedding;
  return out;
}

// Parameter gradients given dL/dcodes and dL/dembeddings (either may be empty
// for "no gradient").
inline Parameters backward(const HashModel& m, const Tape& tape, const RowMatrix& d_codes, const RowMatrix& d_embed) {
  const auto B = tape.input.rows();
  Parameters g = Parameters::zeros(m.shape);

  RowMatrix dc = d_codes.size() == 0 ? RowMatrix::Zero(B, tape.codes.cols()) : d_codes;
  detail::require(dc.rows() == B && dc.cols() == tape.codes.cols(), "backward: code gradient shape");
  if (d_embed.size() != 0) {
    detail::require(d_embed.rows() == B && d_embed.cols() == tape.tangent.cols(), "backward: embedding gradient shape");
    RowMatrix du(B, tape.tangent.cols());
    for (Eigen::Index i = 0; i < B; ++i) {
      const auto u = tape.tangent.row(i);
      const auto gz = d_embed.row(i);
      const double r = u.norm();
      if (r < kTangentZero) {
        du.row(i) = gz;  // exp_0 has identity Jacobian at the origin
        continue;
      }
      const auto sc = detail::exp_scale(r, m.curvature);
      du.row(i) = sc.s * gz + (sc.ds_dr / r * u.dot(gz)) * u;
    }
    g.wp = du.transpose() * tape.codes;
    g.bp = du.colwise().sum().transpose();
    dc += du * m.params.wp;
  }
  const RowMatrix dpre = dc.array() * (1.0 - tape.codes.array().square());
  const RowMatrix act = tape.hidden.cwiseMax(0.0);
  g.w2 = dpre.transpose() * act;
  g.b2 = dpre.colwise().sum().transpose();
  const RowMatrix dact = dpre * m.params.w2;
  // Mask multiply rather than select(): same values, no per-element branch.
  const RowMatrix dhid = (tape.hidden.array() > 0.0).cast<double>() * dact.array();
  g.w1 = dhid.transpose() * tape.input;
  g.b1 = dhid.colwise().sum().transpose();
  return g;
}

struct OptimizerState {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  Parameters m;
  Parameters v;

  static OptimizerState for_model(const HashModel& model, double lr) {
    detail::require(std::isfinite(lr) && lr >= 0.0, "learning rate must be nonnegative");
    OptimizerState s;
    s.lr = lr;
    s.m = Parameters::zeros(model.shape);
    s.v = Parameters::zeros(model.shape);
    return s;
  }
};

inline void adam_step(HashModel& model, const Parameters& grads, OptimizerState& state) {
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  auto params = model.params.blocks();
  auto m = state.m.blocks();
  auto v = state.v.blocks();
  const auto g = grads.blocks();
  for (std::size_t b = 0; b < params.size(); ++b) {
    detail::require(g[b].size() == params[b].size(), "adam_step: gradient shape mismatch");
    m[b] = state.beta1 * m[b] + (1.0 - state.beta1) * g[b];
    v[b] = state.beta2 * v[b] + (1.0 - state.beta2) * g[b].cwiseProduct(g[b]);
    params[b].array() -= state.lr * (m[b].array() / c1) / ((v[b].array() / c2).sqrt() + state.eps);
  }
}

// ---------------------------------------------------------------------------
// Model file: "HHCHMODL" magic, u32 version, u32 block count, u64 shape
// fields, f64 curvature, then each parameter block as u64 length followed by
// little-endian f64 values, in declared order.

inline constexpr char kModelMagic[8] = {'H', 'H', 'C', 'H', 'M', 'O', 'D', 'L'};
inline constexpr std::uint32_t kModelVersion = 1;

namespace detail {

template <typename T>
void write_le(std::ostream& os, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  std::array<char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  os.write(bytes.data(), sizeof(T));
}

template <typename T>
T read_le(std::istream& is, const std::string& what) {
  std::array<char, sizeof(T)> bytes;
  if (!is.read(bytes.data(), sizeof(T))) throw DataFormatError("truncated " + what);
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  T value;
  std::memcpy(&value, bytes.data(), sizeof(T));
  return value;
}

}  // namespace detail

inline void save_model(const HashModel& model, std::ostream& os) {
  os.write(kModelMagic, sizeof(kModelMagic));
  detail::write_le<std::uint32_t>(os, kModelVersion);
  detail::write_le<std::uint32_t>(os, 6);
  detail::write_le<std::uint64_t>(os, model.shape.feature_dim);
  detail::write_le<std::uint64_t>(os, model.shape.hidden_dim);
  detail::write_le<std::uint64_t>(os, model.shape.code_bits);
  detail::write_le<std::uint64_t>(os, model.shape.embed_dim);
  detail::write_le<double>(os, model.curvature);
  for (const auto& block : model.params.blocks()) {
    detail::write_le<std::uint64_t>(os, static_cast<std::uint64_t>(block.size()));
    for (Eigen::Index i = 0; i < block.size(); ++i) detail::write_le<double>(os, block(i));
  }
}

inline HashModel load_model(std::istream& is) {
  char magic[8];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kModelMagic, sizeof(magic)) != 0) {
    throw DataFormatError("model file: bad magic");
  }
  const auto version = detail::read_le<std::uint32_t>(is, "model version");
  if (version != kModelVersion) {
    throw DataFormatError("model file: unsupported version " + std::to_string(version));
  }
  if (detail::read_le<std::uint32_t>(is, "block count") != 6) throw DataFormatError("model file: bad block count");
  ModelShape shape;
  shape.feature_dim = detail::read_le<std::uint64_t>(is, "shape");
  shape.hidden_dim = detail::read_le<std::uint64_t>(is, "shape");
  shape.code_bits = detail::read_le<std::uint64_t>(is, "shape");
  shape.embed_dim = detail::read_le<std::uint64_t>(is, "shape");
  const double c = detail::read_le<double>(is, "curvature");
  constexpr std::uint64_t kMaxDim = 1u << 24;
  if (shape.feature_dim == 0 || shape.hidden_dim == 0 || shape.code_bits == 0 || shape.embed_dim == 0 ||
      shape.feature_dim > kMaxDim || shape.hidden_dim > kMaxDim || shape.code_bits > kMaxDim ||
      shape.embed_dim > kMaxDim) {
    throw DataFormatError("model file: invalid shape header");
  }
  const std::uint64_t count = shape.hidden_dim * (shape.feature_dim + 1) + shape.code_bits * (shape.hidden_dim + 1) +
                              shape.embed_dim * (shape.code_bits + 1);
  if (count > (std::uint64_t{1} << 31)) throw DataFormatError("model file: implausible parameter count");
  if (!(std::isfinite(c) && c > 0.0)) throw DataFormatError("model file: invalid curvature");
  HashModel model{shape, c, Parameters::zeros(shape)};
  for (auto& block : model.params.blocks()) {
    const auto len = detail::read_le<std::uint64_t>(is, "block length");
    if (len != static_cast<std::uint64_t>(block.size())) {
      throw DataFormatError("model file: block length " + std::to_string(len) + " does not match shape");
    }
    for (Eigen::Index i = 0; i < block.size(); ++i) block(i) = detail::read_le<double>(is, "parameter block");
  }
  if (is.peek() != std::char_traits<char>::eof()) throw DataFormatError("model file: trailing bytes");
  return model;
}

inline void save_model(const HashModel& model, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataFormatError("cannot open " + path + " for writing");
  save_model(model, os);
  if (!os) throw DataFormatError("failed writing " + path);
}

inline HashModel load_model(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataFormatError("cannot open " + path);
  return load_model(is);
}

}  // namespace hhch
