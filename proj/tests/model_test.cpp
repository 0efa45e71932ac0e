#include "model_gradcheck.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace hhch;

namespace {

HashModel hand_model() {
  HashModel m{ModelShape{3, 2, 2, 2}, 1.0, Parameters::zeros(ModelShape{3, 2, 2, 2})};
  m.params.w1 << 0.2, -0.1, 0.4, -0.3, 0.5, 0.1;
  m.params.b1 << 0.05, -0.02;
  m.params.w2 << 0.7, -0.4, 0.3, 0.9;
  m.params.b2 << 0.1, -0.2;
  m.params.wp << 0.6, -0.5, 0.2, 0.8;
  m.params.bp << 0.01, 0.03;
  return m;
}

// Scalar loss sum(a .* codes) + sum(b .* embeddings) used to probe backward.
struct Probe {
  RowMatrix a, b;

  double value(const HashModel& m, const RowMatrix& x) const {
    const auto f = forward(m, x);
    return (a.array() * f.codes.array()).sum() + (b.size() ? (b.array() * f.embeddings.array()).sum() : 0.0);
  }
};

double max_backward_error(const HashModel& model, const RowMatrix& x, const Probe& probe, double step = 1e-4) {
  const auto f = forward(model, x);
  const Parameters g = backward(model, f.tape, probe.a, probe.b);
  HashModel m = model;
  auto blocks = m.params.blocks();
  const auto grads = g.blocks();
  double worst = 0.0;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    for (Eigen::Index k = 0; k < blocks[b].size(); ++k) {
      const double keep = blocks[b](k);
      blocks[b](k) = keep + step;
      const double up = probe.value(m, x);
      blocks[b](k) = keep - step;
      const double down = probe.value(m, x);
      blocks[b](k) = keep;
      const double fd = (up - down) / (2 * step);
      worst = std::max(worst, std::abs(grads[b](k) - fd) / std::max({std::abs(fd), std::abs(grads[b](k)), 1e-6}));
    }
  }
  return worst;
}

}  // namespace

TEST(Forward, ZeroParametersGiveZeroOutputs) {
  const HashModel m{ModelShape{4, 3, 2, 5}, 0.1, Parameters::zeros(ModelShape{4, 3, 2, 5})};
  const RowMatrix x = RowMatrix::Random(6, 4);
  const auto f = forward(m, x);
  EXPECT_EQ(f.codes, RowMatrix::Zero(6, 2));
  EXPECT_EQ(f.embeddings, RowMatrix::Zero(6, 5));
}

TEST(Forward, OutputsStayInRange) {
  const auto m = HashModel::initialize(ModelShape{8, 16, 6, 4}, Curvature(1.0), 3);
  std::mt19937_64 rng(1);
  RowMatrix x(1000, 8);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = std::normal_distribution<double>(0.0, 10.0)(rng);
  const auto f = forward(m, x);
  EXPECT_LT(f.codes.cwiseAbs().maxCoeff(), 1.0 + 1e-15);
  for (Eigen::Index i = 0; i < f.embeddings.rows(); ++i) EXPECT_LT(f.embeddings.row(i).squaredNorm(), 1.0);
}

TEST(Forward, MatchesScalarStepByStepOracle) {
  const auto m = hand_model();
  RowMatrix x(1, 3);
  x << 1.5, -0.7, 0.3;
  double hid[2], code[2], tan[2];
  for (int j = 0; j < 2; ++j) {
    double s = m.params.b1(j);
    for (int k = 0; k < 3; ++k) s += m.params.w1(j, k) * x(0, k);
    hid[j] = s > 0 ? s : 0;
  }
  for (int j = 0; j < 2; ++j) {
    double s = m.params.b2(j);
    for (int k = 0; k < 2; ++k) s += m.params.w2(j, k) * hid[k];
    code[j] = std::tanh(s);
  }
  for (int j = 0; j < 2; ++j) {
    double s = m.params.bp(j);
    for (int k = 0; k < 2; ++k) s += m.params.wp(j, k) * code[k];
    tan[j] = s;
  }
  const double r = std::sqrt(tan[0] * tan[0] + tan[1] * tan[1]);
  const auto f = forward(m, x);
  for (int j = 0; j < 2; ++j) {
    EXPECT_NEAR(f.codes(0, j), code[j], 1e-12);
    EXPECT_NEAR(f.embeddings(0, j), std::tanh(r) * tan[j] / r, 1e-12);
  }
  EXPECT_EQ(encode(m, x), f.codes);
}

TEST(Forward, RejectsBadInput) {
  const auto m = hand_model();
  EXPECT_THROW(forward(m, RowMatrix::Zero(2, 4)), UsageError);
  RowMatrix x = RowMatrix::Zero(1, 3);
  x(0, 1) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(forward(m, x), UsageError);
}

TEST(Backward, ZeroUpstreamGivesZeroGradients) {
  const auto m = hand_model();
  const RowMatrix x = RowMatrix::Random(3, 3);
  const auto f = forward(m, x);
  const auto g = backward(m, f.tape, RowMatrix::Zero(3, 2), RowMatrix::Zero(3, 2));
  EXPECT_EQ(g, Parameters::zeros(m.shape));
}

TEST(Backward, MatchesFiniteDifferencesOnHandNet) {
  std::mt19937_64 rng(2);
  const auto m = hand_model();
  for (int t = 0; t < 10; ++t) {
    RowMatrix x(4, 3);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = std::normal_distribution<double>(0.0, 1.0)(rng);
    Probe p{RowMatrix::Random(4, 2), RowMatrix::Random(4, 2)};
    EXPECT_LE(max_backward_error(m, x, p), 1e-3);
    p.b.resize(0, 0);
    EXPECT_LE(max_backward_error(m, x, p), 1e-3);
  }
}

TEST(Backward, ExpMapJacobianNearOrigin) {
  auto m = hand_model();
  m.params.wp *= 1e-7;
  m.params.bp << 1e-9, -2e-9;
  RowMatrix x(2, 3);
  x << 0.4, 0.1, -0.35, -1.0, 0.2, 0.5;
  const Probe p{RowMatrix::Zero(2, 2), RowMatrix::Random(2, 2)};
  EXPECT_LE(max_backward_error(m, x, p, 1e-9), 1e-4);
  // At exactly zero tangent the Jacobian is the identity.
  auto z = hand_model();
  z.params.wp.setZero();
  z.params.bp.setZero();
  const auto f = forward(z, x);
  const RowMatrix dz = RowMatrix::Random(2, 2);
  const auto g = backward(z, f.tape, RowMatrix(), dz);
  EXPECT_LE((g.bp - dz.colwise().sum().transpose()).norm(), 1e-15);
}

TEST(Backward, ClampedProjectionGradient) {
  auto m = hand_model();
  m.params.wp *= 40.0;
  m.params.bp << 30.0, -25.0;
  RowMatrix x(2, 3);
  x << 0.4, 0.1, -0.35, -1.0, 0.2, 0.5;
  const auto f = forward(m, x);
  for (Eigen::Index i = 0; i < 2; ++i) EXPECT_NEAR(f.embeddings.row(i).norm(), ball::max_norm(1.0), 1e-12);
  const Probe p{RowMatrix::Zero(2, 2), RowMatrix::Random(2, 2)};
  EXPECT_LE(max_backward_error(m, x, p), 1e-3);
}

TEST(Backward, RectifierSubgradientAtZeroIsZero) {
  auto m = hand_model();
  m.params.w1.row(0).setZero();
  m.params.b1(0) = 0.0;  // hidden unit 0 sits exactly on the kink
  const RowMatrix x = RowMatrix::Random(3, 3);
  const auto f = forward(m, x);
  const auto g = backward(m, f.tape, RowMatrix::Ones(3, 2), RowMatrix::Ones(3, 2));
  EXPECT_EQ(g.w1.row(0).norm(), 0.0);
  EXPECT_EQ(g.b1(0), 0.0);
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  auto m = HashModel::initialize(ModelShape{3, 4, 2, 2}, Curvature(0.1), 1);
  const auto before = m.params;
  auto state = OptimizerState::for_model(m, 0.001);
  for (int i = 0; i < 3; ++i) adam_step(m, Parameters::zeros(m.shape), state);
  EXPECT_EQ(m.params, before);
  EXPECT_EQ(state.step, 3u);
}

TEST(Adam, FirstStepWithUnitGradient) {
  const ModelShape s{1, 1, 1, 1};
  HashModel m{s, 0.1, Parameters::zeros(s)};
  m.params.w1(0, 0) = 0.5;
  auto state = OptimizerState::for_model(m, 0.001);
  Parameters g = Parameters::zeros(s);
  g.w1(0, 0) = 1.0;
  adam_step(m, g, state);
  // m_hat = 1, v_hat = 1, so the step is lr / (1 + eps).
  EXPECT_DOUBLE_EQ(m.params.w1(0, 0), 0.5 - 0.001 / (1.0 + 1e-8));
  EXPECT_EQ(m.params.b1(0), 0.0);
}

TEST(Adam, IdenticalRunsAreBitIdentical) {
  auto run = [] {
    auto m = HashModel::initialize(ModelShape{5, 6, 4, 3}, Curvature(0.1), 9);
    auto state = OptimizerState::for_model(m, 0.01);
    std::mt19937_64 rng(4);
    for (int t = 0; t < 5; ++t) {
      RowMatrix x(4, 5);
      for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = std::normal_distribution<double>(0.0, 1.0)(rng);
      const auto f = forward(m, x);
      adam_step(m, backward(m, f.tape, f.codes, f.embeddings), state);
    }
    return m;
  };
  const auto a = run();
  const auto b = run();
  std::stringstream sa, sb;
  save_model(a, sa);
  save_model(b, sb);
  EXPECT_EQ(sa.str(), sb.str());
}

TEST(ModelFile, RoundTripIsBitExact) {
  const auto m = HashModel::initialize(ModelShape{7, 5, 4, 3}, Curvature(0.3), 11);
  std::stringstream ss;
  save_model(m, ss);
  const auto back = load_model(ss);
  EXPECT_EQ(back.shape, m.shape);
  EXPECT_EQ(back.curvature, m.curvature);
  EXPECT_EQ(back.params, m.params);
}

TEST(ModelFile, RejectsCorruption) {
  const auto m = HashModel::initialize(ModelShape{3, 2, 2, 2}, Curvature(0.1), 1);
  std::stringstream ss;
  save_model(m, ss);
  const std::string good = ss.str();
  auto load = [](std::string bytes) {
    std::stringstream s(bytes);
    return load_model(s);
  };
  std::string bad = good;
  bad[0] = 'X';
  EXPECT_THROW(load(bad), DataFormatError);
  bad = good;
  bad[8] = 2;  // version
  EXPECT_THROW(load(bad), DataFormatError);
  EXPECT_THROW(load(good.substr(0, good.size() - 3)), DataFormatError);
  EXPECT_THROW(load(good + "x"), DataFormatError);
  bad = good;
  bad[16 + 32 + 8] = 99;  // length field of the first block
  EXPECT_THROW(load(bad), DataFormatError);
  bad = good;
  bad[16] = 0;  // feature_dim = 0
  EXPECT_THROW(load(bad), DataFormatError);
  EXPECT_THROW(load_model(std::string("/nonexistent/model.bin")), DataFormatError);
}

TEST(ModelGradient, TotalLossMatchesCentralDifferences) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto p = hhch::testing::random_grad_problem(seed);
    const auto r = hhch::testing::model_gradient_check(p);
    EXPECT_LE(r.max_rel, 1e-2) << "seed " << seed;
    EXPECT_LE(r.median_rel, 1e-4) << "seed " << seed;
  }
}
