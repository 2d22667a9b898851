// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <random>

#include "nss/autodiff.hpp"

using namespace nss;

namespace {

MatrixXd random_matrix(Index r, Index c, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  MatrixXd m(r, c);
  for (Index k = 0; k < m.size(); ++k) m.reshaped()(k) = d(rng);
  return m;
}

}  // namespace

TEST(ParamStore, FlattenRoundTripAndLayout) {
  std::mt19937_64 rng(1);
  ParamStore<double> p;
  p.add("a", random_matrix(2, 3, rng));
  p.add("b", random_matrix(4, 1, rng));
  EXPECT_EQ(p.num_values(), 10);
  const VectorXd flat = p.flatten();
  ParamStore<double> q = p.zeros_like();
  q.unflatten(flat);
  EXPECT_TRUE(p == q);
  EXPECT_THROW(q.unflatten(VectorXd::Zero(9)), DimensionError);
  EXPECT_THROW(p.add("a", MatrixXd::Zero(1, 1)), ContractError);
}

TEST(Tape, ForwardValuesMatchHandComputation) {
  ParamStore<double> p;
  MatrixXd w(2, 2);
  w << 1, 2, 3, 4;
  p.add("W", w);
  p.add("b", MatrixXd::Constant(2, 1, 0.5));
  Tape<double> t;
  MatrixXd x(2, 1);
  x << 1, -1;
  auto y = t.affine(t.param(p, "W"), t.param(p, "b"), t.constant(x));
  EXPECT_DOUBLE_EQ(t.value(y)(0, 0), -0.5);
  EXPECT_DOUBLE_EQ(t.value(y)(1, 0), -0.5);
  auto s = t.sum_squares(y, 2.0);
  EXPECT_DOUBLE_EQ(t.value(s)(0, 0), 1.0);
}

TEST(Tape, LinearGraphGradientIsExact) {
  std::mt19937_64 rng(2);
  ParamStore<double> p;
  p.add("a", random_matrix(3, 1, rng));
  const MatrixXd c = random_matrix(3, 1, rng);
  // L = sum(a .* c) written as sum_squares-free linear graph: slice + add chain.
  auto build = [&](Tape<double>& t, const ParamStore<double>& ps) {
    auto prod = t.mul(t.param(ps, "a"), t.constant(c));
    auto s = t.add(t.add(t.slice(prod, 0, 1), t.slice(prod, 1, 1)), t.slice(prod, 2, 1));
    return s;
  };
  auto rep = grad_check(build, p, 0.37, 1e-10);
  EXPECT_LT(rep.max_rel_error, 1e-10);
  Tape<double> t;
  auto out = build(t, p);
  auto g = backward(t, out);
  for (Index i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(g["a"](i, 0), c(i, 0));
}

TEST(Tape, MeanSquaredAffineLossMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(seed);
    ParamStore<double> p;
    p.add("W", random_matrix(3, 4, rng));
    const MatrixXd x = random_matrix(4, 5, rng);
    const MatrixXd y = random_matrix(3, 5, rng);
    auto build = [&](Tape<double>& t, const ParamStore<double>& ps) {
      auto r = t.add(t.linear(t.param(ps, "W"), t.constant(x)), t.constant(-y));
      return t.sum_squares(r, 1.0 / 15.0);
    };
    auto rep = grad_check(build, p, 1e-6, 1e-4);
    EXPECT_TRUE(rep.pass) << rep.max_rel_error << " at " << rep.worst_param;
  }
}

TEST(Tape, EveryPrimitiveHasCorrectAdjoints) {
  std::mt19937_64 rng(11);
  ParamStore<double> p;
  p.add("A", random_matrix(3, 2, rng));
  p.add("b", random_matrix(3, 1, rng));
  p.add("c", random_matrix(3, 2, rng));
  const MatrixXd x = random_matrix(2, 2, rng);
  auto build = [&](Tape<double>& t, const ParamStore<double>& ps) {
    auto a = t.affine(t.param(ps, "A"), t.param(ps, "b"), t.constant(x));
    auto s = t.sigmoid(t.mul(a, t.param(ps, "c")));
    auto h = t.tanh(t.add(a, s));
    auto stacked = t.concat({h, s, t.param(ps, "c")});
    auto mid = t.slice(stacked, 2, 5);
    return t.sum_squares(mid, 0.3);
  };
  auto rep = grad_check(build, p, 1e-6, 1e-4);
  EXPECT_TRUE(rep.pass) << rep.max_rel_error << " at " << rep.worst_param;
  EXPECT_EQ(rep.entries_checked, 6 + 3 + 6);
}

TEST(Tape, ReusedParameterAccumulatesAdjoints) {
  ParamStore<double> p;
  p.add("a", MatrixXd::Constant(1, 1, 3.0));
  Tape<double> t;
  auto a1 = t.param(p, "a");
  auto a2 = t.param(p, "a");
  EXPECT_EQ(a1.index, a2.index);
  auto out = t.sum_squares(t.add(a1, a2));  // (2a)^2 -> d/da = 8a
  auto g = backward(t, out);
  EXPECT_DOUBLE_EQ(g["a"](0, 0), 24.0);
}

TEST(Tape, UnusedParametersGetZeroGradient) {
  ParamStore<double> p;
  p.add("used", MatrixXd::Ones(2, 1));
  p.add("unused", MatrixXd::Ones(3, 3));
  Tape<double> t;
  auto g = backward(t, t.sum_squares(t.param(p, "used")));
  EXPECT_EQ(g["unused"].rows(), 3);
  EXPECT_EQ(g["unused"].cwiseAbs().sum(), 0.0);
}

TEST(Tape, ErrorsNameTheOperation) {
  ParamStore<double> p;
  p.add("W", MatrixXd::Ones(2, 3));
  Tape<double> t;
  try {
    t.linear(t.param(p, "W"), t.constant(MatrixXd::Ones(2, 1)));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("linear"), std::string::npos);
  }
  auto v = t.constant(MatrixXd::Ones(2, 1));
  EXPECT_THROW(t.backward(v), ContractError);
  EXPECT_THROW(t.constant(MatrixXd::Constant(1, 1, std::nan(""))), NumericalError);
  ParamStore<double> other;
  other.add("W", MatrixXd::Ones(2, 3));
  EXPECT_THROW(t.param(other, "W"), ContractError);
}

TEST(Eager, MatchesTapeBitForBit) {
  std::mt19937_64 rng(5);
  ParamStore<double> p;
  p.add("A", random_matrix(4, 3, rng));
  p.add("b", random_matrix(4, 1, rng));
  const MatrixXd x = random_matrix(3, 6, rng);
  Tape<double> t;
  Eager<double> e;
  auto tv = t.value(t.tanh(t.affine(t.param(p, "A"), t.param(p, "b"), t.constant(x))));
  auto ev = e.tanh(e.affine(e.param(p, "A"), e.param(p, "b"), e.constant(x)));
  EXPECT_TRUE((tv.array() == ev.array()).all());
}

TEST(Kernels, BatchColumnsEqualSingleEvaluations) {
  std::mt19937_64 rng(9);
  const MatrixXd w = random_matrix(5, 7, rng);
  const MatrixXd b = random_matrix(5, 1, rng);
  const MatrixXd x = random_matrix(7, 8, rng);
  const MatrixXd batch = kernels::affine<double>(w, &b, x);
  for (Index j = 0; j < x.cols(); ++j) {
    const MatrixXd single = kernels::affine<double>(w, &b, MatrixXd(x.col(j)));
    EXPECT_TRUE((single.col(0).array() == batch.col(j).array()).all());
  }
}

// Property: random graphs over random parameters in [-1, 1] pass the gradient check.
TEST(TapeProperty, RandomCompositionsPassGradientCheck) {
  for (std::uint64_t seed = 100; seed < 120; ++seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> dim(1, 4);
    const Index n = dim(rng), m = dim(rng), b = dim(rng);
    ParamStore<double> p;
    p.add("W1", random_matrix(m, n, rng));
    p.add("b1", random_matrix(m, 1, rng));
    p.add("W2", random_matrix(n, m, rng));
    const MatrixXd x = random_matrix(n, b, rng);
    auto build = [&](Tape<double>& t, const ParamStore<double>& ps) {
      auto h = t.tanh(t.affine(t.param(ps, "W1"), t.param(ps, "b1"), t.constant(x)));
      auto g = t.sigmoid(h);
      auto back = t.linear(t.param(ps, "W2"), t.mul(h, g));
      return t.sum_squares(t.add(back, t.constant(x)), 0.5);
    };
    auto rep = grad_check(build, p, 1e-6, 1e-4);
    EXPECT_TRUE(rep.pass) << "seed " << seed << ": " << rep.max_rel_error;
  }
}
