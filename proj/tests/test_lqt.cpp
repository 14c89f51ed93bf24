#include <gtest/gtest.h>

#include "bicoord/lqt.hpp"
#include "support.hpp"

namespace bicoord {
namespace {

using testing::Rng;

TEST(Integrator, DoubleIntegratorMatrices) {
  const LinearSystem s = LinearSystem::integrator(1, 2, 0.5);
  MatrixXd A(2, 2), B(2, 1);
  A << 1.0, 0.5, 0.0, 1.0;
  B << 0.125, 0.5;
  EXPECT_LT((s.A - A).norm(), 1e-15);
  EXPECT_LT((s.B - B).norm(), 1e-15);
  const LinearSystem s1 = LinearSystem::integrator(2, 1, 0.1);
  EXPECT_EQ(s1.A, MatrixXd::Identity(2, 2));
  EXPECT_LT((s1.B - 0.1 * MatrixXd::Identity(2, 2)).norm(), 1e-15);
}

TEST(Transfer, MatchesStepByStepSimulation) {
  Rng rng(1);
  for (int trial = 0; trial < 30; ++trial) {
    const LinearSystem sys = LinearSystem::integrator(rng.integer(1, 3), rng.integer(1, 2), rng.uniform(0.01, 1.0));
    const Index T = rng.integer(2, 15);
    const TransferMatrices tm = build_transfer_matrices(sys, T);
    const VectorXd x1 = rng.vector(sys.state_dims());
    const VectorXd u = rng.vector(sys.input_dims() * (T - 1));
    const VectorXd stacked = tm.Sx * x1 + tm.Su * u;
    const MatrixXd sim = simulate(sys, x1, u, T);
    for (Index t = 0; t < T; ++t) {
      EXPECT_LT((stacked.segment(t * sys.state_dims(), sys.state_dims()) - sim.row(t).transpose()).norm(), 1e-10);
    }
  }
}

// One channel, single integrator, two steps: the cost is quadratic in (u1, u2)
// and its minimizer is the solution of a 2x2 system written out by hand.
TEST(Lqt, SmallProblemMatchesHandSolvedNormalEquations) {
  const LinearSystem sys = LinearSystem::integrator(1, 1, 1.0);
  LQTProblem p;
  p.ref_means = (MatrixXd(3, 1) << 0.0, 1.0, 3.0).finished();
  p.Q = (VectorXd(3) << 0.0, 2.0, 5.0).finished().asDiagonal();
  p.R = 0.5 * MatrixXd::Identity(2, 2);
  p.x1 = VectorXd::Zero(1);
  // x2 = u1, x3 = u1 + u2. Gradient: 2(u1-1) + 5(u1+u2-3) + 0.5u1 = 0 ; 5(u1+u2-3) + 0.5u2 = 0
  MatrixXd H(2, 2);
  H << 2.0 + 5.0 + 0.5, 5.0, 5.0, 5.0 + 0.5;
  const VectorXd g = (VectorXd(2) << 2.0 + 15.0, 15.0).finished();
  const VectorXd expected = H.ldlt().solve(g);
  const LQTSolution s = solve_lqt(p, sys);
  EXPECT_LT((s.u - expected).norm(), 1e-12);
  EXPECT_NEAR(s.x(2, 0), expected.sum(), 1e-12);
}

TEST(Lqt, FirstOrderOptimalityAndPerturbation) {
  Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const auto inst = testing::random_lqt(rng);
    const LQTSolution s = solve_lqt(inst.problem, inst.sys);
    auto cost = [&](const VectorXd& u) { return lqt_cost(inst.problem, inst.sys, u); };
    const double c0 = cost(s.u);
    const VectorXd g = testing::numeric_gradient(cost, s.u, 1e-5);
    EXPECT_LT(g.norm() / std::max(1.0, c0), 1e-6) << "trial " << trial;
    for (int k = 0; k < 5; ++k) {
      const VectorXd du = rng.vector(s.u.size(), std::pow(10.0, rng.uniform(-4.0, 0.0)));
      EXPECT_GE(cost(s.u + du), c0 - 1e-12 * std::max(1.0, c0)) << "trial " << trial;
    }
  }
}

TEST(Lqt, RejectsMismatchedSizes) {
  Rng rng(3);
  auto inst = testing::random_lqt(rng);
  inst.problem.R = MatrixXd::Identity(1, 1);
  EXPECT_THROW(solve_lqt(inst.problem, inst.sys), std::invalid_argument);
}

TEST(Lqt, TrackingPrecisionPlacesBlocksOnPositions) {
  const LinearSystem sys = LinearSystem::integrator(2, 2, 0.1);
  const MatrixXd P = (MatrixXd(2, 2) << 2.0, 0.5, 0.5, 1.0).finished();
  const MatrixXd Q = tracking_precision({P, 2.0 * P}, sys);
  ASSERT_EQ(Q.rows(), 8);
  EXPECT_EQ(Q.block(0, 0, 2, 2), P);
  EXPECT_EQ(Q.block(4, 4, 2, 2), 2.0 * P);
  EXPECT_EQ(Q.block(2, 2, 2, 2), MatrixXd::Zero(2, 2));
  EXPECT_EQ(Q.block(0, 4, 4, 4), MatrixXd::Zero(4, 4));
  const MatrixXd padded = pad_reference((MatrixXd(2, 2) << 1.0, 2.0, 3.0, 4.0).finished(), sys);
  EXPECT_EQ(padded.row(1), (VectorXd(4) << 3.0, 4.0, 0.0, 0.0).finished().transpose());
}

TEST(TrackingTerms, SingleTermEqualsPlainLqt) {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const auto inst = testing::random_lqt(rng);
    const LQTSolution a = solve_lqt(inst.problem, inst.sys);
    const LQTSolution b =
        solve_lqt_terms({{inst.problem.ref_means, inst.problem.Q}}, inst.problem.R, inst.problem.x1, inst.sys);
    EXPECT_LT((a.u - b.u).norm(), 1e-9 * std::max(1.0, a.u.norm()));
  }
}

TEST(TrackingTerms, TwoTermsSatisfyFirstOrderOptimality) {
  Rng rng(5);
  const LinearSystem sys = LinearSystem::integrator(2, 1, 0.2);
  const Index T = 6;
  const LQTProblem p1 = testing::random_lqt_problem(rng, sys, T);
  const LQTProblem p2 = testing::random_lqt_problem(rng, sys, T);
  const LQTSolution two = solve_lqt_terms({{p1.ref_means, p1.Q}, {p2.ref_means, p2.Q}}, p1.R, p1.x1, sys);
  LQTProblem b = p2;
  b.R = p1.R;
  b.x1 = p1.x1;
  // The control cost enters once.
  auto cost = [&](const VectorXd& u) { return lqt_cost(p1, sys, u) + lqt_cost(b, sys, u) - u.dot(p1.R * u); };
  const VectorXd g = testing::numeric_gradient(cost, two.u, 1e-5);
  EXPECT_LT(g.norm() / std::max(1.0, cost(two.u)), 1e-6);
}

TEST(Coordination, SignedSelectorGivesRelativeCommand) {
  const CoordinationMatrix C = CoordinationMatrix::pair(3);
  const MatrixXd dense = C.dense();
  ASSERT_EQ(dense.rows(), 3);
  ASSERT_EQ(dense.cols(), 6);
  VectorXd U(6);
  U << 1.0, 2.0, 3.0, 0.5, 0.5, 4.0;
  EXPECT_EQ(dense * U, (VectorXd(3) << 0.5, 1.5, -1.0).finished());
  const auto parts = extract_arm_commands(U, C);
  EXPECT_EQ(parts[0], U.head(3));
  EXPECT_EQ(parts[1], U.tail(3));
  EXPECT_EQ(C.selector(1) * U, U.tail(3));
}

TEST(CoordinatedLqt, FirstOrderOptimalityAndPerturbation) {
  Rng rng(6);
  for (int trial = 0; trial < 200; ++trial) {
    const auto inst = testing::random_coordinated(rng, std::pow(10.0, rng.uniform(-2.0, 2.0)));
    const CoordinatedLQTSolution s = solve_coordinated_lqt(inst.problem, inst.sys);
    auto cost = [&](const VectorXd& U) { return coordinated_cost(inst.problem, inst.sys, U); };
    const double c0 = cost(s.U);
    const VectorXd g = testing::numeric_gradient(cost, s.U, 1e-5);
    EXPECT_LT(g.norm() / std::max(1.0, c0), 1e-6) << "trial " << trial;
    for (int k = 0; k < 5; ++k) {
      const VectorXd dU = rng.vector(s.U.size(), std::pow(10.0, rng.uniform(-4.0, 0.0)));
      EXPECT_GE(cost(s.U + dU), c0 - 1e-12 * std::max(1.0, c0));
    }
  }
}

TEST(CoordinatedLqt, ZeroSigmaDecouplesArms) {
  Rng rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    const auto inst = testing::random_coordinated(rng, 0.0);
    const CoordinatedLQTSolution s = solve_coordinated_lqt(inst.problem, inst.sys);
    for (int h = 0; h < 2; ++h) {
      const LQTSolution single = solve_lqt(inst.problem.arms[static_cast<std::size_t>(h)], inst.sys);
      EXPECT_LT((s.x[static_cast<std::size_t>(h)] - single.x).cwiseAbs().maxCoeff(), 1e-9);
    }
  }
}

TEST(CoordinatedLqt, RelativeCostNonIncreasingInSigma) {
  Rng rng(8);
  const std::vector<double> sigmas{0.0, 0.1, 1.0, 10.0, 100.0};
  for (int trial = 0; trial < 50; ++trial) {
    auto inst = testing::random_coordinated(rng, 0.0);
    double prev = std::numeric_limits<double>::infinity();
    for (double sigma : sigmas) {
      inst.problem.sigma = sigma;
      const CoordinatedLQTSolution s = solve_coordinated_lqt(inst.problem, inst.sys);
      const double c = relative_tracking_cost(inst.problem, inst.sys, s.U);
      EXPECT_LE(c, prev * (1.0 + 1e-9) + 1e-12) << "trial " << trial << " sigma " << sigma;
      prev = c;
    }
  }
}

TEST(CoordinatedLqt, StrongCouplingDrivesRelativeStateToReference) {
  Rng rng(9);
  auto inst = testing::random_coordinated(rng, 1e6);
  const CoordinatedLQTSolution s = solve_coordinated_lqt(inst.problem, inst.sys);
  const Index T = inst.problem.arms[0].horizon();
  const Index np = inst.sys.state_dims() / inst.sys.order;
  // Position channels of the relative state follow the reference after the
  // first (uncontrollable) step.
  const MatrixXd rel = s.x[0] - s.x[1];
  EXPECT_LT((rel.bottomRows(T - inst.sys.order).leftCols(np) -
             inst.problem.rel_means.bottomRows(T - inst.sys.order).leftCols(np))
                .cwiseAbs()
                .maxCoeff(),
            1e-2);
}

}  // namespace
}  // namespace bicoord
