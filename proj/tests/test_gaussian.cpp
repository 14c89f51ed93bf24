#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "bicoord/gaussian.hpp"
#include "joint_em.hpp"
#include "support.hpp"

namespace bicoord {
namespace {

using testing::Rng;

TEST(Gaussian, RejectsNonPositiveDefiniteCovariance) {
  MatrixXd c(2, 2);
  c << 1.0, 2.0, 2.0, 1.0;
  EXPECT_THROW(Gaussian(VectorXd::Zero(2), c), NumericalError);
  EXPECT_THROW(Gaussian(VectorXd::Zero(2), MatrixXd::Identity(3, 3)), std::invalid_argument);
  EXPECT_THROW(Gaussian(VectorXd::Constant(2, NAN), MatrixXd::Identity(2, 2)), std::invalid_argument);
}

TEST(Gaussian, SymmetrizesCovariance) {
  MatrixXd c(2, 2);
  c << 2.0, 0.5 + 1e-12, 0.5, 1.0;
  const Gaussian g(VectorXd::Zero(2), c);
  EXPECT_EQ(g.covariance()(0, 1), g.covariance()(1, 0));
}

TEST(Gaussian, LogDensityMatchesClosedForm) {
  const Gaussian g(VectorXd::Constant(1, 1.0), MatrixXd::Constant(1, 1, 4.0));
  const double x = 2.5;
  const double expected = -0.5 * std::log(2.0 * std::numbers::pi * 4.0) - 0.5 * (x - 1.0) * (x - 1.0) / 4.0;
  EXPECT_NEAR(gaussian_log_density(VectorXd::Constant(1, x), g), expected, 1e-14);
}

TEST(Gaussian, LogDensityOfDiagonalIsSumOfMarginals) {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const Index n = rng.integer(1, 5);
    VectorXd var(n);
    for (Index i = 0; i < n; ++i) var(i) = rng.uniform(0.1, 3.0);
    const Gaussian g(rng.vector(n), var.asDiagonal());
    const VectorXd x = rng.vector(n, 2.0);
    double expected = 0.0;
    for (Index i = 0; i < n; ++i) {
      const double d = x(i) - g.mean()(i);
      expected += -0.5 * std::log(2.0 * std::numbers::pi * var(i)) - 0.5 * d * d / var(i);
    }
    EXPECT_NEAR(gaussian_log_density(x, g), expected, 1e-11);
  }
}

TEST(Product, SingleFactorIsUnchanged) {
  Rng rng(1);
  const Gaussian g = rng.gaussian(3);
  const Gaussian p = product_of_gaussians(std::vector<Gaussian>{g});
  EXPECT_LT(testing::relative_error(p.mean(), g.mean()), 1e-12);
  EXPECT_LT(testing::relative_error(p.covariance(), g.covariance()), 1e-12);
}

TEST(Product, ScalarCaseIsPrecisionWeightedMean) {
  const Gaussian a(VectorXd::Constant(1, 0.0), MatrixXd::Constant(1, 1, 1.0));
  const Gaussian b(VectorXd::Constant(1, 3.0), MatrixXd::Constant(1, 1, 2.0));
  const Gaussian p = product_of_gaussians(std::vector<Gaussian>{a, b});
  // precision 1 + 1/2, mean (0 + 3/2) / (3/2)
  EXPECT_NEAR(p.mean()(0), 1.0, 1e-15);
  EXPECT_NEAR(p.covariance()(0, 0), 2.0 / 3.0, 1e-15);
}

TEST(Product, MatchesQuadraticMinimizationOracle) {
  Rng rng(2024);
  for (int trial = 0; trial < 200; ++trial) {
    const Index d = rng.integer(1, 5);
    const int P = rng.integer(1, 4);
    std::vector<Gaussian> factors;
    for (int j = 0; j < P; ++j) factors.push_back(rng.gaussian(d, 3.0, 1.0));
    const Gaussian p = product_of_gaussians(factors);
    const auto oracle = testing::product_oracle(factors, std::vector<double>(P, 1.0));
    EXPECT_LT(testing::relative_error(p.mean(), oracle.mean), 1e-8) << "trial " << trial;
    EXPECT_LT(testing::relative_error(p.covariance(), oracle.covariance), 1e-8) << "trial " << trial;
  }
}

TEST(Product, WeightsScalePrecision) {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const Index d = rng.integer(1, 4);
    std::vector<Gaussian> factors{rng.gaussian(d), rng.gaussian(d), rng.gaussian(d)};
    std::vector<double> w{rng.uniform(0.1, 3.0), rng.uniform(0.0, 3.0), rng.uniform(0.1, 3.0)};
    const Gaussian p = product_of_gaussians(factors, w);
    const auto oracle = testing::product_oracle(factors, w);
    EXPECT_LT(testing::relative_error(p.mean(), oracle.mean), 1e-8);
    EXPECT_LT(testing::relative_error(p.covariance(), oracle.covariance), 1e-8);
  }
}

TEST(Product, ZeroWeightFactorIsIgnoredExactly) {
  Rng rng(6);
  const Gaussian a = rng.gaussian(3);
  const Gaussian b = rng.gaussian(3);
  const Gaussian c = rng.gaussian(3);
  const Gaussian with = product_of_gaussians(std::vector<Gaussian>{a, b, c}, std::vector<double>{1.0, 1.0, 0.0});
  const Gaussian without = product_of_gaussians(std::vector<Gaussian>{a, b});
  EXPECT_EQ(with.mean(), without.mean());
  EXPECT_EQ(with.covariance(), without.covariance());
}

TEST(Product, OrderDoesNotMatter) {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const Index d = rng.integer(1, 4);
    const Gaussian a = rng.gaussian(d), b = rng.gaussian(d), c = rng.gaussian(d);
    const Gaussian abc = product_of_gaussians(std::vector<Gaussian>{a, b, c});
    const Gaussian ab = product_of_gaussians(std::vector<Gaussian>{a, b});
    const Gaussian ab_c = product_of_gaussians(std::vector<Gaussian>{c, ab});
    EXPECT_LT(testing::relative_error(abc.mean(), ab_c.mean()), 1e-9);
    EXPECT_LT(testing::relative_error(abc.covariance(), ab_c.covariance()), 1e-9);
  }
}

TEST(Product, RejectsBadInput) {
  Rng rng(8);
  EXPECT_THROW(product_of_gaussians(std::vector<Gaussian>{}), std::invalid_argument);
  const std::vector<Gaussian> f{rng.gaussian(2), rng.gaussian(3)};
  EXPECT_THROW(product_of_gaussians(f), std::invalid_argument);
  const std::vector<Gaussian> g{rng.gaussian(2)};
  EXPECT_THROW(product_of_gaussians(g, std::vector<double>{0.0}), std::invalid_argument);
  EXPECT_THROW(product_of_gaussians(g, std::vector<double>{-1.0}), std::invalid_argument);
}

TEST(Gmm, RejectsPriorsOffSimplex) {
  Rng rng(9);
  std::vector<Gaussian> comps{rng.gaussian(2), rng.gaussian(2)};
  EXPECT_THROW(GMM(VectorXd::Constant(2, 0.6), comps), std::invalid_argument);
  EXPECT_THROW(GMM(VectorXd::Constant(1, 1.0), comps), std::invalid_argument);
  EXPECT_NO_THROW(GMM(VectorXd::Constant(2, 0.5), comps));
}

// Conditional of a single joint Gaussian, written out with explicit inverses.
TEST(Gmr, SingleComponentMatchesSchurComplement) {
  Rng rng(10);
  for (int trial = 0; trial < 50; ++trial) {
    const Index d = rng.integer(2, 5);
    const Gaussian g = rng.gaussian(d, 2.0);
    const GMM gmm(VectorXd::Ones(1), {g});
    const std::vector<Index> in{0};
    std::vector<Index> out;
    for (Index i = 1; i < d; ++i) out.push_back(i);
    const VectorXd q = VectorXd::Constant(1, rng.normal());
    const Conditional c = gmr_condition(gmm, in, out, q);
    const MatrixXd& S = g.covariance();
    const MatrixXd Sio = S.block(1, 0, d - 1, 1);
    const double sii = S(0, 0);
    const VectorXd mean = g.mean().tail(d - 1) + Sio * (q(0) - g.mean()(0)) / sii;
    const MatrixXd cov = S.bottomRightCorner(d - 1, d - 1) - Sio * Sio.transpose() / sii;
    EXPECT_LT(testing::relative_error(c.gaussian.mean(), mean), 1e-10);
    EXPECT_LT(testing::relative_error(c.gaussian.covariance(), cov), 1e-10);
    EXPECT_DOUBLE_EQ(c.weights(0), 1.0);
  }
}

TEST(Gmr, WeightsFollowInputDensity) {
  const Gaussian a(VectorXd::Zero(2), MatrixXd::Identity(2, 2));
  const Gaussian b((VectorXd(2) << 4.0, 10.0).finished(), MatrixXd::Identity(2, 2));
  const GMM gmm((VectorXd(2) << 0.5, 0.5).finished(), {a, b});
  const std::vector<Index> in{0}, out{1};
  const Conditional mid = gmr_condition(gmm, in, out, VectorXd::Constant(1, 2.0));
  EXPECT_NEAR(mid.weights(0), 0.5, 1e-12);
  EXPECT_NEAR(mid.gaussian.mean()(0), 5.0, 1e-12);
  // Law of total variance: 1 + 0.25 * 100
  EXPECT_NEAR(mid.gaussian.covariance()(0, 0), 26.0, 1e-10);
  const Conditional near_a = gmr_condition(gmm, in, out, VectorXd::Constant(1, 0.0));
  EXPECT_GT(near_a.weights(0), 0.99);
  EXPECT_FALSE(near_a.uniform_fallback);
}

TEST(Gmr, FallsBackToUniformWeightsFarAway) {
  const Gaussian a(VectorXd::Zero(2), 1e-4 * MatrixXd::Identity(2, 2));
  const Gaussian b(VectorXd::Ones(2), 1e-4 * MatrixXd::Identity(2, 2));
  const GMM gmm((VectorXd(2) << 0.5, 0.5).finished(), {a, b});
  const std::vector<Index> in{0}, out{1};
  const Conditional c = gmr_condition(gmm, in, out, VectorXd::Constant(1, 1e3));
  EXPECT_TRUE(c.uniform_fallback);
  EXPECT_DOUBLE_EQ(c.weights(0), 0.5);
}

TEST(Gmr, RejectsOverlappingIndexSets) {
  Rng rng(12);
  const GMM gmm(VectorXd::Ones(1), {rng.gaussian(3)});
  const std::vector<Index> in{0}, out{0, 1};
  EXPECT_THROW(gmr_condition(gmm, in, out, VectorXd::Zero(1)), std::invalid_argument);
}

TEST(Marginal, PicksSubBlock) {
  Rng rng(13);
  const Gaussian g = rng.gaussian(4);
  const std::vector<Index> dims{3, 1};
  const Gaussian m = marginal(g, dims);
  EXPECT_EQ(m.mean()(0), g.mean()(3));
  EXPECT_EQ(m.covariance()(0, 1), g.covariance()(3, 1));
}

MatrixXd three_clusters(Rng& rng, int per) {
  const MatrixXd centers = (MatrixXd(3, 2) << 0.0, 0.0, 10.0, 0.0, 0.0, 10.0).finished();
  MatrixXd data(3 * per, 2);
  for (int c = 0; c < 3; ++c) {
    for (int i = 0; i < per; ++i) data.row(c * per + i) = centers.row(c) + 0.5 * rng.vector(2).transpose();
  }
  return data;
}

TEST(Em, RecoversSeparatedClusters) {
  Rng rng(14);
  const MatrixXd data = three_clusters(rng, 200);
  EmConfig cfg;
  cfg.components = 3;
  cfg.seed = 3;
  const EmFit fit = em_fit(data, cfg);
  EXPECT_NEAR(fit.gmm.priors().sum(), 1.0, 1e-12);
  for (const VectorXd& c : {VectorXd((VectorXd(2) << 0.0, 0.0).finished()), VectorXd((VectorXd(2) << 10.0, 0.0).finished()),
                           VectorXd((VectorXd(2) << 0.0, 10.0).finished())}) {
    double best = 1e9;
    for (Index k = 0; k < 3; ++k) best = std::min(best, (fit.gmm.component(k).mean() - c).norm());
    EXPECT_LT(best, 0.15);
  }
  for (Index k = 0; k < 3; ++k) EXPECT_NEAR(fit.gmm.priors()(k), 1.0 / 3.0, 0.01);
}

TEST(Em, LogLikelihoodNeverDecreases) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(100 + seed);
    MatrixXd data(150, 3);
    data << three_clusters(rng, 50), rng.matrix(150, 1);
    EmConfig cfg;
    cfg.components = rng.integer(1, 6);
    cfg.seed = seed;
    const EmFit fit = em_fit(data, cfg);
    ASSERT_FALSE(fit.loglik_history.empty());
    for (std::size_t i = 1; i < fit.loglik_history.size(); ++i) {
      EXPECT_GE(fit.loglik_history[i], fit.loglik_history[i - 1] - 1e-8) << "seed " << seed << " iter " << i;
    }
  }
}

TEST(Em, BitwiseDeterministic) {
  Rng rng(15);
  const MatrixXd data = three_clusters(rng, 80);
  EmConfig cfg;
  cfg.components = 4;
  cfg.seed = 99;
  const EmFit a = em_fit(data, cfg);
  const EmFit b = em_fit(data, cfg);
  ASSERT_EQ(a.loglik_history, b.loglik_history);
  for (Index k = 0; k < 4; ++k) {
    EXPECT_EQ(a.gmm.component(k).mean(), b.gmm.component(k).mean());
    EXPECT_EQ(a.gmm.component(k).covariance(), b.gmm.component(k).covariance());
  }
  EXPECT_EQ(a.gmm.priors(), b.gmm.priors());
}

TEST(Em, RegularizationFloorsCovariance) {
  MatrixXd data(40, 2);
  for (Index i = 0; i < 40; ++i) data.row(i) << static_cast<double>(i), 3.0;
  EmConfig cfg;
  cfg.components = 1;
  cfg.cov_regularization = 1e-4;
  const EmFit fit = em_fit(data, cfg);
  EXPECT_NEAR(fit.gmm.component(0).covariance()(1, 1), 1e-4, 1e-12);
}

TEST(Em, RejectsBadConfig) {
  EmConfig cfg;
  cfg.components = 0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = EmConfig{};
  cfg.cov_regularization = -1.0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(KMeans, SeparatesObviousClusters) {
  Rng rng(16);
  const MatrixXd data = three_clusters(rng, 30);
  const auto labels = detail::kmeans_labels(data, 3, 1, 50);
  for (int c = 0; c < 3; ++c) {
    for (int i = 1; i < 30; ++i) EXPECT_EQ(labels[static_cast<std::size_t>(c * 30 + i)], labels[static_cast<std::size_t>(c * 30)]);
  }
  EXPECT_NE(labels[0], labels[30]);
  EXPECT_NE(labels[30], labels[60]);
  EXPECT_NE(labels[0], labels[60]);
}

}  // namespace
}  // namespace bicoord
