#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

namespace bicoord {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

// Thrown when a factorization that must succeed does not (non-PD input,
// singular normal equations).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Multivariate normal distribution. The covariance is symmetrized on
// construction and must be positive definite; the Cholesky factor is kept so
// densities and precisions never go through an explicit inverse.
class Gaussian {
 public:
  Gaussian(VectorXd mean, MatrixXd covariance);

  const VectorXd& mean() const { return mean_; }
  const MatrixXd& covariance() const { return covariance_; }
  Index dim() const { return mean_.size(); }

  MatrixXd precision() const;
  double log_det_covariance() const;
  const Eigen::LLT<MatrixXd>& factor() const { return llt_; }

 private:
  VectorXd mean_;
  MatrixXd covariance_;
  Eigen::LLT<MatrixXd> llt_;
};

// Finite mixture of equally sized Gaussians. Priors must lie on the simplex.
class GMM {
 public:
  GMM(VectorXd priors, std::vector<Gaussian> components);

  const VectorXd& priors() const { return priors_; }
  const std::vector<Gaussian>& components() const { return components_; }
  const Gaussian& component(Index k) const { return components_[static_cast<std::size_t>(k)]; }
  Index size() const { return priors_.size(); }
  Index dim() const { return components_.front().dim(); }

 private:
  VectorXd priors_;
  std::vector<Gaussian> components_;
};

struct EmConfig {
  int components = 6;
  int max_iters = 200;
  double loglik_tol = 1e-8;
  // Added to every M-step covariance diagonal (state units squared).
  double cov_regularization = 1e-6;
  std::uint64_t seed = 0;

  void validate() const;
};

struct EmFit {
  GMM gmm;
  // Average per-sample log-likelihood of each accepted iterate. The last entry
  // belongs to the returned parameters.
  std::vector<double> loglik_history;
};

double gaussian_log_density(const VectorXd& x, const Gaussian& g);

// Analytic product: precisions add, the mean is precision weighted.
Gaussian product_of_gaussians(std::span<const Gaussian> factors);

// Product where factor j enters raised to the power weights[j], i.e. with its
// precision scaled by weights[j]. Zero-weight factors are skipped entirely.
Gaussian product_of_gaussians(std::span<const Gaussian> factors, std::span<const double> weights);

EmFit em_fit(const MatrixXd& data, const EmConfig& cfg);

struct Conditional {
  Gaussian gaussian;
  VectorXd weights;  // responsibilities h_k, on the simplex
  bool uniform_fallback = false;
};

// Gaussian mixture regression: moment-matched p(out | in = query).
Conditional gmr_condition(const GMM& gmm, std::span<const Index> in_dims,
                          std::span<const Index> out_dims, const VectorXd& query);

// Extracts the sub-Gaussian on the given dimensions.
Gaussian marginal(const Gaussian& g, std::span<const Index> dims);

bool all_finite(const MatrixXd& m);

}  // namespace bicoord
