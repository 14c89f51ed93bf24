#include "bicoord/gaussian.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "joint_em.hpp"

namespace bicoord {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;  // ln(2*pi)

MatrixXd symmetrized(const MatrixXd& m) { return 0.5 * (m + m.transpose()); }

}  // namespace

bool all_finite(const MatrixXd& m) { return m.allFinite(); }

Gaussian::Gaussian(VectorXd mean, MatrixXd covariance)
    : mean_(std::move(mean)), covariance_(std::move(covariance)) {
  if (mean_.size() == 0) throw std::invalid_argument("Gaussian: empty mean");
  if (covariance_.rows() != mean_.size() || covariance_.cols() != mean_.size()) {
    throw std::invalid_argument("Gaussian: covariance is " + std::to_string(covariance_.rows()) + "x" +
                                std::to_string(covariance_.cols()) + ", mean has " +
                                std::to_string(mean_.size()) + " entries");
  }
  if (!mean_.allFinite() || !covariance_.allFinite()) {
    throw std::invalid_argument("Gaussian: non-finite entries");
  }
  covariance_ = symmetrized(covariance_);
  llt_.compute(covariance_);
  if (llt_.info() != Eigen::Success || !(llt_.matrixLLT().diagonal().array() > 0.0).all()) {
    throw NumericalError("Gaussian: covariance is not positive definite");
  }
}

MatrixXd Gaussian::precision() const {
  return symmetrized(llt_.solve(MatrixXd::Identity(dim(), dim())));
}

double Gaussian::log_det_covariance() const {
  return 2.0 * llt_.matrixLLT().diagonal().array().log().sum();
}

GMM::GMM(VectorXd priors, std::vector<Gaussian> components)
    : priors_(std::move(priors)), components_(std::move(components)) {
  if (priors_.size() == 0) throw std::invalid_argument("GMM: no components");
  if (static_cast<std::size_t>(priors_.size()) != components_.size()) {
    throw std::invalid_argument("GMM: prior count does not match component count");
  }
  if (!priors_.allFinite() || (priors_.array() < 0.0).any()) {
    throw std::invalid_argument("GMM: priors must be finite and non-negative");
  }
  if (std::abs(priors_.sum() - 1.0) > 1e-9) {
    throw std::invalid_argument("GMM: priors do not sum to one");
  }
  for (const auto& c : components_) {
    if (c.dim() != components_.front().dim()) {
      throw std::invalid_argument("GMM: components differ in dimensionality");
    }
  }
}

void EmConfig::validate() const {
  if (components < 1) throw std::invalid_argument("EmConfig: components must be >= 1");
  if (max_iters < 1) throw std::invalid_argument("EmConfig: max_iters must be >= 1");
  if (!(cov_regularization >= 0.0) || !std::isfinite(cov_regularization)) {
    throw std::invalid_argument("EmConfig: cov_regularization must be >= 0");
  }
  if (!(loglik_tol >= 0.0)) throw std::invalid_argument("EmConfig: loglik_tol must be >= 0");
}

double gaussian_log_density(const VectorXd& x, const Gaussian& g) {
  if (x.size() != g.dim()) {
    throw std::invalid_argument("gaussian_log_density: point has " + std::to_string(x.size()) +
                                " entries, Gaussian has " + std::to_string(g.dim()));
  }
  const VectorXd z = g.factor().matrixL().solve(x - g.mean());
  return -0.5 * (static_cast<double>(g.dim()) * kLog2Pi + g.log_det_covariance() + z.squaredNorm());
}

Gaussian product_of_gaussians(std::span<const Gaussian> factors) {
  const std::vector<double> ones(factors.size(), 1.0);
  return product_of_gaussians(factors, ones);
}

Gaussian product_of_gaussians(std::span<const Gaussian> factors, std::span<const double> weights) {
  if (factors.empty()) throw std::invalid_argument("product_of_gaussians: no factors");
  if (weights.size() != factors.size()) {
    throw std::invalid_argument("product_of_gaussians: weight count does not match factor count");
  }
  const Index d = factors.front().dim();
  MatrixXd precision = MatrixXd::Zero(d, d);
  VectorXd information = VectorXd::Zero(d);
  bool any = false;
  for (std::size_t j = 0; j < factors.size(); ++j) {
    if (factors[j].dim() != d) throw std::invalid_argument("product_of_gaussians: dimension mismatch");
    if (!(weights[j] >= 0.0) || !std::isfinite(weights[j])) {
      throw std::invalid_argument("product_of_gaussians: weights must be finite and >= 0");
    }
    if (weights[j] == 0.0) continue;
    const MatrixXd lambda = factors[j].precision();
    precision += weights[j] * lambda;
    information += weights[j] * (lambda * factors[j].mean());
    any = true;
  }
  if (!any) throw std::invalid_argument("product_of_gaussians: every factor has zero weight");

  const Eigen::LLT<MatrixXd> llt(symmetrized(precision));
  if (llt.info() != Eigen::Success) throw NumericalError("product_of_gaussians: precision sum is not PD");
  MatrixXd covariance = llt.solve(MatrixXd::Identity(d, d));
  VectorXd mean = llt.solve(information);
  return Gaussian(std::move(mean), std::move(covariance));
}

EmFit em_fit(const MatrixXd& data, const EmConfig& cfg) {
  const MatrixXd blocks[] = {data};
  auto joint = detail::fit_joint_mixture(blocks, cfg);
  return EmFit{GMM(std::move(joint.priors), std::move(joint.components.front())),
               std::move(joint.loglik_history)};
}

Gaussian marginal(const Gaussian& g, std::span<const Index> dims) {
  const auto n = static_cast<Index>(dims.size());
  VectorXd mean(n);
  MatrixXd cov(n, n);
  for (Index i = 0; i < n; ++i) {
    mean(i) = g.mean()(dims[static_cast<std::size_t>(i)]);
    for (Index j = 0; j < n; ++j) {
      cov(i, j) = g.covariance()(dims[static_cast<std::size_t>(i)], dims[static_cast<std::size_t>(j)]);
    }
  }
  return Gaussian(std::move(mean), std::move(cov));
}

namespace {

MatrixXd sub_block(const MatrixXd& m, std::span<const Index> rows, std::span<const Index> cols) {
  MatrixXd out(static_cast<Index>(rows.size()), static_cast<Index>(cols.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < cols.size(); ++j) out(static_cast<Index>(i), static_cast<Index>(j)) = m(rows[i], cols[j]);
  }
  return out;
}

VectorXd sub_vector(const VectorXd& v, std::span<const Index> idx) {
  VectorXd out(static_cast<Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) out(static_cast<Index>(i)) = v(idx[i]);
  return out;
}

void check_dims(std::span<const Index> in_dims, std::span<const Index> out_dims, Index d) {
  if (in_dims.empty() || out_dims.empty()) throw std::invalid_argument("gmr_condition: empty index set");
  std::vector<bool> used(static_cast<std::size_t>(d), false);
  for (auto set : {in_dims, out_dims}) {
    for (Index i : set) {
      if (i < 0 || i >= d) throw std::invalid_argument("gmr_condition: dimension index out of range");
      if (used[static_cast<std::size_t>(i)]) throw std::invalid_argument("gmr_condition: index sets overlap");
      used[static_cast<std::size_t>(i)] = true;
    }
  }
}

}  // namespace

Conditional gmr_condition(const GMM& gmm, std::span<const Index> in_dims, std::span<const Index> out_dims,
                          const VectorXd& query) {
  check_dims(in_dims, out_dims, gmm.dim());
  if (query.size() != static_cast<Index>(in_dims.size())) {
    throw std::invalid_argument("gmr_condition: query length does not match input dimensions");
  }
  const Index K = gmm.size();
  const auto n_out = static_cast<Index>(out_dims.size());

  VectorXd log_w(K);
  std::vector<VectorXd> means(static_cast<std::size_t>(K));
  std::vector<MatrixXd> covs(static_cast<std::size_t>(K));
  for (Index k = 0; k < K; ++k) {
    const Gaussian& c = gmm.component(k);
    const MatrixXd s_ii = sub_block(c.covariance(), in_dims, in_dims);
    const MatrixXd s_oi = sub_block(c.covariance(), out_dims, in_dims);
    const MatrixXd s_oo = sub_block(c.covariance(), out_dims, out_dims);
    const Gaussian input(sub_vector(c.mean(), in_dims), s_ii);
    const VectorXd delta = query - input.mean();
    // gain = s_oi * s_ii^{-1}, via the input block's Cholesky factor
    const MatrixXd gain = input.factor().solve(s_oi.transpose()).transpose();
    means[static_cast<std::size_t>(k)] = sub_vector(c.mean(), out_dims) + gain * delta;
    covs[static_cast<std::size_t>(k)] = s_oo - gain * s_oi.transpose();
    const double prior = gmm.priors()(k);
    log_w(k) = prior > 0.0 ? std::log(prior) + gaussian_log_density(query, input)
                           : -std::numeric_limits<double>::infinity();
  }

  VectorXd h(K);
  bool fallback = false;
  const double top = log_w.maxCoeff();
  // Every unnormalized weight underflows to zero in linear space.
  if (!std::isfinite(top) || top < std::log(std::numeric_limits<double>::min())) {
    h.setConstant(1.0 / static_cast<double>(K));
    fallback = true;
  } else {
    h = (log_w.array() - top).exp();
    h /= h.sum();
  }

  VectorXd mean = VectorXd::Zero(n_out);
  for (Index k = 0; k < K; ++k) mean += h(k) * means[static_cast<std::size_t>(k)];
  MatrixXd cov = MatrixXd::Zero(n_out, n_out);
  for (Index k = 0; k < K; ++k) {
    const VectorXd d = means[static_cast<std::size_t>(k)] - mean;
    cov += h(k) * (covs[static_cast<std::size_t>(k)] + d * d.transpose());
  }
  return Conditional{Gaussian(std::move(mean), std::move(cov)), std::move(h), fallback};
}

}  // namespace bicoord
