#include <cmath>
#include <limits>
#include <random>
#include <string>

#include "joint_em.hpp"

namespace bicoord::detail {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;
constexpr int kKmeansIters = 50;

struct KmeansResult {
  std::vector<int> labels;
  MatrixXd centers;  // k x dim
};

// Squared distance from every row to `center`.
VectorXd squared_distances(const MatrixXd& data, const Eigen::RowVectorXd& center) {
  return (data.rowwise() - center).rowwise().squaredNorm();
}

KmeansResult kmeans(const MatrixXd& data, int k, std::uint64_t seed, int max_iters) {
  const Index n = data.rows();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  MatrixXd centers(k, data.cols());
  const auto first = static_cast<Index>(std::min<double>(static_cast<double>(n) - 1.0,
                                                         std::floor(unit(rng) * static_cast<double>(n))));
  centers.row(0) = data.row(first);
  VectorXd best = squared_distances(data, centers.row(0));
  for (int c = 1; c < k; ++c) {
    const double total = best.sum();
    Index pick = 0;
    if (total > 0.0) {
      const double target = unit(rng) * total;
      double acc = 0.0;
      pick = n - 1;
      for (Index i = 0; i < n; ++i) {
        acc += best(i);
        if (acc > target) {
          pick = i;
          break;
        }
      }
    } else {
      pick = static_cast<Index>(std::min<double>(static_cast<double>(n) - 1.0,
                                                 std::floor(unit(rng) * static_cast<double>(n))));
    }
    centers.row(c) = data.row(pick);
    best = best.cwiseMin(squared_distances(data, centers.row(c)));
  }

  std::vector<int> labels(static_cast<std::size_t>(n), -1);
  for (int it = 0; it < max_iters; ++it) {
    bool changed = false;
    for (Index i = 0; i < n; ++i) {
      int arg = 0;
      double dmin = (data.row(i) - centers.row(0)).squaredNorm();
      for (int c = 1; c < k; ++c) {
        const double d = (data.row(i) - centers.row(c)).squaredNorm();
        if (d < dmin) {  // strict: lowest index wins ties
          dmin = d;
          arg = c;
        }
      }
      if (labels[static_cast<std::size_t>(i)] != arg) {
        labels[static_cast<std::size_t>(i)] = arg;
        changed = true;
      }
    }
    if (!changed) break;
    MatrixXd sums = MatrixXd::Zero(k, data.cols());
    std::vector<Index> counts(static_cast<std::size_t>(k), 0);
    for (Index i = 0; i < n; ++i) {
      sums.row(labels[static_cast<std::size_t>(i)]) += data.row(i);
      ++counts[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) {
        centers.row(c) = sums.row(c) / static_cast<double>(counts[static_cast<std::size_t>(c)]);
      }
    }
  }
  return {std::move(labels), std::move(centers)};
}

// Builds a Gaussian from a (possibly singular) sample covariance. The
// configured regularization is always added; if that still is not PD (only
// possible with zero regularization) a growing jitter is added on top.
Gaussian regularized_gaussian(VectorXd mean, MatrixXd cov, double reg) {
  cov.diagonal().array() += reg;
  double jitter = 1e-12 * std::max(1.0, cov.diagonal().cwiseAbs().maxCoeff());
  for (int attempt = 0;; ++attempt) {
    try {
      return Gaussian(mean, cov);
    } catch (const NumericalError&) {
      if (attempt > 40) throw;
      cov.diagonal().array() += jitter;
      jitter *= 10.0;
    }
  }
}

MatrixXd weighted_covariance(const MatrixXd& x, const VectorXd& w, const VectorXd& mean, double total) {
  const MatrixXd centered = x.rowwise() - mean.transpose();
  return (centered.transpose() * w.asDiagonal() * centered) / total;
}

struct Params {
  VectorXd priors;
  std::vector<std::vector<Gaussian>> comps;  // [block][k]
};

// Per-sample log of prior_k * prod_j N(x_j | comp_jk); returns N x K.
MatrixXd joint_log_terms(std::span<const MatrixXd> blocks, const Params& p) {
  const Index n = blocks.front().rows();
  const Index K = p.priors.size();
  MatrixXd out(n, K);
  for (Index k = 0; k < K; ++k) {
    const double prior = p.priors(k);
    out.col(k).setConstant(prior > 0.0 ? std::log(prior) : -std::numeric_limits<double>::infinity());
    for (std::size_t j = 0; j < blocks.size(); ++j) {
      const Gaussian& g = p.comps[j][static_cast<std::size_t>(k)];
      const MatrixXd centered = (blocks[j].rowwise() - g.mean().transpose()).transpose();
      const MatrixXd z = g.factor().matrixL().solve(centered);
      const double c = -0.5 * (static_cast<double>(g.dim()) * kLog2Pi + g.log_det_covariance());
      out.col(k).array() += c - 0.5 * z.colwise().squaredNorm().transpose().array();
    }
  }
  return out;
}

// Normalizes rows of log terms in place into responsibilities; returns the
// average log-likelihood.
double responsibilities(MatrixXd& terms) {
  double total = 0.0;
  for (Index i = 0; i < terms.rows(); ++i) {
    const double top = terms.row(i).maxCoeff();
    if (!std::isfinite(top)) throw NumericalError("EM: sample has zero likelihood under every component");
    terms.row(i) = (terms.row(i).array() - top).exp();
    const double s = terms.row(i).sum();
    terms.row(i) /= s;
    total += top + std::log(s);
  }
  return total / static_cast<double>(terms.rows());
}

Params initialize(std::span<const MatrixXd> blocks, const EmConfig& cfg) {
  const Index n = blocks.front().rows();
  Index width = 0;
  for (const auto& b : blocks) width += b.cols();
  MatrixXd stacked(n, width);
  Index col = 0;
  for (const auto& b : blocks) {
    stacked.middleCols(col, b.cols()) = b;
    col += b.cols();
  }
  const int K = cfg.components;
  const KmeansResult km = kmeans(stacked, K, cfg.seed, kKmeansIters);

  Params p;
  p.priors = VectorXd::Zero(K);
  p.comps.resize(blocks.size());
  std::vector<std::vector<Index>> members(static_cast<std::size_t>(K));
  for (Index i = 0; i < n; ++i) members[static_cast<std::size_t>(km.labels[static_cast<std::size_t>(i)])].push_back(i);
  for (int k = 0; k < K; ++k) {
    p.priors(k) = static_cast<double>(std::max<std::size_t>(members[static_cast<std::size_t>(k)].size(), 1));
  }
  p.priors /= p.priors.sum();

  col = 0;
  for (std::size_t j = 0; j < blocks.size(); ++j) {
    const MatrixXd& b = blocks[j];
    const VectorXd global_mean = b.colwise().mean().transpose();
    const MatrixXd global_cov = weighted_covariance(b, VectorXd::Ones(n), global_mean, static_cast<double>(n));
    for (int k = 0; k < K; ++k) {
      const auto& m = members[static_cast<std::size_t>(k)];
      if (m.size() < 2) {
        const VectorXd mean = m.empty() ? VectorXd(km.centers.row(k).segment(col, b.cols()).transpose())
                                        : VectorXd(b.row(m.front()).transpose());
        p.comps[j].push_back(regularized_gaussian(mean, global_cov, cfg.cov_regularization));
        continue;
      }
      MatrixXd sub(static_cast<Index>(m.size()), b.cols());
      for (std::size_t r = 0; r < m.size(); ++r) sub.row(static_cast<Index>(r)) = b.row(m[r]);
      const VectorXd mean = sub.colwise().mean().transpose();
      const auto cnt = static_cast<double>(m.size());
      p.comps[j].push_back(
          regularized_gaussian(mean, weighted_covariance(sub, VectorXd::Ones(sub.rows()), mean, cnt),
                               cfg.cov_regularization));
    }
    col += b.cols();
  }
  return p;
}

Params maximize(std::span<const MatrixXd> blocks, const MatrixXd& resp, const Params& prev, const EmConfig& cfg) {
  const Index n = resp.rows();
  const Index K = resp.cols();
  Params p;
  const VectorXd mass = resp.colwise().sum().transpose();
  p.priors = mass / mass.sum();
  p.comps.resize(blocks.size());
  for (std::size_t j = 0; j < blocks.size(); ++j) {
    for (Index k = 0; k < K; ++k) {
      if (!(mass(k) > std::numeric_limits<double>::min() * static_cast<double>(n))) {
        // Component lost all support: keep its previous shape.
        p.comps[j].push_back(prev.comps[j][static_cast<std::size_t>(k)]);
        continue;
      }
      const VectorXd w = resp.col(k);
      const VectorXd mean = (blocks[j].transpose() * w) / mass(k);
      p.comps[j].push_back(regularized_gaussian(mean, weighted_covariance(blocks[j], w, mean, mass(k)),
                                                cfg.cov_regularization));
    }
  }
  return p;
}

}  // namespace

std::vector<int> kmeans_labels(const MatrixXd& data, int k, std::uint64_t seed, int max_iters) {
  return kmeans(data, k, seed, max_iters).labels;
}

JointMixture fit_joint_mixture(std::span<const MatrixXd> blocks, const EmConfig& cfg) {
  cfg.validate();
  if (blocks.empty()) throw std::invalid_argument("EM: no data blocks");
  const Index n = blocks.front().rows();
  for (const auto& b : blocks) {
    if (b.rows() != n) throw std::invalid_argument("EM: blocks differ in sample count");
    if (b.cols() == 0) throw std::invalid_argument("EM: empty data block");
    if (!b.allFinite()) throw std::invalid_argument("EM: data contains non-finite values");
  }
  if (n < cfg.components) {
    throw std::invalid_argument("EM: " + std::to_string(n) + " samples cannot support " +
                                std::to_string(cfg.components) + " components");
  }

  Params current = initialize(blocks, cfg);
  Params previous = current;
  std::vector<double> history;
  for (int it = 0; it < cfg.max_iters; ++it) {
    MatrixXd resp = joint_log_terms(blocks, current);
    const double ll = responsibilities(resp);
    if (!history.empty() && ll < history.back()) {
      // The regularized M-step can overshoot by a hair near convergence; keep
      // the last improving iterate.
      current = previous;
      break;
    }
    const bool converged = !history.empty() && ll - history.back() < cfg.loglik_tol;
    history.push_back(ll);
    if (converged || it + 1 == cfg.max_iters) break;
    previous = current;
    current = maximize(blocks, resp, previous, cfg);
  }
  return JointMixture{std::move(current.priors), std::move(current.comps), std::move(history)};
}

}  // namespace bicoord::detail
