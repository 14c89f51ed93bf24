#pragma once

#include <span>
#include <vector>

#include "bicoord/gaussian.hpp"

namespace bicoord::detail {

// Mixture fitted jointly over P observation blocks of the same N samples. The
// responsibility of component k is proportional to the prior times the
// product of the per-block densities; each block keeps its own means and
// covariances. P = 1 is ordinary EM.
struct JointMixture {
  VectorXd priors;
  std::vector<std::vector<Gaussian>> components;  // [block][k]
  std::vector<double> loglik_history;
};

JointMixture fit_joint_mixture(std::span<const MatrixXd> blocks, const EmConfig& cfg);

// k-means++ seeding followed by Lloyd iterations. Returns the label of every row.
std::vector<int> kmeans_labels(const MatrixXd& data, int k, std::uint64_t seed, int max_iters);

}  // namespace bicoord::detail
