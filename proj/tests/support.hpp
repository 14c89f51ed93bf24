#pragma once

// Random generators and reference computations shared by the unit tests and
// the acceptance runner. The oracles deliberately avoid the library's own
// formulas: products are solved as stacked least squares, LQT optimality is
// probed with finite differences.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Dense>

#include "bicoord/frames.hpp"
#include "bicoord/gaussian.hpp"
#include "bicoord/lqt.hpp"

namespace bicoord::testing {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  double uniform(double lo = 0.0, double hi = 1.0) { return std::uniform_real_distribution<double>(lo, hi)(gen_); }
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(gen_); }
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(gen_); }

  VectorXd vector(Index n, double scale = 1.0) {
    VectorXd v(n);
    for (Index i = 0; i < n; ++i) v(i) = scale * normal();
    return v;
  }

  MatrixXd matrix(Index r, Index c, double scale = 1.0) {
    MatrixXd m(r, c);
    for (Index i = 0; i < r; ++i) {
      for (Index j = 0; j < c; ++j) m(i, j) = scale * normal();
    }
    return m;
  }

  // Symmetric positive definite with eigenvalues in roughly [floor, floor + n*scale^2].
  MatrixXd spd(Index n, double scale = 1.0, double floor = 0.1) {
    const MatrixXd g = matrix(n, n, scale);
    return g * g.transpose() + floor * MatrixXd::Identity(n, n);
  }

  // Uniformly random proper rotation.
  MatrixXd rotation(Index n) {
    Eigen::HouseholderQR<MatrixXd> qr(matrix(n, n));
    MatrixXd q = qr.householderQ();
    const MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
    for (Index i = 0; i < n; ++i) {
      if (r(i, i) < 0.0) q.col(i) = -q.col(i);
    }
    if (q.determinant() < 0.0) q.col(0) = -q.col(0);
    return q;
  }

  Gaussian gaussian(Index n, double mean_scale = 1.0, double cov_scale = 1.0) {
    return Gaussian(vector(n, mean_scale), spd(n, cov_scale));
  }

  std::mt19937_64& engine() { return gen_; }

 private:
  std::mt19937_64 gen_;
};

struct ProductOracle {
  VectorXd mean;
  MatrixXd covariance;
};

// Minimizer of sum_j w_j (x - mu_j)^T Sigma_j^{-1} (x - mu_j), solved as the
// stacked least-squares problem || W^{1/2} L_j^{-1} (x - mu_j) || with a
// column-pivoted QR. The covariance is the inverse Hessian (R^T R)^{-1}.
inline ProductOracle product_oracle(const std::vector<Gaussian>& factors, const std::vector<double>& weights) {
  const Index d = factors.front().dim();
  std::vector<MatrixXd> rows;
  std::vector<VectorXd> rhs;
  for (std::size_t j = 0; j < factors.size(); ++j) {
    if (weights[j] == 0.0) continue;
    const MatrixXd L = factors[j].covariance().llt().matrixL();
    const MatrixXd W = std::sqrt(weights[j]) * L.triangularView<Eigen::Lower>().solve(MatrixXd::Identity(d, d));
    rows.push_back(W);
    rhs.push_back(W * factors[j].mean());
  }
  MatrixXd M(static_cast<Index>(rows.size()) * d, d);
  VectorXd y(M.rows());
  for (std::size_t j = 0; j < rows.size(); ++j) {
    M.middleRows(static_cast<Index>(j) * d, d) = rows[j];
    y.segment(static_cast<Index>(j) * d, d) = rhs[j];
  }
  Eigen::ColPivHouseholderQR<MatrixXd> qr(M);
  ProductOracle out;
  out.mean = qr.solve(y);
  const MatrixXd hess = M.transpose() * M;
  out.covariance = hess.fullPivLu().inverse();
  return out;
}

inline double relative_error(const MatrixXd& a, const MatrixXd& b) {
  const double scale = std::max(1.0, b.cwiseAbs().maxCoeff());
  return (a - b).cwiseAbs().maxCoeff() / scale;
}

// A random LQT problem on a double integrator with a mix of via-point and
// dense tracking precisions.
struct RandomLqt {
  LinearSystem sys;
  LQTProblem problem;
};

inline LQTProblem random_lqt_problem(Rng& rng, const LinearSystem& sys, Index T) {
  const Index ds = sys.state_dims();
  const Index np = ds / sys.order;
  LQTProblem p;
  p.ref_means = rng.matrix(T, ds);
  std::vector<MatrixXd> precisions;
  for (Index t = 0; t < T; ++t) {
    const bool sparse = rng.uniform() < 0.3;
    precisions.push_back(sparse ? MatrixXd(MatrixXd::Zero(np, np)) : MatrixXd(rng.spd(np, 1.0, 0.5)));
  }
  precisions.back() = rng.spd(np, 2.0, 1.0);
  p.Q = tracking_precision(precisions, sys);
  p.R = control_cost(sys, T, std::pow(10.0, rng.uniform(-3.0, -1.0)));
  p.x1 = rng.vector(ds);
  return p;
}

inline RandomLqt random_lqt(Rng& rng) {
  const Index channels = rng.integer(1, 3);
  const int order = rng.integer(1, 2);
  const Index T = rng.integer(3, 12);
  RandomLqt out{LinearSystem::integrator(channels, order, rng.uniform(0.05, 0.5)), {}};
  out.problem = random_lqt_problem(rng, out.sys, T);
  return out;
}

struct RandomCoordinated {
  LinearSystem sys;
  CoordinatedLQTProblem problem;
};

inline RandomCoordinated random_coordinated(Rng& rng, double sigma) {
  const Index channels = rng.integer(1, 3);
  const int order = rng.integer(1, 2);
  const Index T = rng.integer(3, 10);
  RandomCoordinated out{LinearSystem::integrator(channels, order, rng.uniform(0.05, 0.5)), {}};
  auto& p = out.problem;
  p.arms[0] = random_lqt_problem(rng, out.sys, T);
  p.arms[1] = random_lqt_problem(rng, out.sys, T);
  const Index np = out.sys.state_dims() / order;
  p.rel_means = rng.matrix(T, out.sys.state_dims());
  std::vector<MatrixXd> precisions;
  for (Index t = 0; t < T; ++t) precisions.push_back(rng.spd(np, 1.0, 0.2));
  p.Qc = tracking_precision(precisions, out.sys);
  p.sigma = sigma;
  p.coordination = CoordinationMatrix::pair(out.sys.input_dims() * (T - 1));
  return out;
}

// Central-difference gradient of f at u.
template <class F>
VectorXd numeric_gradient(F&& f, const VectorXd& u, double h) {
  VectorXd g(u.size());
  VectorXd x = u;
  for (Index i = 0; i < u.size(); ++i) {
    x(i) = u(i) + h;
    const double fp = f(x);
    x(i) = u(i) - h;
    const double fm = f(x);
    x(i) = u(i);
    g(i) = (fp - fm) / (2.0 * h);
  }
  return g;
}

// Rigid transform of augmented samples: rotation on the leading position
// channels and a translation, time untouched.
struct Rigid {
  MatrixXd R;
  VectorXd p;

  MatrixXd apply_states(const MatrixXd& states) const {
    MatrixXd out = states;
    const Index n = R.rows();
    out.leftCols(n) = (states.leftCols(n) * R.transpose()).rowwise() + p.transpose();
    return out;
  }
  VectorXd apply_point(const VectorXd& x) const {
    VectorXd out = x;
    out.head(R.rows()) = R * x.head(R.rows()) + p;
    return out;
  }
  Frame apply(const Frame& f) const {
    const Index n = R.rows();
    MatrixXd A = f.linear();
    VectorXd b = f.offset();
    A.block(1, 1, n, A.cols() - 1) = R * f.linear().block(1, 1, n, A.cols() - 1);
    b.segment(1, n) = R * f.offset().segment(1, n) + p;
    return Frame(A, b);
  }
};

}  // namespace bicoord::testing
