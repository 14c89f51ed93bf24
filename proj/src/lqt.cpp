#include "bicoord/lqt.hpp"

#include <cmath>
#include <string>

namespace bicoord {

namespace {

VectorXd stack_rows(const MatrixXd& m) {
  // Row-major flattening: [x_1; x_2; ...]
  VectorXd v(m.size());
  for (Index t = 0; t < m.rows(); ++t) v.segment(t * m.cols(), m.cols()) = m.row(t).transpose();
  return v;
}

MatrixXd unstack_rows(const VectorXd& v, Index cols) {
  MatrixXd m(v.size() / cols, cols);
  for (Index t = 0; t < m.rows(); ++t) m.row(t) = v.segment(t * cols, cols).transpose();
  return m;
}

void check_square(const MatrixXd& m, Index n, const char* what) {
  if (m.rows() != n || m.cols() != n) {
    throw std::invalid_argument(std::string(what) + ": expected " + std::to_string(n) + "x" + std::to_string(n) +
                                ", got " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
  }
}

struct Factored {
  Eigen::LLT<MatrixXd> llt;
  Index n;
};

Factored factor_curvature(const MatrixXd& h, const char* who) {
  Factored f{Eigen::LLT<MatrixXd>(0.5 * (h + h.transpose())), h.rows()};
  if (f.llt.info() != Eigen::Success) throw NumericalError(std::string(who) + ": curvature is not positive definite");
  return f;
}

}  // namespace

LinearSystem LinearSystem::integrator(Index channels, int order, double dt) {
  if (channels < 1) throw std::invalid_argument("LinearSystem: need at least one channel");
  if (!(dt > 0.0)) throw std::invalid_argument("LinearSystem: dt must be positive");
  const MatrixXd I = MatrixXd::Identity(channels, channels);
  LinearSystem sys;
  sys.dt = dt;
  sys.order = order;
  if (order == 1) {
    sys.A = I;
    sys.B = dt * I;
  } else if (order == 2) {
    sys.A = MatrixXd::Identity(2 * channels, 2 * channels);
    sys.A.topRightCorner(channels, channels) = dt * I;
    sys.B = MatrixXd::Zero(2 * channels, channels);
    sys.B.topRows(channels) = 0.5 * dt * dt * I;
    sys.B.bottomRows(channels) = dt * I;
  } else {
    throw std::invalid_argument("LinearSystem: order must be 1 or 2");
  }
  return sys;
}

void LinearSystem::validate() const {
  if (!(dt > 0.0)) throw std::invalid_argument("LinearSystem: dt must be positive");
  if (order != 1 && order != 2) throw std::invalid_argument("LinearSystem: order must be 1 or 2");
  if (A.rows() != A.cols() || B.rows() != A.rows() || B.cols() < 1) {
    throw std::invalid_argument("LinearSystem: inconsistent A/B dimensions");
  }
}

TransferMatrices build_transfer_matrices(const LinearSystem& sys, Index horizon) {
  sys.validate();
  if (horizon < 2) throw std::invalid_argument("build_transfer_matrices: horizon must be >= 2");
  const Index ds = sys.state_dims();
  const Index dc = sys.input_dims();
  TransferMatrices tm{MatrixXd::Zero(ds * horizon, ds), MatrixXd::Zero(ds * horizon, dc * (horizon - 1))};

  // powers[k] = A^k, kernels[k] = A^k B
  std::vector<MatrixXd> powers{MatrixXd::Identity(ds, ds)};
  for (Index k = 1; k < horizon; ++k) powers.push_back(sys.A * powers.back());
  std::vector<MatrixXd> kernels;
  for (Index k = 0; k + 1 < horizon; ++k) kernels.push_back(powers[static_cast<std::size_t>(k)] * sys.B);

  for (Index t = 0; t < horizon; ++t) {
    tm.Sx.middleRows(t * ds, ds) = powers[static_cast<std::size_t>(t)];
    for (Index s = 0; s < t; ++s) {
      tm.Su.block(t * ds, s * dc, ds, dc) = kernels[static_cast<std::size_t>(t - 1 - s)];
    }
  }
  return tm;
}

MatrixXd simulate(const LinearSystem& sys, const VectorXd& x1, const VectorXd& u, Index horizon) {
  const Index dc = sys.input_dims();
  if (u.size() != dc * (horizon - 1)) throw std::invalid_argument("simulate: command length mismatch");
  MatrixXd x(horizon, sys.state_dims());
  VectorXd state = x1;
  for (Index t = 0; t < horizon; ++t) {
    x.row(t) = state.transpose();
    if (t + 1 < horizon) state = sys.A * state + sys.B * u.segment(t * dc, dc);
  }
  return x;
}

void LQTProblem::validate(const LinearSystem& sys) const {
  sys.validate();
  const Index T = horizon();
  const Index ds = sys.state_dims();
  if (T < 2) throw std::invalid_argument("LQTProblem: horizon must be >= 2");
  if (ref_means.cols() != ds) throw std::invalid_argument("LQTProblem: reference width does not match the state");
  if (x1.size() != ds) throw std::invalid_argument("LQTProblem: initial state size mismatch");
  check_square(Q, ds * T, "LQTProblem Q");
  check_square(R, sys.input_dims() * (T - 1), "LQTProblem R");
  if (!ref_means.allFinite() || !Q.allFinite() || !R.allFinite() || !x1.allFinite()) {
    throw std::invalid_argument("LQTProblem: non-finite entries");
  }
}

MatrixXd tracking_precision(const std::vector<MatrixXd>& position_precisions, const LinearSystem& sys) {
  const Index ds = sys.state_dims();
  const auto T = static_cast<Index>(position_precisions.size());
  MatrixXd q = MatrixXd::Zero(ds * T, ds * T);
  for (Index t = 0; t < T; ++t) {
    const MatrixXd& p = position_precisions[static_cast<std::size_t>(t)];
    if (p.rows() > ds || p.rows() != p.cols()) throw std::invalid_argument("tracking_precision: block size mismatch");
    q.block(t * ds, t * ds, p.rows(), p.cols()) = p;
  }
  return q;
}

MatrixXd pad_reference(const MatrixXd& positions, const LinearSystem& sys) {
  MatrixXd out = MatrixXd::Zero(positions.rows(), sys.state_dims());
  out.leftCols(positions.cols()) = positions;
  return out;
}

MatrixXd control_cost(const LinearSystem& sys, Index horizon, double r) {
  if (!(r > 0.0)) throw std::invalid_argument("control_cost: r must be positive");
  const Index n = sys.input_dims() * (horizon - 1);
  return r * MatrixXd::Identity(n, n);
}

LQTSolution solve_lqt_terms(const std::vector<TrackingTerm>& terms, const MatrixXd& R, const VectorXd& x1,
                            const LinearSystem& sys) {
  if (terms.empty()) throw std::invalid_argument("solve_lqt: no tracking terms");
  const Index T = terms.front().ref_means.rows();
  const TransferMatrices tm = build_transfer_matrices(sys, T);
  const VectorXd free = tm.Sx * x1;

  MatrixXd curvature = R;
  VectorXd rhs = VectorXd::Zero(R.rows());
  for (const auto& term : terms) {
    if (term.ref_means.rows() != T) throw std::invalid_argument("solve_lqt: tracking terms differ in horizon");
    const MatrixXd qsu = term.Q * tm.Su;
    curvature.noalias() += tm.Su.transpose() * qsu;
    rhs.noalias() += qsu.transpose() * (stack_rows(term.ref_means) - free);
  }
  const Factored f = factor_curvature(curvature, "solve_lqt");
  LQTSolution sol;
  sol.u = f.llt.solve(rhs);
  sol.Sigma_u = f.llt.solve(MatrixXd::Identity(f.n, f.n));
  sol.x = unstack_rows(free + tm.Su * sol.u, sys.state_dims());
  return sol;
}

LQTSolution solve_lqt(const LQTProblem& p, const LinearSystem& sys) {
  p.validate(sys);
  return solve_lqt_terms({TrackingTerm{p.ref_means, p.Q}}, p.R, p.x1, sys);
}

double lqt_cost(const LQTProblem& p, const LinearSystem& sys, const VectorXd& u) {
  const TransferMatrices tm = build_transfer_matrices(sys, p.horizon());
  const VectorXd e = stack_rows(p.ref_means) - (tm.Sx * p.x1 + tm.Su * u);
  return e.dot(p.Q * e) + u.dot(p.R * u);
}

CoordinationMatrix::CoordinationMatrix(Index block_size, std::vector<int> signs)
    : block_(block_size), signs_(std::move(signs)) {
  if (block_ < 1) throw std::invalid_argument("CoordinationMatrix: empty block");
  if (signs_.empty()) throw std::invalid_argument("CoordinationMatrix: no arms");
  for (int s : signs_) {
    if (s != 1 && s != -1) throw std::invalid_argument("CoordinationMatrix: signs must be +1 or -1");
  }
}

MatrixXd CoordinationMatrix::selector(Index h) const {
  if (h < 0 || h >= arms()) throw std::invalid_argument("CoordinationMatrix: arm index out of range");
  MatrixXd s = MatrixXd::Zero(block_, block_ * arms());
  s.middleCols(h * block_, block_).setIdentity();
  return s;
}

MatrixXd CoordinationMatrix::dense() const {
  MatrixXd c = MatrixXd::Zero(block_, block_ * arms());
  for (Index h = 0; h < arms(); ++h) c += static_cast<double>(sign(h)) * selector(h);
  return c;
}

std::vector<VectorXd> extract_arm_commands(const VectorXd& U, const CoordinationMatrix& c) {
  if (U.size() != c.block_size() * c.arms()) {
    throw std::invalid_argument("extract_arm_commands: stacked length " + std::to_string(U.size()) +
                                " does not match " + std::to_string(c.arms()) + " blocks of " +
                                std::to_string(c.block_size()));
  }
  std::vector<VectorXd> out;
  for (Index h = 0; h < c.arms(); ++h) out.emplace_back(U.segment(h * c.block_size(), c.block_size()));
  return out;
}

void CoordinatedLQTProblem::validate(const LinearSystem& sys) const {
  for (const auto& a : arms) a.validate(sys);
  const Index T = arms[0].horizon();
  if (arms[1].horizon() != T) throw std::invalid_argument("CoordinatedLQTProblem: arms differ in horizon");
  if (rel_means.rows() != T || rel_means.cols() != sys.state_dims()) {
    throw std::invalid_argument("CoordinatedLQTProblem: relative reference size mismatch");
  }
  check_square(Qc, sys.state_dims() * T, "CoordinatedLQTProblem Qc");
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw std::invalid_argument("CoordinatedLQTProblem: sigma must be >= 0");
  if (coordination.arms() != 2 || coordination.block_size() != sys.input_dims() * (T - 1)) {
    throw std::invalid_argument("CoordinatedLQTProblem: coordination matrix does not match the command size");
  }
}

namespace {

// Relative initial state implied by the coordination signs.
VectorXd relative_initial(const CoordinatedLQTProblem& p) {
  return static_cast<double>(p.coordination.sign(0)) * p.arms[0].x1 +
         static_cast<double>(p.coordination.sign(1)) * p.arms[1].x1;
}

}  // namespace

CoordinatedLQTSolution solve_coordinated_lqt(const CoordinatedLQTProblem& p, const LinearSystem& sys) {
  p.validate(sys);
  const Index T = p.arms[0].horizon();
  const TransferMatrices tm = build_transfer_matrices(sys, T);
  const Index n = p.coordination.block_size();
  const MatrixXd& su = tm.Su;

  MatrixXd curvature = MatrixXd::Zero(2 * n, 2 * n);
  VectorXd rhs = VectorXd::Zero(2 * n);
  for (Index h = 0; h < 2; ++h) {
    const LQTProblem& a = p.arms[static_cast<std::size_t>(h)];
    const MatrixXd qsu = a.Q * su;
    curvature.block(h * n, h * n, n, n) = su.transpose() * qsu + a.R;
    rhs.segment(h * n, n) = qsu.transpose() * (stack_rows(a.ref_means) - tm.Sx * a.x1);
  }
  if (p.sigma > 0.0) {
    const MatrixXd qsu = p.Qc * su;
    const MatrixXd omega = su.transpose() * qsu;
    const VectorXd g = qsu.transpose() * (stack_rows(p.rel_means) - tm.Sx * relative_initial(p));
    for (Index a = 0; a < 2; ++a) {
      const double sa = static_cast<double>(p.coordination.sign(a));
      rhs.segment(a * n, n) += p.sigma * sa * g;
      for (Index b = 0; b < 2; ++b) {
        const double sb = static_cast<double>(p.coordination.sign(b));
        curvature.block(a * n, b * n, n, n) += p.sigma * sa * sb * omega;
      }
    }
  }

  const Factored f = factor_curvature(curvature, "solve_coordinated_lqt");
  CoordinatedLQTSolution sol;
  sol.U = f.llt.solve(rhs);
  if (!sol.U.allFinite()) throw NumericalError("solve_coordinated_lqt: non-finite solution");
  sol.Sigma_U = f.llt.solve(MatrixXd::Identity(f.n, f.n));
  const auto parts = extract_arm_commands(sol.U, p.coordination);
  for (std::size_t h = 0; h < 2; ++h) {
    sol.x[h] = unstack_rows(tm.Sx * p.arms[h].x1 + su * parts[h], sys.state_dims());
  }
  return sol;
}

double relative_tracking_cost(const CoordinatedLQTProblem& p, const LinearSystem& sys, const VectorXd& U) {
  const Index T = p.arms[0].horizon();
  const TransferMatrices tm = build_transfer_matrices(sys, T);
  const VectorXd cu = p.coordination.dense() * U;
  const VectorXd e = stack_rows(p.rel_means) - (tm.Sx * relative_initial(p) + tm.Su * cu);
  return e.dot(p.Qc * e);
}

double coordinated_cost(const CoordinatedLQTProblem& p, const LinearSystem& sys, const VectorXd& U) {
  const auto parts = extract_arm_commands(U, p.coordination);
  double c = 0.0;
  for (std::size_t h = 0; h < 2; ++h) c += lqt_cost(p.arms[h], sys, parts[h]);
  return c + p.sigma * relative_tracking_cost(p, sys, U);
}

}  // namespace bicoord
