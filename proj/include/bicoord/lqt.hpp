#pragma once

#include <array>
#include <vector>

#include "bicoord/gaussian.hpp"

namespace bicoord {

// Discrete linear system x_{t+1} = A x_t + B u_t over `channels` independent
// axes. Order 1 is a single integrator (state = position), order 2 a double
// integrator (state = position then velocity).
struct LinearSystem {
  MatrixXd A;
  MatrixXd B;
  double dt = 0.0;
  int order = 2;

  static LinearSystem integrator(Index channels, int order, double dt);

  Index state_dims() const { return A.rows(); }
  Index input_dims() const { return B.cols(); }
  void validate() const;
};

// x = Sx x1 + Su u for the stacked state x = [x_1; ...; x_T].
struct TransferMatrices {
  MatrixXd Sx;  // (Ds*T) x Ds
  MatrixXd Su;  // (Ds*T) x (Dc*(T-1))
};

TransferMatrices build_transfer_matrices(const LinearSystem& sys, Index horizon);

// Step-by-step rollout; returns the T x Ds state sequence.
MatrixXd simulate(const LinearSystem& sys, const VectorXd& x1, const VectorXd& u, Index horizon);

struct LQTProblem {
  MatrixXd ref_means;  // T x Ds
  MatrixXd Q;          // (Ds*T) square, symmetric PSD
  MatrixXd R;          // (Dc*(T-1)) square, symmetric PD
  VectorXd x1;

  Index horizon() const { return ref_means.rows(); }
  void validate(const LinearSystem& sys) const;
};

struct LQTSolution {
  VectorXd u;
  MatrixXd Sigma_u;
  MatrixXd x;  // T x Ds
};

LQTSolution solve_lqt(const LQTProblem& p, const LinearSystem& sys);
double lqt_cost(const LQTProblem& p, const LinearSystem& sys, const VectorXd& u);

// Builds Q with the given per-timestep precision on the position block of
// each state and zeros elsewhere.
MatrixXd tracking_precision(const std::vector<MatrixXd>& position_precisions, const LinearSystem& sys);
// Pads T x D position references with zero velocity rows to T x Ds.
MatrixXd pad_reference(const MatrixXd& positions, const LinearSystem& sys);
MatrixXd control_cost(const LinearSystem& sys, Index horizon, double r);

// Signed block selector C = [C^1 ... C^H]. For two arms C^1 = +I and
// C^2 = -I, so C U = u^1 - u^2 is the relative command.
class CoordinationMatrix {
 public:
  CoordinationMatrix(Index block_size, std::vector<int> signs);
  static CoordinationMatrix pair(Index block_size) { return CoordinationMatrix(block_size, {1, -1}); }

  Index arms() const { return static_cast<Index>(signs_.size()); }
  Index block_size() const { return block_; }
  int sign(Index h) const { return signs_[static_cast<std::size_t>(h)]; }

  // [C^h]: the 0/1 matrix picking arm h's block out of the stacked vector.
  MatrixXd selector(Index h) const;
  MatrixXd dense() const;

 private:
  Index block_;
  std::vector<int> signs_;
};

struct CoordinatedLQTProblem {
  std::array<LQTProblem, 2> arms;
  MatrixXd rel_means;  // T x Ds, reference for x^1 - x^2
  MatrixXd Qc;         // (Ds*T) square
  double sigma = 1.0;
  CoordinationMatrix coordination = CoordinationMatrix::pair(1);

  void validate(const LinearSystem& sys) const;
};

struct CoordinatedLQTSolution {
  VectorXd U;
  MatrixXd Sigma_U;
  std::array<MatrixXd, 2> x;  // per arm, T x Ds
};

// Minimizes both arms' tracking costs plus sigma times the relative tracking
// term through the stacked normal equations.
CoordinatedLQTSolution solve_coordinated_lqt(const CoordinatedLQTProblem& p, const LinearSystem& sys);
double coordinated_cost(const CoordinatedLQTProblem& p, const LinearSystem& sys, const VectorXd& U);
// (nu_c - x_c)^T Qc (nu_c - x_c) at the stacked command U.
double relative_tracking_cost(const CoordinatedLQTProblem& p, const LinearSystem& sys, const VectorXd& U);

std::vector<VectorXd> extract_arm_commands(const VectorXd& U, const CoordinationMatrix& c);

// One extra quadratic tracking term (reference, precision) on the same state.
struct TrackingTerm {
  MatrixXd ref_means;
  MatrixXd Q;
};

// Single-arm LQT with several tracking terms. Used to track a partner-relative
// reference while the partner is held fixed.
LQTSolution solve_lqt_terms(const std::vector<TrackingTerm>& terms, const MatrixXd& R, const VectorXd& x1,
                            const LinearSystem& sys);

}  // namespace bicoord
