#pragma once

#include <array>
#include <string>
#include <vector>

#include "bicoord/frames.hpp"
#include "bicoord/lqt.hpp"

namespace bicoord {

// Where the learned relative relationship enters generation.
enum class CoordinationSite { representation, control, both };

// How the partner-dependent frame is applied to time-extended components.
//   per_timestep     - each query time uses the partner frame at that time
//   component_center - each component uses the partner frame at its time center
enum class RelativeAnchor { per_timestep, component_center };

std::string to_string(CoordinationSite site);
CoordinationSite parse_site(const std::string& s);

struct GenerationConfig {
  Index horizon = 100;  // output samples T_out
  double sigma = 1.0;
  CoordinationSite site = CoordinationSite::control;
  int synergy_iters = 3;
  double synergy_tol = 1e-3;
  // Fraction of the regenerated trajectory taken per synergistic iteration.
  double synergy_relaxation = 0.5;
  RelativeAnchor anchor = RelativeAnchor::component_center;
  int order = 2;
  double control_cost = 1e-6;

  void validate() const;
};

struct ArmTask {
  std::vector<Frame> frames;  // static frames for the new situation
  VectorXd start;             // initial position; initial velocity is zero
};

struct TaskInstance {
  std::vector<ArmTask> arms;
  double duration = 0.0;  // seconds; 0 uses the model's training duration
};

// Per-timestep tracking references produced by GMR on time.
struct References {
  VectorXd times;
  MatrixXd means;  // T x D
  std::vector<MatrixXd> covariances;
  int gmr_fallbacks = 0;
  int clamped_components = 0;
};

VectorXd output_times(double duration, Index horizon);

// Linear resampling of a trajectory onto `times` by normalized phase.
MatrixXd resample_trajectory(const MatrixXd& traj, const VectorXd& times);

References references_from_gmm(const GMM& gmm, const VectorXd& times);

// References from the task-specific mixture. With a partner track the relative
// frame enters the product with weight sigma.
References task_references(const TPGMM& model, const std::vector<Frame>& frames, const RelativeFrameTrack* partner,
                           double sigma, RelativeAnchor anchor, const VectorXd& times);

// Relative reference (own minus partner) from the relative-frame mixture.
References relative_references(const TPGMM& model, const VectorXd& times);

// LQT tracking of the references from a standstill at `start`; returns the
// T x (1 + D) trajectory with time in column 0.
MatrixXd track_references(const References& refs, const VectorXd& start, const GenerationConfig& cfg);

// Plain task-parameterized generation from the static frames only.
MatrixXd generate_independent(const TPGMM& model, const ArmTask& task, const GenerationConfig& cfg,
                              double duration = 0.0);

struct FollowerResult {
  MatrixXd trajectory;
  References references;
};

FollowerResult generate_follower(const TPGMM& follower, const MatrixXd& leader_traj, const ArmTask& task,
                                 const GenerationConfig& cfg, double duration = 0.0);

struct SynergyResult {
  std::array<MatrixXd, 2> trajectories;
  std::array<MatrixXd, 2> independent;  // iteration 0
  // Maximum per-sample position change of either arm, one entry per
  // coordinated iteration (iteration 1 onward).
  std::vector<double> max_displacement;
  int iterations = 1;
  int returned_iteration = 0;
  bool oscillation_warning = false;
};

SynergyResult generate_synergistic(const std::array<const TPGMM*, 2>& models, const TaskInstance& task,
                                   const GenerationConfig& cfg);

// Endpoint distance between the position channels of two trajectories.
double endpoint_gap(const MatrixXd& a, const MatrixXd& b);
// Per-sample distance between the position channels of two trajectories.
VectorXd relative_gap(const MatrixXd& a, const MatrixXd& b);
double rmse(const MatrixXd& a, const MatrixXd& b);

}  // namespace bicoord
