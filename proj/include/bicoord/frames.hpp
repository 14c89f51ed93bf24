#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/LU>

#include "bicoord/gaussian.hpp"

namespace bicoord {

// Trajectories are T x D_aug matrices: column 0 is time in seconds, the
// remaining D columns are end-effector state channels.

// Affine observation frame (A, b) on augmented samples. Frames never act on
// time: A has a unit time entry with zero coupling and b has no time offset.
class Frame {
 public:
  Frame(MatrixXd linear, VectorXd offset);

  static Frame identity(Index state_dims);
  static Frame translation(const VectorXd& state_offset);
  // Rotation acting on the leading rotation.rows() state channels; any further
  // channels (e.g. quaternion components) pass through untouched.
  static Frame rigid(const MatrixXd& rotation, const VectorXd& state_offset);

  const MatrixXd& linear() const { return linear_; }
  const VectorXd& offset() const { return offset_; }
  Index dim() const { return offset_.size(); }
  Index state_dims() const { return offset_.size() - 1; }

  VectorXd to_local(const VectorXd& x) const;
  VectorXd to_global(const VectorXd& x) const;
  // N(A mu + b, A Sigma A^T)
  Gaussian to_global(const Gaussian& local) const;

 private:
  MatrixXd linear_;
  VectorXd offset_;
  Eigen::PartialPivLU<MatrixXd> lu_;
};

// Rowwise A^{-1}(x - b).
MatrixXd transform_to_frame(const MatrixXd& traj, const Frame& frame);
// Rowwise A x + b.
MatrixXd transform_from_frame(const MatrixXd& local, const Frame& frame);

// Per-timestep frames derived from the partner arm's trajectory.
struct RelativeFrameTrack {
  std::vector<double> times;
  std::vector<Frame> frames;

  std::size_t size() const { return frames.size(); }
  // Index of the sample nearest to `t`; `clamped` is set when t lies outside
  // the track horizon.
  std::size_t nearest(double t, bool* clamped = nullptr) const;
};

RelativeFrameTrack build_relative_frames(const MatrixXd& partner_traj);

// Observes `traj` row by row in the matching frame of `track`.
MatrixXd transform_to_track(const MatrixXd& traj, const RelativeFrameTrack& track);

struct ObjectPose {
  VectorXd position;
  Eigen::Vector4d quaternion{1.0, 0.0, 0.0, 0.0};  // w, x, y, z
};

struct Demonstration {
  std::vector<MatrixXd> trajectories;  // one T x D state matrix per arm
  std::map<std::string, ObjectPose> objects;
};

struct DemoSet {
  double dt = 0.0;
  std::vector<std::string> arms;
  std::vector<std::string> channels;  // optional names of the D state channels
  std::vector<Demonstration> demos;

  std::size_t arm_index(const std::string& name) const;
  void validate() const;
};

// Prepends the time channel t_i = i * dt.
MatrixXd with_time_channel(const MatrixXd& states, double dt);

// Frames attached to one demonstration: the static ones plus, optionally, the
// relative track built from the partner arm.
struct DemoFrames {
  std::vector<Frame> static_frames;
  std::optional<RelativeFrameTrack> relative;
};

class TPGMM {
 public:
  TPGMM(VectorXd priors, std::vector<std::vector<Gaussian>> frame_components, bool has_relative_frame,
        double duration);

  const VectorXd& priors() const { return priors_; }
  // [frame][k]; when has_relative_frame() the last frame is the relative one.
  const std::vector<std::vector<Gaussian>>& frame_components() const { return frames_; }
  bool has_relative_frame() const { return relative_; }
  Index size() const { return priors_.size(); }
  Index frame_count() const { return static_cast<Index>(frames_.size()); }
  Index static_frame_count() const { return frame_count() - (relative_ ? 1 : 0); }
  Index dim() const { return frames_.front().front().dim(); }
  // Time span of the training data in seconds.
  double duration() const { return duration_; }

  // Mixture observed in frame j alone (frame-local coordinates).
  GMM frame_gmm(Index j) const;
  double time_center(Index k) const { return frames_.front()[static_cast<std::size_t>(k)].mean()(0); }

 private:
  VectorXd priors_;
  std::vector<std::vector<Gaussian>> frames_;
  bool relative_;
  double duration_;
};

struct TpgmmFit {
  TPGMM model;
  std::vector<double> loglik_history;
};

TpgmmFit fit_tpgmm(const DemoSet& demos, const std::string& arm, const std::vector<DemoFrames>& frames_per_demo,
                   const EmConfig& cfg);

struct Reconstruction {
  GMM gmm;
  // Components whose time center fell outside the relative track.
  int clamped_components = 0;
};

// Task-specific mixture for new task parameters. The relative component k is
// transported with the track frame nearest to its time center and enters the
// product with its precision scaled by sigma.
Reconstruction reconstruct_gmm(const TPGMM& model, const std::vector<Frame>& new_frames,
                               const RelativeFrameTrack* relative_track, double sigma);

// Same product, but every relative component is transported with one given
// frame (the partner frame at the timestep being queried).
GMM reconstruct_gmm_with_frame(const TPGMM& model, const std::vector<Frame>& new_frames,
                               const Frame* relative_frame, double sigma);

}  // namespace bicoord
