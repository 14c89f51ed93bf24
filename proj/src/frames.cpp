#include "bicoord/frames.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/SVD>

#include "joint_em.hpp"

namespace bicoord {

namespace {

constexpr double kMaxCondition = 1e12;

}  // namespace

Frame::Frame(MatrixXd linear, VectorXd offset) : linear_(std::move(linear)), offset_(std::move(offset)) {
  const Index d = offset_.size();
  if (d < 2) throw std::invalid_argument("Frame: needs a time channel and at least one state channel");
  if (linear_.rows() != d || linear_.cols() != d) throw std::invalid_argument("Frame: A and b sizes differ");
  if (!linear_.allFinite() || !offset_.allFinite()) throw std::invalid_argument("Frame: non-finite entries");
  if (linear_(0, 0) != 1.0 || offset_(0) != 0.0 || linear_.row(0).tail(d - 1).cwiseAbs().maxCoeff() != 0.0 ||
      linear_.col(0).tail(d - 1).cwiseAbs().maxCoeff() != 0.0) {
    throw std::invalid_argument("Frame: frames must leave the time channel untouched");
  }
  const Eigen::JacobiSVD<MatrixXd> svd(linear_);
  const auto& s = svd.singularValues();
  if (!(s(s.size() - 1) > 0.0) || s(0) / s(s.size() - 1) >= kMaxCondition) {
    throw std::invalid_argument("Frame: A is singular or too ill-conditioned");
  }
  lu_.compute(linear_);
}

Frame Frame::identity(Index state_dims) {
  return Frame(MatrixXd::Identity(state_dims + 1, state_dims + 1), VectorXd::Zero(state_dims + 1));
}

Frame Frame::translation(const VectorXd& state_offset) {
  const Index d = state_offset.size() + 1;
  VectorXd b(d);
  b << 0.0, state_offset;
  return Frame(MatrixXd::Identity(d, d), std::move(b));
}

Frame Frame::rigid(const MatrixXd& rotation, const VectorXd& state_offset) {
  const Index d = state_offset.size() + 1;
  if (rotation.rows() != rotation.cols() || rotation.rows() > state_offset.size()) {
    throw std::invalid_argument("Frame::rigid: rotation does not fit the state");
  }
  MatrixXd a = MatrixXd::Identity(d, d);
  a.block(1, 1, rotation.rows(), rotation.cols()) = rotation;
  VectorXd b(d);
  b << 0.0, state_offset;
  return Frame(std::move(a), std::move(b));
}

VectorXd Frame::to_local(const VectorXd& x) const {
  if (x.size() != dim()) throw std::invalid_argument("Frame::to_local: dimension mismatch");
  return lu_.solve(x - offset_);
}

VectorXd Frame::to_global(const VectorXd& x) const {
  if (x.size() != dim()) throw std::invalid_argument("Frame::to_global: dimension mismatch");
  return linear_ * x + offset_;
}

Gaussian Frame::to_global(const Gaussian& local) const {
  if (local.dim() != dim()) throw std::invalid_argument("Frame::to_global: dimension mismatch");
  return Gaussian(linear_ * local.mean() + offset_, linear_ * local.covariance() * linear_.transpose());
}

MatrixXd transform_to_frame(const MatrixXd& traj, const Frame& frame) {
  if (traj.cols() != frame.dim()) throw std::invalid_argument("transform_to_frame: dimension mismatch");
  if (!traj.allFinite()) throw std::invalid_argument("transform_to_frame: non-finite trajectory");
  const MatrixXd shifted = (traj.rowwise() - frame.offset().transpose()).transpose();
  return Eigen::PartialPivLU<MatrixXd>(frame.linear()).solve(shifted).transpose();
}

MatrixXd transform_from_frame(const MatrixXd& local, const Frame& frame) {
  if (local.cols() != frame.dim()) throw std::invalid_argument("transform_from_frame: dimension mismatch");
  return (local * frame.linear().transpose()).rowwise() + frame.offset().transpose();
}

std::size_t RelativeFrameTrack::nearest(double t, bool* clamped) const {
  if (times.empty()) throw std::invalid_argument("RelativeFrameTrack: empty track");
  if (clamped) *clamped = t < times.front() || t > times.back();
  if (t <= times.front()) return 0;
  if (t >= times.back()) return times.size() - 1;
  const auto it = std::lower_bound(times.begin(), times.end(), t);
  const auto hi = static_cast<std::size_t>(it - times.begin());
  return (t - times[hi - 1] <= times[hi] - t) ? hi - 1 : hi;
}

RelativeFrameTrack build_relative_frames(const MatrixXd& partner_traj) {
  if (partner_traj.rows() < 2) throw std::invalid_argument("build_relative_frames: need at least two samples");
  if (partner_traj.cols() < 2) throw std::invalid_argument("build_relative_frames: missing state channels");
  if (!partner_traj.allFinite()) throw std::invalid_argument("build_relative_frames: non-finite trajectory");
  RelativeFrameTrack track;
  track.times.reserve(static_cast<std::size_t>(partner_traj.rows()));
  track.frames.reserve(static_cast<std::size_t>(partner_traj.rows()));
  for (Index t = 0; t < partner_traj.rows(); ++t) {
    if (t > 0 && !(partner_traj(t, 0) > partner_traj(t - 1, 0))) {
      throw std::invalid_argument("build_relative_frames: time channel must increase");
    }
    track.times.push_back(partner_traj(t, 0));
    track.frames.push_back(Frame::translation(partner_traj.row(t).tail(partner_traj.cols() - 1).transpose()));
  }
  return track;
}

MatrixXd transform_to_track(const MatrixXd& traj, const RelativeFrameTrack& track) {
  if (static_cast<std::size_t>(traj.rows()) != track.size()) {
    throw std::invalid_argument("transform_to_track: trajectory has " + std::to_string(traj.rows()) +
                                " samples, track has " + std::to_string(track.size()));
  }
  MatrixXd out(traj.rows(), traj.cols());
  for (Index t = 0; t < traj.rows(); ++t) {
    out.row(t) = track.frames[static_cast<std::size_t>(t)].to_local(traj.row(t).transpose()).transpose();
  }
  return out;
}

std::size_t DemoSet::arm_index(const std::string& name) const {
  for (std::size_t i = 0; i < arms.size(); ++i) {
    if (arms[i] == name) return i;
  }
  throw std::invalid_argument("DemoSet: unknown arm '" + name + "'");
}

void DemoSet::validate() const {
  if (!(dt > 0.0) || !std::isfinite(dt)) throw std::invalid_argument("DemoSet: dt must be positive");
  if (arms.empty() || arms.size() > 2) throw std::invalid_argument("DemoSet: one or two arms are supported");
  if (demos.empty()) throw std::invalid_argument("DemoSet: no demonstrations");
  std::vector<Index> dims(arms.size(), -1);
  for (std::size_t d = 0; d < demos.size(); ++d) {
    const auto& demo = demos[d];
    if (demo.trajectories.size() != arms.size()) {
      throw std::invalid_argument("DemoSet: demo " + std::to_string(d) + " does not cover every arm");
    }
    for (std::size_t h = 0; h < arms.size(); ++h) {
      const MatrixXd& tr = demo.trajectories[h];
      if (tr.rows() < 2 || tr.cols() < 1) {
        throw std::invalid_argument("DemoSet: demo " + std::to_string(d) + " arm " + arms[h] + " is too short");
      }
      if (!tr.allFinite()) {
        throw std::invalid_argument("DemoSet: demo " + std::to_string(d) + " arm " + arms[h] + " has non-finite values");
      }
      if (dims[h] < 0) dims[h] = tr.cols();
      if (dims[h] != tr.cols()) {
        throw std::invalid_argument("DemoSet: arm " + arms[h] + " changes dimensionality at demo " + std::to_string(d));
      }
    }
    for (const auto& [name, pose] : demo.objects) {
      if (!pose.position.allFinite() || !pose.quaternion.allFinite()) {
        throw std::invalid_argument("DemoSet: object " + name + " has non-finite values");
      }
      if (std::abs(pose.quaternion.norm() - 1.0) > 1e-6) {
        throw std::invalid_argument("DemoSet: object " + name + " quaternion is not unit norm");
      }
    }
  }
  if (!channels.empty() && static_cast<Index>(channels.size()) != dims.front()) {
    throw std::invalid_argument("DemoSet: channel names do not match the state dimension");
  }
}

MatrixXd with_time_channel(const MatrixXd& states, double dt) {
  MatrixXd out(states.rows(), states.cols() + 1);
  for (Index t = 0; t < states.rows(); ++t) out(t, 0) = static_cast<double>(t) * dt;
  out.rightCols(states.cols()) = states;
  return out;
}

TPGMM::TPGMM(VectorXd priors, std::vector<std::vector<Gaussian>> frame_components, bool has_relative_frame,
             double duration)
    : priors_(std::move(priors)), frames_(std::move(frame_components)), relative_(has_relative_frame),
      duration_(duration) {
  if (frames_.empty()) throw std::invalid_argument("TPGMM: no frames");
  if (relative_ && frames_.size() < 1) throw std::invalid_argument("TPGMM: relative flag without frames");
  const auto K = static_cast<std::size_t>(priors_.size());
  if (K == 0) throw std::invalid_argument("TPGMM: no components");
  if (!(priors_.array() >= 0.0).all() || std::abs(priors_.sum() - 1.0) > 1e-9) {
    throw std::invalid_argument("TPGMM: priors are not on the simplex");
  }
  const Index d = frames_.front().empty() ? 0 : frames_.front().front().dim();
  for (const auto& f : frames_) {
    if (f.size() != K) throw std::invalid_argument("TPGMM: frames disagree on the component count");
    for (std::size_t k = 0; k < K; ++k) {
      if (f[k].dim() != d) throw std::invalid_argument("TPGMM: components differ in dimensionality");
      if (std::abs(f[k].mean()(0) - frames_.front()[k].mean()(0)) > 1e-6) {
        throw std::invalid_argument("TPGMM: component time centers disagree across frames");
      }
    }
  }
  if (!(duration_ > 0.0)) throw std::invalid_argument("TPGMM: duration must be positive");
}

GMM TPGMM::frame_gmm(Index j) const { return GMM(priors_, frames_.at(static_cast<std::size_t>(j))); }

TpgmmFit fit_tpgmm(const DemoSet& demos, const std::string& arm, const std::vector<DemoFrames>& frames_per_demo,
                   const EmConfig& cfg) {
  demos.validate();
  const std::size_t h = demos.arm_index(arm);
  if (frames_per_demo.size() != demos.demos.size()) {
    throw std::invalid_argument("fit_tpgmm: need one frame set per demonstration");
  }
  const std::size_t n_static = frames_per_demo.front().static_frames.size();
  const bool relative = frames_per_demo.front().relative.has_value();
  if (n_static + (relative ? 1 : 0) == 0) throw std::invalid_argument("fit_tpgmm: no frames");
  for (const auto& f : frames_per_demo) {
    if (f.static_frames.size() != n_static || f.relative.has_value() != relative) {
      throw std::invalid_argument("fit_tpgmm: inconsistent frame count across demonstrations");
    }
  }

  const std::size_t P = n_static + (relative ? 1 : 0);
  std::vector<std::vector<MatrixXd>> per_frame(P);
  Index rows = 0;
  double duration = 0.0;
  for (std::size_t d = 0; d < demos.demos.size(); ++d) {
    const MatrixXd traj = with_time_channel(demos.demos[d].trajectories[h], demos.dt);
    rows += traj.rows();
    duration = std::max(duration, traj(traj.rows() - 1, 0));
    const auto& frames = frames_per_demo[d];
    for (std::size_t j = 0; j < n_static; ++j) per_frame[j].push_back(transform_to_frame(traj, frames.static_frames[j]));
    if (relative) per_frame[P - 1].push_back(transform_to_track(traj, *frames.relative));
  }
  std::vector<MatrixXd> blocks;
  for (auto& parts : per_frame) {
    MatrixXd block(rows, parts.front().cols());
    Index r = 0;
    for (const auto& part : parts) {
      block.middleRows(r, part.rows()) = part;
      r += part.rows();
    }
    blocks.push_back(std::move(block));
  }

  auto joint = detail::fit_joint_mixture(blocks, cfg);
  return TpgmmFit{TPGMM(std::move(joint.priors), std::move(joint.components), relative, duration),
                  std::move(joint.loglik_history)};
}

namespace {

void check_reconstruction_inputs(const TPGMM& model, const std::vector<Frame>& new_frames, double sigma) {
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw std::invalid_argument("reconstruct_gmm: sigma must be >= 0");
  if (static_cast<Index>(new_frames.size()) != model.static_frame_count()) {
    throw std::invalid_argument("reconstruct_gmm: expected " + std::to_string(model.static_frame_count()) +
                                " static frames, got " + std::to_string(new_frames.size()));
  }
  for (const auto& f : new_frames) {
    if (f.dim() != model.dim()) throw std::invalid_argument("reconstruct_gmm: frame dimension mismatch");
  }
}

Gaussian reconstruct_component(const TPGMM& model, Index k, const std::vector<Frame>& new_frames,
                               const Frame* relative_frame, double sigma) {
  std::vector<Gaussian> factors;
  std::vector<double> weights;
  const auto kk = static_cast<std::size_t>(k);
  for (std::size_t j = 0; j < new_frames.size(); ++j) {
    factors.push_back(new_frames[j].to_global(model.frame_components()[j][kk]));
    weights.push_back(1.0);
  }
  if (relative_frame != nullptr && sigma > 0.0) {
    factors.push_back(relative_frame->to_global(model.frame_components().back()[kk]));
    weights.push_back(sigma);
  }
  if (factors.size() == 1) return factors.front();
  return product_of_gaussians(factors, weights);
}

}  // namespace

GMM reconstruct_gmm_with_frame(const TPGMM& model, const std::vector<Frame>& new_frames,
                               const Frame* relative_frame, double sigma) {
  check_reconstruction_inputs(model, new_frames, sigma);
  if (relative_frame != nullptr && !model.has_relative_frame()) {
    throw std::invalid_argument("reconstruct_gmm: model has no relative frame");
  }
  std::vector<Gaussian> comps;
  for (Index k = 0; k < model.size(); ++k) comps.push_back(reconstruct_component(model, k, new_frames, relative_frame, sigma));
  return GMM(model.priors(), std::move(comps));
}

Reconstruction reconstruct_gmm(const TPGMM& model, const std::vector<Frame>& new_frames,
                               const RelativeFrameTrack* relative_track, double sigma) {
  check_reconstruction_inputs(model, new_frames, sigma);
  if (relative_track != nullptr && !model.has_relative_frame()) {
    throw std::invalid_argument("reconstruct_gmm: model has no relative frame");
  }
  int clamped = 0;
  std::vector<Gaussian> comps;
  for (Index k = 0; k < model.size(); ++k) {
    const Frame* rel = nullptr;
    if (relative_track != nullptr) {
      bool outside = false;
      rel = &relative_track->frames[relative_track->nearest(model.time_center(k), &outside)];
      if (outside) ++clamped;
    }
    comps.push_back(reconstruct_component(model, k, new_frames, rel, sigma));
  }
  return Reconstruction{GMM(model.priors(), std::move(comps)), clamped};
}

}  // namespace bicoord
