#include "bicoord/pipelines.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace bicoord {

namespace {

// Pose states carry a unit quaternion after three position channels.
constexpr Index kPoseDims = 7;

Index position_dims(Index state_dims) { return state_dims == kPoseDims ? 3 : state_dims; }

void renormalize_quaternions(MatrixXd& traj) {
  if (traj.cols() - 1 != kPoseDims) return;
  for (Index t = 0; t < traj.rows(); ++t) {
    auto q = traj.row(t).segment(4, 4);
    const double n = q.norm();
    if (n > 0.0) q /= n;
  }
}

std::vector<Index> state_indices(Index d) {
  std::vector<Index> idx(static_cast<std::size_t>(d));
  std::iota(idx.begin(), idx.end(), Index{1});
  return idx;
}

double resolve_duration(double requested, const TPGMM& model) {
  return requested > 0.0 ? requested : model.duration();
}

bool coordination_enabled(const GenerationConfig& cfg) { return cfg.sigma > 0.0; }

bool uses_representation(CoordinationSite s) { return s != CoordinationSite::control; }
bool uses_control(CoordinationSite s) { return s != CoordinationSite::representation; }

LinearSystem system_for(const References& refs, const GenerationConfig& cfg) {
  const double dt = refs.times(1) - refs.times(0);
  return LinearSystem::integrator(refs.means.cols(), cfg.order, dt);
}

VectorXd initial_state(const VectorXd& start, const LinearSystem& sys) {
  VectorXd x1 = VectorXd::Zero(sys.state_dims());
  x1.head(start.size()) = start;
  return x1;
}

std::vector<MatrixXd> precisions(const References& refs, double scale = 1.0) {
  std::vector<MatrixXd> out;
  out.reserve(refs.covariances.size());
  for (const auto& c : refs.covariances) {
    const Eigen::LLT<MatrixXd> llt(c);
    if (llt.info() != Eigen::Success) throw NumericalError("reference covariance is not positive definite");
    MatrixXd p = llt.solve(MatrixXd::Identity(c.rows(), c.cols()));
    out.push_back(scale * 0.5 * (p + p.transpose()));
  }
  return out;
}

MatrixXd to_trajectory(const VectorXd& times, const MatrixXd& states, Index d) {
  MatrixXd traj(times.size(), d + 1);
  traj.col(0) = times;
  traj.rightCols(d) = states.leftCols(d);
  renormalize_quaternions(traj);
  return traj;
}

// Product of the two arms' relative conditionals, expressed as arm 0 minus arm 1.
References pair_relative_references(const std::array<const TPGMM*, 2>& models, const VectorXd& times) {
  References a = relative_references(*models[0], times);
  const References b = relative_references(*models[1], times);
  for (Index t = 0; t < times.size(); ++t) {
    const auto tt = static_cast<std::size_t>(t);
    const Gaussian ga(a.means.row(t).transpose(), a.covariances[tt]);
    const Gaussian gb(-b.means.row(t).transpose(), b.covariances[tt]);
    const Gaussian both[] = {ga, gb};
    const Gaussian prod = product_of_gaussians(both);
    a.means.row(t) = prod.mean().transpose();
    a.covariances[tt] = prod.covariance();
  }
  a.gmr_fallbacks += b.gmr_fallbacks;
  return a;
}

}  // namespace

std::string to_string(CoordinationSite site) {
  switch (site) {
    case CoordinationSite::representation: return "representation";
    case CoordinationSite::control: return "control";
    case CoordinationSite::both: return "both";
  }
  return "representation";
}

CoordinationSite parse_site(const std::string& s) {
  if (s == "representation") return CoordinationSite::representation;
  if (s == "control") return CoordinationSite::control;
  if (s == "both") return CoordinationSite::both;
  throw std::invalid_argument("unknown coordination site '" + s + "'");
}

void GenerationConfig::validate() const {
  if (horizon < 2) throw std::invalid_argument("GenerationConfig: horizon must be >= 2");
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw std::invalid_argument("GenerationConfig: sigma must be >= 0");
  if (synergy_iters < 1) throw std::invalid_argument("GenerationConfig: synergy_iters must be >= 1");
  if (!(synergy_tol >= 0.0)) throw std::invalid_argument("GenerationConfig: synergy_tol must be >= 0");
  if (!(synergy_relaxation > 0.0 && synergy_relaxation <= 1.0)) {
    throw std::invalid_argument("GenerationConfig: synergy_relaxation must lie in (0, 1]");
  }
  if (order != 1 && order != 2) throw std::invalid_argument("GenerationConfig: order must be 1 or 2");
  if (!(control_cost > 0.0)) throw std::invalid_argument("GenerationConfig: control_cost must be positive");
}

VectorXd output_times(double duration, Index horizon) {
  if (!(duration > 0.0)) throw std::invalid_argument("output_times: duration must be positive");
  if (horizon < 2) throw std::invalid_argument("output_times: horizon must be >= 2");
  VectorXd t(horizon);
  for (Index i = 0; i < horizon; ++i) t(i) = duration * static_cast<double>(i) / static_cast<double>(horizon - 1);
  return t;
}

MatrixXd resample_trajectory(const MatrixXd& traj, const VectorXd& times) {
  if (traj.rows() < 2) throw std::invalid_argument("resample_trajectory: need at least two samples");
  const double t0 = traj(0, 0);
  const double span = traj(traj.rows() - 1, 0) - t0;
  const double out0 = times(0);
  const double out_span = times(times.size() - 1) - out0;
  if (!(span > 0.0) || !(out_span > 0.0)) throw std::invalid_argument("resample_trajectory: empty time span");

  MatrixXd out(times.size(), traj.cols());
  Index seg = 0;
  for (Index i = 0; i < times.size(); ++i) {
    const double phase = std::clamp((times(i) - out0) / out_span, 0.0, 1.0);
    const double t = t0 + phase * span;
    while (seg + 2 < traj.rows() && traj(seg + 1, 0) < t) ++seg;
    const double a = traj(seg, 0);
    const double b = traj(seg + 1, 0);
    const double w = std::clamp((t - a) / (b - a), 0.0, 1.0);
    out.row(i) = (1.0 - w) * traj.row(seg) + w * traj.row(seg + 1);
    out(i, 0) = times(i);
  }
  return out;
}

References references_from_gmm(const GMM& gmm, const VectorXd& times) {
  const Index d = gmm.dim() - 1;
  const Index in[] = {0};
  const auto out = state_indices(d);
  References refs{times, MatrixXd(times.size(), d), {}, 0, 0};
  for (Index t = 0; t < times.size(); ++t) {
    const Conditional c = gmr_condition(gmm, in, out, VectorXd::Constant(1, times(t)));
    refs.means.row(t) = c.gaussian.mean().transpose();
    refs.covariances.push_back(c.gaussian.covariance());
    refs.gmr_fallbacks += c.uniform_fallback ? 1 : 0;
  }
  return refs;
}

References task_references(const TPGMM& model, const std::vector<Frame>& frames, const RelativeFrameTrack* partner,
                           double sigma, RelativeAnchor anchor, const VectorXd& times) {
  if (partner == nullptr || sigma == 0.0) {
    return references_from_gmm(reconstruct_gmm_with_frame(model, frames, nullptr, 0.0), times);
  }
  if (anchor == RelativeAnchor::component_center) {
    const Reconstruction r = reconstruct_gmm(model, frames, partner, sigma);
    References refs = references_from_gmm(r.gmm, times);
    refs.clamped_components = r.clamped_components;
    return refs;
  }

  const Index d = model.dim() - 1;
  const Index in[] = {0};
  const auto out = state_indices(d);
  References refs{times, MatrixXd(times.size(), d), {}, 0, 0};
  for (Index t = 0; t < times.size(); ++t) {
    bool outside = false;
    const Frame& f = partner->frames[partner->nearest(times(t), &outside)];
    refs.clamped_components += outside ? 1 : 0;
    const GMM gmm = reconstruct_gmm_with_frame(model, frames, &f, sigma);
    const Conditional c = gmr_condition(gmm, in, out, VectorXd::Constant(1, times(t)));
    refs.means.row(t) = c.gaussian.mean().transpose();
    refs.covariances.push_back(c.gaussian.covariance());
    refs.gmr_fallbacks += c.uniform_fallback ? 1 : 0;
  }
  return refs;
}

References relative_references(const TPGMM& model, const VectorXd& times) {
  if (!model.has_relative_frame()) throw std::invalid_argument("relative_references: model has no relative frame");
  return references_from_gmm(model.frame_gmm(model.frame_count() - 1), times);
}

MatrixXd track_references(const References& refs, const VectorXd& start, const GenerationConfig& cfg) {
  const LinearSystem sys = system_for(refs, cfg);
  const Index T = refs.times.size();
  LQTProblem p{pad_reference(refs.means, sys), tracking_precision(precisions(refs), sys),
               control_cost(sys, T, cfg.control_cost), initial_state(start, sys)};
  const LQTSolution sol = solve_lqt(p, sys);
  return to_trajectory(refs.times, sol.x, refs.means.cols());
}

MatrixXd generate_independent(const TPGMM& model, const ArmTask& task, const GenerationConfig& cfg,
                              double duration) {
  cfg.validate();
  const VectorXd times = output_times(resolve_duration(duration, model), cfg.horizon);
  return track_references(task_references(model, task.frames, nullptr, 0.0, cfg.anchor, times), task.start, cfg);
}

FollowerResult generate_follower(const TPGMM& follower, const MatrixXd& leader_traj, const ArmTask& task,
                                 const GenerationConfig& cfg, double duration) {
  cfg.validate();
  if (!follower.has_relative_frame()) throw std::invalid_argument("generate_follower: model has no relative frame");
  if (leader_traj.cols() != follower.dim()) throw std::invalid_argument("generate_follower: leader dimension mismatch");
  const VectorXd times = output_times(resolve_duration(duration, follower), cfg.horizon);

  if (!coordination_enabled(cfg)) {
    References refs = task_references(follower, task.frames, nullptr, 0.0, cfg.anchor, times);
    MatrixXd traj = track_references(refs, task.start, cfg);
    return FollowerResult{std::move(traj), std::move(refs)};
  }

  const MatrixXd leader = resample_trajectory(leader_traj, times);
  const RelativeFrameTrack track = build_relative_frames(leader);
  References refs = task_references(follower, task.frames, uses_representation(cfg.site) ? &track : nullptr,
                                    cfg.sigma, cfg.anchor, times);
  if (!uses_control(cfg.site)) {
    MatrixXd traj = track_references(refs, task.start, cfg);
    return FollowerResult{std::move(traj), std::move(refs)};
  }

  // Leader held fixed: tracking (x_f - x_l) -> nu_c is tracking x_f -> nu_c + x_l.
  const LinearSystem sys = system_for(refs, cfg);
  const References rel = relative_references(follower, times);
  const MatrixXd rel_target = rel.means + leader.rightCols(leader.cols() - 1);
  const std::vector<TrackingTerm> terms{
      {pad_reference(refs.means, sys), tracking_precision(precisions(refs), sys)},
      {pad_reference(rel_target, sys), tracking_precision(precisions(rel, cfg.sigma), sys)}};
  const LQTSolution sol =
      solve_lqt_terms(terms, control_cost(sys, cfg.horizon, cfg.control_cost), initial_state(task.start, sys), sys);
  return FollowerResult{to_trajectory(times, sol.x, refs.means.cols()), std::move(refs)};
}

namespace {

double max_position_change(const MatrixXd& a, const MatrixXd& b) {
  const Index p = position_dims(a.cols() - 1);
  return (a.middleCols(1, p) - b.middleCols(1, p)).rowwise().norm().maxCoeff();
}

std::array<MatrixXd, 2> coordinated_solve(const std::array<const TPGMM*, 2>& models, const TaskInstance& task,
                                          const std::array<References, 2>& refs, const References& rel,
                                          const GenerationConfig& cfg) {
  const LinearSystem sys = system_for(refs[0], cfg);
  const Index T = refs[0].times.size();
  CoordinatedLQTProblem p;
  for (std::size_t h = 0; h < 2; ++h) {
    p.arms[h] = LQTProblem{pad_reference(refs[h].means, sys), tracking_precision(precisions(refs[h]), sys),
                           control_cost(sys, T, cfg.control_cost), initial_state(task.arms[h].start, sys)};
  }
  p.rel_means = pad_reference(rel.means, sys);
  p.Qc = tracking_precision(precisions(rel), sys);
  p.sigma = cfg.sigma;
  p.coordination = CoordinationMatrix::pair(sys.input_dims() * (T - 1));
  const CoordinatedLQTSolution sol = solve_coordinated_lqt(p, sys);
  std::array<MatrixXd, 2> out;
  for (std::size_t h = 0; h < 2; ++h) out[h] = to_trajectory(refs[h].times, sol.x[h], models[h]->dim() - 1);
  return out;
}

}  // namespace

SynergyResult generate_synergistic(const std::array<const TPGMM*, 2>& models, const TaskInstance& task,
                                   const GenerationConfig& cfg) {
  cfg.validate();
  if (task.arms.size() != 2) throw std::invalid_argument("generate_synergistic: task must describe two arms");
  for (const auto* m : models) {
    if (m == nullptr || !m->has_relative_frame()) {
      throw std::invalid_argument("generate_synergistic: both models need a relative frame");
    }
  }
  const VectorXd times = output_times(resolve_duration(task.duration, *models[0]), cfg.horizon);

  SynergyResult result;
  std::array<References, 2> static_refs;
  for (std::size_t h = 0; h < 2; ++h) {
    static_refs[h] = task_references(*models[h], task.arms[h].frames, nullptr, 0.0, cfg.anchor, times);
    result.independent[h] = track_references(static_refs[h], task.arms[h].start, cfg);
  }
  result.trajectories = result.independent;
  if (!coordination_enabled(cfg) || cfg.synergy_iters == 1) return result;

  const bool representation = uses_representation(cfg.site);
  const bool control = uses_control(cfg.site);
  const References rel = control ? pair_relative_references(models, times) : References{};
  // A control-only update does not depend on the previous iterate.
  const double step = representation ? cfg.synergy_relaxation : 1.0;

  std::array<MatrixXd, 2> current = result.independent;
  std::array<MatrixXd, 2> best = current;
  double best_disp = std::numeric_limits<double>::infinity();
  int rising = 0;
  for (int it = 1; it < cfg.synergy_iters; ++it) {
    std::array<References, 2> refs = static_refs;
    if (representation) {
      for (std::size_t h = 0; h < 2; ++h) {
        const RelativeFrameTrack partner = build_relative_frames(current[1 - h]);
        refs[h] = task_references(*models[h], task.arms[h].frames, &partner, cfg.sigma, cfg.anchor, times);
      }
    }
    std::array<MatrixXd, 2> next;
    if (control) {
      next = coordinated_solve(models, task, refs, rel, cfg);
    } else {
      for (std::size_t h = 0; h < 2; ++h) next[h] = track_references(refs[h], task.arms[h].start, cfg);
    }
    if (step != 1.0) {
      for (std::size_t h = 0; h < 2; ++h) {
        next[h] = (1.0 - step) * current[h] + step * next[h];
        next[h].col(0) = times;
        renormalize_quaternions(next[h]);
      }
    }
    const double disp = std::max(max_position_change(next[0], current[0]), max_position_change(next[1], current[1]));
    const std::size_t n = result.max_displacement.size();
    rising = (n > 0 && disp > result.max_displacement[n - 1]) ? rising + 1 : 0;
    result.max_displacement.push_back(disp);
    current = next;
    result.iterations = it + 1;
    if (disp < best_disp) {
      best_disp = disp;
      best = current;
      result.returned_iteration = it;
    }
    if (rising >= 2) {
      result.oscillation_warning = true;
      result.trajectories = best;
      return result;
    }
    if (disp < cfg.synergy_tol) break;
  }
  result.trajectories = current;
  result.returned_iteration = result.iterations - 1;
  return result;
}

double endpoint_gap(const MatrixXd& a, const MatrixXd& b) {
  if (a.cols() != b.cols() || a.rows() == 0 || b.rows() == 0) throw std::invalid_argument("endpoint_gap: shape mismatch");
  const Index p = position_dims(a.cols() - 1);
  return (a.row(a.rows() - 1).segment(1, p) - b.row(b.rows() - 1).segment(1, p)).norm();
}

VectorXd relative_gap(const MatrixXd& a, const MatrixXd& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw std::invalid_argument("relative_gap: shape mismatch");
  const Index p = position_dims(a.cols() - 1);
  return (a.middleCols(1, p) - b.middleCols(1, p)).rowwise().norm();
}

double rmse(const MatrixXd& a, const MatrixXd& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw std::invalid_argument("rmse: shape mismatch");
  const Index d = a.cols() - 1;
  return std::sqrt((a.rightCols(d) - b.rightCols(d)).rowwise().squaredNorm().mean());
}

}  // namespace bicoord
