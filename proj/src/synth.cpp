#include "bicoord/synth.hpp"

#include <cmath>
#include <initializer_list>
#include <random>
#include <stdexcept>
#include <string>

namespace bicoord {

MatrixXd bezier_curve(const MatrixXd& control_points, Index samples) {
  if (control_points.rows() < 2) throw std::invalid_argument("bezier_curve: need at least 2 control points");
  if (samples < 2) throw std::invalid_argument("bezier_curve: need at least 2 samples");
  const Index n = control_points.rows();
  MatrixXd out(samples, control_points.cols());
  MatrixXd work(n, control_points.cols());
  for (Index i = 0; i < samples; ++i) {
    const double s = static_cast<double>(i) / static_cast<double>(samples - 1);
    work = control_points;
    for (Index level = n - 1; level > 0; --level) {
      for (Index j = 0; j < level; ++j) work.row(j) = (1.0 - s) * work.row(j) + s * work.row(j + 1);
    }
    out.row(i) = work.row(0);
  }
  // Exact endpoints regardless of rounding in the recursion.
  out.row(0) = control_points.row(0);
  out.row(samples - 1) = control_points.row(n - 1);
  return out;
}

void MeetingTaskSpec::validate() const {
  if (dims != 2 && dims != 3) throw std::invalid_argument("MeetingTaskSpec: dims must be 2 or 3");
  if (n_demos < 1) throw std::invalid_argument("MeetingTaskSpec: n_demos must be >= 1");
  if (samples < 4) throw std::invalid_argument("MeetingTaskSpec: need at least 4 samples");
  if (!(dt > 0.0)) throw std::invalid_argument("MeetingTaskSpec: dt must be positive");
  auto check = [this](const Box& b, const std::string& name) {
    if (b.lower.size() != dims || b.upper.size() != dims) {
      throw std::invalid_argument("MeetingTaskSpec: " + name + " has the wrong dimension");
    }
    if (!((b.upper - b.lower).array() > 0.0).all()) {
      throw std::invalid_argument("MeetingTaskSpec: " + name + " is degenerate");
    }
  };
  check(meeting_region, "meeting_region");
  check(start_regions[0], "start region 0");
  check(start_regions[1], "start region 1");
  if (!std::isfinite(style)) throw std::invalid_argument("MeetingTaskSpec: style must be finite");
}

MeetingTaskSpec default_meeting_spec(int dims, int n_demos, std::uint64_t seed) {
  MeetingTaskSpec spec;
  spec.dims = dims;
  spec.n_demos = n_demos;
  spec.seed = seed;
  auto box = [dims](std::initializer_list<double> lo, std::initializer_list<double> hi) {
    Box b{VectorXd(dims), VectorXd(dims)};
    auto l = lo.begin();
    auto h = hi.begin();
    for (int i = 0; i < dims; ++i, ++l, ++h) {
      b.lower(i) = *l;
      b.upper(i) = *h;
    }
    return b;
  };
  if (dims == 2) {
    spec.meeting_region = box({4.0, 7.0}, {6.0, 9.0});
    spec.start_regions = {box({-0.1, -0.1}, {0.1, 0.1}), box({9.9, -0.1}, {10.1, 0.1})};
  } else {
    spec.meeting_region = box({3.0, 10.0, 3.0}, {7.0, 14.0, 7.0});
    spec.start_regions = {box({-0.1, -0.1, -0.1}, {0.1, 0.1, 0.1}), box({9.9, -0.1, -0.1}, {10.1, 0.1, 0.1})};
  }
  spec.validate();
  return spec;
}

MatrixXd meeting_arc(const VectorXd& start, const VectorXd& meeting, double style, Index samples) {
  const VectorXd chord = meeting - start;
  // Quarter turn about the vertical axis; in 2-D this is the planar normal.
  VectorXd lateral = VectorXd::Zero(chord.size());
  lateral(0) = -chord(1);
  lateral(1) = chord(0);
  MatrixXd ctrl(4, chord.size());
  ctrl.row(0) = start.transpose();
  ctrl.row(1) = (start + chord / 3.0 + style * lateral).transpose();
  ctrl.row(2) = (start + 2.0 * chord / 3.0 + style * lateral).transpose();
  ctrl.row(3) = meeting.transpose();
  return bezier_curve(ctrl, samples);
}

DemoSet make_meeting_demos(const MeetingTaskSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto draw = [&](const Box& b) {
    VectorXd p(b.dims());
    for (Index i = 0; i < b.dims(); ++i) p(i) = b.lower(i) + unit(rng) * (b.upper(i) - b.lower(i));
    return p;
  };

  DemoSet set;
  set.dt = spec.dt;
  set.arms = {"left", "right"};
  set.channels = spec.dims == 2 ? std::vector<std::string>{"x", "y"} : std::vector<std::string>{"x", "y", "z"};
  for (int d = 0; d < spec.n_demos; ++d) {
    const VectorXd meeting = draw(spec.meeting_region);
    Demonstration demo;
    for (std::size_t h = 0; h < 2; ++h) {
      const VectorXd start = draw(spec.start_regions[h]);
      demo.trajectories.push_back(meeting_arc(start, meeting, spec.style, spec.samples));
      demo.objects["start_" + set.arms[h]] = ObjectPose{start, {1.0, 0.0, 0.0, 0.0}};
    }
    demo.objects["meeting"] = ObjectPose{meeting, {1.0, 0.0, 0.0, 0.0}};
    set.demos.push_back(std::move(demo));
  }
  set.validate();
  return set;
}

}  // namespace bicoord
