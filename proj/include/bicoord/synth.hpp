#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "bicoord/frames.hpp"

namespace bicoord {

// de Casteljau evaluation at `samples` uniform parameters on [0, 1]. Each row
// of `control_points` is one point; the result is samples x dims.
MatrixXd bezier_curve(const MatrixXd& control_points, Index samples);

struct Box {
  VectorXd lower;
  VectorXd upper;

  Index dims() const { return lower.size(); }
  VectorXd center() const { return 0.5 * (lower + upper); }
};

struct MeetingTaskSpec {
  int dims = 2;
  int n_demos = 3;
  Index samples = 100;
  double dt = 0.1;
  Box meeting_region;
  std::array<Box, 2> start_regions;
  // Lateral offset of the interior control points, as a fraction of the chord.
  double style = 0.25;
  std::uint64_t seed = 0;

  void validate() const;
};

// Default layout for 2-D or 3-D meeting demos.
MeetingTaskSpec default_meeting_spec(int dims, int n_demos = 3, std::uint64_t seed = 0);

// Cubic approach arc from `start` to `meeting`.
MatrixXd meeting_arc(const VectorXd& start, const VectorXd& meeting, double style, Index samples);

// Each demo carries objects "start_<arm>" and "meeting" marking its frames.
DemoSet make_meeting_demos(const MeetingTaskSpec& spec);

}  // namespace bicoord
