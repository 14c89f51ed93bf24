#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "bicoord/frames.hpp"
#include "bicoord/pipelines.hpp"

namespace bicoord {

enum class IoErrorCode {
  io,
  version,
  syntax,
  ragged,
  non_finite,
  quaternion_norm,
  config,
  reference,
};

std::string to_string(IoErrorCode code);

class IoError : public std::runtime_error {
 public:
  IoError(IoErrorCode code, const std::string& message) : std::runtime_error(message), code_(code) {}
  IoErrorCode code() const { return code_; }

 private:
  IoErrorCode code_;
};

// Shortest form that parses back to the same double (at most 17 significant
// digits).
std::string format_double(double v);
double parse_double(const std::string& s);

// ---- demonstration files ----------------------------------------------------
//
//   format bicoord-demos 1
//   dt 0.1
//   arms left right
//   channels x y            (optional)
//   demo 0
//   object meeting pos 5 8 quat 1 0 0 0
//   arm left 100 2
//   <100 rows of 2 values>
//   arm right 100 2
//   ...
//   end
//
// Every demo block is closed by "end".
// Blank lines and lines starting with '#' are ignored.

inline constexpr int kDemoFormatVersion = 1;

DemoSet parse_demos(std::istream& in, const std::string& source = "<stream>");
DemoSet load_demos(const std::filesystem::path& path);
void write_demos(const DemoSet& set, std::ostream& out);
std::string demos_to_string(const DemoSet& set);
void save_demos(const DemoSet& set, const std::filesystem::path& path);

// ---- trajectories -----------------------------------------------------------

// CSV with header "t,<channels>"; time in column 0.
std::string trajectory_to_csv(const MatrixXd& traj, const std::vector<std::string>& channels);
void save_trajectory(const MatrixXd& traj, const std::vector<std::string>& channels,
                     const std::filesystem::path& path);
MatrixXd parse_trajectory_csv(std::istream& in, const std::string& source, std::vector<std::string>* channels = nullptr);
MatrixXd load_trajectory(const std::filesystem::path& path, std::vector<std::string>* channels = nullptr);

// ---- frame definitions ------------------------------------------------------

// Where a static frame comes from in a demonstration. Sample frames marked
// `aligned` turn their first axis toward the arm's first-to-last chord.
struct FrameSource {
  enum class Kind { first_sample, last_sample, object };
  Kind kind = Kind::first_sample;
  std::string object;  // for Kind::object
  bool aligned = false;

  bool operator==(const FrameSource&) const = default;
};

std::string to_string(const FrameSource& s);
FrameSource parse_frame_source(const std::string& s);

// Position and orientation that a FrameSource resolves to for one arm.
struct FrameAnchors {
  std::vector<VectorXd> first_sample;  // per arm
  std::vector<VectorXd> last_sample;   // per arm
  std::map<std::string, ObjectPose> objects;
};

FrameAnchors anchors_of(const Demonstration& demo);
Frame resolve_frame(const FrameSource& src, const FrameAnchors& anchors, std::size_t arm, Index state_dims);

// Static frames (and the partner track, if requested) for every demo.
std::vector<DemoFrames> demo_frames(const DemoSet& set, std::size_t arm, const std::vector<FrameSource>& sources,
                                    bool relative);

// ---- configuration ----------------------------------------------------------

// Synthetic meeting experiment carried by the example configurations: the
// demos to synthesize and the new meeting point to generate for.
struct Scenario {
  int dims = 2;
  int n_demos = 3;
  std::uint64_t seed = 0;
  VectorXd meeting;
};

struct RunConfig {
  EmConfig em;
  GenerationConfig generation;
  // Static frame sources per arm name; arms missing here use the aligned first
  // and last sample.
  std::map<std::string, std::vector<FrameSource>> frames;
  bool relative = true;
  std::string output_dir;
  std::optional<Scenario> scenario;

  std::vector<FrameSource> frames_for(const std::string& arm) const;
  // Checks that every frame reference resolves in every demo.
  void check_against(const DemoSet& set) const;
};

nlohmann::json to_json(const EmConfig& c);
EmConfig em_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const GenerationConfig& c);
GenerationConfig generation_config_from_json(const nlohmann::json& j, GenerationConfig base = {});
nlohmann::json to_json(const RunConfig& c);
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

// ---- models -----------------------------------------------------------------

struct ArmModel {
  std::string arm;
  TPGMM model;
  std::vector<FrameSource> frames;
  std::vector<double> loglik_history;
};

struct ModelBundle {
  double dt = 0.0;
  std::vector<std::string> channels;
  EmConfig em;
  GenerationConfig generation;
  std::vector<ArmModel> arms;
  // Frame anchors of the first demonstration; new tasks override them.
  FrameAnchors reference;

  std::size_t arm_index(const std::string& name) const;
};

ModelBundle fit_models(const DemoSet& set, const RunConfig& cfg);

nlohmann::json to_json(const Gaussian& g);
Gaussian gaussian_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TPGMM& m);
TPGMM tpgmm_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ModelBundle& b);
ModelBundle model_bundle_from_json(const nlohmann::json& j);
ModelBundle load_models(const std::filesystem::path& path);

// ---- task instances ---------------------------------------------------------

nlohmann::json to_json(const Frame& f);
Frame frame_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TaskInstance& t);
TaskInstance task_from_json(const nlohmann::json& j);

// Task for every arm of the bundle built from anchors (e.g. the reference
// anchors with a new meeting point).
TaskInstance task_from_anchors(const ModelBundle& b, const FrameAnchors& anchors, double duration = 0.0);

// ---- plot series ------------------------------------------------------------

struct PlotSeriesInput {
  std::vector<std::string> arms;
  std::vector<std::string> channels;
  std::vector<MatrixXd> generated;
  std::vector<MatrixXd> baseline;  // may be empty
  std::vector<GMM> components;     // per arm, global frame; may be empty
  std::vector<double> synergy_displacement;
  std::string mode;
};

nlohmann::json plot_series(const PlotSeriesInput& in);

// ---- output -----------------------------------------------------------------

// Writes every (name, content) pair into `dir` or nothing at all: files are
// staged in a hidden subdirectory first and moved into place afterwards.
void write_files_atomically(const std::filesystem::path& dir,
                            const std::vector<std::pair<std::string, std::string>>& files);

std::string read_text_file(const std::filesystem::path& path);

}  // namespace bicoord
