#include "cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "bicoord/dataio.hpp"
#include "bicoord/pipelines.hpp"
#include "bicoord/synth.hpp"

namespace bicoord::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

fs::path default_out_dir() {
  const char* env = std::getenv("BICOORD_OUT_DIR");
  return env != nullptr && *env != '\0' ? fs::path(env) : fs::path("out");
}

VectorXd parse_point(const std::string& text, const std::string& what) {
  std::vector<double> values;
  std::stringstream ss(text);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    try {
      values.push_back(parse_double(cell));
    } catch (const std::invalid_argument&) {
      throw UsageError(what + ": '" + text + "' is not a comma-separated list of numbers");
    }
  }
  if (values.empty()) throw UsageError(what + " is empty");
  return Eigen::Map<const VectorXd>(values.data(), static_cast<Index>(values.size()));
}

void write_single_file(const fs::path& path, const std::string& content) {
  const fs::path dir = path.has_parent_path() ? path.parent_path() : fs::path(".");
  write_files_atomically(dir, {{path.filename().string(), content}});
}

// ---- synth ------------------------------------------------------------------

struct SynthArgs {
  std::optional<int> dims;
  std::optional<int> n_demos;
  std::optional<std::uint64_t> seed;
  std::string config;
  Index samples = 0;
  double dt = 0.0;
  std::string out;
};

int do_synth(const SynthArgs& a, std::ostream& out) {
  Scenario sc;
  if (!a.config.empty()) {
    const RunConfig cfg = load_run_config(a.config);
    if (!cfg.scenario) throw UsageError(a.config + " has no scenario section");
    sc = *cfg.scenario;
  }
  MeetingTaskSpec spec = default_meeting_spec(a.dims.value_or(sc.dims), a.n_demos.value_or(sc.n_demos),
                                              a.seed.value_or(sc.seed));
  if (a.samples > 0) spec.samples = a.samples;
  if (a.dt > 0.0) spec.dt = a.dt;
  const DemoSet set = make_meeting_demos(spec);
  const fs::path path = a.out.empty() ? default_out_dir() / "demos.txt" : fs::path(a.out);
  write_single_file(path, demos_to_string(set));
  out << json{{"demos", path.string()}, {"count", set.demos.size()}}.dump() << '\n';
  return 0;
}

// ---- fit --------------------------------------------------------------------

struct FitArgs {
  std::string demos;
  std::string config;
  std::string out;
  std::optional<int> components;
  std::optional<std::uint64_t> seed;
};

int do_fit(const FitArgs& a, std::ostream& out) {
  const DemoSet set = load_demos(a.demos);
  RunConfig cfg = a.config.empty() ? RunConfig{} : load_run_config(a.config);
  if (a.components) cfg.em.components = *a.components;
  if (a.seed) cfg.em.seed = *a.seed;
  cfg.em.validate();
  const ModelBundle bundle = fit_models(set, cfg);
  fs::path path = a.out;
  if (path.empty()) path = (cfg.output_dir.empty() ? default_out_dir() : fs::path(cfg.output_dir)) / "models.json";
  write_single_file(path, to_json(bundle).dump(1) + "\n");
  json summary{{"models", path.string()}};
  for (const auto& arm : bundle.arms) {
    summary["loglik"][arm.arm] = arm.loglik_history.empty() ? 0.0 : arm.loglik_history.back();
    summary["iterations"][arm.arm] = arm.loglik_history.size();
  }
  out << summary.dump() << '\n';
  return 0;
}

// ---- generate ---------------------------------------------------------------

struct GenerateArgs {
  std::string models;
  std::string task;
  std::string config;
  std::string meeting;
  std::vector<std::string> starts;
  std::string mode = "synergistic";
  std::optional<double> sigma;
  std::optional<std::string> site;
  std::optional<Index> horizon;
  std::optional<int> iters;
  bool no_coordination = false;
  std::string leader;
  std::string leader_traj;
  std::string out_dir;
};

FrameAnchors task_anchors(const ModelBundle& b, const GenerateArgs& a) {
  FrameAnchors anchors = b.reference;
  if (!a.meeting.empty()) {
    const VectorXd m = parse_point(a.meeting, "--meeting");
    for (auto& last : anchors.last_sample) {
      if (last.size() != m.size()) throw UsageError("--meeting needs " + std::to_string(last.size()) + " values");
      last = m;
    }
    if (auto it = anchors.objects.find("meeting"); it != anchors.objects.end()) it->second.position = m;
  }
  for (const auto& s : a.starts) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw UsageError("--start expects arm=x,y[,z]");
    const std::string arm = s.substr(0, eq);
    const std::size_t h = b.arm_index(arm);
    const VectorXd p = parse_point(s.substr(eq + 1), "--start");
    if (p.size() != anchors.first_sample[h].size()) {
      throw UsageError("--start for arm '" + arm + "' needs " + std::to_string(anchors.first_sample[h].size()) +
                       " values");
    }
    anchors.first_sample[h] = p;
    if (auto it = anchors.objects.find("start_" + arm); it != anchors.objects.end()) it->second.position = p;
  }
  return anchors;
}

std::vector<std::string> channel_names(const ModelBundle& b) {
  if (!b.channels.empty()) return b.channels;
  std::vector<std::string> names;
  for (Index c = 1; c < b.arms.front().model.dim(); ++c) names.push_back("q" + std::to_string(c - 1));
  return names;
}

int do_generate(GenerateArgs a, std::ostream& out) {
  if (!a.config.empty() && a.meeting.empty() && a.task.empty()) {
    const RunConfig rc = load_run_config(a.config);
    if (rc.scenario) {
      for (Index i = 0; i < rc.scenario->meeting.size(); ++i) {
        a.meeting += (i > 0 ? "," : "") + format_double(rc.scenario->meeting(i));
      }
    }
  }
  const ModelBundle bundle = load_models(a.models);
  GenerationConfig cfg = bundle.generation;
  if (a.sigma) cfg.sigma = *a.sigma;
  if (a.site) cfg.site = parse_site(*a.site);
  if (a.horizon) cfg.horizon = *a.horizon;
  if (a.iters) cfg.synergy_iters = *a.iters;
  if (a.no_coordination) cfg.sigma = 0.0;
  cfg.validate();

  TaskInstance task;
  if (!a.task.empty()) {
    if (!a.meeting.empty() || !a.starts.empty()) throw UsageError("--task cannot be combined with --meeting/--start");
    task = task_from_json(json::parse(read_text_file(a.task)));
  } else {
    task = task_from_anchors(bundle, task_anchors(bundle, a));
  }
  if (task.arms.size() != bundle.arms.size()) throw UsageError("task and models disagree on the arm count");

  std::vector<MatrixXd> generated;
  std::vector<MatrixXd> baseline;
  std::vector<double> displacement;
  json summary{{"mode", a.mode}, {"sigma", cfg.sigma}, {"site", to_string(cfg.site)}};

  for (std::size_t h = 0; h < bundle.arms.size(); ++h) {
    baseline.push_back(generate_independent(bundle.arms[h].model, task.arms[h], cfg, task.duration));
  }

  if (a.mode == "synergistic") {
    if (bundle.arms.size() != 2) throw UsageError("synergistic mode needs two arms");
    const SynergyResult r =
        generate_synergistic({&bundle.arms[0].model, &bundle.arms[1].model}, task, cfg);
    generated.assign(r.trajectories.begin(), r.trajectories.end());
    displacement = r.max_displacement;
    summary["iterations"] = r.iterations;
    summary["returned_iteration"] = r.returned_iteration;
    summary["oscillation_warning"] = r.oscillation_warning;
  } else if (a.mode == "leader-follower") {
    if (bundle.arms.size() != 2) throw UsageError("leader-follower mode needs two arms");
    const std::size_t lead = a.leader.empty() ? 0 : bundle.arm_index(a.leader);
    const std::size_t follow = 1 - lead;
    MatrixXd leader = a.leader_traj.empty() ? baseline[lead] : load_trajectory(a.leader_traj);
    const FollowerResult r = generate_follower(bundle.arms[follow].model, leader, task.arms[follow], cfg,
                                               task.duration);
    generated.resize(2);
    generated[lead] = resample_trajectory(leader, r.trajectory.col(0));
    generated[follow] = r.trajectory;
    summary["leader"] = bundle.arms[lead].arm;
    summary["gmr_fallbacks"] = r.references.gmr_fallbacks;
  } else {
    throw UsageError("--mode must be leader-follower or synergistic");
  }

  const auto channels = channel_names(bundle);
  std::vector<std::string> arm_names;
  std::vector<GMM> components;
  for (std::size_t h = 0; h < bundle.arms.size(); ++h) {
    arm_names.push_back(bundle.arms[h].arm);
    components.push_back(reconstruct_gmm_with_frame(bundle.arms[h].model, task.arms[h].frames, nullptr, 0.0));
  }
  if (generated.size() == 2) {
    summary["endpoint_gap"] = endpoint_gap(generated[0], generated[1]);
    summary["baseline_endpoint_gap"] = endpoint_gap(baseline[0], baseline[1]);
  }
  summary["synergy_displacement"] = displacement;

  std::vector<std::pair<std::string, std::string>> files;
  for (std::size_t h = 0; h < generated.size(); ++h) {
    files.emplace_back(arm_names[h] + ".csv", trajectory_to_csv(generated[h], channels));
    files.emplace_back("baseline_" + arm_names[h] + ".csv", trajectory_to_csv(baseline[h], channels));
  }
  const PlotSeriesInput plot{arm_names, channels, generated, baseline, components, displacement, a.mode};
  files.emplace_back("plot_series.json", plot_series(plot).dump(1) + "\n");
  files.emplace_back("summary.json", summary.dump(1) + "\n");

  const fs::path dir = a.out_dir.empty() ? default_out_dir() : fs::path(a.out_dir);
  write_files_atomically(dir, files);
  summary["out_dir"] = dir.string();
  out << summary.dump() << '\n';
  return 0;
}

// ---- eval -------------------------------------------------------------------

struct EvalArgs {
  std::vector<std::string> trajs;
  std::vector<std::string> refs;
  std::string relative_ref;
};

int do_eval(const EvalArgs& a, std::ostream& out) {
  if (a.trajs.empty() || a.trajs.size() > 2) throw UsageError("eval takes one or two --traj files");
  if (!a.refs.empty() && a.refs.size() != a.trajs.size()) throw UsageError("give one --ref per --traj");
  std::vector<MatrixXd> trajs;
  for (const auto& t : a.trajs) trajs.push_back(load_trajectory(t));
  json metrics = json::object();
  if (trajs.size() == 2) {
    if (trajs[0].rows() != trajs[1].rows() || trajs[0].cols() != trajs[1].cols()) {
      throw UsageError("the two trajectories differ in shape");
    }
    metrics["endpoint_gap"] = endpoint_gap(trajs[0], trajs[1]);
    MatrixXd rel = trajs[0] - trajs[1];
    rel.col(0) = trajs[0].col(0);
    MatrixXd target = MatrixXd::Zero(rel.rows(), rel.cols());
    target.col(0) = rel.col(0);
    if (!a.relative_ref.empty()) target = resample_trajectory(load_trajectory(a.relative_ref), rel.col(0));
    if (target.cols() != rel.cols()) throw UsageError("relative reference has the wrong width");
    metrics["relative_error"] = rmse(rel, target);
  }
  for (std::size_t i = 0; i < a.refs.size(); ++i) {
    const MatrixXd ref = resample_trajectory(load_trajectory(a.refs[i]), trajs[i].col(0));
    if (ref.cols() != trajs[i].cols()) throw UsageError("reference " + a.refs[i] + " has the wrong width");
    metrics["rmse"].push_back(rmse(trajs[i], ref));
  }
  out << metrics.dump() << '\n';
  return 0;
}

void report(std::ostream& err, const std::string& code, const std::string& message) {
  err << json{{"error", {{"code", code}, {"message", message}}}}.dump() << '\n';
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Learn and generate coordinated two-arm trajectories", "bicoord"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "write synthetic meeting demonstrations");
  s->add_option("--dims", synth.dims, "2 or 3")->check(CLI::IsMember({2, 3}));
  s->add_option("--n-demos", synth.n_demos, "number of demonstrations")->check(CLI::PositiveNumber);
  s->add_option("--seed", synth.seed, "random seed");
  s->add_option("--samples", synth.samples, "samples per demonstration")->check(CLI::Range(4, 100000));
  s->add_option("--dt", synth.dt, "sampling period in seconds")->check(CLI::PositiveNumber);
  s->add_option("--out", synth.out, "output demo file");
  s->add_option("--config", synth.config, "run configuration whose scenario supplies the defaults");

  FitArgs fit;
  auto* f = app.add_subcommand("fit", "fit one task-parameterized mixture per arm");
  f->add_option("--demos", fit.demos, "demo file")->required();
  f->add_option("--config", fit.config, "run configuration (JSON)");
  f->add_option("--components", fit.components, "mixture components per arm")->check(CLI::PositiveNumber);
  f->add_option("--seed", fit.seed, "EM seed");
  f->add_option("--out", fit.out, "output model file");

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "generate trajectories for a new task");
  g->add_option("--models", gen.models, "model file")->required();
  g->add_option("--task", gen.task, "task instance (JSON)");
  g->add_option("--config", gen.config, "run configuration whose scenario supplies the meeting point");
  g->add_option("--meeting", gen.meeting, "new meeting point x,y[,z]");
  g->add_option("--start", gen.starts, "new start arm=x,y[,z]");
  g->add_option("--mode", gen.mode, "leader-follower or synergistic")
      ->check(CLI::IsMember({"leader-follower", "synergistic"}));
  g->add_option("--sigma", gen.sigma, "coordination weight")->check(CLI::NonNegativeNumber);
  g->add_option("--site", gen.site, "representation, control or both")
      ->check(CLI::IsMember({"representation", "control", "both"}));
  g->add_option("--horizon", gen.horizon, "output samples")->check(CLI::Range(2, 100000));
  g->add_option("--iters", gen.iters, "synergistic iterations")->check(CLI::PositiveNumber);
  g->add_flag("--no-coordination", gen.no_coordination, "static frames only");
  g->add_option("--leader", gen.leader, "leading arm name");
  g->add_option("--leader-traj", gen.leader_traj, "leader trajectory (CSV)");
  g->add_option("--out-dir", gen.out_dir, "output directory");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "trajectory metrics");
  e->add_option("--traj", ev.trajs, "trajectory CSV (once or twice)")->required();
  e->add_option("--ref", ev.refs, "reference CSV per trajectory");
  e->add_option("--relative-ref", ev.relative_ref, "reference for the first minus the second trajectory");

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    if (!rev.empty()) rev.pop_back();
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& ex) {
    report(err, "usage", ex.what());
    return 2;
  }

  try {
    if (s->parsed()) return do_synth(synth, out);
    if (f->parsed()) return do_fit(fit, out);
    if (g->parsed()) return do_generate(gen, out);
    return do_eval(ev, out);
  } catch (const UsageError& ex) {
    report(err, "usage", ex.what());
    return 2;
  } catch (const IoError& ex) {
    report(err, to_string(ex.code()), ex.what());
    // Bad references and configs are mistakes on the command line, not I/O.
    if (ex.code() == IoErrorCode::reference || ex.code() == IoErrorCode::config) return 2;
  } catch (const NumericalError& ex) {
    report(err, "numerical", ex.what());
  } catch (const json::exception& ex) {
    report(err, "syntax", ex.what());
  } catch (const std::invalid_argument& ex) {
    report(err, "invalid_argument", ex.what());
  } catch (const std::exception& ex) {
    report(err, "internal", ex.what());
  }
  return 1;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  return run(std::vector<std::string>(argv, argv + argc), out, err);
}

}  // namespace bicoord::cli
