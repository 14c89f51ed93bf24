#include "bicoord/dataio.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <sstream>
#include <system_error>

#include <Eigen/Geometry>

namespace bicoord {

using nlohmann::json;
namespace fs = std::filesystem;

std::string to_string(IoErrorCode code) {
  switch (code) {
    case IoErrorCode::io: return "io";
    case IoErrorCode::version: return "version";
    case IoErrorCode::syntax: return "syntax";
    case IoErrorCode::ragged: return "ragged";
    case IoErrorCode::non_finite: return "non_finite";
    case IoErrorCode::quaternion_norm: return "quaternion_norm";
    case IoErrorCode::config: return "config";
    case IoErrorCode::reference: return "reference";
  }
  return "io";
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& s) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (first != last && *first == '+') ++first;
  const auto res = std::from_chars(first, last, v);
  if (res.ec != std::errc() || res.ptr != last) throw std::invalid_argument("not a number: '" + s + "'");
  return v;
}

std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(IoErrorCode::io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

namespace {

std::vector<std::string> split_ws(const std::string& line) {
  std::istringstream ss(line);
  std::vector<std::string> out;
  std::string tok;
  while (ss >> tok) out.push_back(tok);
  return out;
}

std::vector<std::string> split_char(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

class DemoParser {
 public:
  DemoParser(std::istream& in, std::string source) : in_(in), source_(std::move(source)) {}

  DemoSet parse() {
    header();
    while (next()) {
      if (tok_[0] != "demo") fail(IoErrorCode::syntax, "expected 'demo', got '" + tok_[0] + "'");
      demo();
    }
    if (set_.demos.empty()) fail(IoErrorCode::syntax, "file contains no demonstrations");
    return std::move(set_);
  }

 private:
  [[noreturn]] void fail(IoErrorCode code, const std::string& msg) const {
    throw IoError(code, source_ + ":" + std::to_string(line_no_) + ": " + msg);
  }

  // Reads the next non-blank, non-comment line into tok_.
  bool next() {
    std::string line;
    while (std::getline(in_, line)) {
      ++line_no_;
      const auto first = line.find_first_not_of(" \t\r");
      if (first == std::string::npos || line[first] == '#') continue;
      tok_ = split_ws(line);
      return true;
    }
    return false;
  }

  double number(const std::string& s, const std::string& what) const {
    double v = 0.0;
    try {
      v = parse_double(s);
    } catch (const std::invalid_argument&) {
      fail(IoErrorCode::syntax, what + ": '" + s + "' is not a number");
    }
    if (!std::isfinite(v)) fail(IoErrorCode::non_finite, what + ": non-finite value '" + s + "'");
    return v;
  }

  Index count(const std::string& s, const std::string& what) const {
    Index v = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size() || v < 1) {
      fail(IoErrorCode::syntax, what + ": expected a positive integer, got '" + s + "'");
    }
    return v;
  }

  void header() {
    if (!next()) fail(IoErrorCode::syntax, "empty file");
    if (tok_.size() != 3 || tok_[0] != "format" || tok_[1] != "bicoord-demos") {
      fail(IoErrorCode::syntax, "missing 'format bicoord-demos <version>' header");
    }
    if (tok_[2] != std::to_string(kDemoFormatVersion)) {
      fail(IoErrorCode::version, "unsupported format version '" + tok_[2] + "'");
    }
    bool have_dt = false;
    while (true) {
      const auto pos = in_.tellg();
      const int line_before = line_no_;
      if (!next()) break;
      if (tok_[0] == "dt") {
        if (tok_.size() != 2) fail(IoErrorCode::syntax, "'dt' takes one value");
        set_.dt = number(tok_[1], "dt");
        if (!(set_.dt > 0.0)) fail(IoErrorCode::syntax, "dt must be positive");
        have_dt = true;
      } else if (tok_[0] == "arms") {
        if (tok_.size() < 2 || tok_.size() > 3) fail(IoErrorCode::syntax, "'arms' takes one or two names");
        set_.arms.assign(tok_.begin() + 1, tok_.end());
        if (set_.arms.size() == 2 && set_.arms[0] == set_.arms[1]) fail(IoErrorCode::syntax, "arm names repeat");
      } else if (tok_[0] == "channels") {
        set_.channels.assign(tok_.begin() + 1, tok_.end());
      } else {
        in_.clear();
        in_.seekg(pos);
        line_no_ = line_before;
        break;
      }
    }
    if (!have_dt) fail(IoErrorCode::syntax, "missing 'dt'");
    if (set_.arms.empty()) fail(IoErrorCode::syntax, "missing 'arms'");
  }

  void demo() {
    const std::size_t index = set_.demos.size();
    if (tok_.size() != 2 || tok_[1] != std::to_string(index)) {
      fail(IoErrorCode::syntax, "expected 'demo " + std::to_string(index) + "'");
    }
    const std::string label = "demo " + std::to_string(index);
    Demonstration demo;
    std::vector<bool> seen(set_.arms.size(), false);
    demo.trajectories.resize(set_.arms.size());
    while (true) {
      if (!next()) fail(IoErrorCode::syntax, label + " is not closed by 'end'");
      if (tok_[0] == "end") break;
      if (tok_[0] == "object") {
        object(demo, label);
      } else if (tok_[0] == "arm") {
        arm(demo, seen, label);
      } else {
        fail(IoErrorCode::syntax, "unexpected '" + tok_[0] + "' in " + label);
      }
    }
    for (std::size_t h = 0; h < seen.size(); ++h) {
      if (!seen[h]) fail(IoErrorCode::syntax, label + " has no block for arm '" + set_.arms[h] + "'");
    }
    set_.demos.push_back(std::move(demo));
  }

  void object(Demonstration& demo, const std::string& label) {
    // object <name> pos v... quat w x y z
    if (tok_.size() < 9) fail(IoErrorCode::syntax, "object needs 'pos <values> quat w x y z'");
    const std::string& name = tok_[1];
    if (tok_[2] != "pos") fail(IoErrorCode::syntax, "object '" + name + "': expected 'pos'");
    const std::size_t q = tok_.size() - 5;
    if (tok_[q] != "quat" || q < 4) fail(IoErrorCode::syntax, "object '" + name + "': expected 'quat w x y z' at the end");
    ObjectPose pose;
    pose.position.resize(static_cast<Index>(q - 3));
    for (std::size_t i = 3; i < q; ++i) pose.position(static_cast<Index>(i - 3)) = number(tok_[i], "object " + name);
    for (int i = 0; i < 4; ++i) pose.quaternion(i) = number(tok_[q + 1 + static_cast<std::size_t>(i)], "object " + name);
    const double n = pose.quaternion.norm();
    if (std::abs(n - 1.0) > 1e-6) {
      fail(IoErrorCode::quaternion_norm,
           label + " object '" + name + "': quaternion norm " + format_double(n) + " is not 1 within 1e-6");
    }
    if (!demo.objects.emplace(name, pose).second) {
      fail(IoErrorCode::syntax, label + " defines object '" + name + "' twice");
    }
  }

  void arm(Demonstration& demo, std::vector<bool>& seen, const std::string& label) {
    if (tok_.size() != 4) fail(IoErrorCode::syntax, "expected 'arm <name> <rows> <cols>'");
    std::size_t h = 0;
    while (h < set_.arms.size() && set_.arms[h] != tok_[1]) ++h;
    if (h == set_.arms.size()) fail(IoErrorCode::syntax, "unknown arm '" + tok_[1] + "'");
    if (seen[h]) fail(IoErrorCode::syntax, label + " repeats arm '" + tok_[1] + "'");
    const Index rows = count(tok_[2], "row count");
    const Index cols = count(tok_[3], "column count");
    if (rows < 2) fail(IoErrorCode::syntax, "an arm block needs at least two rows");
    if (arm_dims_.size() < set_.arms.size()) arm_dims_.resize(set_.arms.size(), 0);
    if (arm_dims_[h] != 0 && arm_dims_[h] != cols) {
      fail(IoErrorCode::ragged, label + " arm '" + tok_[1] + "' has " + std::to_string(cols) + " columns, earlier demos " +
                                    std::to_string(arm_dims_[h]));
    }
    arm_dims_[h] = cols;
    if (!set_.channels.empty() && static_cast<Index>(set_.channels.size()) != cols) {
      fail(IoErrorCode::ragged, label + " arm '" + tok_[1] + "' width does not match the channel list");
    }
    MatrixXd m(rows, cols);
    for (Index r = 0; r < rows; ++r) {
      if (!next()) fail(IoErrorCode::ragged, label + " arm block ends after " + std::to_string(r) + " rows");
      if (static_cast<Index>(tok_.size()) != cols) {
        fail(IoErrorCode::ragged, label + " row " + std::to_string(r) + " has " + std::to_string(tok_.size()) +
                                      " values, expected " + std::to_string(cols));
      }
      for (Index c = 0; c < cols; ++c) m(r, c) = number(tok_[static_cast<std::size_t>(c)], label + " row " + std::to_string(r));
    }
    demo.trajectories[h] = std::move(m);
    seen[h] = true;
  }

  std::istream& in_;
  std::string source_;
  int line_no_ = 0;
  std::vector<std::string> tok_;
  std::vector<Index> arm_dims_;
  DemoSet set_;
};

std::string join_numbers(const Eigen::Ref<const VectorXd>& v) {
  std::string s;
  for (Index i = 0; i < v.size(); ++i) {
    if (i > 0) s += ' ';
    s += format_double(v(i));
  }
  return s;
}

}  // namespace

DemoSet parse_demos(std::istream& in, const std::string& source) {
  DemoSet set = DemoParser(in, source).parse();
  try {
    set.validate();
  } catch (const std::invalid_argument& e) {
    throw IoError(IoErrorCode::syntax, source + ": " + e.what());
  }
  return set;
}

DemoSet load_demos(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(IoErrorCode::io, "cannot open " + path.string());
  return parse_demos(in, path.string());
}

void write_demos(const DemoSet& set, std::ostream& out) {
  set.validate();
  out << "format bicoord-demos " << kDemoFormatVersion << '\n';
  out << "dt " << format_double(set.dt) << '\n';
  out << "arms";
  for (const auto& a : set.arms) out << ' ' << a;
  out << '\n';
  if (!set.channels.empty()) {
    out << "channels";
    for (const auto& c : set.channels) out << ' ' << c;
    out << '\n';
  }
  for (std::size_t d = 0; d < set.demos.size(); ++d) {
    const auto& demo = set.demos[d];
    out << "demo " << d << '\n';
    for (const auto& [name, pose] : demo.objects) {
      out << "object " << name << " pos " << join_numbers(pose.position) << " quat " << join_numbers(pose.quaternion)
          << '\n';
    }
    for (std::size_t h = 0; h < set.arms.size(); ++h) {
      const MatrixXd& m = demo.trajectories[h];
      out << "arm " << set.arms[h] << ' ' << m.rows() << ' ' << m.cols() << '\n';
      for (Index r = 0; r < m.rows(); ++r) out << join_numbers(m.row(r).transpose()) << '\n';
    }
    out << "end\n";
  }
}

std::string demos_to_string(const DemoSet& set) {
  std::ostringstream ss;
  write_demos(set, ss);
  return ss.str();
}

void save_demos(const DemoSet& set, const fs::path& path) {
  const std::string text = demos_to_string(set);
  write_files_atomically(path.has_parent_path() ? path.parent_path() : fs::path("."), {{path.filename().string(), text}});
}

std::string trajectory_to_csv(const MatrixXd& traj, const std::vector<std::string>& channels) {
  if (traj.cols() < 1) throw std::invalid_argument("trajectory_to_csv: empty trajectory");
  std::string s = "t";
  for (Index c = 1; c < traj.cols(); ++c) {
    s += ',';
    const auto ci = static_cast<std::size_t>(c - 1);
    s += ci < channels.size() ? channels[ci] : "q" + std::to_string(c - 1);
  }
  s += '\n';
  for (Index r = 0; r < traj.rows(); ++r) {
    for (Index c = 0; c < traj.cols(); ++c) {
      if (c > 0) s += ',';
      s += format_double(traj(r, c));
    }
    s += '\n';
  }
  return s;
}

void save_trajectory(const MatrixXd& traj, const std::vector<std::string>& channels, const fs::path& path) {
  const std::string text = trajectory_to_csv(traj, channels);
  write_files_atomically(path.has_parent_path() ? path.parent_path() : fs::path("."), {{path.filename().string(), text}});
}

MatrixXd parse_trajectory_csv(std::istream& in, const std::string& source, std::vector<std::string>* channels) {
  std::string line;
  int line_no = 0;
  auto fail = [&](IoErrorCode code, const std::string& msg) {
    throw IoError(code, source + ":" + std::to_string(line_no) + ": " + msg);
  };
  if (!std::getline(in, line)) fail(IoErrorCode::syntax, "empty trajectory file");
  ++line_no;
  const auto header = split_char(line, ',');
  if (header.empty() || header[0] != "t") fail(IoErrorCode::syntax, "header must start with 't'");
  const auto cols = static_cast<Index>(header.size());
  if (channels != nullptr) channels->assign(header.begin() + 1, header.end());

  std::vector<double> values;
  Index rows = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto cells = split_char(line, ',');
    if (static_cast<Index>(cells.size()) != cols) {
      fail(IoErrorCode::ragged, "expected " + std::to_string(cols) + " values, got " + std::to_string(cells.size()));
    }
    for (const auto& c : cells) {
      double v = 0.0;
      try {
        v = parse_double(c);
      } catch (const std::invalid_argument&) {
        fail(IoErrorCode::syntax, "'" + c + "' is not a number");
      }
      if (!std::isfinite(v)) fail(IoErrorCode::non_finite, "non-finite value '" + c + "'");
      values.push_back(v);
    }
    ++rows;
  }
  if (rows < 2) fail(IoErrorCode::syntax, "a trajectory needs at least two samples");
  MatrixXd m(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    for (Index c = 0; c < cols; ++c) m(r, c) = values[static_cast<std::size_t>(r * cols + c)];
  }
  return m;
}

MatrixXd load_trajectory(const fs::path& path, std::vector<std::string>* channels) {
  std::ifstream in(path);
  if (!in) throw IoError(IoErrorCode::io, "cannot open " + path.string());
  return parse_trajectory_csv(in, path.string(), channels);
}

std::string to_string(const FrameSource& s) {
  const std::string suffix = s.aligned ? ":aligned" : "";
  switch (s.kind) {
    case FrameSource::Kind::first_sample: return "first_sample" + suffix;
    case FrameSource::Kind::last_sample: return "last_sample" + suffix;
    case FrameSource::Kind::object: return "object:" + s.object;
  }
  return "first_sample";
}

FrameSource parse_frame_source(const std::string& s) {
  if (s == "first_sample") return {FrameSource::Kind::first_sample, {}, false};
  if (s == "last_sample") return {FrameSource::Kind::last_sample, {}, false};
  if (s == "first_sample:aligned") return {FrameSource::Kind::first_sample, {}, true};
  if (s == "last_sample:aligned") return {FrameSource::Kind::last_sample, {}, true};
  if (s.rfind("object:", 0) == 0 && s.size() > 7) return {FrameSource::Kind::object, s.substr(7), false};
  throw IoError(IoErrorCode::config, "unknown frame source '" + s +
                                         "' (first_sample[:aligned], last_sample[:aligned], object:<name>)");
}

FrameAnchors anchors_of(const Demonstration& demo) {
  FrameAnchors a;
  for (const auto& tr : demo.trajectories) {
    a.first_sample.push_back(tr.row(0).transpose());
    a.last_sample.push_back(tr.row(tr.rows() - 1).transpose());
  }
  a.objects = demo.objects;
  return a;
}

namespace {

// Pose states keep three position channels followed by a quaternion.
Index position_channels(Index state_dims) { return state_dims == 7 ? 3 : state_dims; }

// Rotation whose first column is the unit chord. In 3-D the second axis is
// kept horizontal where possible.
MatrixXd chord_rotation(const VectorXd& chord) {
  const Index n = chord.size();
  const double len = chord.norm();
  // A motion that ends where it started has no chord; keep the world axes.
  if (!(len > 1e-9)) return MatrixXd::Identity(n, n);
  const VectorXd x = chord / len;
  if (n == 1) return MatrixXd::Constant(1, 1, x(0) < 0.0 ? -1.0 : 1.0);
  if (n == 2) {
    MatrixXd r(2, 2);
    r << x(0), -x(1), x(1), x(0);
    return r;
  }
  if (n != 3) throw IoError(IoErrorCode::reference, "aligned frames support 1 to 3 position channels");
  const Eigen::Vector3d ex = x;
  Eigen::Vector3d up = Eigen::Vector3d::UnitZ();
  if (std::abs(ex.dot(up)) > 0.9) up = Eigen::Vector3d::UnitY();
  const Eigen::Vector3d ey = up.cross(ex).normalized();
  MatrixXd r(3, 3);
  r.col(0) = ex;
  r.col(1) = ey;
  r.col(2) = ex.cross(ey);
  return r;
}

}  // namespace

Frame resolve_frame(const FrameSource& src, const FrameAnchors& anchors, std::size_t arm, Index state_dims) {
  auto sample_frame = [&](const std::vector<VectorXd>& samples) {
    if (arm >= samples.size() || arm >= anchors.first_sample.size() || arm >= anchors.last_sample.size()) {
      throw IoError(IoErrorCode::reference, "no sample anchor for arm " + std::to_string(arm));
    }
    const VectorXd& p = samples[arm];
    if (p.size() != state_dims) throw IoError(IoErrorCode::reference, "sample anchor has the wrong dimension");
    VectorXd offset = VectorXd::Zero(state_dims);
    const Index np = position_channels(state_dims);
    offset.head(np) = p.head(np);
    if (!src.aligned) return Frame::translation(offset);
    const VectorXd chord = (anchors.last_sample[arm] - anchors.first_sample[arm]).head(np);
    return Frame::rigid(chord_rotation(chord), offset);
  };
  switch (src.kind) {
    case FrameSource::Kind::first_sample: return sample_frame(anchors.first_sample);
    case FrameSource::Kind::last_sample: return sample_frame(anchors.last_sample);
    case FrameSource::Kind::object: break;
  }
  const auto it = anchors.objects.find(src.object);
  if (it == anchors.objects.end()) throw IoError(IoErrorCode::reference, "unknown object '" + src.object + "'");
  const ObjectPose& pose = it->second;
  const Index np = position_channels(state_dims);
  if (pose.position.size() != np) {
    throw IoError(IoErrorCode::reference, "object '" + src.object + "' has " + std::to_string(pose.position.size()) +
                                              " position values, the arm state needs " + std::to_string(np));
  }
  VectorXd offset = VectorXd::Zero(state_dims);
  offset.head(np) = pose.position;
  const Eigen::Quaterniond q(pose.quaternion(0), pose.quaternion(1), pose.quaternion(2), pose.quaternion(3));
  const Eigen::Matrix3d r = q.normalized().toRotationMatrix();
  if (np >= 3) return Frame::rigid(r, offset);
  if (np == 2) {
    // Planar states use the heading about the vertical axis.
    const double yaw = std::atan2(r(1, 0), r(0, 0));
    Eigen::Matrix2d r2;
    r2 << std::cos(yaw), -std::sin(yaw), std::sin(yaw), std::cos(yaw);
    return Frame::rigid(r2, offset);
  }
  return Frame::translation(offset);
}

std::vector<DemoFrames> demo_frames(const DemoSet& set, std::size_t arm, const std::vector<FrameSource>& sources,
                                    bool relative) {
  if (relative && set.arms.size() != 2) throw IoError(IoErrorCode::config, "a relative frame needs two arms");
  std::vector<DemoFrames> out;
  for (std::size_t d = 0; d < set.demos.size(); ++d) {
    const auto& demo = set.demos[d];
    const FrameAnchors anchors = anchors_of(demo);
    const Index dims = demo.trajectories[arm].cols();
    DemoFrames f;
    for (const auto& src : sources) {
      try {
        f.static_frames.push_back(resolve_frame(src, anchors, arm, dims));
      } catch (const IoError& e) {
        throw IoError(e.code(), "demo " + std::to_string(d) + ": " + e.what());
      }
    }
    if (relative) {
      const MatrixXd& partner = demo.trajectories[1 - arm];
      if (partner.cols() != dims || partner.rows() != demo.trajectories[arm].rows()) {
        throw IoError(IoErrorCode::config, "demo " + std::to_string(d) + ": arms differ in shape; no relative frame");
      }
      f.relative = build_relative_frames(with_time_channel(partner, set.dt));
    }
    out.push_back(std::move(f));
  }
  return out;
}

// ---- configuration ----------------------------------------------------------

namespace {

void reject_unknown_keys(const json& j, std::initializer_list<const char*> keys, const std::string& where) {
  if (!j.is_object()) throw IoError(IoErrorCode::config, where + " must be an object");
  for (const auto& [k, v] : j.items()) {
    bool known = false;
    for (const char* key : keys) known = known || k == key;
    if (!known) throw IoError(IoErrorCode::config, where + ": unknown key '" + k + "'");
  }
}

template <typename T>
void read_field(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw IoError(IoErrorCode::config, where + "." + key + " has the wrong type");
  }
}

json matrix_json(const MatrixXd& m) {
  json rows = json::array();
  for (Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

json vector_json(const VectorXd& v) {
  json a = json::array();
  for (Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

VectorXd vector_from(const json& j, const std::string& where) {
  if (!j.is_array()) throw IoError(IoErrorCode::config, where + " must be an array of numbers");
  VectorXd v(static_cast<Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw IoError(IoErrorCode::config, where + " must be an array of numbers");
    v(static_cast<Index>(i)) = j[i].get<double>();
  }
  return v;
}

MatrixXd matrix_from(const json& j, const std::string& where) {
  if (!j.is_array() || j.empty()) throw IoError(IoErrorCode::config, where + " must be a non-empty array of rows");
  const std::size_t cols = j[0].is_array() ? j[0].size() : 0;
  MatrixXd m(static_cast<Index>(j.size()), static_cast<Index>(cols));
  for (std::size_t r = 0; r < j.size(); ++r) {
    if (!j[r].is_array() || j[r].size() != cols) throw IoError(IoErrorCode::ragged, where + " has ragged rows");
    m.row(static_cast<Index>(r)) = vector_from(j[r], where).transpose();
  }
  return m;
}

const char* anchor_name(RelativeAnchor a) {
  return a == RelativeAnchor::per_timestep ? "per_timestep" : "component_center";
}

}  // namespace

json to_json(const EmConfig& c) {
  return json{{"components", c.components},
              {"max_iters", c.max_iters},
              {"loglik_tol", c.loglik_tol},
              {"cov_regularization", c.cov_regularization},
              {"seed", c.seed}};
}

EmConfig em_config_from_json(const json& j) {
  reject_unknown_keys(j, {"components", "max_iters", "loglik_tol", "cov_regularization", "seed"}, "em");
  EmConfig c;
  read_field(j, "components", c.components, "em");
  read_field(j, "max_iters", c.max_iters, "em");
  read_field(j, "loglik_tol", c.loglik_tol, "em");
  read_field(j, "cov_regularization", c.cov_regularization, "em");
  read_field(j, "seed", c.seed, "em");
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw IoError(IoErrorCode::config, e.what());
  }
  return c;
}

json to_json(const GenerationConfig& c) {
  return json{{"horizon", c.horizon},
              {"sigma", c.sigma},
              {"site", to_string(c.site)},
              {"synergy_iters", c.synergy_iters},
              {"synergy_tol", c.synergy_tol},
              {"synergy_relaxation", c.synergy_relaxation},
              {"anchor", anchor_name(c.anchor)},
              {"order", c.order},
              {"control_cost", c.control_cost}};
}

GenerationConfig generation_config_from_json(const json& j, GenerationConfig c) {
  reject_unknown_keys(j,
                      {"horizon", "sigma", "site", "synergy_iters", "synergy_tol", "synergy_relaxation", "anchor",
                       "order", "control_cost"},
                      "generation");
  read_field(j, "horizon", c.horizon, "generation");
  read_field(j, "sigma", c.sigma, "generation");
  read_field(j, "synergy_iters", c.synergy_iters, "generation");
  read_field(j, "synergy_tol", c.synergy_tol, "generation");
  read_field(j, "synergy_relaxation", c.synergy_relaxation, "generation");
  read_field(j, "order", c.order, "generation");
  read_field(j, "control_cost", c.control_cost, "generation");
  std::string site = to_string(c.site);
  read_field(j, "site", site, "generation");
  std::string anchor = anchor_name(c.anchor);
  read_field(j, "anchor", anchor, "generation");
  try {
    c.site = parse_site(site);
    if (anchor == "per_timestep") {
      c.anchor = RelativeAnchor::per_timestep;
    } else if (anchor == "component_center") {
      c.anchor = RelativeAnchor::component_center;
    } else {
      throw std::invalid_argument("unknown anchor '" + anchor + "'");
    }
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw IoError(IoErrorCode::config, e.what());
  }
  return c;
}

std::vector<FrameSource> RunConfig::frames_for(const std::string& arm) const {
  const auto it = frames.find(arm);
  if (it != frames.end()) return it->second;
  return {{FrameSource::Kind::first_sample, {}, true}, {FrameSource::Kind::last_sample, {}, true}};
}

void RunConfig::check_against(const DemoSet& set) const {
  for (const auto& [arm, sources] : frames) {
    if (std::find(set.arms.begin(), set.arms.end(), arm) == set.arms.end()) {
      throw IoError(IoErrorCode::reference, "frames refer to unknown arm '" + arm + "'");
    }
    if (sources.empty() && !relative) throw IoError(IoErrorCode::config, "arm '" + arm + "' has no frames");
  }
  if (relative && set.arms.size() != 2) throw IoError(IoErrorCode::config, "a relative frame needs two arms");
  for (std::size_t h = 0; h < set.arms.size(); ++h) {
    for (std::size_t d = 0; d < set.demos.size(); ++d) {
      const FrameAnchors anchors = anchors_of(set.demos[d]);
      for (const auto& src : frames_for(set.arms[h])) {
        try {
          resolve_frame(src, anchors, h, set.demos[d].trajectories[h].cols());
        } catch (const IoError& e) {
          throw IoError(e.code(), "arm '" + set.arms[h] + "' demo " + std::to_string(d) + ": " + e.what());
        }
      }
    }
  }
}

json to_json(const RunConfig& c) {
  json frames = json::object();
  for (const auto& [arm, sources] : c.frames) {
    json a = json::array();
    for (const auto& s : sources) a.push_back(to_string(s));
    frames[arm] = std::move(a);
  }
  json j{{"em", to_json(c.em)},
         {"generation", to_json(c.generation)},
         {"frames", std::move(frames)},
         {"relative", c.relative},
         {"output_dir", c.output_dir}};
  if (c.scenario) {
    j["scenario"] = json{{"dims", c.scenario->dims},
                         {"n_demos", c.scenario->n_demos},
                         {"seed", c.scenario->seed},
                         {"meeting", vector_json(c.scenario->meeting)}};
  }
  return j;
}

namespace {

Scenario scenario_from_json(const json& j) {
  reject_unknown_keys(j, {"dims", "n_demos", "seed", "meeting"}, "scenario");
  Scenario s;
  read_field(j, "dims", s.dims, "scenario");
  read_field(j, "n_demos", s.n_demos, "scenario");
  read_field(j, "seed", s.seed, "scenario");
  if (s.dims != 2 && s.dims != 3) throw IoError(IoErrorCode::config, "scenario.dims must be 2 or 3");
  if (s.n_demos < 1) throw IoError(IoErrorCode::config, "scenario.n_demos must be positive");
  if (!j.contains("meeting")) throw IoError(IoErrorCode::config, "scenario.meeting is required");
  s.meeting = vector_from(j.at("meeting"), "scenario.meeting");
  if (s.meeting.size() != s.dims || !s.meeting.allFinite()) {
    throw IoError(IoErrorCode::config, "scenario.meeting needs " + std::to_string(s.dims) + " finite values");
  }
  return s;
}

}  // namespace

RunConfig run_config_from_json(const json& j) {
  reject_unknown_keys(j, {"em", "generation", "frames", "relative", "output_dir", "scenario"}, "config");
  RunConfig c;
  if (j.contains("scenario")) c.scenario = scenario_from_json(j.at("scenario"));
  if (j.contains("em")) c.em = em_config_from_json(j.at("em"));
  if (j.contains("generation")) c.generation = generation_config_from_json(j.at("generation"));
  read_field(j, "relative", c.relative, "config");
  read_field(j, "output_dir", c.output_dir, "config");
  if (j.contains("frames")) {
    const json& f = j.at("frames");
    if (!f.is_object()) throw IoError(IoErrorCode::config, "config.frames must map arm names to lists");
    for (const auto& [arm, list] : f.items()) {
      if (!list.is_array()) throw IoError(IoErrorCode::config, "config.frames." + arm + " must be a list");
      std::vector<FrameSource> sources;
      for (const auto& s : list) {
        if (!s.is_string()) throw IoError(IoErrorCode::config, "config.frames." + arm + " entries must be strings");
        sources.push_back(parse_frame_source(s.get<std::string>()));
      }
      c.frames[arm] = std::move(sources);
    }
  }
  return c;
}

namespace {

json parse_json_file(const fs::path& path) {
  const std::string text = read_text_file(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw IoError(IoErrorCode::syntax, path.string() + ": " + e.what());
  }
}

}  // namespace

RunConfig load_run_config(const fs::path& path) {
  try {
    return run_config_from_json(parse_json_file(path));
  } catch (const IoError& e) {
    throw IoError(e.code(), path.string() + ": " + e.what());
  }
}

// ---- models -----------------------------------------------------------------

std::size_t ModelBundle::arm_index(const std::string& name) const {
  for (std::size_t i = 0; i < arms.size(); ++i) {
    if (arms[i].arm == name) return i;
  }
  throw IoError(IoErrorCode::reference, "unknown arm '" + name + "'");
}

ModelBundle fit_models(const DemoSet& set, const RunConfig& cfg) {
  cfg.check_against(set);
  ModelBundle b;
  b.dt = set.dt;
  b.channels = set.channels;
  b.em = cfg.em;
  b.generation = cfg.generation;
  b.reference = anchors_of(set.demos.front());
  for (std::size_t h = 0; h < set.arms.size(); ++h) {
    const auto sources = cfg.frames_for(set.arms[h]);
    const auto frames = demo_frames(set, h, sources, cfg.relative);
    TpgmmFit fit = fit_tpgmm(set, set.arms[h], frames, cfg.em);
    b.arms.push_back(ArmModel{set.arms[h], std::move(fit.model), sources, std::move(fit.loglik_history)});
  }
  return b;
}

json to_json(const Gaussian& g) { return json{{"mean", vector_json(g.mean())}, {"covariance", matrix_json(g.covariance())}}; }

Gaussian gaussian_from_json(const json& j) {
  try {
    return Gaussian(vector_from(j.at("mean"), "mean"), matrix_from(j.at("covariance"), "covariance"));
  } catch (const json::exception& e) {
    throw IoError(IoErrorCode::syntax, std::string("gaussian: ") + e.what());
  } catch (const NumericalError& e) {
    throw IoError(IoErrorCode::syntax, std::string("gaussian: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw IoError(IoErrorCode::syntax, std::string("gaussian: ") + e.what());
  }
}

json to_json(const TPGMM& m) {
  json frames = json::array();
  for (const auto& f : m.frame_components()) {
    json comps = json::array();
    for (const auto& g : f) comps.push_back(to_json(g));
    frames.push_back(std::move(comps));
  }
  return json{{"priors", vector_json(m.priors())},
              {"relative", m.has_relative_frame()},
              {"duration", m.duration()},
              {"frames", std::move(frames)}};
}

TPGMM tpgmm_from_json(const json& j) {
  try {
    std::vector<std::vector<Gaussian>> frames;
    for (const auto& f : j.at("frames")) {
      std::vector<Gaussian> comps;
      for (const auto& g : f) comps.push_back(gaussian_from_json(g));
      frames.push_back(std::move(comps));
    }
    return TPGMM(vector_from(j.at("priors"), "priors"), std::move(frames), j.at("relative").get<bool>(),
                 j.at("duration").get<double>());
  } catch (const json::exception& e) {
    throw IoError(IoErrorCode::syntax, std::string("model: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw IoError(IoErrorCode::syntax, std::string("model: ") + e.what());
  }
}

namespace {

json anchors_json(const FrameAnchors& a) {
  json first = json::array();
  json last = json::array();
  for (const auto& v : a.first_sample) first.push_back(vector_json(v));
  for (const auto& v : a.last_sample) last.push_back(vector_json(v));
  json objects = json::object();
  for (const auto& [name, pose] : a.objects) {
    objects[name] = json{{"pos", vector_json(pose.position)}, {"quat", vector_json(pose.quaternion)}};
  }
  return json{{"first_sample", std::move(first)}, {"last_sample", std::move(last)}, {"objects", std::move(objects)}};
}

FrameAnchors anchors_from(const json& j) {
  FrameAnchors a;
  for (const auto& v : j.at("first_sample")) a.first_sample.push_back(vector_from(v, "first_sample"));
  for (const auto& v : j.at("last_sample")) a.last_sample.push_back(vector_from(v, "last_sample"));
  for (const auto& [name, pose] : j.at("objects").items()) {
    const VectorXd q = vector_from(pose.at("quat"), "quat");
    if (q.size() != 4) throw IoError(IoErrorCode::syntax, "object '" + name + "' quaternion needs 4 values");
    a.objects[name] = ObjectPose{vector_from(pose.at("pos"), "pos"), Eigen::Vector4d(q)};
  }
  return a;
}

}  // namespace

json to_json(const ModelBundle& b) {
  json arms = json::array();
  for (const auto& a : b.arms) {
    json frames = json::array();
    for (const auto& s : a.frames) frames.push_back(to_string(s));
    arms.push_back(json{{"arm", a.arm},
                        {"frames", std::move(frames)},
                        {"loglik_history", a.loglik_history},
                        {"model", to_json(a.model)}});
  }
  return json{{"format", "bicoord-model"},
              {"version", 1},
              {"dt", b.dt},
              {"channels", b.channels},
              {"em", to_json(b.em)},
              {"generation", to_json(b.generation)},
              {"reference", anchors_json(b.reference)},
              {"arms", std::move(arms)}};
}

ModelBundle model_bundle_from_json(const json& j) {
  try {
    if (j.at("format") != "bicoord-model") throw IoError(IoErrorCode::syntax, "not a model file");
    if (j.at("version") != 1) throw IoError(IoErrorCode::version, "unsupported model version");
    ModelBundle b;
    b.dt = j.at("dt").get<double>();
    b.channels = j.at("channels").get<std::vector<std::string>>();
    b.em = em_config_from_json(j.at("em"));
    b.generation = generation_config_from_json(j.at("generation"));
    b.reference = anchors_from(j.at("reference"));
    for (const auto& a : j.at("arms")) {
      std::vector<FrameSource> frames;
      for (const auto& s : a.at("frames")) frames.push_back(parse_frame_source(s.get<std::string>()));
      b.arms.push_back(ArmModel{a.at("arm").get<std::string>(), tpgmm_from_json(a.at("model")), std::move(frames),
                                a.at("loglik_history").get<std::vector<double>>()});
    }
    if (b.arms.empty()) throw IoError(IoErrorCode::syntax, "model file has no arms");
    return b;
  } catch (const json::exception& e) {
    throw IoError(IoErrorCode::syntax, std::string("model file: ") + e.what());
  }
}

ModelBundle load_models(const fs::path& path) {
  try {
    return model_bundle_from_json(parse_json_file(path));
  } catch (const IoError& e) {
    throw IoError(e.code(), path.string() + ": " + e.what());
  }
}

// ---- task instances ---------------------------------------------------------

json to_json(const Frame& f) { return json{{"A", matrix_json(f.linear())}, {"b", vector_json(f.offset())}}; }

Frame frame_from_json(const json& j) {
  try {
    return Frame(matrix_from(j.at("A"), "A"), vector_from(j.at("b"), "b"));
  } catch (const json::exception& e) {
    throw IoError(IoErrorCode::config, std::string("frame: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw IoError(IoErrorCode::config, std::string("frame: ") + e.what());
  }
}

json to_json(const TaskInstance& t) {
  json arms = json::array();
  for (const auto& a : t.arms) {
    json frames = json::array();
    for (const auto& f : a.frames) frames.push_back(to_json(f));
    arms.push_back(json{{"start", vector_json(a.start)}, {"frames", std::move(frames)}});
  }
  return json{{"duration", t.duration}, {"arms", std::move(arms)}};
}

TaskInstance task_from_json(const json& j) {
  try {
    reject_unknown_keys(j, {"duration", "arms"}, "task");
    TaskInstance t;
    read_field(j, "duration", t.duration, "task");
    for (const auto& a : j.at("arms")) {
      ArmTask arm;
      arm.start = vector_from(a.at("start"), "start");
      for (const auto& f : a.at("frames")) arm.frames.push_back(frame_from_json(f));
      t.arms.push_back(std::move(arm));
    }
    return t;
  } catch (const json::exception& e) {
    throw IoError(IoErrorCode::config, std::string("task: ") + e.what());
  }
}

TaskInstance task_from_anchors(const ModelBundle& b, const FrameAnchors& anchors, double duration) {
  TaskInstance t;
  t.duration = duration;
  for (std::size_t h = 0; h < b.arms.size(); ++h) {
    const Index dims = b.arms[h].model.dim() - 1;
    ArmTask arm;
    for (const auto& src : b.arms[h].frames) arm.frames.push_back(resolve_frame(src, anchors, h, dims));
    if (h >= anchors.first_sample.size() || anchors.first_sample[h].size() != dims) {
      throw IoError(IoErrorCode::reference, "no start position for arm '" + b.arms[h].arm + "'");
    }
    arm.start = anchors.first_sample[h];
    t.arms.push_back(std::move(arm));
  }
  return t;
}

// ---- plot series ------------------------------------------------------------

namespace {

json series_json(const MatrixXd& traj, const std::vector<std::string>& channels) {
  json s = json::object();
  s["t"] = vector_json(traj.col(0));
  for (Index c = 1; c < traj.cols(); ++c) {
    const auto ci = static_cast<std::size_t>(c - 1);
    s[ci < channels.size() ? channels[ci] : "q" + std::to_string(c - 1)] = vector_json(traj.col(c));
  }
  return s;
}

json gap_json(const MatrixXd& a, const MatrixXd& b) {
  return json{{"t", vector_json(a.col(0))}, {"value", vector_json(relative_gap(a, b))}};
}

}  // namespace

json plot_series(const PlotSeriesInput& in) {
  json series = json::object();
  for (std::size_t h = 0; h < in.generated.size(); ++h) {
    series["generated/" + in.arms[h]] = series_json(in.generated[h], in.channels);
  }
  for (std::size_t h = 0; h < in.baseline.size(); ++h) {
    series["baseline/" + in.arms[h]] = series_json(in.baseline[h], in.channels);
  }
  if (in.generated.size() == 2) series["relative_gap"] = gap_json(in.generated[0], in.generated[1]);
  if (in.baseline.size() == 2) series["baseline_relative_gap"] = gap_json(in.baseline[0], in.baseline[1]);

  json components = json::object();
  for (std::size_t h = 0; h < in.components.size(); ++h) {
    json list = json::array();
    const GMM& g = in.components[h];
    for (Index k = 0; k < g.size(); ++k) {
      list.push_back(json{{"prior", g.priors()(k)},
                          {"mean", vector_json(g.component(k).mean())},
                          {"covariance", matrix_json(g.component(k).covariance())}});
    }
    components[in.arms[h]] = std::move(list);
  }
  return json{{"mode", in.mode},
              {"arms", in.arms},
              {"channels", in.channels},
              {"series", std::move(series)},
              {"components", std::move(components)},
              {"synergy_displacement", in.synergy_displacement}};
}

// ---- output -----------------------------------------------------------------

void write_files_atomically(const fs::path& dir, const std::vector<std::pair<std::string, std::string>>& files) {
  std::error_code ec;
  const bool created = !fs::exists(dir, ec);
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError(IoErrorCode::io, "cannot create output directory " + dir.string());
  const fs::path staging = dir / ".staging";
  fs::remove_all(staging, ec);
  auto abandon = [&](const std::string& msg) {
    std::error_code ignore;
    fs::remove_all(staging, ignore);
    if (created) fs::remove_all(dir, ignore);
    throw IoError(IoErrorCode::io, msg);
  };
  if (!fs::create_directory(staging, ec) || ec) abandon("cannot stage output in " + dir.string());
  for (const auto& [name, content] : files) {
    std::ofstream out(staging / name, std::ios::binary);
    if (!out || !(out << content) || !out.flush()) abandon("cannot write " + (dir / name).string());
  }
  for (const auto& [name, content] : files) {
    if (fs::is_directory(dir / name, ec)) abandon("cannot replace directory " + (dir / name).string());
  }
  for (std::size_t i = 0; i < files.size(); ++i) {
    fs::rename(staging / files[i].first, dir / files[i].first, ec);
    if (ec) {
      std::error_code ignore;
      for (std::size_t j = 0; j < i; ++j) fs::remove(dir / files[j].first, ignore);
      abandon("cannot move " + files[i].first + " into " + dir.string());
    }
  }
  fs::remove_all(staging, ec);
}

}  // namespace bicoord
