#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <utility>
#include <vector>

#include "groupcast/error.hpp"

namespace groupcast {

using PedId = std::int64_t;
using GroupId = std::int64_t;
using FrameIndex = std::int64_t;

/// Position in world metres.
struct Point2 {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point2&, const Point2&) = default;
  Point2& operator+=(const Point2& o) {
    x += o.x;
    y += o.y;
    return *this;
  }
  Point2& operator-=(const Point2& o) {
    x -= o.x;
    y -= o.y;
    return *this;
  }
  friend Point2 operator+(Point2 a, const Point2& b) { return a += b; }
  friend Point2 operator-(Point2 a, const Point2& b) { return a -= b; }
  friend Point2 operator*(double s, const Point2& p) { return {s * p.x, s * p.y}; }
  friend Point2 operator*(const Point2& p, double s) { return {s * p.x, s * p.y}; }
};

inline double norm(const Point2& p) { return std::hypot(p.x, p.y); }
inline double distance(const Point2& a, const Point2& b) { return norm(a - b); }
inline double dot(const Point2& a, const Point2& b) { return a.x * b.x + a.y * b.y; }
inline double cross(const Point2& a, const Point2& b) { return a.x * b.y - a.y * b.x; }
inline bool is_finite(const Point2& p) { return std::isfinite(p.x) && std::isfinite(p.y); }

struct Sample {
  FrameIndex frame = 0;
  Point2 position;

  friend bool operator==(const Sample&, const Sample&) = default;
};

/// Frame-indexed positions of one pedestrian; frames strictly increasing.
struct Trajectory {
  PedId ped_id = 0;
  std::vector<Sample> samples;

  friend bool operator==(const Trajectory&, const Trajectory&) = default;
};

/// Assignment of pedestrians to disjoint groups. Group ids only matter up to
/// equality.
class Partition {
 public:
  Partition() = default;
  explicit Partition(std::map<PedId, GroupId> assignment) : assignment_(std::move(assignment)) {}

  /// Builds a partition from explicit member lists; the i-th list gets group id i.
  static Partition from_groups(const std::vector<std::vector<PedId>>& groups) {
    std::map<PedId, GroupId> a;
    for (std::size_t g = 0; g < groups.size(); ++g) {
      for (PedId p : groups[g]) {
        if (!a.emplace(p, static_cast<GroupId>(g)).second) {
          throw ValidationError("pedestrian " + std::to_string(p) + " listed in two groups");
        }
      }
    }
    return Partition(std::move(a));
  }

  const std::map<PedId, GroupId>& assignment() const noexcept { return assignment_; }
  std::size_t size() const noexcept { return assignment_.size(); }
  bool empty() const noexcept { return assignment_.empty(); }
  bool contains(PedId p) const { return assignment_.count(p) != 0; }
  GroupId group_of(PedId p) const {
    auto it = assignment_.find(p);
    expects(it != assignment_.end(), "pedestrian not in partition");
    return it->second;
  }

  std::vector<PedId> members() const {
    std::vector<PedId> out;
    out.reserve(assignment_.size());
    for (const auto& [p, g] : assignment_) out.push_back(p);
    return out;
  }

  /// Groups as sorted member lists, ordered by their smallest member.
  std::vector<std::vector<PedId>> groups() const {
    std::map<GroupId, std::vector<PedId>> by_id;
    for (const auto& [p, g] : assignment_) by_id[g].push_back(p);
    std::vector<std::vector<PedId>> out;
    out.reserve(by_id.size());
    for (auto& [g, members] : by_id) out.push_back(std::move(members));
    std::sort(out.begin(), out.end());
    return out;
  }

  /// Same pedestrian set and the same grouping, ignoring group ids.
  bool equivalent(const Partition& other) const { return groups() == other.groups(); }

  friend bool operator==(const Partition&, const Partition&) = default;

 private:
  std::map<PedId, GroupId> assignment_;
};

struct Scene {
  std::vector<Trajectory> trajectories;
  double frame_rate = 2.5;
  std::optional<Partition> group_labels;

  friend bool operator==(const Scene&, const Scene&) = default;
};

struct Neighbour {
  PedId ped_id = 0;
  std::vector<Point2> observed;
};

/// One forecasting unit: observed prefix, future suffix and the pedestrians
/// present over the whole observed span.
struct Window {
  PedId ped_id = 0;
  FrameIndex start_frame = 0;
  std::vector<Point2> observed;
  std::vector<Point2> future;
  std::vector<Neighbour> neighbours;
};

struct WindowParams {
  std::size_t t_obs = 15;
  std::size_t t_pred = 30;
  std::size_t stride = 15;
};

namespace detail {

inline std::string format_number(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::optional<double> parse_double(std::string_view token) {
  double v = 0.0;
  if (!token.empty() && token.front() == '+') token.remove_prefix(1);
  auto res = std::from_chars(token.data(), token.data() + token.size(), v);
  if (res.ec != std::errc() || res.ptr != token.data() + token.size()) return std::nullopt;
  return v;
}

/// Integers may be written as floats ("1.0000000e+00") in tracker exports.
inline std::optional<std::int64_t> parse_integral(std::string_view token) {
  std::int64_t i = 0;
  auto res = std::from_chars(token.data(), token.data() + token.size(), i);
  if (res.ec == std::errc() && res.ptr == token.data() + token.size()) return i;
  auto d = parse_double(token);
  if (!d || !std::isfinite(*d) || std::floor(*d) != *d || std::fabs(*d) > 9.0e15) return std::nullopt;
  return static_cast<std::int64_t>(*d);
}

inline std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    std::size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

inline bool is_blank_or_comment(std::string_view line) {
  for (char c : line) {
    if (c == '#') return true;
    if (!std::isspace(static_cast<unsigned char>(c))) return false;
  }
  return true;
}

inline std::ifstream open_input(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  return in;
}

}  // namespace detail

/// Rejects scenes that break the type invariants.
inline void validate(const Scene& scene) {
  std::set<PedId> ids;
  for (const auto& t : scene.trajectories) {
    if (!ids.insert(t.ped_id).second) {
      throw ValidationError("duplicate trajectory for pedestrian " + std::to_string(t.ped_id));
    }
    if (t.samples.empty()) {
      throw ValidationError("empty trajectory for pedestrian " + std::to_string(t.ped_id));
    }
    for (std::size_t i = 0; i < t.samples.size(); ++i) {
      if (!is_finite(t.samples[i].position)) {
        throw ValidationError("non-finite position for pedestrian " + std::to_string(t.ped_id));
      }
      if (i > 0 && t.samples[i].frame <= t.samples[i - 1].frame) {
        throw ValidationError("frames not strictly increasing for pedestrian " +
                              std::to_string(t.ped_id));
      }
    }
  }
  if (scene.group_labels) {
    std::set<PedId> labelled;
    for (const auto& [p, g] : scene.group_labels->assignment()) labelled.insert(p);
    if (labelled != ids) throw ValidationError("group labels do not cover the scene's pedestrians");
  }
}

/// Parses `frame ped_id x y` rows. Blank lines and `#` comments are skipped.
inline Scene parse_annotations(std::istream& in, const std::string& source = "<stream>") {
  std::map<PedId, std::map<FrameIndex, Point2>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::is_blank_or_comment(line)) continue;
    auto tok = detail::split_ws(line);
    if (tok.size() != 4) {
      throw ParseError(source, line_no, "expected 4 fields (frame ped_id x y), got " +
                                            std::to_string(tok.size()));
    }
    auto frame = detail::parse_integral(tok[0]);
    auto ped = detail::parse_integral(tok[1]);
    auto x = detail::parse_double(tok[2]);
    auto y = detail::parse_double(tok[3]);
    if (!frame) throw ParseError(source, line_no, "bad frame index '" + std::string(tok[0]) + "'");
    if (!ped) throw ParseError(source, line_no, "bad pedestrian id '" + std::string(tok[1]) + "'");
    if (!x || !y || !std::isfinite(*x) || !std::isfinite(*y)) {
      throw ParseError(source, line_no, "bad coordinate");
    }
    auto [it, inserted] = rows[*ped].emplace(*frame, Point2{*x, *y});
    if (!inserted) {
      throw ValidationError(source + ":" + std::to_string(line_no) + ": duplicate row for frame " +
                            std::to_string(*frame) + ", pedestrian " + std::to_string(*ped));
    }
  }
  Scene scene;
  scene.trajectories.reserve(rows.size());
  for (auto& [ped, samples] : rows) {
    Trajectory t{ped, {}};
    t.samples.reserve(samples.size());
    for (const auto& [f, p] : samples) t.samples.push_back({f, p});
    scene.trajectories.push_back(std::move(t));
  }
  return scene;
}

inline Scene load_annotations(const std::string& path) {
  auto in = detail::open_input(path);
  return parse_annotations(in, path);
}

/// Writes rows ordered by (frame, ped_id) with shortest round-trip numbers.
inline void write_annotations(const Scene& scene, std::ostream& out) {
  std::vector<std::pair<std::pair<FrameIndex, PedId>, Point2>> rows;
  for (const auto& t : scene.trajectories) {
    for (const auto& s : t.samples) rows.push_back({{s.frame, t.ped_id}, s.position});
  }
  std::sort(rows.begin(), rows.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  for (const auto& [key, p] : rows) {
    out << key.first << '\t' << key.second << '\t' << detail::format_number(p.x) << '\t'
        << detail::format_number(p.y) << '\n';
  }
}

/// Parses `ped_id group_id` rows. Group tokens are opaque; they are interned to
/// integers in first-seen order.
inline Partition parse_partition(std::istream& in, const std::string& source = "<stream>") {
  std::map<PedId, GroupId> assignment;
  std::map<std::string, GroupId> interned;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::is_blank_or_comment(line)) continue;
    auto tok = detail::split_ws(line);
    if (tok.size() != 2) throw ParseError(source, line_no, "expected 2 fields (ped_id group_id)");
    auto ped = detail::parse_integral(tok[0]);
    if (!ped) throw ParseError(source, line_no, "bad pedestrian id '" + std::string(tok[0]) + "'");
    auto [git, fresh] =
        interned.emplace(std::string(tok[1]), static_cast<GroupId>(interned.size()));
    (void)fresh;
    if (!assignment.emplace(*ped, git->second).second) {
      throw ValidationError(source + ":" + std::to_string(line_no) + ": pedestrian " +
                            std::to_string(*ped) + " labelled twice");
    }
  }
  return Partition(std::move(assignment));
}

inline Partition load_partition(const std::string& path) {
  auto in = detail::open_input(path);
  return parse_partition(in, path);
}

/// Writes `ped_id group_id` rows; group ids are renumbered 0.. in order of
/// each group's smallest member so equivalent partitions serialize identically.
inline void write_partition(const Partition& partition, std::ostream& out) {
  auto groups = partition.groups();
  std::map<PedId, std::size_t> canon;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    for (PedId p : groups[g]) canon[p] = g;
  }
  for (const auto& [p, g] : canon) out << p << '\t' << g << '\n';
}

/// Scene plus an optional `ped_id group_id` sidecar.
inline Scene load_scene(const std::string& annotation_path,
                        const std::optional<std::string>& labels_path = std::nullopt,
                        double frame_rate = 2.5) {
  Scene scene = load_annotations(annotation_path);
  scene.frame_rate = frame_rate;
  if (labels_path) scene.group_labels = load_partition(*labels_path);
  validate(scene);
  return scene;
}

inline Partition partition_from_labels(const Scene& scene) {
  if (!scene.group_labels) throw AbsentLabelsError();
  return *scene.group_labels;
}

/// Smallest positive gap between distinct frame indices; 1 when undefined.
/// Tracker exports often sample every k-th video frame.
inline FrameIndex frame_step(const Scene& scene) {
  std::set<FrameIndex> frames;
  for (const auto& t : scene.trajectories) {
    for (const auto& s : t.samples) frames.insert(s.frame);
  }
  FrameIndex step = 0;
  for (auto it = frames.begin(); it != frames.end(); ++it) {
    auto next = std::next(it);
    if (next == frames.end()) break;
    FrameIndex gap = *next - *it;
    if (step == 0 || gap < step) step = gap;
  }
  return step > 0 ? step : 1;
}

/// Cuts every pedestrian's maximal contiguous runs into windows of t_pred
/// frames. Neighbours are the other pedestrians present at every observed frame.
inline std::vector<Window> make_windows(const Scene& scene, const WindowParams& params) {
  expects(params.t_obs >= 2, "make_windows: t_obs must be >= 2");
  expects(params.t_pred > params.t_obs, "make_windows: t_pred must exceed t_obs");
  expects(params.stride >= 1, "make_windows: stride must be >= 1");

  const FrameIndex step = frame_step(scene);
  std::vector<const Trajectory*> order;
  order.reserve(scene.trajectories.size());
  for (const auto& t : scene.trajectories) order.push_back(&t);
  std::sort(order.begin(), order.end(),
            [](const Trajectory* a, const Trajectory* b) { return a->ped_id < b->ped_id; });

  std::vector<std::map<FrameIndex, Point2>> lookup;
  lookup.reserve(order.size());
  for (const auto* t : order) {
    std::map<FrameIndex, Point2> m;
    for (const auto& s : t->samples) m.emplace(s.frame, s.position);
    lookup.push_back(std::move(m));
  }

  std::vector<Window> windows;
  for (std::size_t k = 0; k < order.size(); ++k) {
    const auto& samples = order[k]->samples;
    std::size_t run_begin = 0;
    while (run_begin < samples.size()) {
      std::size_t run_end = run_begin + 1;
      while (run_end < samples.size() &&
             samples[run_end].frame - samples[run_end - 1].frame == step) {
        ++run_end;
      }
      for (std::size_t start = run_begin; start + params.t_pred <= run_end; start += params.stride) {
        Window w;
        w.ped_id = order[k]->ped_id;
        w.start_frame = samples[start].frame;
        for (std::size_t i = 0; i < params.t_obs; ++i) w.observed.push_back(samples[start + i].position);
        for (std::size_t i = params.t_obs; i < params.t_pred; ++i) {
          w.future.push_back(samples[start + i].position);
        }
        for (std::size_t n = 0; n < order.size(); ++n) {
          if (n == k) continue;
          Neighbour nb{order[n]->ped_id, {}};
          nb.observed.reserve(params.t_obs);
          for (std::size_t i = 0; i < params.t_obs; ++i) {
            auto it = lookup[n].find(samples[start + i].frame);
            if (it == lookup[n].end()) break;
            nb.observed.push_back(it->second);
          }
          if (nb.observed.size() == params.t_obs) w.neighbours.push_back(std::move(nb));
        }
        windows.push_back(std::move(w));
      }
      run_begin = run_end;
    }
  }
  return windows;
}

inline std::vector<Window> make_windows(const Scene& scene, std::size_t t_obs, std::size_t t_pred,
                                        std::size_t stride) {
  return make_windows(scene, WindowParams{t_obs, t_pred, stride});
}

}  // namespace groupcast
