#pragma once

// Minimal SVG plots: forecasts (observed green, ground truth blue, predicted
// red) and trajectories coloured by group.

#include <algorithm>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "groupcast/data_model.hpp"

namespace groupcast::svg {

inline constexpr const char* kObservedColour = "#2ca02c";
inline constexpr const char* kTruthColour = "#1f77b4";
inline constexpr const char* kPredictedColour = "#d62728";

inline const std::vector<std::string>& palette() {
  static const std::vector<std::string> p = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                                             "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
                                             "#bcbd22", "#17becf"};
  return p;
}

/// World-to-canvas mapping fitted to a set of points; y grows upward.
class Canvas {
 public:
  explicit Canvas(const std::vector<Point2>& points, double size = 800.0, double margin = 20.0)
      : size_(size), margin_(margin) {
    double x0 = std::numeric_limits<double>::infinity(), y0 = x0;
    double x1 = -x0, y1 = -x0;
    for (const auto& p : points) {
      x0 = std::min(x0, p.x);
      x1 = std::max(x1, p.x);
      y0 = std::min(y0, p.y);
      y1 = std::max(y1, p.y);
    }
    if (points.empty()) x0 = y0 = 0, x1 = y1 = 1;
    const double span = std::max({x1 - x0, y1 - y0, 1e-9});
    scale_ = (size - 2 * margin) / span;
    x0_ = x0;
    y1_ = y1;
  }

  std::string header() const {
    std::ostringstream o;
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size_ << "\" height=\"" << size_
      << "\" viewBox=\"0 0 " << size_ << ' ' << size_ << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    return o.str();
  }

  std::string polyline(const std::vector<Point2>& pts, const std::string& cls,
                       const std::string& colour, const std::string& extra = "") const {
    std::ostringstream o;
    o << "<polyline class=\"" << cls << "\" fill=\"none\" stroke=\"" << colour
      << "\" stroke-width=\"2\"" << extra << " points=\"";
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (i) o << ' ';
      o << coord(pts[i]);
    }
    o << "\"/>\n";
    return o.str();
  }

  std::string circle(const Point2& p, double r, const std::string& colour) const {
    const Point2 c = map(p);
    std::ostringstream o;
    o << "<circle cx=\"" << fmt(c.x) << "\" cy=\"" << fmt(c.y) << "\" r=\"" << r << "\" fill=\""
      << colour << "\"/>\n";
    return o.str();
  }

 private:
  Point2 map(const Point2& p) const {
    return {margin_ + (p.x - x0_) * scale_, margin_ + (y1_ - p.y) * scale_};
  }
  static std::string fmt(double v) {
    std::ostringstream o;
    o.precision(2);
    o << std::fixed << v;
    return o.str();
  }
  std::string coord(const Point2& p) const {
    const Point2 c = map(p);
    return fmt(c.x) + "," + fmt(c.y);
  }

  double size_, margin_, scale_ = 1.0, x0_ = 0.0, y1_ = 0.0;
};

struct ForecastTrack {
  PedId ped_id = 0;
  FrameIndex start_frame = 0;
  std::vector<Point2> observed;
  std::vector<Point2> truth;
  std::vector<Point2> predicted;
};

/// One <g class="pedestrian"> per track with observed, truth and predicted
/// polylines.
inline void write_forecast_svg(const std::vector<ForecastTrack>& tracks, std::ostream& out) {
  std::vector<Point2> all;
  for (const auto& t : tracks) {
    for (const auto* s : {&t.observed, &t.truth, &t.predicted}) all.insert(all.end(), s->begin(), s->end());
  }
  Canvas c(all);
  out << c.header();
  for (const auto& t : tracks) {
    out << "<g class=\"pedestrian\" data-ped=\"" << t.ped_id << "\" data-start=\"" << t.start_frame
        << "\">\n";
    std::vector<Point2> truth{t.observed.back()}, pred{t.observed.back()};
    truth.insert(truth.end(), t.truth.begin(), t.truth.end());
    pred.insert(pred.end(), t.predicted.begin(), t.predicted.end());
    out << c.polyline(t.observed, "observed", kObservedColour);
    if (!t.truth.empty()) out << c.polyline(truth, "truth", kTruthColour);
    out << c.polyline(pred, "predicted", kPredictedColour, " stroke-dasharray=\"6,3\"");
    out << "</g>\n";
  }
  out << "</svg>\n";
}

/// Trajectories coloured by the index of their group in partition.groups().
inline void write_group_svg(const Scene& scene, const Partition& partition, std::ostream& out) {
  std::map<PedId, std::size_t> colour_of;
  const auto groups = partition.groups();
  for (std::size_t g = 0; g < groups.size(); ++g) {
    for (PedId p : groups[g]) colour_of[p] = g;
  }
  std::vector<Point2> all;
  for (const auto& t : scene.trajectories) {
    for (const auto& s : t.samples) all.push_back(s.position);
  }
  Canvas c(all);
  out << c.header();
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const std::string& colour = palette()[g % palette().size()];
    out << "<g class=\"group\" data-group=\"" << g << "\" data-colour=\"" << colour << "\">\n";
    for (const auto& t : scene.trajectories) {
      auto it = colour_of.find(t.ped_id);
      if (it == colour_of.end() || it->second != g) continue;
      std::vector<Point2> pts;
      for (const auto& s : t.samples) pts.push_back(s.position);
      out << c.polyline(pts, "track", colour, " data-ped=\"" + std::to_string(t.ped_id) + "\"");
      out << c.circle(pts.back(), 3.0, colour);
    }
    out << "</g>\n";
  }
  out << "</svg>\n";
}

}  // namespace groupcast::svg
