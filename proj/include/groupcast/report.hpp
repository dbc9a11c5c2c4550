#pragma once

// Text formats shared by the command-line tool: prediction TSV, training
// log CSV and score CSV.

#include <map>
#include <ostream>
#include <string>
#include <tuple>
#include <vector>

#include "groupcast/data_model.hpp"
#include "groupcast/error.hpp"
#include "groupcast/gan.hpp"
#include "groupcast/metrics.hpp"

namespace groupcast {

struct PredictionRow {
  FrameIndex frame = 0;
  PedId ped_id = 0;
  Point2 position;
  /// First observed frame of the window the forecast came from.
  FrameIndex window_start = 0;

  friend bool operator==(const PredictionRow&, const PredictionRow&) = default;
};

inline void write_predictions(const std::vector<PredictionRow>& rows, std::ostream& out) {
  out << "# frame\tped_id\tx\ty\twindow_start\n";
  for (const auto& r : rows) {
    out << r.frame << '\t' << r.ped_id << '\t' << detail::format_number(r.position.x) << '\t'
        << detail::format_number(r.position.y) << '\t' << r.window_start << '\n';
  }
}

inline std::vector<PredictionRow> parse_predictions(std::istream& in,
                                                    const std::string& source = "<stream>") {
  std::vector<PredictionRow> rows;
  std::string line;
  std::size_t no = 0;
  while (std::getline(in, line)) {
    ++no;
    if (detail::is_blank_or_comment(line)) continue;
    const auto tok = detail::split_ws(line);
    if (tok.size() != 5) throw ParseError(source, no, "expected 5 fields, got " + std::to_string(tok.size()));
    auto frame = detail::parse_integral(tok[0]);
    auto ped = detail::parse_integral(tok[1]);
    auto x = detail::parse_double(tok[2]);
    auto y = detail::parse_double(tok[3]);
    auto start = detail::parse_integral(tok[4]);
    if (!frame || !ped || !x || !y || !start) throw ParseError(source, no, "malformed number");
    rows.push_back({*frame, *ped, {*x, *y}, *start});
  }
  return rows;
}

inline std::vector<PredictionRow> load_predictions(const std::string& path) {
  auto in = detail::open_input(path);
  return parse_predictions(in, path);
}

/// Mean per-window ADE/FDE of predictions against a scene's annotations.
struct ForecastScore {
  TrajectoryError mean;
  std::size_t windows = 0;
};

inline ForecastScore score_predictions(const std::vector<PredictionRow>& rows, const Scene& truth) {
  std::map<std::pair<PedId, FrameIndex>, Point2> gt;
  for (const auto& t : truth.trajectories) {
    for (const auto& s : t.samples) gt[{t.ped_id, s.frame}] = s.position;
  }
  std::map<std::pair<PedId, FrameIndex>, std::map<FrameIndex, Point2>> windows;
  for (const auto& r : rows) windows[{r.ped_id, r.window_start}][r.frame] = r.position;
  ForecastScore s;
  for (const auto& [key, track] : windows) {
    std::vector<Point2> pred, real;
    for (const auto& [frame, p] : track) {
      auto it = gt.find({key.first, frame});
      if (it == gt.end()) {
        throw ValidationError("no ground truth for pedestrian " + std::to_string(key.first) +
                              " at frame " + std::to_string(frame));
      }
      pred.push_back(p);
      real.push_back(it->second);
    }
    const auto e = ade_fde(pred, real);
    s.mean.ade += e.ade;
    s.mean.fde += e.fde;
    ++s.windows;
  }
  if (s.windows > 0) {
    s.mean.ade /= static_cast<double>(s.windows);
    s.mean.fde /= static_cast<double>(s.windows);
  }
  return s;
}

inline void write_training_log(const std::vector<EpochRecord>& history, std::ostream& out) {
  out << "epoch,loss_D,loss_G,sparsity,val_ADE\n";
  auto num = [](double v) { return std::isnan(v) ? std::string("nan") : detail::format_number(v); };
  for (const auto& r : history) {
    out << r.epoch << ',' << num(r.loss_d) << ',' << num(r.loss_g) << ',' << num(r.sparsity) << ','
        << num(r.val_ade) << '\n';
  }
}

struct ScoreRow {
  std::string scene_id;
  std::string metric;
  double precision = 0.0;
  double recall = 0.0;
};

inline void write_scores(const std::vector<ScoreRow>& rows, std::ostream& out) {
  out << "scene_id,metric,precision,recall\n";
  for (const auto& r : rows) {
    out << r.scene_id << ',' << r.metric << ',' << detail::format_number(r.precision) << ','
        << detail::format_number(r.recall) << '\n';
  }
}

/// Per-scene rows for both metrics, then pooled (summed counts) and
/// scene_mean (averaged scores) rows.
inline std::vector<ScoreRow> group_score_rows(
    const std::vector<std::tuple<std::string, Partition, Partition>>& scenes) {
  std::vector<ScoreRow> rows;
  for (GroupMetric m : {GroupMetric::pairwise, GroupMetric::group_mitre}) {
    GroupCounts pooled;
    double p_sum = 0.0, r_sum = 0.0;
    for (const auto& [id, predicted, truth] : scenes) {
      const GroupCounts c = m == GroupMetric::pairwise ? pairwise_counts(predicted, truth)
                                                       : group_mitre_counts(predicted, truth);
      pooled += c;
      const GroupScore s = score_from_counts(c, m);
      rows.push_back({id, to_string(m), s.precision, s.recall});
      p_sum += s.precision;
      r_sum += s.recall;
    }
    const GroupScore s = score_from_counts(pooled, m);
    rows.push_back({"pooled", to_string(m), s.precision, s.recall});
    const double n = static_cast<double>(std::max<std::size_t>(1, scenes.size()));
    rows.push_back({"scene_mean", to_string(m), p_sum / n, r_sum / n});
  }
  return rows;
}

}  // namespace groupcast
