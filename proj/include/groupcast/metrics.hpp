#pragma once

// Forecast errors (ADE/FDE) and partition agreement scores: the pairwise
// co-membership score and the Group-MITRE link score, where singletons are
// given a fake partner so that they count as one link.

#include <cmath>
#include <map>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "groupcast/data_model.hpp"
#include "groupcast/error.hpp"

namespace groupcast {

struct TrajectoryError {
  double ade = 0.0;
  double fde = 0.0;
};

inline TrajectoryError ade_fde(std::span<const Point2> predicted, std::span<const Point2> truth) {
  expects(predicted.size() == truth.size(), "ade_fde: length mismatch");
  expects(!predicted.empty(), "ade_fde: empty trajectories");
  double total = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) total += distance(predicted[i], truth[i]);
  return {total / static_cast<double>(predicted.size()), distance(predicted.back(), truth.back())};
}

/// Holds the last observed position.
inline std::vector<Point2> constant_position_forecast(const Window& w) {
  return std::vector<Point2>(w.future.size(), w.observed.back());
}

/// Extrapolates the last observed displacement.
inline std::vector<Point2> constant_velocity_forecast(const Window& w) {
  const std::size_t n = w.observed.size();
  const Point2 v = w.observed[n - 1] - w.observed[n - 2];
  std::vector<Point2> out;
  Point2 p = w.observed.back();
  for (std::size_t i = 0; i < w.future.size(); ++i) {
    p += v;
    out.push_back(p);
  }
  return out;
}

enum class GroupMetric { pairwise, group_mitre };

inline const char* to_string(GroupMetric m) {
  return m == GroupMetric::pairwise ? "pairwise" : "group_mitre";
}

/// Numerators and denominators, kept separate so scores can be pooled.
struct GroupCounts {
  double precision_num = 0.0;
  double precision_den = 0.0;
  double recall_num = 0.0;
  double recall_den = 0.0;

  GroupCounts& operator+=(const GroupCounts& o) {
    precision_num += o.precision_num;
    precision_den += o.precision_den;
    recall_num += o.recall_num;
    recall_den += o.recall_den;
    return *this;
  }
};

struct GroupScore {
  double precision = 0.0;
  double recall = 0.0;
  GroupMetric metric = GroupMetric::pairwise;
};

/// An empty denominator scores 1 when the other side is empty too, else 0.
inline GroupScore score_from_counts(const GroupCounts& c, GroupMetric metric) {
  GroupScore s;
  s.metric = metric;
  s.precision = c.precision_den > 0 ? c.precision_num / c.precision_den
                                    : (c.recall_den > 0 ? 0.0 : 1.0);
  s.recall = c.recall_den > 0 ? c.recall_num / c.recall_den : (c.precision_den > 0 ? 0.0 : 1.0);
  return s;
}

namespace detail {

inline void same_members(const Partition& a, const Partition& b) {
  expects(a.members() == b.members(), "partition scores: pedestrian sets differ");
}

inline double pairs(double n) { return n * (n - 1.0) / 2.0; }

}  // namespace detail

/// Pair counts from group sizes and the contingency table.
inline GroupCounts pairwise_counts(const Partition& predicted, const Partition& truth) {
  detail::same_members(predicted, truth);
  std::map<GroupId, double> pred_sizes, truth_sizes;
  std::map<std::pair<GroupId, GroupId>, double> joint;
  for (const auto& [p, g] : predicted.assignment()) {
    const GroupId t = truth.group_of(p);
    pred_sizes[g] += 1;
    truth_sizes[t] += 1;
    joint[{g, t}] += 1;
  }
  double both = 0.0, pred_pairs = 0.0, truth_pairs = 0.0;
  for (const auto& [k, n] : joint) both += detail::pairs(n);
  for (const auto& [k, n] : pred_sizes) pred_pairs += detail::pairs(n);
  for (const auto& [k, n] : truth_sizes) truth_pairs += detail::pairs(n);
  return {both, pred_pairs, both, truth_pairs};
}

inline GroupScore pairwise_scores(const Partition& predicted, const Partition& truth) {
  return score_from_counts(pairwise_counts(predicted, truth), GroupMetric::pairwise);
}

/// Fraction of unordered pairs whose co-membership the two partitions
/// disagree on.
inline double pairwise_disagreement(const Partition& predicted, const Partition& truth) {
  const GroupCounts c = pairwise_counts(predicted, truth);
  const double all = detail::pairs(static_cast<double>(predicted.size()));
  if (all == 0.0) return 0.0;
  return (c.precision_den + c.recall_den - 2.0 * c.precision_num) / all;
}

namespace detail {

/// MITRE recall-side counts of `key` against `response` after fake-partner
/// augmentation. A pedestrian that is a singleton in either partition owns a
/// fake element; in each partition the fake joins its owner's group when the
/// owner is a singleton there and is a singleton of its own otherwise.
inline std::pair<double, double> mitre_side(const Partition& key, const Partition& response) {
  std::map<GroupId, std::vector<PedId>> key_groups;
  std::map<GroupId, std::size_t> key_sizes, resp_sizes;
  for (const auto& [p, g] : key.assignment()) {
    key_groups[g].push_back(p);
    key_sizes[g] += 1;
  }
  for (const auto& [p, g] : response.assignment()) resp_sizes[g] += 1;

  double num = 0.0, den = 0.0;
  for (const auto& [g, members] : key_groups) {
    // Response-side part labels: (0, group) for real groups, (1, ped) for a
    // fake that sits alone in the response.
    std::set<std::pair<int, std::int64_t>> parts;
    for (PedId p : members) parts.insert({0, response.group_of(p)});
    std::size_t size = members.size();
    if (members.size() == 1) {
      const PedId owner = members.front();
      size += 1;
      const GroupId rg = response.group_of(owner);
      if (resp_sizes[rg] == 1) {
        parts.insert({0, rg});
      } else {
        parts.insert({1, owner});
      }
    }
    num += static_cast<double>(size) - static_cast<double>(parts.size());
    den += static_cast<double>(size) - 1.0;
  }
  return {num, den};
}

}  // namespace detail

inline GroupCounts group_mitre_counts(const Partition& predicted, const Partition& truth) {
  detail::same_members(predicted, truth);
  auto [r_num, r_den] = detail::mitre_side(truth, predicted);
  auto [p_num, p_den] = detail::mitre_side(predicted, truth);
  return {p_num, p_den, r_num, r_den};
}

inline GroupScore group_mitre_scores(const Partition& predicted, const Partition& truth) {
  return score_from_counts(group_mitre_counts(predicted, truth), GroupMetric::group_mitre);
}

}  // namespace groupcast
