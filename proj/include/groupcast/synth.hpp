#pragma once

// Synthetic crowds with known groups. Members of a group share a goal
// velocity; each step adds cohesion toward the group centroid, short-range
// repulsion between all pedestrians and Gaussian jitter, integrated with
// explicit Euler steps.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "groupcast/data_model.hpp"
#include "groupcast/error.hpp"
#include "groupcast/parallel.hpp"
#include "groupcast/random.hpp"

namespace groupcast {

struct SynthConfig {
  std::size_t min_groups = 2;
  std::size_t max_groups = 3;
  std::size_t min_group_size = 2;
  std::size_t max_group_size = 4;
  std::size_t min_pedestrians = 6;
  std::size_t max_pedestrians = 10;
  /// Side of the square that group start centres are drawn from.
  double scene_extent = 12.0;
  double min_speed = 0.8;
  double max_speed = 1.6;
  double noise_sigma = 0.05;
  double cohesion_strength = 0.5;
  double repulsion_strength = 0.5;
  double repulsion_radius = 0.6;
  /// Radius of the ring members start on around their group centre.
  double member_spacing = 0.7;
  /// Minimum angle between the goal headings of any two groups.
  double min_heading_separation_deg = 60.0;
  /// Minimum distance between group start centres.
  double min_group_separation = 3.0;
  std::size_t frames = 30;
  double frame_rate = 2.5;
  std::uint64_t seed = 1;
};

inline void validate(const SynthConfig& c, std::size_t t_pred = 0) {
  auto fail = [](const std::string& m) { throw ValidationError("synth config: " + m); };
  if (c.min_groups < 1 || c.min_groups > c.max_groups) fail("need 1 <= min_groups <= max_groups");
  if (c.min_group_size < 1 || c.min_group_size > c.max_group_size) {
    fail("need 1 <= min_group_size <= max_group_size");
  }
  if (c.min_pedestrians > c.max_pedestrians) fail("min_pedestrians > max_pedestrians");
  if (c.max_groups * c.max_group_size < c.min_pedestrians ||
      c.min_groups * c.min_group_size > c.max_pedestrians) {
    fail("pedestrian range cannot be met with the group ranges");
  }
  if (!(c.scene_extent > 0) || !(c.min_speed > 0) || !(c.max_speed >= c.min_speed)) {
    fail("extent and speeds must be positive");
  }
  if (!(c.noise_sigma >= 0) || !(c.cohesion_strength >= 0) || !(c.repulsion_strength >= 0) ||
      !(c.repulsion_radius >= 0) || !(c.member_spacing >= 0)) {
    fail("strengths, radii and noise must be non-negative");
  }
  if (!(c.frame_rate > 0)) fail("frame_rate must be positive");
  if (c.frames < 2 || c.frames < t_pred) fail("frames must be >= max(2, t_pred)");
  if (c.min_heading_separation_deg * static_cast<double>(c.max_groups) > 360.0) {
    fail("heading separation too large for max_groups");
  }
}

namespace detail {

inline double angle_gap(double a, double b) {
  double d = std::fmod(std::abs(a - b), 2.0 * std::numbers::pi);
  return std::min(d, 2.0 * std::numbers::pi - d);
}

}  // namespace detail

/// One scene; pedestrian ids are 1..N, group ids 0..G-1.
inline Scene generate_scene(const SynthConfig& c) {
  validate(c);
  std::mt19937_64 rng(c.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
  auto pick = [&](std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  };

  std::vector<std::size_t> sizes;
  for (;;) {
    sizes.assign(pick(c.min_groups, c.max_groups), 0);
    for (auto& s : sizes) s = pick(c.min_group_size, c.max_group_size);
    const std::size_t total = std::accumulate(sizes.begin(), sizes.end(), std::size_t{0});
    if (total >= c.min_pedestrians && total <= c.max_pedestrians) break;
  }

  const double min_gap = c.min_heading_separation_deg * std::numbers::pi / 180.0;
  std::vector<double> headings;
  for (int attempt = 0;; ++attempt) {
    headings.clear();
    for (std::size_t g = 0; g < sizes.size(); ++g) headings.push_back(uniform(0, 2 * std::numbers::pi));
    bool ok = true;
    for (std::size_t a = 0; a < headings.size() && ok; ++a) {
      for (std::size_t b = a + 1; b < headings.size(); ++b) {
        if (detail::angle_gap(headings[a], headings[b]) < min_gap) ok = false;
      }
    }
    if (ok) break;
    expects(attempt < 100000, "generate_scene: cannot place headings");
  }

  std::vector<Point2> centres;
  for (int attempt = 0; centres.size() < sizes.size(); ++attempt) {
    const Point2 cand{uniform(-c.scene_extent / 2, c.scene_extent / 2),
                      uniform(-c.scene_extent / 2, c.scene_extent / 2)};
    bool ok = true;
    for (const auto& o : centres) ok = ok && distance(o, cand) >= c.min_group_separation;
    if (ok || attempt > 10000) centres.push_back(cand);
  }

  struct Agent {
    std::size_t group;
    Point2 position;
  };
  std::vector<Agent> agents;
  std::vector<Point2> goal;
  for (std::size_t g = 0; g < sizes.size(); ++g) {
    const double speed = uniform(c.min_speed, c.max_speed);
    goal.push_back({speed * std::cos(headings[g]), speed * std::sin(headings[g])});
    const double phase = uniform(0, 2 * std::numbers::pi);
    for (std::size_t k = 0; k < sizes[g]; ++k) {
      const double a = phase + 2 * std::numbers::pi * static_cast<double>(k) /
                                   static_cast<double>(sizes[g]);
      const double r = sizes[g] == 1 ? 0.0 : c.member_spacing;
      agents.push_back({g, centres[g] + Point2{r * std::cos(a), r * std::sin(a)}});
    }
  }

  const double dt = 1.0 / c.frame_rate;
  std::normal_distribution<double> jitter(0.0, 1.0);
  Scene scene;
  scene.frame_rate = c.frame_rate;
  scene.trajectories.resize(agents.size());
  std::vector<std::vector<PedId>> groups(sizes.size());
  for (std::size_t i = 0; i < agents.size(); ++i) {
    scene.trajectories[i].ped_id = static_cast<PedId>(i + 1);
    groups[agents[i].group].push_back(static_cast<PedId>(i + 1));
  }
  for (std::size_t f = 0; f < c.frames; ++f) {
    for (std::size_t i = 0; i < agents.size(); ++i) {
      scene.trajectories[i].samples.push_back({static_cast<FrameIndex>(f), agents[i].position});
    }
    if (f + 1 == c.frames) break;
    std::vector<Point2> centroid(sizes.size());
    for (const auto& a : agents) centroid[a.group] += a.position;
    for (std::size_t g = 0; g < sizes.size(); ++g) centroid[g] = (1.0 / static_cast<double>(sizes[g])) * centroid[g];

    std::vector<Point2> next(agents.size());
    for (std::size_t i = 0; i < agents.size(); ++i) {
      const Agent& a = agents[i];
      Point2 v = goal[a.group] + c.cohesion_strength * (centroid[a.group] - a.position);
      for (std::size_t j = 0; j < agents.size(); ++j) {
        if (j == i) continue;
        const Point2 off = a.position - agents[j].position;
        const double d = norm(off);
        if (d > 0 && d < c.repulsion_radius) {
          v += (c.repulsion_strength * (1.0 - d / c.repulsion_radius) / d) * off;
        }
      }
      next[i] = a.position + dt * v;
      if (c.noise_sigma > 0) next[i] += Point2{c.noise_sigma * jitter(rng), c.noise_sigma * jitter(rng)};
    }
    for (std::size_t i = 0; i < agents.size(); ++i) agents[i].position = next[i];
  }
  scene.group_labels = Partition::from_groups(groups);
  return scene;
}

struct NamedScene {
  std::string name;
  Scene scene;
};

struct Corpus {
  std::vector<NamedScene> scenes;
  std::vector<std::string> train;
  std::vector<std::string> validation;
  std::vector<std::string> test;
};

inline std::string scene_name(std::size_t i) {
  std::string digits = std::to_string(i);
  if (digits.size() < 4) digits.insert(0, 4 - digits.size(), '0');
  return "scene_" + digits;
}

/// Scene i is generated from a seed derived from (config.seed, i). The
/// split takes floor(70%) for training, floor(15%) for validation and the
/// remainder for test, after a seeded shuffle.
inline Corpus generate_corpus(const SynthConfig& config, std::size_t n_scenes,
                              std::size_t threads = 1) {
  expects(n_scenes >= 3, "generate_corpus: need at least 3 scenes");
  validate(config);
  Corpus corpus;
  corpus.scenes.resize(n_scenes);
  parallel_for(n_scenes, threads, [&](std::size_t i) {
    SynthConfig c = config;
    c.seed = derive_seed(config.seed, i, 0x5C);
    corpus.scenes[i] = {scene_name(i), generate_scene(c)};
  });
  std::vector<std::size_t> order(n_scenes);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(derive_seed(config.seed, 0x5911));
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t n_train = n_scenes * 70 / 100;
  const std::size_t n_val = n_scenes * 15 / 100;
  for (std::size_t k = 0; k < n_scenes; ++k) {
    auto& dest = k < n_train ? corpus.train : (k < n_train + n_val ? corpus.validation : corpus.test);
    dest.push_back(scene_name(order[k]));
  }
  for (auto* v : {&corpus.train, &corpus.validation, &corpus.test}) std::sort(v->begin(), v->end());
  return corpus;
}

}  // namespace groupcast
