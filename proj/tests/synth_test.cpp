#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include "groupcast/synth.hpp"

using namespace groupcast;

namespace {

Point2 centroid(const Scene& s, const std::vector<PedId>& members, std::size_t f) {
  Point2 c;
  for (PedId p : members) c += s.trajectories[static_cast<std::size_t>(p - 1)].samples[f].position;
  return (1.0 / static_cast<double>(members.size())) * c;
}

}  // namespace

TEST(Synth, NoForcesMeansStraightLines) {
  SynthConfig c;
  c.cohesion_strength = 0;
  c.repulsion_strength = 0;
  c.noise_sigma = 0;
  c.seed = 3;
  const Scene s = generate_scene(c);
  for (const auto& t : s.trajectories) {
    const Point2 step = t.samples[1].position - t.samples[0].position;
    const double speed = norm(step) * c.frame_rate;
    EXPECT_GE(speed, c.min_speed - 1e-9);
    EXPECT_LE(speed, c.max_speed + 1e-9);
    for (std::size_t f = 1; f < t.samples.size(); ++f) {
      const Point2 d = t.samples[f].position - t.samples[f - 1].position;
      EXPECT_NEAR(d.x, step.x, 1e-9);
      EXPECT_NEAR(d.y, step.y, 1e-9);
    }
  }
}

TEST(Synth, CohesionNeverLetsMembersDrift) {
  SynthConfig c;
  c.repulsion_strength = 0;
  c.noise_sigma = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    c.seed = seed;
    const Scene s = generate_scene(c);
    for (const auto& g : s.group_labels->groups()) {
      for (std::size_t f = 1; f < c.frames; ++f) {
        for (PedId p : g) {
          const double before = distance(s.trajectories[static_cast<std::size_t>(p - 1)].samples[f - 1].position, centroid(s, g, f - 1));
          const double after = distance(s.trajectories[static_cast<std::size_t>(p - 1)].samples[f].position, centroid(s, g, f));
          EXPECT_LE(after, before + 1e-9);
        }
      }
    }
  }
}

TEST(Synth, SizesWithinConfiguredRanges) {
  SynthConfig c;
  for (std::uint64_t seed = 1; seed <= 30; ++seed) {
    c.seed = seed;
    const Scene s = generate_scene(c);
    EXPECT_GE(s.trajectories.size(), c.min_pedestrians);
    EXPECT_LE(s.trajectories.size(), c.max_pedestrians);
    const auto groups = s.group_labels->groups();
    EXPECT_GE(groups.size(), c.min_groups);
    EXPECT_LE(groups.size(), c.max_groups);
    for (const auto& g : groups) {
      EXPECT_GE(g.size(), c.min_group_size);
      EXPECT_LE(g.size(), c.max_group_size);
    }
    for (const auto& t : s.trajectories) EXPECT_EQ(t.samples.size(), c.frames);
    EXPECT_NO_THROW(validate(s));
  }
}

TEST(Synth, DeterministicPerSeed) {
  SynthConfig c;
  c.seed = 17;
  EXPECT_EQ(generate_scene(c), generate_scene(c));
  SynthConfig d = c;
  d.seed = 18;
  EXPECT_NE(generate_scene(c), generate_scene(d));
}

TEST(Synth, PedestriansNeverCoincide) {
  SynthConfig c;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    c.seed = seed;
    const Scene s = generate_scene(c);
    for (std::size_t f = 0; f < c.frames; ++f) {
      for (std::size_t i = 0; i < s.trajectories.size(); ++i) {
        for (std::size_t j = i + 1; j < s.trajectories.size(); ++j) {
          EXPECT_GT(distance(s.trajectories[i].samples[f].position, s.trajectories[j].samples[f].position), 0.0);
        }
      }
    }
  }
}

TEST(Synth, MembersCloserThanStrangers) {
  SynthConfig c;
  std::size_t ok = 0;
  const std::size_t scenes = 100;
  for (std::uint64_t seed = 1; seed <= scenes; ++seed) {
    c.seed = seed;
    const Scene s = generate_scene(c);
    const Partition& p = *s.group_labels;
    double within = 0, between = 0;
    std::size_t nw = 0, nb = 0;
    for (const auto& a : s.trajectories) {
      for (const auto& b : s.trajectories) {
        if (a.ped_id >= b.ped_id) continue;
        double d = 0;
        for (std::size_t f = 0; f < c.frames; ++f) d += distance(a.samples[f].position, b.samples[f].position);
        d /= static_cast<double>(c.frames);
        if (p.group_of(a.ped_id) == p.group_of(b.ped_id)) {
          within += d;
          ++nw;
        } else {
          between += d;
          ++nb;
        }
      }
    }
    ok += within / static_cast<double>(nw) < between / static_cast<double>(nb);
  }
  EXPECT_GE(static_cast<double>(ok), 0.95 * static_cast<double>(scenes));
}

TEST(Synth, AnnotationRoundTrip) {
  SynthConfig c;
  c.seed = 4;
  const Scene s = generate_scene(c);
  std::stringstream buf;
  write_annotations(s, buf);
  const Scene back = parse_annotations(buf);
  ASSERT_EQ(back.trajectories.size(), s.trajectories.size());
  for (std::size_t i = 0; i < s.trajectories.size(); ++i) {
    EXPECT_EQ(back.trajectories[i], s.trajectories[i]);
  }
  std::stringstream gbuf;
  write_partition(*s.group_labels, gbuf);
  EXPECT_TRUE(parse_partition(gbuf).equivalent(*s.group_labels));
}

TEST(Synth, RejectsImpossibleConfig) {
  SynthConfig c;
  c.min_pedestrians = 20;
  c.max_pedestrians = 30;
  EXPECT_THROW(generate_scene(c), ValidationError);
  c = {};
  c.frames = 1;
  EXPECT_THROW(generate_scene(c), ValidationError);
  c = {};
  c.max_groups = 7;
  EXPECT_THROW(generate_scene(c), ValidationError);
  EXPECT_THROW(validate(SynthConfig{}, 31), ValidationError);
}

TEST(Corpus, SplitsAreDisjointAndSized) {
  SynthConfig c;
  const Corpus small = generate_corpus(c, 10);
  EXPECT_EQ(small.train.size(), 7u);
  EXPECT_EQ(small.validation.size(), 1u);
  EXPECT_EQ(small.test.size(), 2u);
  const Corpus big = generate_corpus(c, 100, 2);
  EXPECT_EQ(big.train.size(), 70u);
  EXPECT_EQ(big.validation.size(), 15u);
  EXPECT_EQ(big.test.size(), 15u);
  std::set<std::string> all;
  for (const auto* v : {&big.train, &big.validation, &big.test}) all.insert(v->begin(), v->end());
  EXPECT_EQ(all.size(), 100u);
  for (std::size_t i = 0; i < 100; ++i) EXPECT_TRUE(all.count(scene_name(i)));
  EXPECT_EQ(scene_name(7), "scene_0007");
}

TEST(Corpus, ThreadCountDoesNotMatter) {
  SynthConfig c;
  c.seed = 9;
  const Corpus a = generate_corpus(c, 12, 1);
  const Corpus b = generate_corpus(c, 12, 4);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.test, b.test);
  for (std::size_t i = 0; i < a.scenes.size(); ++i) EXPECT_EQ(a.scenes[i].scene, b.scenes[i].scene);
}
