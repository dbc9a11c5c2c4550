#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "groupcast/encoder.hpp"
#include "oracles.hpp"

using namespace groupcast;

namespace {

std::vector<Point2> line(Point2 start, Point2 step, std::size_t n) {
  std::vector<Point2> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(start + static_cast<double>(i) * step);
  return out;
}

/// Pedestrian walking +x ending at the origin, observed for `t` frames.
Window walker(std::size_t t) {
  Window w;
  w.ped_id = 1;
  w.observed = line({-0.4 * static_cast<double>(t - 1), 0.0}, {0.4, 0.0}, t);
  return w;
}

void add_neighbour(Window& w, PedId id, Point2 end) {
  const std::size_t t = w.observed.size();
  w.neighbours.push_back({id, line(end - static_cast<double>(t - 1) * Point2{0.4, 0.0}, {0.4, 0.0}, t)});
}

std::size_t count(const NeighbourBucket& b, SlotKind k) {
  std::size_t n = 0;
  for (const auto& s : b.slots) n += s.kind == k;
  return n;
}

NeighbourhoodEncoder random_encoder(std::size_t hidden, std::size_t attn, std::uint64_t seed) {
  EncoderConfig cfg;
  cfg.hidden_size = hidden;
  cfg.attention_size = attn;
  std::mt19937_64 rng(seed);
  return NeighbourhoodEncoder::random(cfg, rng);
}

}  // namespace

TEST(EncodeTrajectory, ZeroParametersGiveZeros) {
  const auto cell = nn::LstmCell::zeros("e", 2, 4);
  const auto hs = encode_trajectory(cell, line({1, 2}, {0.3, 0.1}, 5), 5);
  ASSERT_EQ(hs.size(), 5u);
  for (const auto& h : hs) EXPECT_EQ(h, std::vector<double>(4, 0.0));
}

TEST(EncodeTrajectory, MatchesChainedSteps) {
  std::mt19937_64 rng(2);
  const auto cell = nn::LstmCell::random("e", 2, 3, rng);
  const auto pts = line({0.1, -0.2}, {0.3, 0.05}, 3);
  const auto hs = encode_trajectory(cell, pts, 3);
  EXPECT_THROW(encode_trajectory(cell, pts, 4), ContractViolation);
  nn::CellState s{std::vector<double>(3, 0.0), std::vector<double>(3, 0.0)};
  for (std::size_t i = 0; i < 3; ++i) {
    s = nn::recurrent_step(cell, std::vector<double>{pts[i].x, pts[i].y}, s);
    EXPECT_EQ(hs[i], s.h);
  }
}

TEST(EncodeTrajectory, PureFunctionOfInput) {
  std::mt19937_64 rng(4);
  const auto cell = nn::LstmCell::random("e", 2, 3, rng);
  const auto a = line({0, 0}, {0.1, 0.2}, 4), b = line({1, 1}, {-0.3, 0.0}, 4);
  const auto ha = encode_trajectory(cell, a, 4), hb = encode_trajectory(cell, b, 4);
  EXPECT_EQ(encode_trajectory(cell, b, 4), hb);
  EXPECT_EQ(encode_trajectory(cell, a, 4), ha);
  EXPECT_NE(ha, hb);
}

TEST(SoftAttention, ConstantScoresGiveMean) {
  AttentionNet net = AttentionNet::zeros(3, 4);
  net.c.value.values[0] = 0.7;
  const std::vector<std::vector<double>> hs{{1, 2, 3}, {3, 2, 1}, {0, 0, 6}, {4, 0, 2}};
  const auto r = soft_attention(net, hs, {0.2, -0.1, 0.5});
  for (double a : r.weights) EXPECT_NEAR(a, 0.25, 1e-15);
  EXPECT_NEAR(r.context[0], 2.0, 1e-14);
  EXPECT_NEAR(r.context[1], 1.0, 1e-14);
  EXPECT_NEAR(r.context[2], 3.0, 1e-14);
}

TEST(SoftAttention, SaturatedScoresPickOneState) {
  // With W_k = I the score is +-50 by the sign of h_j[0].
  AttentionNet net = AttentionNet::zeros(2, 2);
  net.key.w.value.values = {1, 0, 0, 1};
  net.v.value.values = {50.0 / std::tanh(5.0), 0.0};
  const std::vector<std::vector<double>> hs{{-5, 1}, {5, 7}, {-5, 3}};
  const auto r = soft_attention(net, hs, {0, 0});
  EXPECT_NEAR(r.weights[1], 1.0, 1e-10);
  EXPECT_NEAR(r.context[0], 5.0, 1e-10);
  EXPECT_NEAR(r.context[1], 7.0, 1e-10);
}

TEST(SoftAttention, MatchesDirectWeightedSum) {
  std::mt19937_64 rng(8);
  const AttentionNet net = AttentionNet::random(3, 5, rng);
  std::normal_distribution<double> n(0, 1);
  std::vector<std::vector<double>> hs(6, std::vector<double>(3));
  for (auto& h : hs) {
    for (double& v : h) v = n(rng);
  }
  const std::vector<double> q{n(rng), n(rng), n(rng)};
  // Scores evaluated by hand from the dense weights.
  auto dense = [](const nn::Dense& d, const std::vector<double>& x) {
    std::vector<double> out(d.out());
    for (std::size_t r = 0; r < d.out(); ++r) {
      out[r] = d.b.value.values[r];
      for (std::size_t c = 0; c < d.in(); ++c) out[r] += d.w.value.values[r * d.in() + c] * x[c];
    }
    return out;
  };
  const auto wq = dense(net.query, q);
  std::vector<double> scores;
  for (const auto& h : hs) {
    const auto wk = dense(net.key, h);
    double s = net.c.value.values[0];
    for (std::size_t a = 0; a < wq.size(); ++a) s += net.v.value.values[a] * std::tanh(wq[a] + wk[a]);
    scores.push_back(s);
  }
  double z = 0.0;
  for (double s : scores) z += std::exp(s);
  std::vector<double> ctx(3, 0.0);
  const auto r = soft_attention(net, hs, q);
  for (std::size_t j = 0; j < hs.size(); ++j) {
    const double a = std::exp(scores[j]) / z;
    EXPECT_NEAR(r.weights[j], a, 1e-13);
    for (std::size_t k = 0; k < 3; ++k) ctx[k] += a * hs[j][k];
  }
  for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(r.context[k], ctx[k], 1e-13);
}

TEST(SoftAttention, WeightsSumToOne) {
  std::mt19937_64 rng(21);
  std::normal_distribution<double> n(0, 3);
  for (int trial = 0; trial < 200; ++trial) {
    const AttentionNet net = AttentionNet::random(4, 4, rng);
    std::vector<std::vector<double>> hs(5, std::vector<double>(4));
    for (auto& h : hs) {
      for (double& v : h) v = n(rng);
    }
    const auto r = soft_attention(net, hs, {n(rng), n(rng), n(rng), n(rng)});
    double s = 0.0;
    for (double a : r.weights) s += a;
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
}

TEST(HardwiredWeight, Reciprocal) {
  EXPECT_DOUBLE_EQ(hardwired_weight(2.0), 0.5);
  EXPECT_DOUBLE_EQ(hardwired_weight(1.0), 1.0);
  EXPECT_DOUBLE_EQ(hardwired_weight(0.0), 1000.0);
  EXPECT_THROW(hardwired_weight(-0.1), ContractViolation);
  for (double d = 0.01; d <= 100.0; d *= 1.7) {
    EXPECT_NEAR(hardwired_weight(2 * d), hardwired_weight(d) / 2, 1e-12 * hardwired_weight(d));
  }
}

TEST(Bearing, Classification) {
  const Point2 heading{1, 0};
  EXPECT_EQ(classify_bearing(bearing_degrees(heading, {1, 0})), Direction::front);
  EXPECT_EQ(classify_bearing(bearing_degrees(heading, {1, 1})), Direction::front);
  EXPECT_EQ(classify_bearing(bearing_degrees(heading, {0, 1})), Direction::left);
  EXPECT_EQ(classify_bearing(bearing_degrees(heading, {0, -1})), Direction::right);
  EXPECT_EQ(classify_bearing(bearing_degrees(heading, {-1, 0.1})), std::nullopt);
  EXPECT_EQ(classify_bearing(135.0), Direction::left);
  EXPECT_EQ(classify_bearing(-135.0), Direction::right);
  EXPECT_EQ(classify_bearing(-45.0), Direction::front);
}

TEST(Bearing, StationaryFallsBackToPlusY) {
  const std::vector<Point2> still{{1, 1}, {1, 1}};
  EXPECT_EQ(heading_of(still), (Point2{0, 1}));
}

TEST(Buckets, NoNeighboursAllDummies) {
  const auto b = bucket_neighbours(walker(5));
  for (const auto& bucket : b) {
    ASSERT_EQ(bucket.slots.size(), 10u);
    for (const auto& s : bucket.slots) {
      EXPECT_EQ(s.kind, SlotKind::dummy);
      EXPECT_EQ(s.weights, std::vector<double>(5, 0.0));
    }
  }
}

TEST(Buckets, ThreeInFront) {
  Window w = walker(5);
  add_neighbour(w, 2, {2, 0});
  add_neighbour(w, 3, {3, 1});
  add_neighbour(w, 4, {4, -1});
  const auto b = bucket_neighbours(w);
  EXPECT_EQ(b[0].direction, Direction::left);
  EXPECT_EQ(b[1].direction, Direction::front);
  EXPECT_EQ(b[2].direction, Direction::right);
  EXPECT_EQ(count(b[1], SlotKind::real), 3u);
  EXPECT_EQ(count(b[1], SlotKind::dummy), 7u);
  EXPECT_EQ(count(b[0], SlotKind::dummy), 10u);
  EXPECT_EQ(count(b[2], SlotKind::dummy), 10u);
  EXPECT_EQ(b[1].slots[0].members, std::vector<PedId>{2});
  EXPECT_DOUBLE_EQ(b[1].slots[0].weights[0], 0.5);
}

TEST(Buckets, TwelveInFrontAggregatesRemainder) {
  Window w = walker(4);
  for (int k = 0; k < 12; ++k) add_neighbour(w, 100 + k, {1.0 + k, 0.1 * (k % 3 - 1)});
  const auto b = bucket_neighbours(w);
  const auto& front = b[1].slots;
  ASSERT_EQ(front.size(), 10u);
  for (int k = 0; k < 9; ++k) {
    EXPECT_EQ(front[static_cast<std::size_t>(k)].kind, SlotKind::real);
    EXPECT_EQ(front[static_cast<std::size_t>(k)].members, std::vector<PedId>{100 + k});
  }
  EXPECT_EQ(front[9].kind, SlotKind::aggregate);
  EXPECT_EQ(front[9].members, (std::vector<PedId>{109, 110, 111}));
  // Mean of the three farthest tracks, frame by frame.
  for (std::size_t j = 0; j < 4; ++j) {
    Point2 mean;
    for (int k = 9; k < 12; ++k) mean += w.neighbours[static_cast<std::size_t>(k)].observed[j];
    mean = (1.0 / 3.0) * mean;
    EXPECT_NEAR(front[9].positions[j].x, mean.x, 1e-12);
    EXPECT_NEAR(front[9].positions[j].y, mean.y, 1e-12);
    EXPECT_NEAR(front[9].weights[j], 1.0 / distance(mean, w.observed[j]), 1e-12);
  }
}

TEST(Buckets, BehindIsIgnored) {
  Window w = walker(3);
  add_neighbour(w, 2, {-3, 0.2});
  for (const auto& bucket : bucket_neighbours(w)) EXPECT_EQ(count(bucket, SlotKind::dummy), 10u);
}

TEST(Buckets, DoublingDistanceHalvesWeights) {
  Window a = walker(5), b = walker(5);
  add_neighbour(a, 2, {0, 1.5});
  add_neighbour(b, 2, {0, 3.0});
  const auto wa = bucket_neighbours(a)[0].slots[0].weights;
  const auto wb = bucket_neighbours(b)[0].slots[0].weights;
  for (std::size_t j = 0; j < 5; ++j) EXPECT_NEAR(wb[j], wa[j] / 2, 1e-12);
}

TEST(HardwiredContext, AllDummyIsZero) {
  const auto b = bucket_neighbours(walker(3));
  EXPECT_EQ(hardwired_context(b, {}, 4), std::vector<double>(4, 0.0));
}

TEST(HardwiredContext, MatchesExplicitDoubleSum) {
  Window w = walker(3);
  add_neighbour(w, 2, {0, 1});
  add_neighbour(w, 3, {2, 0.5});
  const auto b = bucket_neighbours(w);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0, 1);
  std::vector<std::vector<std::vector<double>>> hidden(2, std::vector<std::vector<double>>(3, std::vector<double>(2)));
  for (auto& seq : hidden) {
    for (auto& h : seq) {
      for (double& v : h) v = n(rng);
    }
  }
  // Slot order: left bucket (ped 2), then front (ped 3).
  const auto& s2 = b[0].slots[0];
  const auto& s3 = b[1].slots[0];
  ASSERT_EQ(s2.members, std::vector<PedId>{2});
  ASSERT_EQ(s3.members, std::vector<PedId>{3});
  std::vector<double> expect(2, 0.0);
  for (std::size_t j = 0; j < 3; ++j) {
    for (std::size_t k = 0; k < 2; ++k) {
      expect[k] += s2.weights[j] * hidden[0][j][k] + s3.weights[j] * hidden[1][j][k];
    }
  }
  const auto got = hardwired_context(b, hidden, 2);
  for (std::size_t k = 0; k < 2; ++k) EXPECT_NEAR(got[k], expect[k], 1e-12);
}

TEST(HardwiredContext, UnitWeightsSumHiddens) {
  NeighbourBuckets b;
  b[1].slots.push_back({SlotKind::real, {7}, {{0, 0}, {0, 0}}, {1.0, 1.0}, 1.0});
  b[1].slots.push_back({SlotKind::dummy, {}, {}, {0.0, 0.0}, 0.0});
  const auto got = hardwired_context(b, {{{1, 2}, {3, 4}}}, 2);
  EXPECT_EQ(got, (std::vector<double>{4, 6}));
}

TEST(HardwiredContext, PermutationInvariantWithinBucket) {
  Window w = walker(4);
  add_neighbour(w, 2, {1, 0.2});
  add_neighbour(w, 3, {2, -0.3});
  add_neighbour(w, 4, {3, 0.1});
  const auto enc = random_encoder(3, 3, 5);
  const auto ctx = encode_context(enc, w, 4);
  Window p = w;
  std::reverse(p.neighbours.begin(), p.neighbours.end());
  const auto ctx2 = encode_context(enc, p, 4);
  for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(ctx[0].hardwired[k], ctx2[0].hardwired[k], 1e-12);
}

TEST(HardwiredContext, DummiesNeverMatter) {
  Window w = walker(4);
  add_neighbour(w, 2, {1, 0.2});
  const auto enc = random_encoder(3, 3, 6);
  EncoderConfig few = enc.config;
  few.slots_per_direction = 1;
  NeighbourhoodEncoder enc1 = enc;
  enc1.config = few;
  const auto a = encode_context(enc, w, 4);
  const auto b = encode_context(enc1, w, 4);
  for (std::size_t t = 0; t < 4; ++t) EXPECT_EQ(a[t].merged, b[t].merged);
}

TEST(Merge, ScalarTanh) {
  EXPECT_EQ(merge_context(std::vector<double>{0, 0}, std::vector<double>{0}), std::vector<double>(3, 0.0));
  const auto big = merge_context(std::vector<double>{1e6}, std::vector<double>{-1e6});
  EXPECT_LE(big[0], 1.0);
  EXPECT_GE(big[1], -1.0);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0, 2);
  std::vector<double> s(4), h(5);
  for (double& v : s) v = n(rng);
  for (double& v : h) v = n(rng);
  const auto m = merge_context(s, h);
  ASSERT_EQ(m.size(), 9u);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(m[i], std::tanh(s[i]));
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(m[4 + i], std::tanh(h[i]));
}

TEST(Context, ShapesAndRange) {
  Window w = walker(5);
  add_neighbour(w, 2, {0, 1});
  const auto enc = random_encoder(4, 3, 9);
  const auto ctx = encode_context(enc, w, 5);
  ASSERT_EQ(ctx.size(), 5u);
  for (const auto& c : ctx) {
    ASSERT_EQ(c.merged.size(), 8u);
    for (double v : c.merged) {
      EXPECT_GT(v, -1.0);
      EXPECT_LT(v, 1.0);
    }
  }
  EXPECT_THROW(encode_context(enc, w, 4), ContractViolation);
}

TEST(Context, GradientThroughEncoderAttentionMerge) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Window w = walker(5);
    add_neighbour(w, 2, {0.5, 1.0});
    add_neighbour(w, 3, {2.0, -0.4});
    const auto enc = random_encoder(4, 3, seed);
    std::vector<nn::Tensor> params;
    NeighbourhoodEncoder copy = enc;
    for (auto* p : copy.parameters()) params.push_back(p->value);
    const auto frag = oracle::tape_fragment(params, [enc, w](nn::Tape& t, const std::vector<nn::Var>& p) {
      BoundEncoder b{{p[0], p[1], p[2], enc.config.hidden_size},
                     {{p[3], p[4]}, {p[5], p[6]}, p[7], p[8]}};
      const auto ctx = encode_context(t, b, enc, w, 5);
      std::vector<nn::Var> all(ctx.merged.begin(), ctx.merged.end());
      return nn::sum_squares(t, nn::concat(t, all));
    });
    const auto r = nn::grad_check(frag, oracle::flatten(params), 1e-4);
    EXPECT_TRUE(r.passed) << "seed " << seed << " err " << r.max_relative_error;
  }
}
