#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "groupcast/nn/checkpoint.hpp"
#include "groupcast/nn/grad_check.hpp"
#include "groupcast/nn/layers.hpp"
#include "groupcast/nn/optim.hpp"
#include "groupcast/nn/tape.hpp"
#include "oracles.hpp"

using namespace groupcast;
using namespace groupcast::nn;

TEST(RecurrentStep, ZeroCellGivesZeroState) {
  const LstmCell cell = LstmCell::zeros("c", 3, 4);
  const CellState s = recurrent_step(cell, std::vector<double>(3, 0.0),
                                     {std::vector<double>(4, 0.0), std::vector<double>(4, 0.0)});
  EXPECT_EQ(s.h, std::vector<double>(4, 0.0));
  EXPECT_EQ(s.c, std::vector<double>(4, 0.0));
}

TEST(RecurrentStep, Deterministic) {
  std::mt19937_64 rng(3);
  const LstmCell cell = LstmCell::random("c", 2, 3, rng);
  const CellState s0{{0.1, -0.2, 0.3}, {0.0, 0.5, -0.5}};
  EXPECT_EQ(recurrent_step(cell, std::vector<double>{1.0, 2.0}, s0),
            recurrent_step(cell, std::vector<double>{1.0, 2.0}, s0));
}

TEST(RecurrentStep, MatchesScalarGateReference) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t in = 1 + trial % 4, hidden = 1 + trial % 5;
    LstmCell cell = LstmCell::random("c", in, hidden, rng);
    for (double& b : cell.b.value.values) b += std::uniform_real_distribution<double>(-1, 1)(rng);
    std::vector<double> x(in), h(hidden), c(hidden);
    std::normal_distribution<double> n(0, 1);
    for (double& v : x) v = n(rng);
    for (double& v : h) v = 0.5 * n(rng);
    for (double& v : c) v = n(rng);
    const CellState got = recurrent_step(cell, x, {h, c});
    oracle::lstm_step(cell.wx.value.values, cell.wh.value.values, cell.b.value.values, in, hidden, x,
                      h, c);
    for (std::size_t k = 0; k < hidden; ++k) {
      EXPECT_NEAR(got.h[k], h[k], 1e-14);
      EXPECT_NEAR(got.c[k], c[k], 1e-14);
    }
  }
}

TEST(RecurrentStep, ShapeMismatchIsContractViolation) {
  const LstmCell cell = LstmCell::zeros("c", 3, 4);
  EXPECT_THROW(recurrent_step(cell, std::vector<double>(2, 0.0),
                              {std::vector<double>(4, 0.0), std::vector<double>(4, 0.0)}),
               ContractViolation);
}

TEST(Backprop, SumOfParametersGivesOnes) {
  Tape t;
  const Var p = t.parameter(Tensor({5}, {1, 2, 3, 4, 5}));
  t.backward(sum(t, p));
  EXPECT_EQ(t.grad(p), std::vector<double>(5, 1.0));
}

TEST(Backprop, ConstantLossGivesZeros) {
  Tape t;
  const Var p = t.parameter(Tensor({3}, {1, 2, 3}));
  const Var loss = t.constant({0.0});
  (void)p;
  t.backward(loss);
  EXPECT_EQ(t.grad(p), std::vector<double>(3, 0.0));
}

TEST(Backprop, NonScalarLossIsContractViolation) {
  Tape t;
  const Var p = t.parameter(Tensor({3}, {1, 2, 3}));
  EXPECT_THROW(t.backward(p), ContractViolation);
}

TEST(Backprop, NonFiniteLossDiverges) {
  Tape t;
  const Var p = t.parameter(Tensor({1}, {std::nan("")}));
  EXPECT_THROW(t.backward(sum(t, p)), DivergenceError);
}

TEST(Softmax, StableForLargeLogits) {
  Tape t(false);
  const Var s = softmax(t, t.constant({50.0, -50.0, 49.0}));
  double total = 0.0;
  for (double v : t.value(s)) {
    EXPECT_TRUE(std::isfinite(v));
    total += v;
  }
  EXPECT_NEAR(total, 1.0, 1e-15);
  const Var big = softmax(t, t.constant({1000.0, 1000.0}));
  EXPECT_DOUBLE_EQ(t.value(big)[0], 0.5);
}

TEST(GradCheck, LinearLayerPassesTightly) {
  std::mt19937_64 rng(5);
  const std::vector<Tensor> params{oracle::random_tensor({3, 4}, rng), oracle::random_tensor({3}, rng)};
  const auto frag = oracle::tape_fragment(params, [](Tape& t, const std::vector<Var>& p) {
    const Var x = t.constant({0.3, -0.7, 1.1, 0.2});
    return sum(t, affine(t, p[0], x, p[1]));
  });
  EXPECT_TRUE(grad_check(frag, oracle::flatten(params), 1e-6).passed);
}

TEST(GradCheck, CorruptedGradientFails) {
  std::mt19937_64 rng(5);
  const std::vector<Tensor> params{oracle::random_tensor({2, 2}, rng), oracle::random_tensor({2}, rng)};
  auto frag = oracle::tape_fragment(params, [](Tape& t, const std::vector<Var>& p) {
    return sum_squares(t, affine(t, p[0], t.constant({1.0, 2.0}), p[1]));
  });
  const auto good = frag.gradient;
  frag.gradient = [good](std::span<const double> x) {
    auto g = good(x);
    g[1] += 0.1;
    return g;
  };
  EXPECT_FALSE(grad_check(frag, oracle::flatten(params), 1e-4).passed);
}

TEST(GradCheck, TwoLayerNetAndRecurrentCellThreeSteps) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    std::mt19937_64 rng(seed);
    const std::size_t in = 3, hidden = 4;
    const std::vector<Tensor> params{
        oracle::random_tensor({5, in}, rng),          oracle::random_tensor({5}, rng),
        oracle::random_tensor({4 * hidden, 5}, rng),  oracle::random_tensor({4 * hidden, hidden}, rng),
        oracle::random_tensor({4 * hidden}, rng),     oracle::random_tensor({1, hidden}, rng),
        oracle::random_tensor({1}, rng)};
    std::vector<std::vector<double>> xs;
    std::normal_distribution<double> n(0, 1);
    for (int s = 0; s < 3; ++s) xs.push_back({n(rng), n(rng), n(rng)});
    const auto frag = oracle::tape_fragment(params, [xs](Tape& t, const std::vector<Var>& p) {
      LstmState st{t.constant(std::vector<double>(4, 0.0)), t.constant(std::vector<double>(4, 0.0))};
      for (const auto& x : xs) {
        const Var layer = tanh(t, affine(t, p[0], t.constant(x), p[1]));
        st = lstm_cell(t, layer, st, p[2], p[3], p[4]);
      }
      const Var out = sigmoid(t, affine(t, p[5], st.h, p[6]));
      return add(t, sum_squares(t, out), mean_abs(t, st.c));
    });
    const auto r = grad_check(frag, oracle::flatten(params), 1e-4);
    EXPECT_TRUE(r.passed) << "seed " << seed << " err " << r.max_relative_error;
  }
}

TEST(GradCheck, EveryPrimitive) {
  std::mt19937_64 rng(9);
  const std::vector<Tensor> params{oracle::random_tensor({4}, rng), oracle::random_tensor({4}, rng),
                                   oracle::random_tensor({4}, rng), oracle::random_tensor({1}, rng)};
  const auto frag = oracle::tape_fragment(params, [](Tape& t, const std::vector<Var>& p) {
    const std::vector<Var> keys{slice(t, p[0], 0, 4), p[1]};
    const Var scores = additive_scores(t, p[2], keys, p[1], p[3]);
    const Var alpha = softmax(t, scores);
    const Var ctx = weighted_sum(t, keys, alpha);
    const Var m = mul(t, ctx, sub(t, p[0], scale(t, p[2], 0.5)));
    const std::vector<Var> terms{m, p[1], tanh(t, p[2])};
    const Var total = add_all(t, terms);
    const Var joined = concat(t, {total, p[3]});
    return add(t, add(t, dot(t, joined, joined), mean(t, joined)),
               bce_with_logits(t, slice(t, total, 2, 1), 1.0));
  });
  const auto r = grad_check(frag, oracle::flatten(params), 1e-4);
  EXPECT_TRUE(r.passed) << r.max_relative_error;
}

TEST(Adam, ZeroGradientLeavesParameters) {
  Parameter p{"p", Tensor({2}, {1.0, -1.0})};
  std::vector<Parameter*> ps{&p};
  AdamState s = AdamState::for_parameters(ps);
  std::vector<std::vector<double>> g{{0.0, 0.0}};
  adam_step(s, ps, g);
  EXPECT_EQ(p.value.values, (std::vector<double>{1.0, -1.0}));
  EXPECT_EQ(s.step, 1);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Parameter p{"p", Tensor({1}, {0.0})};
  std::vector<Parameter*> ps{&p};
  AdamState s = AdamState::for_parameters(ps, {0.001});
  std::vector<std::vector<double>> g{{1.0}};
  adam_step(s, ps, g);
  // m_hat = 1, v_hat = 1, so the step is lr / (1 + eps).
  EXPECT_NEAR(p.value.values[0], -0.001 / (1.0 + 1e-8), 1e-15);
}

TEST(Adam, TwoStepsDifferFromOneDoubledStep) {
  std::vector<std::vector<double>> g{{0.3}};
  Parameter a{"a", Tensor({1}, {1.0})};
  std::vector<Parameter*> pa{&a};
  AdamState sa = AdamState::for_parameters(pa, {0.01});
  adam_step(sa, pa, g);
  adam_step(sa, pa, g);

  Parameter b{"b", Tensor({1}, {1.0})};
  std::vector<Parameter*> pb{&b};
  AdamState sb = AdamState::for_parameters(pb, {0.02});
  adam_step(sb, pb, g);

  // Scalar trace: step 1 gives m_hat = g, v_hat = g^2; step 2 also gives
  // m_hat = g, v_hat = g^2 after bias correction, so both moves are
  // lr * g / (|g| + eps).
  const double move = 0.01 * 0.3 / (0.3 + 1e-8);
  EXPECT_NEAR(a.value.values[0], 1.0 - 2.0 * move, 1e-15);
  const double doubled = 0.02 * 0.3 / (0.3 + 1e-8);
  EXPECT_NEAR(b.value.values[0], 1.0 - doubled, 1e-15);
  EXPECT_EQ(sa.step, 2);
  EXPECT_EQ(sb.step, 1);
  EXPECT_NE(sa.m, sb.m);

  // With varying gradients the trajectories separate in value too.
  Parameter c{"c", Tensor({1}, {1.0})};
  std::vector<Parameter*> pc{&c};
  AdamState sc = AdamState::for_parameters(pc, {0.01});
  adam_step(sc, pc, std::vector<std::vector<double>>{{0.3}});
  adam_step(sc, pc, std::vector<std::vector<double>>{{-0.1}});
  EXPECT_NE(c.value.values[0], b.value.values[0]);
}

TEST(Adam, NanGradientDivergesWithoutUpdate) {
  Parameter p{"p", Tensor({2}, {1.0, 2.0})};
  std::vector<Parameter*> ps{&p};
  AdamState s = AdamState::for_parameters(ps);
  std::vector<std::vector<double>> g{{0.1, std::nan("")}};
  EXPECT_THROW(adam_step(s, ps, g), DivergenceError);
  EXPECT_EQ(p.value.values, (std::vector<double>{1.0, 2.0}));
  EXPECT_EQ(s.step, 0);
}

TEST(Clip, GlobalNorm) {
  std::vector<std::vector<double>> g{{3.0}, {4.0}};
  EXPECT_DOUBLE_EQ(clip_global_norm(g, 1.0), 5.0);
  EXPECT_NEAR(g[0][0], 0.6, 1e-15);
  EXPECT_NEAR(g[1][0], 0.8, 1e-15);
  std::vector<std::vector<double>> small{{0.1}};
  clip_global_norm(small, 1.0);
  EXPECT_EQ(small[0][0], 0.1);
}

TEST(Checkpoint, BitExactRoundTrip) {
  Checkpoint ck;
  ck.put("a.w", Tensor({2, 2}, {1.0 / 3.0, -0.0, 1e-310, std::nextafter(1.0, 2.0)}));
  ck.put("b", Tensor({1}, {std::numeric_limits<double>::infinity()}));
  ck.put_text("config", "k=v\n");
  std::stringstream buf;
  ck.write(buf);
  const Checkpoint back = Checkpoint::read(buf);
  EXPECT_EQ(back, ck);
  EXPECT_TRUE(std::signbit(back.get("a.w").values[1]));
  std::stringstream again;
  back.write(again);
  std::stringstream first;
  ck.write(first);
  EXPECT_EQ(again.str(), first.str());
}

TEST(Checkpoint, RejectsGarbage) {
  std::stringstream bad("NOTACKPT00000000");
  EXPECT_THROW(Checkpoint::read(bad), Error);
  Checkpoint ck;
  ck.put("x", Tensor({3}, {1, 2, 3}));
  std::stringstream buf;
  ck.write(buf);
  std::string s = buf.str();
  std::stringstream truncated(s.substr(0, s.size() - 4));
  EXPECT_THROW(Checkpoint::read(truncated), Error);
  EXPECT_THROW(ck.get("missing"), Error);
}
