#pragma once

// Conditional adversarial trajectory forecaster. The generator is a recurrent
// decoder fed [C*_t, z_t] that emits per-step displacements; the
// discriminator is a recurrent classifier over [C*, displacement] sequences.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "groupcast/data_model.hpp"
#include "groupcast/encoder.hpp"
#include "groupcast/error.hpp"
#include "groupcast/metrics.hpp"
#include "groupcast/nn/checkpoint.hpp"
#include "groupcast/nn/layers.hpp"
#include "groupcast/nn/optim.hpp"
#include "groupcast/nn/tape.hpp"
#include "groupcast/parallel.hpp"
#include "groupcast/random.hpp"

namespace groupcast {

enum class TrainMode { gd_gan, no_gan, unconditional_gan, no_l1 };

inline const char* to_string(TrainMode m) {
  switch (m) {
    case TrainMode::gd_gan: return "gd-gan";
    case TrainMode::no_gan: return "no-gan";
    case TrainMode::unconditional_gan: return "unconditional-gan";
    case TrainMode::no_l1: return "no-l1";
  }
  return "?";
}

inline TrainMode parse_train_mode(const std::string& s) {
  for (TrainMode m : {TrainMode::gd_gan, TrainMode::no_gan, TrainMode::unconditional_gan,
                      TrainMode::no_l1}) {
    if (s == to_string(m)) return m;
  }
  throw ValidationError("unknown training mode '" + s +
                        "' (expected gd-gan, no-gan, unconditional-gan or no-l1)");
}

struct ModelConfig {
  EncoderConfig encoder;
  std::size_t generator_hidden = 32;
  std::size_t discriminator_hidden = 32;
  std::size_t z_dim = 8;
  std::size_t t_obs = 15;
  std::size_t t_pred = 30;
  /// When false both networks see zeros in place of C*.
  bool conditional = true;

  std::size_t horizon() const { return t_pred - t_obs; }
  std::size_t context_size() const { return 2 * encoder.hidden_size; }
};

struct Generator {
  nn::LstmCell lstm;
  nn::Dense head;

  std::vector<nn::Parameter*> parameters() { return {&lstm.wx, &lstm.wh, &lstm.b, &head.w, &head.b}; }
};

struct Discriminator {
  nn::LstmCell lstm;
  nn::Dense head;

  std::vector<nn::Parameter*> parameters() { return {&lstm.wx, &lstm.wh, &lstm.b, &head.w, &head.b}; }
};

struct Model {
  ModelConfig config;
  NeighbourhoodEncoder encoder;
  Generator generator;
  std::optional<Discriminator> discriminator;

  /// Encoder followed by generator parameters; updated in the generator phase.
  std::vector<nn::Parameter*> generator_side_parameters() {
    auto p = encoder.parameters();
    auto g = generator.parameters();
    p.insert(p.end(), g.begin(), g.end());
    return p;
  }
  std::vector<nn::Parameter*> discriminator_parameters() {
    if (!discriminator) return {};
    return discriminator->parameters();
  }
  std::vector<nn::Parameter*> all_parameters() {
    auto p = generator_side_parameters();
    auto d = discriminator_parameters();
    p.insert(p.end(), d.begin(), d.end());
    return p;
  }
};

inline void validate(const ModelConfig& c) {
  expects(c.t_obs >= 2 && c.t_pred > c.t_obs, "model config: need t_pred > t_obs >= 2");
  expects(c.encoder.hidden_size >= 1 && c.encoder.attention_size >= 1 && c.generator_hidden >= 1 &&
              c.discriminator_hidden >= 1,
          "model config: sizes must be positive");
}

/// Zero-initialized model: every output is the last observed position and
/// every discriminator probability is exactly 0.5.
inline Model zero_model(const ModelConfig& config, bool with_discriminator = true) {
  validate(config);
  Model m;
  m.config = config;
  m.encoder = NeighbourhoodEncoder::zeros(config.encoder);
  const std::size_t c = config.context_size();
  m.generator = {nn::LstmCell::zeros("generator.lstm", c + config.z_dim, config.generator_hidden),
                 nn::Dense::zeros("generator.head", config.generator_hidden, 2)};
  if (with_discriminator) {
    m.discriminator = Discriminator{
        nn::LstmCell::zeros("discriminator.lstm", c + 2, config.discriminator_hidden),
        nn::Dense::zeros("discriminator.head", config.discriminator_hidden, 1)};
  }
  return m;
}

/// Random recurrent and attention weights; output heads start at zero.
inline Model init_model(const ModelConfig& config, std::uint64_t seed,
                        bool with_discriminator = true) {
  Model m = zero_model(config, with_discriminator);
  std::mt19937_64 rng(derive_seed(seed, 0x1417));
  m.encoder = NeighbourhoodEncoder::random(config.encoder, rng);
  const std::size_t c = config.context_size();
  m.generator.lstm =
      nn::LstmCell::random("generator.lstm", c + config.z_dim, config.generator_hidden, rng);
  if (with_discriminator) {
    m.discriminator->lstm =
        nn::LstmCell::random("discriminator.lstm", c + 2, config.discriminator_hidden, rng);
  }
  return m;
}

// ---------------------------------------------------------------------------
// Tape forward passes

struct BoundGenerator {
  nn::BoundLstm lstm;
  nn::BoundDense head;
};

struct BoundDiscriminator {
  nn::BoundLstm lstm;
  nn::BoundDense head;
};

struct BoundModel {
  BoundEncoder encoder;
  BoundGenerator generator;
  std::optional<BoundDiscriminator> discriminator;

  /// Same order as Model::generator_side_parameters().
  std::vector<nn::Var> generator_side_vars() const {
    auto v = parameter_vars(encoder);
    v.insert(v.end(), {generator.lstm.wx, generator.lstm.wh, generator.lstm.b, generator.head.w,
                       generator.head.b});
    return v;
  }
  std::vector<nn::Var> discriminator_vars() const {
    if (!discriminator) return {};
    const auto& d = *discriminator;
    return {d.lstm.wx, d.lstm.wh, d.lstm.b, d.head.w, d.head.b};
  }
};

inline BoundModel bind(nn::Tape& t, const Model& m, bool train_generator_side,
                       bool train_discriminator) {
  BoundModel b{bind(t, m.encoder, train_generator_side),
               {nn::bind(t, m.generator.lstm, train_generator_side),
                nn::bind(t, m.generator.head, train_generator_side)},
               std::nullopt};
  if (m.discriminator) {
    b.discriminator = BoundDiscriminator{nn::bind(t, m.discriminator->lstm, train_discriminator),
                                         nn::bind(t, m.discriminator->head, train_discriminator)};
  }
  return b;
}

/// One context per observed step; zeros when the model is unconditional.
inline std::vector<nn::Var> window_contexts(nn::Tape& t, const BoundModel& b, const Model& m,
                                            const Window& w) {
  if (!m.config.conditional) {
    return std::vector<nn::Var>(
        m.config.t_obs, t.constant(std::vector<double>(m.config.context_size(), 0.0)));
  }
  return encode_context(t, b.encoder, m.encoder, w, m.config.t_obs).merged;
}

struct GeneratorVars {
  /// Hidden states at the observed steps (z = 0), then the prediction steps.
  std::vector<nn::Var> observed_hidden;
  std::vector<nn::Var> predicted_hidden;
  std::vector<nn::Var> displacements;
};

/// The decoder first runs over the observed steps on [C*_t, 0], then over
/// the horizon on [C*_{T_obs}, z_t], emitting one displacement per step.
inline GeneratorVars run_generator(nn::Tape& t, const BoundGenerator& g,
                                   std::span<const nn::Var> contexts,
                                   const std::vector<std::vector<double>>& noise,
                                   std::size_t z_dim) {
  expects(!contexts.empty(), "run_generator: empty context sequence");
  GeneratorVars out;
  nn::LstmState s = g.lstm.initial_state(t);
  const nn::Var zero_z = t.constant(std::vector<double>(z_dim, 0.0));
  for (nn::Var c : contexts) {
    s = g.lstm.step(t, nn::concat(t, {c, zero_z}), s);
    out.observed_hidden.push_back(s.h);
  }
  for (const auto& z : noise) {
    expects(z.size() == z_dim, "run_generator: noise dimension mismatch");
    s = g.lstm.step(t, nn::concat(t, {contexts.back(), t.constant(z)}), s);
    out.predicted_hidden.push_back(s.h);
    out.displacements.push_back(g.head(t, s.h));
  }
  return out;
}

/// Logit of the final discriminator state after reading [context_t, d_t].
inline nn::Var run_discriminator(nn::Tape& t, const BoundDiscriminator& d,
                                 std::span<const nn::Var> contexts,
                                 std::span<const nn::Var> displacements) {
  expects(contexts.size() == displacements.size(), "discriminate: length mismatch");
  expects(!contexts.empty(), "discriminate: empty sequence");
  nn::LstmState s = d.lstm.initial_state(t);
  for (std::size_t i = 0; i < contexts.size(); ++i) {
    s = d.lstm.step(t, nn::concat(t, {contexts[i], displacements[i]}), s);
  }
  return d.head(t, s.h);
}

inline std::vector<Point2> true_displacements(const Window& w) {
  std::vector<Point2> d;
  Point2 prev = w.observed.back();
  for (const Point2& p : w.future) {
    d.push_back(p - prev);
    prev = p;
  }
  return d;
}

enum class Phase { discriminator, generator };

struct WindowTerms {
  nn::Var objective;
  double loss_d = std::numeric_limits<double>::quiet_NaN();
  double loss_g = 0.0;
  double sparsity = 0.0;
};

/// Mean over the horizon of the squared distance between the rolled-out
/// positions and the ground truth.
inline nn::Var displacement_mse(nn::Tape& t, const Window& w, std::span<const nn::Var> displacements) {
  nn::Var pos = t.constant({w.observed.back().x, w.observed.back().y});
  std::vector<nn::Var> errs;
  for (std::size_t i = 0; i < displacements.size(); ++i) {
    pos = nn::add(t, pos, displacements[i]);
    errs.push_back(nn::sum_squares(t, nn::sub(t, pos, t.constant({w.future[i].x, w.future[i].y}))));
  }
  return nn::scale(t, nn::add_all(t, errs), 1.0 / static_cast<double>(displacements.size()));
}

struct LossWeights {
  /// Weight of the mean absolute generator activation.
  double lambda = 0.2;
  /// Weight of the supervised reconstruction term in adversarial modes.
  double l2 = 1.0;
};

/// Per-window objective. In the discriminator phase it is the mean BCE of
/// the real and the generated sample. In the generator phase it is
/// -log D(fake) + l2 * MSE for the adversarial modes, MSE alone for no-gan,
/// plus lambda times the mean absolute generator activation (lambda is
/// forced to 0 in no-l1 mode).
inline WindowTerms window_objective(nn::Tape& t, const BoundModel& b, const Model& m,
                                    const Window& w,
                                    const std::vector<std::vector<double>>& noise,
                                    const LossWeights& weights, TrainMode mode, Phase phase) {
  const auto contexts = window_contexts(t, b, m, w);
  const auto gen = run_generator(t, b.generator, contexts, noise, m.config.z_dim);
  const std::size_t horizon = gen.displacements.size();
  expects(horizon == w.future.size(), "window_objective: horizon mismatch");
  const std::vector<nn::Var> held(horizon, contexts.back());

  WindowTerms out;
  if (mode == TrainMode::no_gan) {
    expects(phase == Phase::generator, "no-gan mode has no discriminator phase");
    out.objective = displacement_mse(t, w, gen.displacements);
  } else {
    expects(b.discriminator.has_value(), "adversarial mode needs a discriminator");
    const nn::Var fake_logit =
        run_discriminator(t, *b.discriminator, held, gen.displacements);
    if (phase == Phase::discriminator) {
      std::vector<nn::Var> real;
      for (const Point2& d : true_displacements(w)) real.push_back(t.constant({d.x, d.y}));
      const nn::Var real_logit = run_discriminator(t, *b.discriminator, held, real);
      out.objective = nn::scale(t,
                                nn::add(t, nn::bce_with_logits(t, real_logit, 1.0),
                                        nn::bce_with_logits(t, fake_logit, 0.0)),
                                0.5);
      out.loss_d = t.scalar(out.objective);
      return out;
    }
    out.objective = nn::bce_with_logits(t, fake_logit, 1.0);
    if (weights.l2 != 0.0) {
      out.objective = nn::add(t, out.objective,
                              nn::scale(t, displacement_mse(t, w, gen.displacements), weights.l2));
    }
  }
  out.loss_g = t.scalar(out.objective);

  std::vector<nn::Var> hidden = gen.observed_hidden;
  hidden.insert(hidden.end(), gen.predicted_hidden.begin(), gen.predicted_hidden.end());
  const nn::Var sparsity = nn::mean_abs(t, nn::concat(t, hidden));
  out.sparsity = t.scalar(sparsity);
  const double lam = mode == TrainMode::no_l1 ? 0.0 : weights.lambda;
  if (lam != 0.0) out.objective = nn::add(t, out.objective, nn::scale(t, sparsity, lam));
  out.loss_g += lam * out.sparsity;
  return out;
}

// ---------------------------------------------------------------------------
// Plain evaluation

struct PredictedTrajectory {
  PedId ped_id = 0;
  FrameIndex start_frame = 0;
  std::vector<Point2> positions;
};

struct GenerateResult {
  PredictedTrajectory trajectory;
  /// Generator hidden states at the observed steps.
  std::vector<std::vector<double>> observed_hidden;
  /// Generator hidden states at the prediction steps.
  std::vector<std::vector<double>> predicted_hidden;

  /// Observed-step hidden states flattened in time order.
  std::vector<double> theta() const {
    std::vector<double> out;
    for (const auto& h : observed_hidden) out.insert(out.end(), h.begin(), h.end());
    return out;
  }
};

namespace detail {
inline std::vector<double> copy_value(const nn::Tape& t, nn::Var v) {
  auto s = t.value(v);
  return {s.begin(), s.end()};
}
}  // namespace detail

/// Forecast with explicit per-step noise vectors.
inline GenerateResult generate(const Window& w, const Model& m,
                               const std::vector<std::vector<double>>& noise) {
  expects(noise.size() == m.config.horizon(), "generate: noise length != horizon");
  expects(w.future.empty() || w.future.size() == m.config.horizon(),
          "generate: window horizon does not match the model");
  nn::Tape t(false);
  const BoundModel b = bind(t, m, false, false);
  const auto contexts = window_contexts(t, b, m, w);
  const auto gen = run_generator(t, b.generator, contexts, noise, m.config.z_dim);

  GenerateResult r;
  r.trajectory.ped_id = w.ped_id;
  r.trajectory.start_frame = w.start_frame;
  Point2 p = w.observed.back();
  for (nn::Var d : gen.displacements) {
    auto v = t.value(d);
    p += Point2{v[0], v[1]};
    if (!is_finite(p)) throw DivergenceError("non-finite forecast for pedestrian " +
                                             std::to_string(w.ped_id));
    r.trajectory.positions.push_back(p);
  }
  for (nn::Var h : gen.observed_hidden) r.observed_hidden.push_back(detail::copy_value(t, h));
  for (nn::Var h : gen.predicted_hidden) r.predicted_hidden.push_back(detail::copy_value(t, h));
  return r;
}

/// Forecast drawing a fresh z_t for every prediction step.
inline GenerateResult generate(const Window& w, const Model& m, NoiseSource& noise) {
  expects(noise.dim() == m.config.z_dim, "generate: noise dimension != z_dim");
  return generate(w, m, noise.draw(m.config.horizon()));
}

/// Probability that `future` is real given one context per future step.
inline double discriminate(const std::vector<std::vector<double>>& contexts,
                           std::span<const Point2> future, const Point2& last_observed,
                           const Discriminator& d) {
  expects(contexts.size() == future.size(), "discriminate: length mismatch");
  nn::Tape t(false);
  const BoundDiscriminator b{nn::bind(t, d.lstm, false), nn::bind(t, d.head, false)};
  std::vector<nn::Var> cs, ds;
  Point2 prev = last_observed;
  for (std::size_t i = 0; i < future.size(); ++i) {
    cs.push_back(t.constant(contexts[i]));
    const Point2 step = future[i] - prev;
    ds.push_back(t.constant({step.x, step.y}));
    prev = future[i];
  }
  return nn::detail::sigmoid(t.scalar(run_discriminator(t, b, cs, ds)));
}

/// Mean binary cross-entropy with real samples labelled 1 and fakes 0.
inline double discriminator_loss(std::span<const double> real_probs,
                                 std::span<const double> fake_probs) {
  const std::size_t n = real_probs.size() + fake_probs.size();
  expects(n > 0, "discriminator_loss: no samples");
  double s = 0.0;
  for (double p : real_probs) s -= std::log(p);
  for (double p : fake_probs) s -= std::log(1.0 - p);
  return s / static_cast<double>(n);
}

struct LossTerms {
  double loss_d = std::numeric_limits<double>::quiet_NaN();
  double loss_g = 0.0;
  double sparsity = 0.0;
};

/// Noise for window i of a batch evaluated under `seed`.
inline std::vector<std::vector<double>> window_noise(std::uint64_t seed, std::size_t i,
                                                     const ModelConfig& c) {
  NoiseSource src(derive_seed(seed, i, 0x2A), c.z_dim);
  return src.draw(c.horizon());
}

/// Batch-mean losses without gradients. loss_d is NaN in no-gan mode.
inline LossTerms gan_losses(std::span<const Window> batch, const Model& m, double lambda,
                            TrainMode mode, std::uint64_t seed, double l2_weight = 1.0) {
  const LossWeights weights{lambda, l2_weight};
  expects(!batch.empty(), "gan_losses: empty batch");
  LossTerms out;
  double d_sum = 0.0;
  out.loss_g = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto noise = window_noise(seed, i, m.config);
    if (mode != TrainMode::no_gan) {
      nn::Tape t(false);
      const BoundModel b = bind(t, m, false, false);
      d_sum += window_objective(t, b, m, batch[i], noise, weights, mode, Phase::discriminator).loss_d;
    }
    nn::Tape t(false);
    const BoundModel b = bind(t, m, false, false);
    const auto g = window_objective(t, b, m, batch[i], noise, weights, mode, Phase::generator);
    out.loss_g += g.loss_g;
    out.sparsity += g.sparsity;
  }
  const double n = static_cast<double>(batch.size());
  if (mode != TrainMode::no_gan) out.loss_d = d_sum / n;
  out.loss_g /= n;
  out.sparsity /= n;
  return out;
}

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  double lambda = 0.2;
  /// Weight of the supervised reconstruction term in adversarial modes.
  double l2_weight = 1.0;
  double learning_rate = 1e-3;
  std::size_t batch_size = 32;
  std::size_t epochs = 500;
  TrainMode mode = TrainMode::gd_gan;
  std::uint64_t seed = 1;
  double clip_norm = 5.0;
  std::size_t threads = 1;
};

inline void validate(const TrainConfig& c) {
  if (!(c.lambda >= 0.0)) throw ValidationError("lambda must be >= 0");
  if (!(c.l2_weight >= 0.0)) throw ValidationError("l2_weight must be >= 0");
  if (c.batch_size < 1) throw ValidationError("batch_size must be >= 1");
  if (!(c.learning_rate > 0.0)) throw ValidationError("learning_rate must be > 0");
}

struct EpochRecord {
  std::size_t epoch = 0;
  double loss_d = std::numeric_limits<double>::quiet_NaN();
  double loss_g = 0.0;
  double sparsity = 0.0;
  double val_ade = std::numeric_limits<double>::quiet_NaN();

  friend bool operator==(const EpochRecord& a, const EpochRecord& b) {
    auto same = [](double x, double y) { return x == y || (std::isnan(x) && std::isnan(y)); };
    return a.epoch == b.epoch && same(a.loss_d, b.loss_d) && same(a.loss_g, b.loss_g) &&
           same(a.sparsity, b.sparsity) && same(a.val_ade, b.val_ade);
  }
};

struct TrainState {
  Model model;
  Model best_model;
  double best_val_ade = std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;
  nn::AdamState generator_opt;
  std::optional<nn::AdamState> discriminator_opt;
  std::vector<EpochRecord> history;

  std::size_t epochs_done() const { return history.size(); }
};

inline TrainState init_train_state(ModelConfig model_config, const TrainConfig& tc) {
  validate(tc);
  model_config.conditional = tc.mode != TrainMode::unconditional_gan;
  TrainState s;
  s.model = init_model(model_config, tc.seed, tc.mode != TrainMode::no_gan);
  s.best_model = s.model;
  const nn::AdamConfig adam{tc.learning_rate};
  s.generator_opt = nn::AdamState::for_parameters(s.model.generator_side_parameters(), adam);
  if (s.model.discriminator) {
    s.discriminator_opt = nn::AdamState::for_parameters(s.model.discriminator_parameters(), adam);
  }
  return s;
}

/// Mean ADE/FDE of single-sample forecasts; window i uses noise derived from
/// (seed, i).
inline TrajectoryError evaluate_forecasts(const Model& m, std::span<const Window> windows,
                                          std::uint64_t seed, std::size_t threads = 1) {
  expects(!windows.empty(), "evaluate_forecasts: no windows");
  std::vector<TrajectoryError> errs(windows.size());
  parallel_for(windows.size(), threads, [&](std::size_t i) {
    const auto r = generate(windows[i], m, window_noise(seed, i, m.config));
    errs[i] = ade_fde(r.trajectory.positions, windows[i].future);
  });
  TrajectoryError total;
  for (const auto& e : errs) {
    total.ade += e.ade;
    total.fde += e.fde;
  }
  total.ade /= static_cast<double>(errs.size());
  total.fde /= static_cast<double>(errs.size());
  return total;
}

/// Median absolute generator hidden activation over all steps of all windows.
inline double median_abs_activation(const Model& m, std::span<const Window> windows,
                                    std::uint64_t seed) {
  std::vector<double> vals;
  for (std::size_t i = 0; i < windows.size(); ++i) {
    const auto r = generate(windows[i], m, window_noise(seed, i, m.config));
    for (const auto* seq : {&r.observed_hidden, &r.predicted_hidden}) {
      for (const auto& h : *seq) {
        for (double v : h) vals.push_back(std::abs(v));
      }
    }
  }
  expects(!vals.empty(), "median_abs_activation: no windows");
  const auto mid = vals.begin() + static_cast<std::ptrdiff_t>(vals.size() / 2);
  std::nth_element(vals.begin(), mid, vals.end());
  if (vals.size() % 2 == 1) return *mid;
  const double upper = *mid;
  const double lower = *std::max_element(vals.begin(), mid);
  return 0.5 * (lower + upper);
}

namespace detail {

constexpr std::uint64_t kEvalSeedSalt = 0xE7A1;

struct PhaseResult {
  double loss_d = 0.0;
  double loss_g = 0.0;
  double sparsity = 0.0;
};

/// Runs one full pass over `order` in mini-batches, updating the parameter
/// group selected by `phase`.
inline PhaseResult run_phase(Model& m, nn::AdamState& opt, std::span<const Window> data,
                             const std::vector<std::size_t>& order, const TrainConfig& tc,
                             Phase phase, std::uint64_t noise_seed) {
  PhaseResult total;
  std::vector<nn::Parameter*> params =
      phase == Phase::generator ? m.generator_side_parameters() : m.discriminator_parameters();
  for (std::size_t start = 0; start < order.size(); start += tc.batch_size) {
    const std::size_t n = std::min(tc.batch_size, order.size() - start);
    std::vector<std::vector<std::vector<double>>> grads(n);
    std::vector<WindowTerms> terms(n);
    parallel_for(n, tc.threads, [&](std::size_t k) {
      const std::size_t idx = order[start + k];
      nn::Tape t;
      const BoundModel b = bind(t, m, phase == Phase::generator, phase == Phase::discriminator);
      const auto noise = window_noise(noise_seed, idx, m.config);
      terms[k] = window_objective(t, b, m, data[idx], noise, {tc.lambda, tc.l2_weight}, tc.mode, phase);
      t.backward(terms[k].objective);
      const auto vars = phase == Phase::generator ? b.generator_side_vars() : b.discriminator_vars();
      for (nn::Var v : vars) grads[k].push_back(t.grad(v));
    });
    std::vector<std::vector<double>> sum = grads[0];
    for (std::size_t k = 1; k < n; ++k) {
      for (std::size_t p = 0; p < sum.size(); ++p) {
        for (std::size_t j = 0; j < sum[p].size(); ++j) sum[p][j] += grads[k][p][j];
      }
    }
    for (auto& g : sum) {
      for (double& x : g) x /= static_cast<double>(n);
    }
    nn::clip_global_norm(sum, tc.clip_norm);
    nn::adam_step(opt, params, sum);
    for (const auto& wt : terms) {
      total.loss_d += phase == Phase::discriminator ? wt.loss_d : 0.0;
      total.loss_g += wt.loss_g;
      total.sparsity += wt.sparsity;
    }
  }
  const double count = static_cast<double>(order.size());
  total.loss_d /= count;
  total.loss_g /= count;
  total.sparsity /= count;
  return total;
}

inline std::vector<std::size_t> shuffled(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

}  // namespace detail

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Continues training until `tc.epochs` generator epochs have been run in
/// total. Each epoch is a discriminator pass (skipped in no-gan mode)
/// followed by a generator pass. Shuffles and noise are derived from
/// (seed, epoch), so a resumed run matches an uninterrupted one.
inline void train_epochs(TrainState& s, std::span<const Window> train,
                         std::span<const Window> validation, const TrainConfig& tc,
                         const EpochCallback& on_epoch = {}) {
  validate(tc);
  expects(!train.empty(), "train: empty dataset");
  const std::uint64_t eval_seed = derive_seed(tc.seed, detail::kEvalSeedSalt);
  for (std::size_t epoch = s.epochs_done() + 1; epoch <= tc.epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    try {
      if (tc.mode != TrainMode::no_gan) {
        const auto order = detail::shuffled(train.size(), derive_seed(tc.seed, epoch, 1));
        rec.loss_d = detail::run_phase(s.model, *s.discriminator_opt, train, order, tc,
                                       Phase::discriminator, derive_seed(tc.seed, epoch, 2))
                         .loss_d;
      }
      const auto order = detail::shuffled(train.size(), derive_seed(tc.seed, epoch, 3));
      const auto g = detail::run_phase(s.model, s.generator_opt, train, order, tc, Phase::generator,
                                       derive_seed(tc.seed, epoch, 4));
      rec.loss_g = g.loss_g;
      rec.sparsity = g.sparsity;
      if (!validation.empty()) {
        rec.val_ade = evaluate_forecasts(s.model, validation, eval_seed, tc.threads).ade;
      }
    } catch (const DivergenceError& e) {
      throw DivergenceError(std::string("training diverged: ") + e.what(),
                            static_cast<long>(epoch));
    }
    if (!std::isfinite(rec.loss_g) || (tc.mode != TrainMode::no_gan && !std::isfinite(rec.loss_d))) {
      throw DivergenceError("training diverged: non-finite loss", static_cast<long>(epoch));
    }
    if (validation.empty() || rec.val_ade < s.best_val_ade) {
      s.best_model = s.model;
      s.best_epoch = epoch;
      if (!validation.empty()) s.best_val_ade = rec.val_ade;
    }
    s.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
}

inline TrainState train(std::span<const Window> dataset, const TrainConfig& tc,
                        const ModelConfig& model_config = {},
                        std::span<const Window> validation = {},
                        const EpochCallback& on_epoch = {}) {
  expects(!dataset.empty(), "train: empty dataset");
  TrainState s = init_train_state(model_config, tc);
  train_epochs(s, dataset, validation, tc, on_epoch);
  return s;
}

// ---------------------------------------------------------------------------
// Checkpoint participation

namespace detail {

inline std::string format_model_config(const ModelConfig& c) {
  std::ostringstream o;
  o << "encoder_hidden=" << c.encoder.hidden_size << "\n"
    << "attention_size=" << c.encoder.attention_size << "\n"
    << "position_scale=" << format_number(c.encoder.position_scale) << "\n"
    << "distance_floor=" << format_number(c.encoder.distance_floor) << "\n"
    << "slots_per_direction=" << c.encoder.slots_per_direction << "\n"
    << "generator_hidden=" << c.generator_hidden << "\n"
    << "discriminator_hidden=" << c.discriminator_hidden << "\n"
    << "z_dim=" << c.z_dim << "\n"
    << "t_obs=" << c.t_obs << "\n"
    << "t_pred=" << c.t_pred << "\n"
    << "conditional=" << (c.conditional ? 1 : 0) << "\n";
  return o.str();
}

inline std::map<std::string, std::string> parse_key_values(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error("malformed checkpoint config line: " + line);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

inline double checkpoint_number(const std::string& text, const std::string& key) {
  auto v = parse_double(text);
  if (!v) throw Error("checkpoint config '" + key + "' is not a number");
  return *v;
}

inline std::size_t checkpoint_size(const std::string& text, const std::string& key) {
  auto v = parse_integral(text);
  if (!v || *v < 0) throw Error("checkpoint config '" + key + "' is not a count");
  return static_cast<std::size_t>(*v);
}

inline ModelConfig parse_model_config(const std::string& text) {
  const auto kv = parse_key_values(text);
  auto get = [&](const std::string& k) -> const std::string& {
    auto it = kv.find(k);
    if (it == kv.end()) throw Error("checkpoint config lacks '" + k + "'");
    return it->second;
  };
  auto size = [&](const std::string& k) { return checkpoint_size(get(k), k); };
  ModelConfig c;
  c.encoder.hidden_size = size("encoder_hidden");
  c.encoder.attention_size = size("attention_size");
  c.encoder.position_scale = checkpoint_number(get("position_scale"), "position_scale");
  c.encoder.distance_floor = checkpoint_number(get("distance_floor"), "distance_floor");
  c.encoder.slots_per_direction = size("slots_per_direction");
  c.generator_hidden = size("generator_hidden");
  c.discriminator_hidden = size("discriminator_hidden");
  c.z_dim = size("z_dim");
  c.t_obs = size("t_obs");
  c.t_pred = size("t_pred");
  c.conditional = get("conditional") == "1";
  return c;
}

inline void put_params(nn::Checkpoint& ck, const std::string& prefix, Model& m) {
  for (nn::Parameter* p : m.all_parameters()) ck.put(prefix + p->name, p->value);
}

inline void get_params(const nn::Checkpoint& ck, const std::string& prefix, Model& m) {
  for (nn::Parameter* p : m.all_parameters()) {
    const nn::Tensor& t = ck.get(prefix + p->name);
    if (t.shape != p->value.shape) throw Error("checkpoint shape mismatch for " + p->name);
    p->value = t;
  }
}

inline void put_adam(nn::Checkpoint& ck, const std::string& prefix, const nn::AdamState& a) {
  ck.put(prefix + ".step", nn::Tensor({1}, {static_cast<double>(a.step)}));
  ck.put(prefix + ".hyper", nn::Tensor({4}, {a.config.learning_rate, a.config.beta1,
                                             a.config.beta2, a.config.epsilon}));
  for (std::size_t i = 0; i < a.m.size(); ++i) {
    ck.put(prefix + ".m." + std::to_string(i), nn::Tensor({a.m[i].size()}, a.m[i]));
    ck.put(prefix + ".v." + std::to_string(i), nn::Tensor({a.v[i].size()}, a.v[i]));
  }
}

inline void get_adam(const nn::Checkpoint& ck, const std::string& prefix, nn::AdamState& a) {
  a.step = static_cast<std::int64_t>(ck.get(prefix + ".step").values.at(0));
  const auto& h = ck.get(prefix + ".hyper").values;
  a.config = {h.at(0), h.at(1), h.at(2), h.at(3)};
  for (std::size_t i = 0; i < a.m.size(); ++i) {
    a.m[i] = ck.get(prefix + ".m." + std::to_string(i)).values;
    a.v[i] = ck.get(prefix + ".v." + std::to_string(i)).values;
  }
}

}  // namespace detail

/// Serializes everything needed to resume: current and best parameters,
/// optimizer moments, the epoch history and both configs.
inline nn::Checkpoint to_checkpoint(const TrainState& s, const TrainConfig& tc) {
  nn::Checkpoint ck;
  ck.put_text("config.model", detail::format_model_config(s.model.config));
  std::ostringstream o;
  o << "mode=" << to_string(tc.mode) << "\n"
    << "lambda=" << detail::format_number(tc.lambda) << "\n"
    << "l2_weight=" << detail::format_number(tc.l2_weight) << "\n"
    << "learning_rate=" << detail::format_number(tc.learning_rate) << "\n"
    << "batch_size=" << tc.batch_size << "\n"
    << "seed=" << tc.seed << "\n"
    << "clip_norm=" << detail::format_number(tc.clip_norm) << "\n";
  ck.put_text("config.train", o.str());
  Model current = s.model;
  Model best = s.best_model;
  detail::put_params(ck, "model.", current);
  detail::put_params(ck, "best.", best);
  detail::put_adam(ck, "adam.generator", s.generator_opt);
  if (s.discriminator_opt) detail::put_adam(ck, "adam.discriminator", *s.discriminator_opt);
  std::vector<double> hist;
  for (const auto& r : s.history) {
    hist.insert(hist.end(), {static_cast<double>(r.epoch), r.loss_d, r.loss_g, r.sparsity,
                             r.val_ade});
  }
  ck.put("history", nn::Tensor({s.history.size(), 5}, hist));
  ck.put("best", nn::Tensor({2}, {static_cast<double>(s.best_epoch), s.best_val_ade}));
  return ck;
}

/// Training settings stored in a checkpoint (epochs and threads are not
/// stored; they belong to the invocation).
inline TrainConfig train_config_from_checkpoint(const nn::Checkpoint& ck) {
  const auto kv = detail::parse_key_values(ck.text("config.train"));
  auto get = [&](const std::string& k) -> const std::string& {
    auto it = kv.find(k);
    if (it == kv.end()) throw Error("checkpoint train config lacks '" + k + "'");
    return it->second;
  };
  TrainConfig tc;
  tc.mode = parse_train_mode(get("mode"));
  tc.lambda = detail::checkpoint_number(get("lambda"), "lambda");
  tc.l2_weight = detail::checkpoint_number(get("l2_weight"), "l2_weight");
  tc.learning_rate = detail::checkpoint_number(get("learning_rate"), "learning_rate");
  tc.batch_size = detail::checkpoint_size(get("batch_size"), "batch_size");
  tc.seed = std::stoull(get("seed"));
  tc.clip_norm = detail::checkpoint_number(get("clip_norm"), "clip_norm");
  return tc;
}

inline TrainState train_state_from_checkpoint(const nn::Checkpoint& ck) {
  const ModelConfig mc = detail::parse_model_config(ck.text("config.model"));
  const TrainConfig tc = train_config_from_checkpoint(ck);
  TrainState s;
  s.model = zero_model(mc, tc.mode != TrainMode::no_gan);
  s.best_model = s.model;
  detail::get_params(ck, "model.", s.model);
  detail::get_params(ck, "best.", s.best_model);
  s.generator_opt = nn::AdamState::for_parameters(s.model.generator_side_parameters());
  detail::get_adam(ck, "adam.generator", s.generator_opt);
  if (s.model.discriminator) {
    s.discriminator_opt = nn::AdamState::for_parameters(s.model.discriminator_parameters());
    detail::get_adam(ck, "adam.discriminator", *s.discriminator_opt);
  }
  const auto& h = ck.get("history");
  for (std::size_t r = 0; r < h.rows(); ++r) {
    const double* v = &h.values[5 * r];
    s.history.push_back({static_cast<std::size_t>(v[0]), v[1], v[2], v[3], v[4]});
  }
  const auto& best = ck.get("best").values;
  s.best_epoch = static_cast<std::size_t>(best.at(0));
  s.best_val_ade = best.at(1);
  return s;
}

/// Best-epoch model from a checkpoint.
inline Model model_from_checkpoint(const nn::Checkpoint& ck) {
  return train_state_from_checkpoint(ck).best_model;
}

}  // namespace groupcast
