#pragma once

// Neighbourhood encoding of a pedestrian of interest: an LSTM encodes its own
// observed track, summarized by learned soft attention, and the tracks of up
// to 30 neighbours (10 per left/front/right bucket), summarized with fixed
// inverse-distance weights. The two summaries are concatenated and squashed
// with tanh into the context vector that conditions the forecaster.

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "groupcast/data_model.hpp"
#include "groupcast/error.hpp"
#include "groupcast/nn/layers.hpp"
#include "groupcast/nn/tape.hpp"

namespace groupcast {

struct EncoderConfig {
  std::size_t hidden_size = 32;
  std::size_t attention_size = 32;
  /// Metres are multiplied by this before entering the recurrent encoder.
  double position_scale = 0.2;
  /// Distances below this are clamped before taking the reciprocal.
  double distance_floor = 1e-3;
  std::size_t slots_per_direction = 10;
};

/// Scoring network a(q, h_j) = v . tanh(W_q q + b_q + W_k h_j + b_k) + c.
struct AttentionNet {
  nn::Dense query;
  nn::Dense key;
  nn::Parameter v;
  nn::Parameter c;

  static AttentionNet zeros(std::size_t hidden, std::size_t attn) {
    return {nn::Dense::zeros("attention.query", hidden, attn),
            nn::Dense::zeros("attention.key", hidden, attn),
            {"attention.v", nn::Tensor({attn})},
            {"attention.c", nn::Tensor({1})}};
  }
  static AttentionNet random(std::size_t hidden, std::size_t attn, std::mt19937_64& rng) {
    AttentionNet a = zeros(hidden, attn);
    a.query = nn::Dense::random("attention.query", hidden, attn, rng);
    a.key = nn::Dense::random("attention.key", hidden, attn, rng);
    a.v.value = nn::uniform_init({attn}, attn, rng);
    return a;
  }

  std::vector<nn::Parameter*> parameters() {
    return {&query.w, &query.b, &key.w, &key.b, &v, &c};
  }
};

struct NeighbourhoodEncoder {
  EncoderConfig config;
  nn::LstmCell lstm;
  AttentionNet attention;

  static NeighbourhoodEncoder zeros(const EncoderConfig& config) {
    return {config, nn::LstmCell::zeros("encoder.lstm", 2, config.hidden_size),
            AttentionNet::zeros(config.hidden_size, config.attention_size)};
  }
  static NeighbourhoodEncoder random(const EncoderConfig& config, std::mt19937_64& rng) {
    NeighbourhoodEncoder e;
    e.config = config;
    e.lstm = nn::LstmCell::random("encoder.lstm", 2, config.hidden_size, rng);
    e.attention = AttentionNet::random(config.hidden_size, config.attention_size, rng);
    return e;
  }

  std::size_t context_size() const { return 2 * config.hidden_size; }

  std::vector<nn::Parameter*> parameters() {
    auto p = lstm.parameters();
    auto a = attention.parameters();
    p.insert(p.end(), a.begin(), a.end());
    return p;
  }
};

struct BoundAttention {
  nn::BoundDense query;
  nn::BoundDense key;
  nn::Var v;
  nn::Var c;
};

struct BoundEncoder {
  nn::BoundLstm lstm;
  BoundAttention attention;
};

inline BoundEncoder bind(nn::Tape& t, const NeighbourhoodEncoder& e, bool trainable = true) {
  return {nn::bind(t, e.lstm, trainable),
          {nn::bind(t, e.attention.query, trainable), nn::bind(t, e.attention.key, trainable),
           t.parameter(e.attention.v.value, trainable),
           t.parameter(e.attention.c.value, trainable)}};
}

/// Tape handles in the order of NeighbourhoodEncoder::parameters().
inline std::vector<nn::Var> parameter_vars(const BoundEncoder& b) {
  return {b.lstm.wx,         b.lstm.wh,         b.lstm.b,      b.attention.query.w,
          b.attention.query.b, b.attention.key.w, b.attention.key.b, b.attention.v,
          b.attention.c};
}

// ---------------------------------------------------------------------------
// Trajectory encoding

/// Runs the shared recurrent encoder over already-normalized positions.
inline std::vector<nn::Var> encode_trajectory(nn::Tape& t, const nn::BoundLstm& lstm,
                                              std::span<const Point2> positions) {
  std::vector<nn::Var> hidden;
  hidden.reserve(positions.size());
  nn::LstmState s = lstm.initial_state(t);
  for (const Point2& p : positions) {
    s = lstm.step(t, t.constant({p.x, p.y}), s);
    hidden.push_back(s.h);
  }
  return hidden;
}

/// Hidden sequence h_1..h_T for a length-T track.
inline std::vector<std::vector<double>> encode_trajectory(const nn::LstmCell& cell,
                                                          std::span<const Point2> positions,
                                                          std::size_t expected_length) {
  expects(positions.size() == expected_length, "encode_trajectory: wrong sequence length");
  expects(cell.input_size == 2, "encode_trajectory: cell must take 2-D input");
  nn::Tape t(false);
  auto hidden = encode_trajectory(t, nn::bind(t, cell), positions);
  std::vector<std::vector<double>> out;
  out.reserve(hidden.size());
  for (auto h : hidden) out.emplace_back(t.value(h).begin(), t.value(h).end());
  return out;
}

// ---------------------------------------------------------------------------
// Soft attention over the pedestrian's own hidden sequence

struct SoftAttentionVars {
  nn::Var context;
  nn::Var weights;
};

/// Projected keys W_k h_j + b_k; independent of the query, so computed once.
inline std::vector<nn::Var> attention_keys(nn::Tape& t, const BoundAttention& net,
                                           std::span<const nn::Var> self_hidden) {
  std::vector<nn::Var> keys;
  keys.reserve(self_hidden.size());
  for (auto h : self_hidden) keys.push_back(net.key(t, h));
  return keys;
}

inline SoftAttentionVars soft_attention(nn::Tape& t, const BoundAttention& net,
                                        std::span<const nn::Var> self_hidden,
                                        std::span<const nn::Var> keys, nn::Var query) {
  expects(!self_hidden.empty(), "soft_attention: empty hidden sequence");
  const nn::Var q = net.query(t, query);
  const nn::Var scores = nn::additive_scores(t, q, keys, net.v, net.c);
  const nn::Var alpha = nn::softmax(t, scores);
  return {nn::weighted_sum(t, self_hidden, alpha), alpha};
}

struct SoftAttentionResult {
  std::vector<double> context;
  std::vector<double> weights;
};

inline SoftAttentionResult soft_attention(const AttentionNet& net,
                                          const std::vector<std::vector<double>>& self_hidden,
                                          const std::vector<double>& query) {
  expects(!self_hidden.empty(), "soft_attention: empty hidden sequence");
  nn::Tape t(false);
  BoundAttention bound{nn::bind(t, net.query), nn::bind(t, net.key), t.parameter(net.v.value),
                       t.parameter(net.c.value)};
  std::vector<nn::Var> hs;
  for (const auto& h : self_hidden) hs.push_back(t.constant(h));
  auto keys = attention_keys(t, bound, hs);
  auto r = soft_attention(t, bound, hs, keys, t.constant(query));
  return {{t.value(r.context).begin(), t.value(r.context).end()},
          {t.value(r.weights).begin(), t.value(r.weights).end()}};
}

// ---------------------------------------------------------------------------
// Hardwired attention over neighbours

/// w = 1 / max(dist, floor).
inline double hardwired_weight(double dist, double floor = 1e-3) {
  expects(dist >= 0.0, "hardwired_weight: negative distance");
  return 1.0 / std::max(dist, floor);
}

enum class Direction { left, front, right };

inline const char* to_string(Direction d) {
  switch (d) {
    case Direction::left:
      return "left";
    case Direction::front:
      return "front";
    case Direction::right:
      return "right";
  }
  return "?";
}

enum class SlotKind { real, aggregate, dummy };

struct NeighbourSlot {
  SlotKind kind = SlotKind::dummy;
  /// One id for real slots, the averaged pedestrians for an aggregate slot.
  std::vector<PedId> members;
  /// Raw world positions over the observed frames; empty for dummies.
  std::vector<Point2> positions;
  /// Per-frame hardwired weights; all zero for dummies.
  std::vector<double> weights;
  double mean_distance = 0.0;
};

struct NeighbourBucket {
  Direction direction = Direction::front;
  std::vector<NeighbourSlot> slots;
};

using NeighbourBuckets = std::array<NeighbourBucket, 3>;

/// Heading from the last observed displacement; +y when stationary.
inline Point2 heading_of(std::span<const Point2> observed) {
  expects(observed.size() >= 2, "heading_of: need two observed positions");
  Point2 h = observed[observed.size() - 1] - observed[observed.size() - 2];
  if (norm(h) == 0.0) return {0.0, 1.0};
  return h;
}

/// Signed bearing in degrees of `offset` relative to `heading`; positive is
/// counter-clockwise (to the left).
inline double bearing_degrees(const Point2& heading, const Point2& offset) {
  return std::atan2(cross(heading, offset), dot(heading, offset)) * 180.0 / std::numbers::pi;
}

/// Front: [-45, 45], left: (45, 135], right: [-135, -45). Anything further
/// back is ignored.
inline std::optional<Direction> classify_bearing(double bearing) {
  if (bearing >= -45.0 && bearing <= 45.0) return Direction::front;
  if (bearing > 45.0 && bearing <= 135.0) return Direction::left;
  if (bearing >= -135.0 && bearing < -45.0) return Direction::right;
  return std::nullopt;
}

namespace detail {

inline NeighbourSlot make_slot(SlotKind kind, std::vector<PedId> members,
                               std::vector<Point2> positions, std::span<const Point2> own,
                               double floor) {
  NeighbourSlot s;
  s.kind = kind;
  s.members = std::move(members);
  s.positions = std::move(positions);
  s.weights.resize(own.size());
  double total = 0.0;
  for (std::size_t j = 0; j < own.size(); ++j) {
    const double d = distance(s.positions[j], own[j]);
    total += d;
    s.weights[j] = hardwired_weight(d, floor);
  }
  s.mean_distance = own.empty() ? 0.0 : total / static_cast<double>(own.size());
  return s;
}

}  // namespace detail

/// Splits a window's neighbours into left/front/right buckets of exactly
/// `slots` entries each: the closest (by mean observed distance) first; when a
/// bucket overflows, the closest slots-1 are kept and the rest are averaged
/// frame-by-frame into one aggregate slot; short buckets are padded with
/// zero-weight dummies.
inline NeighbourBuckets bucket_neighbours(const Window& window, std::size_t slots = 10,
                                          double floor = 1e-3) {
  expects(slots >= 1, "bucket_neighbours: need at least one slot");
  const auto& own = window.observed;
  const std::size_t T = own.size();
  const Point2 heading = heading_of(own);

  struct Candidate {
    const Neighbour* nb;
    double mean_distance;
  };
  std::array<std::vector<Candidate>, 3> by_dir;
  for (const auto& nb : window.neighbours) {
    expects(nb.observed.size() == T, "bucket_neighbours: neighbour length mismatch");
    auto dir = classify_bearing(bearing_degrees(heading, nb.observed[T - 1] - own[T - 1]));
    if (!dir) continue;
    double total = 0.0;
    for (std::size_t j = 0; j < T; ++j) total += distance(nb.observed[j], own[j]);
    by_dir[static_cast<std::size_t>(*dir)].push_back({&nb, total / static_cast<double>(T)});
  }

  NeighbourBuckets buckets;
  for (std::size_t d = 0; d < 3; ++d) {
    auto& cands = by_dir[d];
    std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
      if (a.mean_distance != b.mean_distance) return a.mean_distance < b.mean_distance;
      return a.nb->ped_id < b.nb->ped_id;
    });
    NeighbourBucket& bucket = buckets[d];
    bucket.direction = static_cast<Direction>(d);
    const std::size_t keep = cands.size() > slots ? slots - 1 : cands.size();
    for (std::size_t i = 0; i < keep; ++i) {
      bucket.slots.push_back(detail::make_slot(SlotKind::real, {cands[i].nb->ped_id},
                                               cands[i].nb->observed, own, floor));
    }
    if (cands.size() > slots) {
      std::vector<Point2> mean(T);
      std::vector<PedId> members;
      for (std::size_t i = keep; i < cands.size(); ++i) {
        members.push_back(cands[i].nb->ped_id);
        for (std::size_t j = 0; j < T; ++j) mean[j] += cands[i].nb->observed[j];
      }
      const double n = static_cast<double>(cands.size() - keep);
      for (auto& p : mean) p = (1.0 / n) * p;
      bucket.slots.push_back(
          detail::make_slot(SlotKind::aggregate, std::move(members), std::move(mean), own, floor));
    }
    while (bucket.slots.size() < slots) {
      NeighbourSlot dummy;
      dummy.weights.assign(T, 0.0);
      bucket.slots.push_back(std::move(dummy));
    }
  }
  return buckets;
}

/// sum over non-dummy slots n and frames j of w^n_j h^n_j. `neighbour_hidden`
/// lists one hidden sequence per non-dummy slot in bucket order.
inline nn::Var hardwired_context(nn::Tape& t, const NeighbourBuckets& buckets,
                                 std::span<const std::vector<nn::Var>> neighbour_hidden,
                                 std::size_t hidden_size) {
  std::vector<nn::Var> terms;
  std::size_t k = 0;
  for (const auto& bucket : buckets) {
    for (const auto& slot : bucket.slots) {
      if (slot.kind == SlotKind::dummy) continue;
      expects(k < neighbour_hidden.size(), "hardwired_context: missing neighbour hidden states");
      const auto& hs = neighbour_hidden[k++];
      expects(hs.size() == slot.weights.size(), "hardwired_context: sequence length mismatch");
      terms.push_back(nn::weighted_sum(t, hs, std::span<const double>(slot.weights)));
    }
  }
  expects(k == neighbour_hidden.size(), "hardwired_context: extra neighbour hidden states");
  if (terms.empty()) return t.constant(std::vector<double>(hidden_size, 0.0));
  return nn::add_all(t, terms);
}

inline std::vector<double> hardwired_context(
    const NeighbourBuckets& buckets,
    const std::vector<std::vector<std::vector<double>>>& neighbour_hidden,
    std::size_t hidden_size) {
  nn::Tape t(false);
  std::vector<std::vector<nn::Var>> vars;
  for (const auto& seq : neighbour_hidden) {
    std::vector<nn::Var> s;
    for (const auto& h : seq) s.push_back(t.constant(h));
    vars.push_back(std::move(s));
  }
  auto r = hardwired_context(t, buckets, vars, hidden_size);
  return {t.value(r).begin(), t.value(r).end()};
}

/// tanh([soft, hardwired]).
inline nn::Var merge_context(nn::Tape& t, nn::Var soft, nn::Var hardwired) {
  return nn::tanh(t, nn::concat(t, {soft, hardwired}));
}

inline std::vector<double> merge_context(std::span<const double> soft,
                                         std::span<const double> hardwired) {
  std::vector<double> out;
  out.reserve(soft.size() + hardwired.size());
  for (double v : soft) out.push_back(std::tanh(v));
  for (double v : hardwired) out.push_back(std::tanh(v));
  return out;
}

// ---------------------------------------------------------------------------
// Full context sequence for a window

struct ContextVars {
  std::vector<nn::Var> self_hidden;
  std::vector<nn::Var> soft;
  std::vector<nn::Var> attention;
  nn::Var hardwired;
  /// C*_1 .. C*_T.
  std::vector<nn::Var> merged;
};

/// Positions relative to `origin`, scaled into network units.
inline std::vector<Point2> normalize_track(std::span<const Point2> track, const Point2& origin,
                                           double scale) {
  std::vector<Point2> out;
  out.reserve(track.size());
  for (const auto& p : track) out.push_back(scale * (p - origin));
  return out;
}

/// Encodes the pedestrian and its bucketed neighbours, producing one merged
/// context per observed step. The soft-attention query at step t is the
/// encoder state after step t-1 (zero at t = 1). All tracks are expressed
/// relative to the pedestrian's last observed position.
inline ContextVars encode_context(nn::Tape& t, const BoundEncoder& enc,
                                  const NeighbourhoodEncoder& model, const Window& window,
                                  std::size_t t_obs) {
  expects(window.observed.size() == t_obs, "encode_context: observed length != t_obs");
  const auto& cfg = model.config;
  const Point2 origin = window.observed.back();

  ContextVars out;
  out.self_hidden =
      encode_trajectory(t, enc.lstm, normalize_track(window.observed, origin, cfg.position_scale));

  const NeighbourBuckets buckets =
      bucket_neighbours(window, cfg.slots_per_direction, cfg.distance_floor);
  std::vector<std::vector<nn::Var>> neighbour_hidden;
  for (const auto& bucket : buckets) {
    for (const auto& slot : bucket.slots) {
      if (slot.kind == SlotKind::dummy) continue;
      neighbour_hidden.push_back(encode_trajectory(
          t, enc.lstm, normalize_track(slot.positions, origin, cfg.position_scale)));
    }
  }
  out.hardwired = hardwired_context(t, buckets, neighbour_hidden, cfg.hidden_size);

  const auto keys = attention_keys(t, enc.attention, out.self_hidden);
  nn::Var query = t.constant(std::vector<double>(cfg.hidden_size, 0.0));
  for (std::size_t step = 0; step < t_obs; ++step) {
    auto sa = soft_attention(t, enc.attention, out.self_hidden, keys, query);
    out.soft.push_back(sa.context);
    out.attention.push_back(sa.weights);
    out.merged.push_back(merge_context(t, sa.context, out.hardwired));
    query = out.self_hidden[step];
  }
  return out;
}

struct NeighbourhoodContext {
  std::vector<double> soft;
  std::vector<double> hardwired;
  std::vector<double> merged;
};

inline std::vector<NeighbourhoodContext> encode_context(const NeighbourhoodEncoder& model,
                                                        const Window& window, std::size_t t_obs) {
  nn::Tape t(false);
  auto vars = encode_context(t, bind(t, model), model, window, t_obs);
  std::vector<NeighbourhoodContext> out;
  auto copy = [&](nn::Var v) { return std::vector<double>(t.value(v).begin(), t.value(v).end()); };
  for (std::size_t i = 0; i < vars.merged.size(); ++i) {
    out.push_back({copy(vars.soft[i]), copy(vars.hardwired), copy(vars.merged[i])});
  }
  return out;
}

}  // namespace groupcast
