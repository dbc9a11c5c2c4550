#pragma once

#include <cmath>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "groupcast/nn/tape.hpp"
#include "groupcast/nn/tensor.hpp"

namespace groupcast::nn {

/// Uniform in [-k, k] with k = 1/sqrt(fan_in).
inline Tensor uniform_init(std::vector<std::size_t> shape, std::size_t fan_in, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  const double k = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-k, k);
  for (double& v : t.values) v = dist(rng);
  return t;
}

/// Weights of a gated recurrent cell; gate rows stacked [input, forget, output, cell].
struct LstmCell {
  std::size_t input_size = 0;
  std::size_t hidden_size = 0;
  Parameter wx;
  Parameter wh;
  Parameter b;

  static LstmCell zeros(std::string prefix, std::size_t input_size, std::size_t hidden_size) {
    LstmCell cell;
    cell.input_size = input_size;
    cell.hidden_size = hidden_size;
    cell.wx = {prefix + ".wx", Tensor({4 * hidden_size, input_size})};
    cell.wh = {prefix + ".wh", Tensor({4 * hidden_size, hidden_size})};
    cell.b = {prefix + ".b", Tensor({4 * hidden_size})};
    return cell;
  }

  /// Forget-gate bias starts at 1.
  static LstmCell random(std::string prefix, std::size_t input_size, std::size_t hidden_size,
                         std::mt19937_64& rng) {
    LstmCell cell = zeros(std::move(prefix), input_size, hidden_size);
    cell.wx.value = uniform_init({4 * hidden_size, input_size}, input_size + hidden_size, rng);
    cell.wh.value = uniform_init({4 * hidden_size, hidden_size}, input_size + hidden_size, rng);
    for (std::size_t k = 0; k < hidden_size; ++k) cell.b.value.values[hidden_size + k] = 1.0;
    return cell;
  }

  std::vector<Parameter*> parameters() { return {&wx, &wh, &b}; }
  std::vector<const Parameter*> parameters() const { return {&wx, &wh, &b}; }
};

struct Dense {
  Parameter w;
  Parameter b;

  static Dense zeros(std::string prefix, std::size_t in, std::size_t out) {
    return {{prefix + ".w", Tensor({out, in})}, {prefix + ".b", Tensor({out})}};
  }
  static Dense random(std::string prefix, std::size_t in, std::size_t out, std::mt19937_64& rng) {
    Dense d = zeros(std::move(prefix), in, out);
    d.w.value = uniform_init({out, in}, in, rng);
    d.b.value = uniform_init({out}, in, rng);
    return d;
  }

  std::size_t in() const { return w.value.cols(); }
  std::size_t out() const { return w.value.rows(); }
  std::vector<Parameter*> parameters() { return {&w, &b}; }
  std::vector<const Parameter*> parameters() const { return {&w, &b}; }
};

/// Tape handles for a cell's weights.
struct BoundLstm {
  Var wx, wh, b;
  std::size_t hidden_size = 0;

  LstmState initial_state(Tape& t) const {
    return {t.constant(std::vector<double>(hidden_size, 0.0)),
            t.constant(std::vector<double>(hidden_size, 0.0))};
  }
  LstmState step(Tape& t, Var x, LstmState s) const { return lstm_cell(t, x, s, wx, wh, b); }
};

struct BoundDense {
  Var w, b;
  Var operator()(Tape& t, Var x) const { return affine(t, w, x, b); }
};

inline BoundLstm bind(Tape& t, const LstmCell& cell, bool trainable = true) {
  return {t.parameter(cell.wx.value, trainable), t.parameter(cell.wh.value, trainable),
          t.parameter(cell.b.value, trainable), cell.hidden_size};
}

inline BoundDense bind(Tape& t, const Dense& d, bool trainable = true) {
  return {t.parameter(d.w.value, trainable), t.parameter(d.b.value, trainable)};
}

struct CellState {
  std::vector<double> h;
  std::vector<double> c;

  friend bool operator==(const CellState&, const CellState&) = default;
};

/// Plain evaluation of one recurrent step: h' = o * tanh(f * c + i * g).
inline CellState recurrent_step(const LstmCell& cell, std::span<const double> input,
                                const CellState& state) {
  expects(input.size() == cell.input_size, "recurrent_step: input size mismatch");
  expects(state.h.size() == cell.hidden_size && state.c.size() == cell.hidden_size,
          "recurrent_step: state size mismatch");
  CellState next{std::vector<double>(cell.hidden_size), std::vector<double>(cell.hidden_size)};
  std::vector<double> gates(4 * cell.hidden_size);
  detail::lstm_forward(cell.wx.value.values, cell.wh.value.values, cell.b.value.values,
                       cell.input_size, cell.hidden_size, input, state.h, state.c, gates, next.h,
                       next.c);
  return next;
}

}  // namespace groupcast::nn
