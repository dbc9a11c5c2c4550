#pragma once

// Reverse-mode differentiation over the handful of vector operations the
// forecaster needs. A Tape records nodes in evaluation order; backward()
// walks them in reverse and accumulates gradients. Tapes are single-threaded;
// use one tape per thread.

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "groupcast/error.hpp"
#include "groupcast/nn/tensor.hpp"

namespace groupcast::nn {

struct Var {
  std::size_t id = 0;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t)>;

  explicit Tape(bool recording = true) : recording_(recording) {}

  bool recording() const noexcept { return recording_; }
  std::size_t node_count() const noexcept { return nodes_.size(); }

  Var constant(std::vector<double> values, std::size_t rows = 0, std::size_t cols = 1) {
    if (rows == 0) rows = values.size();
    return push(std::move(values), rows, cols, false, nullptr);
  }

  /// Leaf whose gradient is tracked when the tape records.
  Var parameter(const Tensor& t, bool trainable = true) {
    return push(t.values, t.rows(), t.cols(), trainable && recording_, nullptr);
  }

  std::span<const double> value(Var v) const { return nodes_.at(v.id).value; }
  double scalar(Var v) const {
    const auto& n = nodes_.at(v.id);
    expects(n.value.size() == 1, "Tape::scalar on non-scalar node");
    return n.value[0];
  }
  std::size_t size(Var v) const { return nodes_.at(v.id).value.size(); }
  std::size_t rows(Var v) const { return nodes_.at(v.id).rows; }
  std::size_t cols(Var v) const { return nodes_.at(v.id).cols; }
  bool needs_grad(Var v) const { return nodes_.at(v.id).needs_grad; }

  /// Accumulated gradient; zeros when nothing flowed into the node.
  std::vector<double> grad(Var v) const {
    const auto& n = nodes_.at(v.id);
    if (n.grad.empty()) return std::vector<double>(n.value.size(), 0.0);
    return n.grad;
  }

  /// Mutable gradient storage, allocated on first use.
  std::span<double> grad_buffer(Var v) {
    auto& n = nodes_[v.id];
    if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
    return n.grad;
  }
  std::span<double> grad_buffer(std::size_t id) { return grad_buffer(Var{id}); }
  std::span<const double> value(std::size_t id) const { return nodes_[id].value; }

  Var push(std::vector<double> value, std::size_t rows, std::size_t cols, bool needs_grad,
           Backward backward) {
    Node n;
    n.value = std::move(value);
    n.rows = rows;
    n.cols = cols;
    n.needs_grad = needs_grad && recording_;
    if (n.needs_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  /// Seeds d(loss)/d(loss) = 1 and propagates to every recorded node.
  void backward(Var loss) {
    expects(recording_, "Tape::backward on a non-recording tape");
    expects(size(loss) == 1, "Tape::backward requires a scalar loss");
    if (!std::isfinite(scalar(loss))) throw DivergenceError("non-finite loss");
    if (!needs_grad(loss)) return;
    grad_buffer(loss)[0] += 1.0;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (n.backward && !n.grad.empty()) n.backward(*this, i);
    }
  }

 private:
  struct Node {
    std::vector<double> value;
    std::vector<double> grad;
    std::size_t rows = 0;
    std::size_t cols = 1;
    bool needs_grad = false;
    Backward backward;
  };

  bool recording_;
  std::vector<Node> nodes_;
};

namespace detail {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstVectorMap = Eigen::Map<const Eigen::VectorXd>;
using VectorMap = Eigen::Map<Eigen::VectorXd>;

inline ConstVectorMap vec(std::span<const double> s) {
  return ConstVectorMap(s.data(), static_cast<Eigen::Index>(s.size()));
}
inline VectorMap vec(std::span<double> s) {
  return VectorMap(s.data(), static_cast<Eigen::Index>(s.size()));
}

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline void same_size(const Tape& t, Var a, Var b, const char* op) {
  expects(t.size(a) == t.size(b), std::string(op) + ": size mismatch");
}

}  // namespace detail

inline Var add(Tape& t, Var a, Var b) {
  detail::same_size(t, a, b, "add");
  auto va = t.value(a);
  auto vb = t.value(b);
  std::vector<double> out(va.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] + vb[i];
  return t.push(std::move(out), t.rows(a), t.cols(a), t.needs_grad(a) || t.needs_grad(b),
                [a, b](Tape& tp, std::size_t self) {
                  std::span<const double> g = tp.grad_buffer(self);
                  if (tp.needs_grad(a)) detail::vec(tp.grad_buffer(a)) += detail::vec(g);
                  if (tp.needs_grad(b)) detail::vec(tp.grad_buffer(b)) += detail::vec(g);
                });
}

inline Var sub(Tape& t, Var a, Var b) {
  detail::same_size(t, a, b, "sub");
  auto va = t.value(a);
  auto vb = t.value(b);
  std::vector<double> out(va.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] - vb[i];
  return t.push(std::move(out), t.rows(a), t.cols(a), t.needs_grad(a) || t.needs_grad(b),
                [a, b](Tape& tp, std::size_t self) {
                  std::span<const double> g = tp.grad_buffer(self);
                  if (tp.needs_grad(a)) detail::vec(tp.grad_buffer(a)) += detail::vec(g);
                  if (tp.needs_grad(b)) detail::vec(tp.grad_buffer(b)) -= detail::vec(g);
                });
}

/// Elementwise product.
inline Var mul(Tape& t, Var a, Var b) {
  detail::same_size(t, a, b, "mul");
  auto va = t.value(a);
  auto vb = t.value(b);
  std::vector<double> out(va.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] * vb[i];
  return t.push(std::move(out), t.rows(a), t.cols(a), t.needs_grad(a) || t.needs_grad(b),
                [a, b](Tape& tp, std::size_t self) {
                  auto g = tp.grad_buffer(self);
                  auto va = tp.value(a);
                  auto vb = tp.value(b);
                  if (tp.needs_grad(a)) {
                    auto ga = tp.grad_buffer(a);
                    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * vb[i];
                  }
                  if (tp.needs_grad(b)) {
                    auto gb = tp.grad_buffer(b);
                    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[i] * va[i];
                  }
                });
}

inline Var scale(Tape& t, Var a, double s) {
  auto va = t.value(a);
  std::vector<double> out(va.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = s * va[i];
  return t.push(std::move(out), t.rows(a), t.cols(a), t.needs_grad(a),
                [a, s](Tape& tp, std::size_t self) {
                  auto g = tp.grad_buffer(self);
                  auto ga = tp.grad_buffer(a);
                  for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += s * g[i];
                });
}

inline Var tanh(Tape& t, Var a) {
  auto va = t.value(a);
  std::vector<double> out(va.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(va[i]);
  return t.push(std::move(out), t.rows(a), t.cols(a), t.needs_grad(a),
                [a](Tape& tp, std::size_t self) {
                  auto g = tp.grad_buffer(self);
                  auto y = tp.value(self);
                  auto ga = tp.grad_buffer(a);
                  for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
                });
}

inline Var sigmoid(Tape& t, Var a) {
  auto va = t.value(a);
  std::vector<double> out(va.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = detail::sigmoid(va[i]);
  return t.push(std::move(out), t.rows(a), t.cols(a), t.needs_grad(a),
                [a](Tape& tp, std::size_t self) {
                  auto g = tp.grad_buffer(self);
                  auto y = tp.value(self);
                  auto ga = tp.grad_buffer(a);
                  for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
                });
}

inline Var concat(Tape& t, std::span<const Var> parts) {
  std::vector<double> out;
  bool needs = false;
  for (Var p : parts) {
    auto v = t.value(p);
    out.insert(out.end(), v.begin(), v.end());
    needs = needs || t.needs_grad(p);
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  const std::size_t n = out.size();
  return t.push(std::move(out), n, 1, needs, [inputs](Tape& tp, std::size_t self) {
    auto g = tp.grad_buffer(self);
    std::size_t off = 0;
    for (Var p : inputs) {
      const std::size_t len = tp.size(p);
      if (tp.needs_grad(p)) {
        auto gp = tp.grad_buffer(p);
        for (std::size_t i = 0; i < len; ++i) gp[i] += g[off + i];
      }
      off += len;
    }
  });
}

inline Var concat(Tape& t, std::initializer_list<Var> parts) {
  return concat(t, std::span<const Var>(parts.begin(), parts.size()));
}

inline Var slice(Tape& t, Var a, std::size_t offset, std::size_t length) {
  auto va = t.value(a);
  expects(offset + length <= va.size(), "slice: out of range");
  std::vector<double> out(va.begin() + static_cast<std::ptrdiff_t>(offset),
                          va.begin() + static_cast<std::ptrdiff_t>(offset + length));
  return t.push(std::move(out), length, 1, t.needs_grad(a),
                [a, offset](Tape& tp, std::size_t self) {
                  auto g = tp.grad_buffer(self);
                  auto ga = tp.grad_buffer(a);
                  for (std::size_t i = 0; i < g.size(); ++i) ga[offset + i] += g[i];
                });
}

inline Var sum(Tape& t, Var a) {
  double s = 0.0;
  for (double v : t.value(a)) s += v;
  return t.push({s}, 1, 1, t.needs_grad(a), [a](Tape& tp, std::size_t self) {
    const double g = tp.grad_buffer(self)[0];
    for (double& x : tp.grad_buffer(a)) x += g;
  });
}

inline Var mean(Tape& t, Var a) {
  const double n = static_cast<double>(t.size(a));
  return scale(t, sum(t, a), 1.0 / n);
}

/// Mean of |a_i|; the subgradient at 0 is taken as 0.
inline Var mean_abs(Tape& t, Var a) {
  auto va = t.value(a);
  double s = 0.0;
  for (double v : va) s += std::fabs(v);
  const double n = static_cast<double>(va.size());
  return t.push({s / n}, 1, 1, t.needs_grad(a), [a, n](Tape& tp, std::size_t self) {
    const double g = tp.grad_buffer(self)[0] / n;
    auto va = tp.value(a);
    auto ga = tp.grad_buffer(a);
    for (std::size_t i = 0; i < ga.size(); ++i) {
      ga[i] += va[i] > 0 ? g : (va[i] < 0 ? -g : 0.0);
    }
  });
}

inline Var sum_squares(Tape& t, Var a) {
  double s = 0.0;
  for (double v : t.value(a)) s += v * v;
  return t.push({s}, 1, 1, t.needs_grad(a), [a](Tape& tp, std::size_t self) {
    const double g = tp.grad_buffer(self)[0];
    auto va = tp.value(a);
    auto ga = tp.grad_buffer(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += 2.0 * g * va[i];
  });
}

inline Var dot(Tape& t, Var a, Var b) {
  detail::same_size(t, a, b, "dot");
  const double s = detail::vec(t.value(a)).dot(detail::vec(t.value(b)));
  return t.push({s}, 1, 1, t.needs_grad(a) || t.needs_grad(b), [a, b](Tape& tp, std::size_t self) {
    const double g = tp.grad_buffer(self)[0];
    if (tp.needs_grad(a)) detail::vec(tp.grad_buffer(a)) += g * detail::vec(tp.value(b));
    if (tp.needs_grad(b)) detail::vec(tp.grad_buffer(b)) += g * detail::vec(tp.value(a));
  });
}

/// Sum of equally sized nodes.
inline Var add_all(Tape& t, std::span<const Var> terms) {
  expects(!terms.empty(), "add_all: no terms");
  std::vector<double> out(t.size(terms[0]), 0.0);
  bool needs = false;
  for (Var v : terms) {
    expects(t.size(v) == out.size(), "add_all: size mismatch");
    auto vv = t.value(v);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += vv[i];
    needs = needs || t.needs_grad(v);
  }
  std::vector<Var> inputs(terms.begin(), terms.end());
  const std::size_t n = out.size();
  return t.push(std::move(out), n, 1, needs, [inputs](Tape& tp, std::size_t self) {
    std::vector<double> g(tp.grad_buffer(self).begin(), tp.grad_buffer(self).end());
    for (Var v : inputs) {
      if (!tp.needs_grad(v)) continue;
      auto gv = tp.grad_buffer(v);
      for (std::size_t i = 0; i < gv.size(); ++i) gv[i] += g[i];
    }
  });
}

/// y = W x + b with W stored row-major as rows(W) x cols(W).
inline Var affine(Tape& t, Var w, Var x, Var b) {
  const std::size_t r = t.rows(w);
  const std::size_t c = t.size(w) / r;
  expects(t.size(x) == c, "affine: input size does not match weight columns");
  expects(t.size(b) == r, "affine: bias size does not match weight rows");
  std::vector<double> out(r);
  detail::VectorMap(out.data(), static_cast<Eigen::Index>(r)) =
      detail::ConstMatrixMap(t.value(w).data(), static_cast<Eigen::Index>(r),
                             static_cast<Eigen::Index>(c)) *
          detail::vec(t.value(x)) +
      detail::vec(t.value(b));
  const bool needs = t.needs_grad(w) || t.needs_grad(x) || t.needs_grad(b);
  return t.push(std::move(out), r, 1, needs, [w, x, b, r, c](Tape& tp, std::size_t self) {
    std::span<const double> g = tp.grad_buffer(self);
    auto gv = detail::vec(g);
    const auto R = static_cast<Eigen::Index>(r);
    const auto C = static_cast<Eigen::Index>(c);
    if (tp.needs_grad(w)) {
      detail::MatrixMap(tp.grad_buffer(w).data(), R, C).noalias() +=
          gv * detail::vec(tp.value(x)).transpose();
    }
    if (tp.needs_grad(x)) {
      detail::vec(tp.grad_buffer(x)).noalias() +=
          detail::ConstMatrixMap(tp.value(w).data(), R, C).transpose() * gv;
    }
    if (tp.needs_grad(b)) detail::vec(tp.grad_buffer(b)) += gv;
  });
}

/// Softmax with max subtraction.
inline Var softmax(Tape& t, Var a) {
  auto va = t.value(a);
  expects(!va.empty(), "softmax: empty input");
  const double m = *std::max_element(va.begin(), va.end());
  std::vector<double> out(va.size());
  double z = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = std::exp(va[i] - m);
    z += out[i];
  }
  for (double& v : out) v /= z;
  const std::size_t n = out.size();
  return t.push(std::move(out), n, 1, t.needs_grad(a), [a](Tape& tp, std::size_t self) {
    auto g = tp.grad_buffer(self);
    auto y = tp.value(self);
    double gy = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) gy += g[i] * y[i];
    auto ga = tp.grad_buffer(a);
    for (std::size_t i = 0; i < y.size(); ++i) ga[i] += y[i] * (g[i] - gy);
  });
}

/// sum_i weights[i] * items[i], weights a tape node of length items.size().
inline Var weighted_sum(Tape& t, std::span<const Var> items, Var weights) {
  expects(!items.empty(), "weighted_sum: no items");
  expects(t.size(weights) == items.size(), "weighted_sum: weight count mismatch");
  const std::size_t d = t.size(items[0]);
  std::vector<double> out(d, 0.0);
  auto w = t.value(weights);
  bool needs = t.needs_grad(weights);
  for (std::size_t j = 0; j < items.size(); ++j) {
    expects(t.size(items[j]) == d, "weighted_sum: item size mismatch");
    auto v = t.value(items[j]);
    for (std::size_t i = 0; i < d; ++i) out[i] += w[j] * v[i];
    needs = needs || t.needs_grad(items[j]);
  }
  std::vector<Var> inputs(items.begin(), items.end());
  return t.push(std::move(out), d, 1, needs, [inputs, weights](Tape& tp, std::size_t self) {
    std::span<const double> g = tp.grad_buffer(self);
    auto w = tp.value(weights);
    const bool wg = tp.needs_grad(weights);
    for (std::size_t j = 0; j < inputs.size(); ++j) {
      if (wg) tp.grad_buffer(weights)[j] += detail::vec(g).dot(detail::vec(tp.value(inputs[j])));
      if (tp.needs_grad(inputs[j])) detail::vec(tp.grad_buffer(inputs[j])) += w[j] * detail::vec(g);
    }
  });
}

/// sum_i weights[i] * items[i] with constant weights.
inline Var weighted_sum(Tape& t, std::span<const Var> items, std::span<const double> weights) {
  expects(weights.size() == items.size(), "weighted_sum: weight count mismatch");
  std::vector<double> w(weights.begin(), weights.end());
  return weighted_sum(t, items, t.constant(std::move(w)));
}

/// Additive scoring e_j = v . tanh(q + k_j) + c for every key k_j.
inline Var additive_scores(Tape& t, Var q, std::span<const Var> keys, Var v, Var c) {
  const std::size_t a = t.size(q);
  expects(t.size(v) == a, "additive_scores: v size mismatch");
  expects(t.size(c) == 1, "additive_scores: c must be scalar");
  const std::size_t n = keys.size();
  std::vector<double> act(n * a);
  std::vector<double> out(n);
  auto vq = t.value(q);
  auto vv = t.value(v);
  const double vc = t.value(c)[0];
  bool needs = t.needs_grad(q) || t.needs_grad(v) || t.needs_grad(c);
  for (std::size_t j = 0; j < n; ++j) {
    expects(t.size(keys[j]) == a, "additive_scores: key size mismatch");
    auto k = t.value(keys[j]);
    double e = vc;
    for (std::size_t i = 0; i < a; ++i) {
      const double h = std::tanh(vq[i] + k[i]);
      act[j * a + i] = h;
      e += vv[i] * h;
    }
    out[j] = e;
    needs = needs || t.needs_grad(keys[j]);
  }
  std::vector<Var> key_vars(keys.begin(), keys.end());
  return t.push(std::move(out), n, 1, needs,
                [q, key_vars, v, c, a, act = std::move(act)](Tape& tp, std::size_t self) {
                  std::vector<double> g(tp.grad_buffer(self).begin(), tp.grad_buffer(self).end());
                  auto vv = tp.value(v);
                  std::vector<double> dq(a, 0.0);
                  std::vector<double> dv(a, 0.0);
                  double dc = 0.0;
                  std::vector<double> dpre(a);
                  for (std::size_t j = 0; j < key_vars.size(); ++j) {
                    dc += g[j];
                    for (std::size_t i = 0; i < a; ++i) {
                      const double h = act[j * a + i];
                      dv[i] += g[j] * h;
                      dpre[i] = g[j] * vv[i] * (1.0 - h * h);
                      dq[i] += dpre[i];
                    }
                    if (tp.needs_grad(key_vars[j])) {
                      auto gk = tp.grad_buffer(key_vars[j]);
                      for (std::size_t i = 0; i < a; ++i) gk[i] += dpre[i];
                    }
                  }
                  if (tp.needs_grad(q)) {
                    auto gq = tp.grad_buffer(q);
                    for (std::size_t i = 0; i < a; ++i) gq[i] += dq[i];
                  }
                  if (tp.needs_grad(v)) {
                    auto gv = tp.grad_buffer(v);
                    for (std::size_t i = 0; i < a; ++i) gv[i] += dv[i];
                  }
                  if (tp.needs_grad(c)) tp.grad_buffer(c)[0] += dc;
                });
}

/// Binary cross-entropy of sigmoid(logit) against a 0/1 target, computed from
/// the logit for stability: max(l, 0) - l*y + log(1 + exp(-|l|)).
inline Var bce_with_logits(Tape& t, Var logit, double target) {
  expects(t.size(logit) == 1, "bce_with_logits: scalar logit expected");
  const double l = t.value(logit)[0];
  const double loss = std::max(l, 0.0) - l * target + std::log1p(std::exp(-std::fabs(l)));
  return t.push({loss}, 1, 1, t.needs_grad(logit), [logit, target](Tape& tp, std::size_t self) {
    const double g = tp.grad_buffer(self)[0];
    const double p = detail::sigmoid(tp.value(logit)[0]);
    tp.grad_buffer(logit)[0] += g * (p - target);
  });
}

// ---------------------------------------------------------------------------
// Gated recurrent cell. Gate rows are stacked as [input, forget, output, cell].

namespace detail {

/// Forward kernel shared by the tape op and the plain evaluator.
/// `gates` receives the activated gate values (4 * hidden).
inline void lstm_forward(std::span<const double> wx, std::span<const double> wh,
                         std::span<const double> b, std::size_t input_size, std::size_t hidden,
                         std::span<const double> x, std::span<const double> h,
                         std::span<const double> c, std::span<double> gates,
                         std::span<double> h_out, std::span<double> c_out) {
  const auto H4 = static_cast<Eigen::Index>(4 * hidden);
  Eigen::VectorXd z = ConstMatrixMap(wx.data(), H4, static_cast<Eigen::Index>(input_size)) * vec(x);
  z.noalias() += ConstMatrixMap(wh.data(), H4, static_cast<Eigen::Index>(hidden)) * vec(h);
  z += vec(b);
  for (std::size_t k = 0; k < hidden; ++k) {
    const double ig = sigmoid(z[static_cast<Eigen::Index>(k)]);
    const double fg = sigmoid(z[static_cast<Eigen::Index>(hidden + k)]);
    const double og = sigmoid(z[static_cast<Eigen::Index>(2 * hidden + k)]);
    const double gg = std::tanh(z[static_cast<Eigen::Index>(3 * hidden + k)]);
    gates[k] = ig;
    gates[hidden + k] = fg;
    gates[2 * hidden + k] = og;
    gates[3 * hidden + k] = gg;
    c_out[k] = fg * c[k] + ig * gg;
    h_out[k] = og * std::tanh(c_out[k]);
  }
}

}  // namespace detail

struct LstmState {
  Var h;
  Var c;
};

/// One recurrent step. Weights: wx (4H x in), wh (4H x H), b (4H).
inline LstmState lstm_cell(Tape& t, Var x, LstmState state, Var wx, Var wh, Var b) {
  const std::size_t hidden = t.size(state.h);
  const std::size_t in = t.size(x);
  expects(t.size(state.c) == hidden, "lstm_cell: cell state size mismatch");
  expects(t.size(wx) == 4 * hidden * in, "lstm_cell: input weight shape mismatch");
  expects(t.size(wh) == 4 * hidden * hidden, "lstm_cell: recurrent weight shape mismatch");
  expects(t.size(b) == 4 * hidden, "lstm_cell: bias shape mismatch");

  std::vector<double> gates(4 * hidden);
  std::vector<double> out(2 * hidden);
  detail::lstm_forward(t.value(wx), t.value(wh), t.value(b), in, hidden, t.value(x),
                       t.value(state.h), t.value(state.c), gates,
                       std::span<double>(out.data(), hidden),
                       std::span<double>(out.data() + hidden, hidden));
  const Var h = state.h;
  const Var c = state.c;
  const bool needs = t.needs_grad(x) || t.needs_grad(h) || t.needs_grad(c) || t.needs_grad(wx) ||
                     t.needs_grad(wh) || t.needs_grad(b);
  Var joint = t.push(
      std::move(out), 2 * hidden, 1, needs,
      [x, h, c, wx, wh, b, hidden, in, gates = std::move(gates)](Tape& tp, std::size_t self) {
        std::vector<double> g(tp.grad_buffer(self).begin(), tp.grad_buffer(self).end());
        auto y = tp.value(self);
        auto c_prev = tp.value(c);
        Eigen::VectorXd dz(static_cast<Eigen::Index>(4 * hidden));
        std::vector<double> dc_prev(hidden);
        for (std::size_t k = 0; k < hidden; ++k) {
          const double ig = gates[k], fg = gates[hidden + k], og = gates[2 * hidden + k],
                       gg = gates[3 * hidden + k];
          const double tc = std::tanh(y[hidden + k]);
          const double dh = g[k];
          const double dc = g[hidden + k] + dh * og * (1.0 - tc * tc);
          const double d_o = dh * tc;
          dz[static_cast<Eigen::Index>(k)] = dc * gg * ig * (1.0 - ig);
          dz[static_cast<Eigen::Index>(hidden + k)] = dc * c_prev[k] * fg * (1.0 - fg);
          dz[static_cast<Eigen::Index>(2 * hidden + k)] = d_o * og * (1.0 - og);
          dz[static_cast<Eigen::Index>(3 * hidden + k)] = dc * ig * (1.0 - gg * gg);
          dc_prev[k] = dc * fg;
        }
        const auto H4 = static_cast<Eigen::Index>(4 * hidden);
        const auto H = static_cast<Eigen::Index>(hidden);
        const auto I = static_cast<Eigen::Index>(in);
        if (tp.needs_grad(wx)) {
          detail::MatrixMap(tp.grad_buffer(wx).data(), H4, I).noalias() +=
              dz * detail::vec(tp.value(x)).transpose();
        }
        if (tp.needs_grad(wh)) {
          detail::MatrixMap(tp.grad_buffer(wh).data(), H4, H).noalias() +=
              dz * detail::vec(tp.value(h)).transpose();
        }
        if (tp.needs_grad(b)) detail::vec(tp.grad_buffer(b)) += dz;
        if (tp.needs_grad(x)) {
          detail::vec(tp.grad_buffer(x)).noalias() +=
              detail::ConstMatrixMap(tp.value(wx).data(), H4, I).transpose() * dz;
        }
        if (tp.needs_grad(h)) {
          detail::vec(tp.grad_buffer(h)).noalias() +=
              detail::ConstMatrixMap(tp.value(wh).data(), H4, H).transpose() * dz;
        }
        if (tp.needs_grad(c)) {
          auto gc = tp.grad_buffer(c);
          for (std::size_t k = 0; k < hidden; ++k) gc[k] += dc_prev[k];
        }
      });
  return {slice(t, joint, 0, hidden), slice(t, joint, hidden, hidden)};
}

}  // namespace groupcast::nn
