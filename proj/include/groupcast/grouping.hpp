#pragma once

// Group detection: generator activations per pedestrian, exact t-SNE to two
// dimensions, then DBSCAN. Also a PCA projection for inspecting embeddings.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <queue>
#include <random>
#include <vector>

#include "groupcast/data_model.hpp"
#include "groupcast/error.hpp"
#include "groupcast/gan.hpp"
#include "groupcast/parallel.hpp"

namespace groupcast {

/// One row per point.
using PointMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct EmbeddingSet {
  std::vector<PedId> ped_ids;
  /// Row i is theta for ped_ids[i].
  PointMatrix theta;
  /// Pedestrians with no complete window.
  std::vector<PedId> excluded;
};

/// Theta for every pedestrian from its earliest window: generator hidden
/// states over the observed steps with zero noise, flattened in time order.
inline EmbeddingSet extract_embeddings(const Scene& scene, const Model& model,
                                       std::size_t threads = 1) {
  const WindowParams params{model.config.t_obs, model.config.t_pred, model.config.t_obs};
  const auto windows = make_windows(scene, params);
  std::map<PedId, const Window*> first;
  for (const auto& w : windows) {
    auto it = first.find(w.ped_id);
    if (it == first.end() || w.start_frame < it->second->start_frame) first[w.ped_id] = &w;
  }
  EmbeddingSet out;
  for (const auto& tr : scene.trajectories) {
    if (!first.count(tr.ped_id)) out.excluded.push_back(tr.ped_id);
  }
  std::sort(out.excluded.begin(), out.excluded.end());
  for (const auto& [id, w] : first) out.ped_ids.push_back(id);

  const std::size_t dim = model.config.t_obs * model.config.generator_hidden;
  out.theta = PointMatrix::Zero(static_cast<Eigen::Index>(out.ped_ids.size()),
                                static_cast<Eigen::Index>(dim));
  const auto zero_noise = NoiseSource::zeros(model.config.horizon(), model.config.z_dim);
  parallel_for(out.ped_ids.size(), threads, [&](std::size_t i) {
    const auto theta = generate(*first.at(out.ped_ids[i]), model, zero_noise).theta();
    for (std::size_t j = 0; j < dim; ++j) out.theta(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = theta[j];
  });
  return out;
}

// ---------------------------------------------------------------------------
// t-SNE

struct TsneConfig {
  /// Upper bound; shrunk to floor((N-1)/3) (at least 1) for small N.
  double perplexity = 5.0;
  std::size_t iterations = 500;
  double learning_rate = 10.0;
  double early_exaggeration = 4.0;
  std::size_t early_exaggeration_iters = 100;
  std::uint64_t seed = 1;
};

struct TsneResult {
  PointMatrix embedding;
  double perplexity = 0.0;
  double initial_kl = 0.0;
  double final_kl = 0.0;
};

inline double effective_perplexity(double requested, std::size_t n) {
  const double cap = std::max(1.0, std::floor((static_cast<double>(n) - 1.0) / 3.0));
  return std::min(requested, cap);
}

namespace detail {

inline PointMatrix squared_distances(const PointMatrix& x) {
  const Eigen::Index n = x.rows();
  PointMatrix d(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    d(i, i) = 0.0;
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double s = (x.row(i) - x.row(j)).squaredNorm();
      d(i, j) = s;
      d(j, i) = s;
    }
  }
  return d;
}

/// Conditional affinities p_{j|i} with each row's Gaussian precision found
/// by bisection so that the row entropy equals log(perplexity).
inline PointMatrix conditional_affinities(const PointMatrix& dist2, double perplexity) {
  const Eigen::Index n = dist2.rows();
  const double target = std::log(perplexity);
  PointMatrix p = PointMatrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double beta = 1.0, lo = 0.0, hi = std::numeric_limits<double>::infinity();
    double dmin = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j != i) dmin = std::min(dmin, dist2(i, j));
    }
    for (int iter = 0; iter < 200; ++iter) {
      double sum = 0.0, weighted = 0.0;
      for (Eigen::Index j = 0; j < n; ++j) {
        if (j == i) continue;
        const double e = std::exp(-beta * (dist2(i, j) - dmin));
        p(i, j) = e;
        sum += e;
        weighted += e * (dist2(i, j) - dmin);
      }
      const double entropy = std::log(sum) + beta * weighted / sum;
      for (Eigen::Index j = 0; j < n; ++j) p(i, j) /= sum;
      const double diff = entropy - target;
      if (std::abs(diff) < 1e-5) break;
      if (diff > 0) {
        lo = beta;
        beta = std::isinf(hi) ? beta * 2.0 : 0.5 * (beta + hi);
      } else {
        hi = beta;
        beta = 0.5 * (beta + lo);
      }
    }
  }
  return p;
}

/// Student-t kernel numerators and their total.
inline double student_kernel(const PointMatrix& y, PointMatrix& num) {
  const Eigen::Index n = y.rows();
  num.resize(n, n);
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    num(i, i) = 0.0;
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double v = 1.0 / (1.0 + (y.row(i) - y.row(j)).squaredNorm());
      num(i, j) = v;
      num(j, i) = v;
      total += 2.0 * v;
    }
  }
  return total;
}

inline double kl_divergence(const PointMatrix& p, const PointMatrix& y) {
  PointMatrix num;
  const double total = student_kernel(y, num);
  double kl = 0.0;
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    for (Eigen::Index j = 0; j < p.cols(); ++j) {
      if (i == j || p(i, j) <= 0.0) continue;
      const double q = std::max(num(i, j) / total, 1e-300);
      kl += p(i, j) * std::log(p(i, j) / q);
    }
  }
  return kl;
}

/// Centres the rows and scales them to unit root-mean-square norm.
inline void normalize_rms(PointMatrix& y) {
  if (y.rows() == 0) return;
  const Eigen::RowVectorXd mean = y.colwise().mean();
  y.rowwise() -= mean;
  const double rms = std::sqrt(y.squaredNorm() / static_cast<double>(y.rows()));
  if (rms > 0.0) y /= rms;
}

}  // namespace detail

/// Exact t-SNE to two dimensions. The output is centred with unit RMS radius.
inline TsneResult tsne_reduce(const PointMatrix& x, const TsneConfig& config = {}) {
  const Eigen::Index n = x.rows();
  expects(n >= 2, "tsne_reduce: need at least 2 points");
  expects(x.cols() >= 1, "tsne_reduce: need at least 1 dimension");
  expects(config.iterations >= 1, "tsne_reduce: iterations must be >= 1");
  expects(config.perplexity > 0.0, "tsne_reduce: perplexity must be positive");

  TsneResult r;
  r.perplexity = effective_perplexity(config.perplexity, static_cast<std::size_t>(n));
  PointMatrix p = detail::conditional_affinities(detail::squared_distances(x), r.perplexity);
  p = (p + p.transpose()).eval() / (2.0 * static_cast<double>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i != j) p(i, j) = std::max(p(i, j), 1e-12);
    }
  }

  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> normal(0.0, 1e-4);
  PointMatrix y(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    y(i, 0) = normal(rng);
    y(i, 1) = normal(rng);
  }
  r.initial_kl = detail::kl_divergence(p, y);

  PointMatrix update = PointMatrix::Zero(n, 2);
  PointMatrix gains = PointMatrix::Ones(n, 2);
  PointMatrix grad(n, 2), num;
  for (std::size_t iter = 0; iter < config.iterations; ++iter) {
    const bool early = iter < config.early_exaggeration_iters;
    const double exaggeration = early ? config.early_exaggeration : 1.0;
    const double momentum = early ? 0.5 : 0.8;
    const double total = detail::student_kernel(y, num);
    grad.setZero();
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) {
        if (i == j) continue;
        const double m = (exaggeration * p(i, j) - num(i, j) / total) * num(i, j);
        grad.row(i) += 4.0 * m * (y.row(i) - y.row(j));
      }
    }
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index k = 0; k < 2; ++k) {
        const bool same_sign = (grad(i, k) > 0) == (update(i, k) > 0);
        gains(i, k) = std::max(same_sign ? gains(i, k) * 0.8 : gains(i, k) + 0.2, 0.01);
        update(i, k) = momentum * update(i, k) - config.learning_rate * gains(i, k) * grad(i, k);
        y(i, k) += update(i, k);
      }
    }
    const Eigen::RowVectorXd mean = y.colwise().mean();
    y.rowwise() -= mean;
  }
  r.final_kl = detail::kl_divergence(p, y);
  detail::normalize_rms(y);
  r.embedding = std::move(y);
  return r;
}

// ---------------------------------------------------------------------------
// DBSCAN

struct DbscanConfig {
  double epsilon = 0.5;
  std::size_t min_pts = 1;
};

constexpr int kNoise = -1;

/// Density clustering with inclusive epsilon balls (a point counts itself).
/// Core points reachable from one another form a cluster; a border point
/// joins the cluster of its nearest core point (lowest index on ties).
/// Clusters are numbered by their lowest-index core point.
inline std::vector<int> dbscan(const PointMatrix& points, const DbscanConfig& config) {
  expects(config.epsilon > 0.0, "dbscan: epsilon must be positive");
  expects(config.min_pts >= 1, "dbscan: min_pts must be >= 1");
  const Eigen::Index n = points.rows();
  const double eps2 = config.epsilon * config.epsilon;
  std::vector<std::vector<Eigen::Index>> nbrs(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if ((points.row(i) - points.row(j)).squaredNorm() <= eps2) {
        nbrs[static_cast<std::size_t>(i)].push_back(j);
      }
    }
  }
  std::vector<bool> core(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    core[static_cast<std::size_t>(i)] = nbrs[static_cast<std::size_t>(i)].size() >= config.min_pts;
  }

  std::vector<int> labels(static_cast<std::size_t>(n), kNoise);
  int next = 0;
  for (Eigen::Index s = 0; s < n; ++s) {
    if (!core[static_cast<std::size_t>(s)] || labels[static_cast<std::size_t>(s)] != kNoise) continue;
    std::queue<Eigen::Index> frontier;
    frontier.push(s);
    labels[static_cast<std::size_t>(s)] = next;
    while (!frontier.empty()) {
      const Eigen::Index i = frontier.front();
      frontier.pop();
      for (Eigen::Index j : nbrs[static_cast<std::size_t>(i)]) {
        if (core[static_cast<std::size_t>(j)] && labels[static_cast<std::size_t>(j)] == kNoise) {
          labels[static_cast<std::size_t>(j)] = next;
          frontier.push(j);
        }
      }
    }
    ++next;
  }

  for (Eigen::Index i = 0; i < n; ++i) {
    if (core[static_cast<std::size_t>(i)]) continue;
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index j : nbrs[static_cast<std::size_t>(i)]) {
      if (!core[static_cast<std::size_t>(j)]) continue;
      const double d = (points.row(i) - points.row(j)).squaredNorm();
      if (d < best) {
        best = d;
        labels[static_cast<std::size_t>(i)] = labels[static_cast<std::size_t>(j)];
      }
    }
  }
  return labels;
}

// ---------------------------------------------------------------------------
// PCA

struct PcaResult {
  PointMatrix projection;
  /// Eigenvalues of the sample covariance, descending.
  Eigen::VectorXd variances;
  /// Columns are the principal axes, in the order of `variances`.
  Eigen::MatrixXd components;
};

/// Projection of mean-centred rows onto the leading principal axes. Each
/// axis is signed so that its largest-magnitude loading is positive.
inline PcaResult pca_project(const PointMatrix& x, std::size_t dims = 2) {
  expects(x.rows() >= 2, "pca_project: need at least 2 points");
  const Eigen::Index d = x.cols();
  const PointMatrix centred = x.rowwise() - x.colwise().mean();
  const Eigen::MatrixXd cov =
      (centred.transpose() * centred) / static_cast<double>(x.rows() - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  const Eigen::VectorXd evals = solver.eigenvalues().reverse();
  Eigen::MatrixXd evecs = solver.eigenvectors().rowwise().reverse();
  for (Eigen::Index k = 0; k < d; ++k) {
    Eigen::Index arg = 0;
    evecs.col(k).cwiseAbs().maxCoeff(&arg);
    if (evecs(arg, k) < 0) evecs.col(k) = -evecs.col(k);
  }
  PcaResult r;
  r.variances = evals;
  r.components = evecs;
  const Eigen::Index keep = std::min<Eigen::Index>(static_cast<Eigen::Index>(dims), d);
  r.projection = PointMatrix::Zero(x.rows(), static_cast<Eigen::Index>(dims));
  r.projection.leftCols(keep) = centred * evecs.leftCols(keep);
  return r;
}

// ---------------------------------------------------------------------------
// Composition

struct GroupDetection {
  Partition partition;
  /// Pedestrians that were embedded, in row order of `eta`.
  std::vector<PedId> ped_ids;
  PointMatrix eta;
  std::vector<int> labels;
  std::vector<PedId> excluded;
  /// False when N <= 3 and clustering ran on RMS-normalized theta directly.
  bool used_tsne = false;
  double initial_kl = 0.0;
  double final_kl = 0.0;
};

/// Labels to a partition; noise points and excluded pedestrians become
/// singletons.
inline Partition labels_to_partition(const std::vector<PedId>& ids, const std::vector<int>& labels,
                                     const std::vector<PedId>& excluded) {
  std::map<int, std::vector<PedId>> clusters;
  std::vector<std::vector<PedId>> groups;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (labels[i] == kNoise) {
      groups.push_back({ids[i]});
    } else {
      clusters[labels[i]].push_back(ids[i]);
    }
  }
  for (auto& [l, members] : clusters) groups.push_back(std::move(members));
  for (PedId p : excluded) groups.push_back({p});
  return Partition::from_groups(Partition::from_groups(groups).groups());
}

inline GroupDetection detect_groups(const Scene& scene, const Model& model,
                                    const TsneConfig& tsne = {}, const DbscanConfig& db = {},
                                    std::size_t threads = 1) {
  const EmbeddingSet emb = extract_embeddings(scene, model, threads);
  expects(!emb.ped_ids.empty(), "detect_groups: no pedestrian has a complete window");
  GroupDetection g;
  g.ped_ids = emb.ped_ids;
  g.excluded = emb.excluded;
  if (emb.ped_ids.size() == 1) {
    g.eta = PointMatrix::Zero(1, 2);
  } else if (emb.ped_ids.size() <= 3) {
    // At most three centred points span a plane, so this keeps all distances.
    PointMatrix theta = emb.theta;
    detail::normalize_rms(theta);
    g.eta = pca_project(theta, 2).projection;
  } else {
    auto r = tsne_reduce(emb.theta, tsne);
    g.eta = std::move(r.embedding);
    g.used_tsne = true;
    g.initial_kl = r.initial_kl;
    g.final_kl = r.final_kl;
  }
  g.labels = dbscan(g.eta, db);
  g.partition = labels_to_partition(g.ped_ids, g.labels, g.excluded);
  return g;
}

}  // namespace groupcast
