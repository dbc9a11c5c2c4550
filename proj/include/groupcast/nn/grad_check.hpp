#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

namespace groupcast::nn {

/// A differentiable function of a flat parameter vector together with its
/// claimed analytic gradient.
struct Fragment {
  std::function<double(std::span<const double>)> loss;
  std::function<std::vector<double>(std::span<const double>)> gradient;
};

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  bool passed = true;
};

struct GradCheckOptions {
  double step = 1e-5;
  /// Denominator floor: |a - n| / max(|a|, |n|, floor). Keeps round-off on
  /// near-zero entries from dominating the report.
  double floor = 1e-6;
};

inline double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::fabs(analytic), std::fabs(numeric), floor});
  return std::fabs(analytic - numeric) / denom;
}

/// Compares the fragment's gradient against central differences at `point`.
inline GradCheckReport grad_check(const Fragment& fragment, std::span<const double> point,
                                  double tolerance, GradCheckOptions options = {}) {
  GradCheckReport report;
  const std::vector<double> analytic = fragment.gradient(point);
  std::vector<double> x(point.begin(), point.end());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + options.step;
    const double up = fragment.loss(x);
    x[i] = orig - options.step;
    const double down = fragment.loss(x);
    x[i] = orig;
    const double numeric = (up - down) / (2.0 * options.step);
    const double err = relative_error(analytic[i], numeric, options.floor);
    if (i == 0 || err > report.max_relative_error) {
      report.max_relative_error = err;
      report.worst_index = i;
      report.worst_analytic = analytic[i];
      report.worst_numeric = numeric;
    }
  }
  report.passed = report.max_relative_error <= tolerance;
  return report;
}

}  // namespace groupcast::nn
