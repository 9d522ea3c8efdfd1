#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "cfm/error.hpp"
#include "cfm/nd.hpp"
#include "cfm/sampler.hpp"
#include "cfm/velocity_net.hpp"

namespace cfm {

struct MetricReport {
  std::string name;
  double value = 0.0;
  std::size_t n = 0;
  std::vector<double> details;
};

inline constexpr std::size_t kMaxAssignmentSize = 1024;

/// Minimum-cost perfect matching on a square cost matrix by shortest
/// augmenting paths with potentials, O(n^3). Returns assignment[row] = col.
inline std::vector<std::size_t> solve_assignment(const NumArray& cost) {
  const std::size_t n = cost.rows();
  if (cost.rank() != 2 || cost.cols() != n) throw ShapeError("solve_assignment: cost matrix must be square");
  const double inf = std::numeric_limits<double>::infinity();
  // 1-based bookkeeping; column 0 is the virtual source.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), min_slack(n + 1);
  std::vector<std::size_t> match_col(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (std::size_t i = 1; i <= n; ++i) {
    match_col[0] = i;
    std::size_t j0 = 0;
    std::fill(min_slack.begin(), min_slack.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = match_col[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < min_slack[j]) {
          min_slack[j] = cur;
          way[j] = j0;
        }
        if (min_slack[j] < delta) {
          delta = min_slack[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match_col[j]] += delta;
          v[j] -= delta;
        } else {
          min_slack[j] -= delta;
        }
      }
      j0 = j1;
    } while (match_col[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      match_col[j0] = match_col[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> assignment(n);
  for (std::size_t j = 1; j <= n; ++j) assignment[match_col[j] - 1] = j - 1;
  return assignment;
}

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t c = 0; c < a.size(); ++c) s += (a[c] - b[c]) * (a[c] - b[c]);
  return s;
}

/// Exact 2-Wasserstein distance between equal-size point sets:
/// sqrt(min over perfect matchings of the mean squared distance).
inline double wasserstein2_exact(const NumArray& a, const NumArray& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError("wasserstein2_exact: point sets must have equal size and dimension");
  }
  const std::size_t n = a.rows();
  if (n == 0) throw DomainError("wasserstein2_exact: empty point sets");
  if (n > kMaxAssignmentSize) throw DomainError("wasserstein2_exact: at most 1024 points supported");
  NumArray cost = NumArray::matrix(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) cost(i, j) = squared_distance(a.row(i), b.row(j));
  }
  const auto match = solve_assignment(cost);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) total += cost(i, match[i]);
  return std::sqrt(total / static_cast<double>(n));
}

enum class EnergyEstimator { kUnbiased, kVStatistic };

/// 2 E|a - b| - E|a - a'| - E|b - b'|. The unbiased form excludes i == j
/// pairs within a set; the V-statistic form includes them.
inline double energy_distance(const NumArray& a, const NumArray& b,
                              EnergyEstimator estimator = EnergyEstimator::kUnbiased) {
  if (a.rows() == 0 || b.rows() == 0) throw DomainError("energy_distance: point sets must be non-empty");
  if (a.cols() != b.cols()) throw ShapeError("energy_distance: dimension mismatch");
  auto mean_pairwise = [&](const NumArray& p, const NumArray& q, bool same) {
    double s = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < p.rows(); ++i) {
      for (std::size_t j = 0; j < q.rows(); ++j) {
        if (same && i == j && estimator == EnergyEstimator::kUnbiased) continue;
        s += std::sqrt(squared_distance(p.row(i), q.row(j)));
        ++count;
      }
    }
    return count ? s / static_cast<double>(count) : 0.0;
  };
  return 2.0 * mean_pairwise(a, b, false) - mean_pairwise(a, a, true) - mean_pairwise(b, b, true);
}

/// Mean over interior grid points of |x(t_j) - chord(s_j)|^2 / |x(1) - x(0)|^2,
/// where chord(s) = x(0) + s (x(1) - x(0)) and s_j is the time fraction of t_j.
/// Averaged over every row of the trajectory batch.
inline double straightness(const Trajectory& traj) {
  if (traj.size() < 3) throw DomainError("straightness: need at least three grid points");
  if (traj.states.size() != traj.times.size()) throw ShapeError("straightness: times and states differ in length");
  const double t0 = traj.times.front();
  const double span = traj.times.back() - t0;
  const NumArray& first = traj.states.front();
  const NumArray& last = traj.states.back();
  const std::size_t rows = first.rows(), d = first.cols();
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const double chord2 = squared_distance(first.row(r), last.row(r));
    double dev = 0.0;
    for (std::size_t j = 1; j + 1 < traj.size(); ++j) {
      const double s = (traj.times[j] - t0) / span;
      for (std::size_t c = 0; c < d; ++c) {
        const double on_chord = first(r, c) + s * (last(r, c) - first(r, c));
        const double e = traj.states[j](r, c) - on_chord;
        dev += e * e;
      }
    }
    dev /= static_cast<double>(traj.size() - 2);
    if (chord2 == 0.0) {
      if (dev == 0.0) continue;
      throw DomainError("straightness: zero-length chord with a non-stationary trajectory");
    }
    total += dev / chord2;
  }
  return total / static_cast<double>(rows);
}

/// Mean of |v(t + h, x + h v(t, x)) - v(t, x)|^2 / h^2 over probes: a forward
/// difference estimate of |d_t v + v . grad_x v|^2 along the field's own flow.
template <BatchField F>
double consistency_residual(const F& field, std::span<const double> t, const NumArray& x, double h) {
  if (!(h > 0.0)) throw DomainError("consistency_residual: step must be positive");
  if (t.size() != x.rows()) throw ShapeError("consistency_residual: one time per probe");
  if (t.empty()) throw DomainError("consistency_residual: no probes");
  std::vector<double> t_next(t.size());
  for (std::size_t r = 0; r < t.size(); ++r) {
    if (!(t[r] >= 0.0 && t[r] + h <= 1.0)) throw DomainError("consistency_residual: probe outside time domain");
    t_next[r] = t[r] + h;
  }
  const NumArray v = field(t, x);
  NumArray x_next = x;
  for (std::size_t i = 0; i < x.size(); ++i) x_next.data[i] += h * v.data[i];
  const NumArray v_next = field(std::span<const double>(t_next), x_next);
  double total = 0.0;
  for (std::size_t r = 0; r < x.rows(); ++r) total += squared_distance(v_next.row(r), v.row(r));
  return total / (h * h) / static_cast<double>(x.rows());
}

}  // namespace cfm
