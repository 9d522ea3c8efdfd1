#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "cfm/error.hpp"
#include "cfm/nd.hpp"
#include "cfm/velocity_net.hpp"

namespace cfm {

/// States of a batch along a time grid. states[j] holds every row at times[j].
struct Trajectory {
  std::vector<double> times;
  std::vector<NumArray> states;
  std::size_t nfe = 0;

  std::size_t size() const { return times.size(); }
  /// Trajectory of a single row.
  std::vector<std::vector<double>> path_of(std::size_t row) const {
    std::vector<std::vector<double>> out;
    for (const auto& s : states) out.emplace_back(s.row(row).begin(), s.row(row).end());
    return out;
  }
};

struct SampleResult {
  NumArray x1;
  std::size_t nfe = 0;  // field evaluations per sample
};

/// Euler with K*m uniform steps of size 1/(K m); the velocity is evaluated at
/// the left end of each step. With m = 1 this is one jump per segment.
template <BatchField F>
SampleResult sample_euler(const F& field, const NumArray& x0, std::size_t segments, std::size_t steps_per_segment,
                          Trajectory* trajectory = nullptr) {
  if (segments < 1) throw DomainError("sampler: K must be >= 1");
  if (steps_per_segment < 1) throw DomainError("sampler: steps per segment must be >= 1");
  check_points(x0, field.dim(), "sampler");
  const std::size_t steps = segments * steps_per_segment;
  const double h = 1.0 / static_cast<double>(steps);
  SampleResult out{x0, 0};
  if (trajectory) {
    trajectory->times = {0.0};
    trajectory->states = {x0};
  }
  for (std::size_t j = 0; j < steps; ++j) {
    const double t = static_cast<double>(j) / static_cast<double>(steps);
    const NumArray v = eval_at(field, t, out.x1);
    ++out.nfe;
    for (std::size_t i = 0; i < out.x1.size(); ++i) out.x1.data[i] += h * v.data[i];
    ensure_finite(out.x1, "sampler state");
    if (trajectory) {
      trajectory->times.push_back(static_cast<double>(j + 1) / static_cast<double>(steps));
      trajectory->states.push_back(out.x1);
    }
  }
  if (trajectory) trajectory->nfe = out.nfe;
  return out;
}

/// x_{i/K} = x_{(i-1)/K} + (1/K) v((i-1)/K, x_{(i-1)/K}) for i = 1..K.
template <BatchField F>
SampleResult sample_segment_jumps(const F& field, const NumArray& x0, std::size_t segments,
                                  Trajectory* trajectory = nullptr) {
  return sample_euler(field, x0, segments, 1, trajectory);
}

/// Euler between consecutive grid times; grid must start at 0, end at 1 and
/// increase strictly.
template <BatchField F>
Trajectory record_trajectory(const F& field, const NumArray& x0, const std::vector<double>& grid) {
  if (grid.size() < 2) throw DomainError("record_trajectory: grid needs at least two points");
  if (grid.front() != 0.0 || grid.back() != 1.0) throw DomainError("record_trajectory: grid must span [0,1]");
  for (std::size_t j = 1; j < grid.size(); ++j) {
    if (!(grid[j] > grid[j - 1])) throw DomainError("record_trajectory: grid must be strictly increasing");
  }
  check_points(x0, field.dim(), "record_trajectory");
  Trajectory traj;
  traj.times = grid;
  traj.states.push_back(x0);
  NumArray x = x0;
  for (std::size_t j = 0; j + 1 < grid.size(); ++j) {
    const double h = grid[j + 1] - grid[j];
    const NumArray v = eval_at(field, grid[j], x);
    ++traj.nfe;
    for (std::size_t i = 0; i < x.size(); ++i) x.data[i] += h * v.data[i];
    ensure_finite(x, "trajectory state");
    traj.states.push_back(x);
  }
  return traj;
}

inline std::vector<double> uniform_grid(std::size_t points) {
  if (points < 2) throw DomainError("uniform_grid: need at least two points");
  std::vector<double> g(points);
  for (std::size_t j = 0; j < points; ++j) g[j] = static_cast<double>(j) / static_cast<double>(points - 1);
  return g;
}

}  // namespace cfm
