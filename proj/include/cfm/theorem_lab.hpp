#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "cfm/datasets.hpp"
#include "cfm/error.hpp"
#include "cfm/losses.hpp"
#include "cfm/metrics.hpp"
#include "cfm/nd.hpp"
#include "cfm/paths.hpp"
#include "cfm/rng.hpp"
#include "cfm/training.hpp"
#include "cfm/velocity_net.hpp"

namespace cfm {

// ---------------------------------------------------------------------------
// Affine oracle: x1 = A x0 + b transported along straight lines.
// ---------------------------------------------------------------------------

/// Straight-line transport x_t = M_t x0 + t b with M_t = (1-t) I + t A. Its
/// velocity u(t, x) = (A - I) M_t^{-1} (x - t b) + b is constant along every
/// trajectory.
class AffineOracle {
 public:
  AffineOracle(NumArray a, std::vector<double> b) : a_(std::move(a)), b_(std::move(b)) {
    if (a_.rank() != 2 || a_.rows() != a_.cols() || a_.rows() != b_.size()) {
      throw ShapeError("AffineOracle: A must be square and match b");
    }
    valid_ = affine_path_valid(a_);
  }

  static AffineOracle scalar(double a, double b) { return AffineOracle(NumArray::matrix({{a}}), {b}); }

  std::size_t dim() const { return b_.size(); }
  bool valid() const { return valid_; }
  const NumArray& matrix() const { return a_; }
  const std::vector<double>& offset() const { return b_; }

  Eigen::MatrixXd transport(double t) const {
    const auto d = static_cast<Eigen::Index>(dim());
    return (1.0 - t) * Eigen::MatrixXd::Identity(d, d) + t * Eigen::MatrixXd(a_.mat());
  }

  /// u(t, x) for a single point.
  void velocity(double t, std::span<const double> x, std::span<double> out) const {
    const auto d = static_cast<Eigen::Index>(dim());
    const Eigen::MatrixXd m = transport(t);
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(m);
    if (!(std::abs(lu.determinant()) > 1e-12)) throw DomainError("AffineOracle: M_t is singular");
    Eigen::VectorXd shifted(d);
    for (Eigen::Index c = 0; c < d; ++c) shifted[c] = x[c] - t * b_[c];
    const Eigen::VectorXd x0 = lu.solve(shifted);
    const Eigen::VectorXd rate = Eigen::MatrixXd(a_.mat()) * x0 - x0;
    for (Eigen::Index c = 0; c < d; ++c) out[c] = rate[c] + b_[c];
  }

  /// Exact flow map from time s to time t.
  NumArray flow(double s, double t, const NumArray& xs) const {
    const auto d = static_cast<Eigen::Index>(dim());
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(transport(s));
    const Eigen::MatrixXd mt = transport(t);
    NumArray out = NumArray::matrix(xs.rows(), dim());
    for (std::size_t r = 0; r < xs.rows(); ++r) {
      Eigen::VectorXd shifted(d);
      for (Eigen::Index c = 0; c < d; ++c) shifted[c] = xs(r, c) - s * b_[c];
      const Eigen::VectorXd xt = mt * lu.solve(shifted);
      for (Eigen::Index c = 0; c < d; ++c) out(r, c) = xt[c] + t * b_[c];
    }
    return out;
  }

  AnalyticField field() const {
    auto self = *this;
    return AnalyticField(
        dim(), [self](double t, std::span<const double> x, std::span<double> out) { self.velocity(t, x, out); },
        "affine-oracle");
  }

 private:
  NumArray a_;
  std::vector<double> b_;
  bool valid_ = false;
};

inline NumArray affine_oracle_field(const AffineOracle& oracle, double t, const NumArray& x) {
  if (!oracle.valid()) throw DomainError("affine_oracle_field: oracle is not valid on [0,1]");
  return eval_at(oracle.field(), t, x);
}

// ---------------------------------------------------------------------------
// Trajectory integration for verification (classic RK4).
// ---------------------------------------------------------------------------

template <BatchField F>
NumArray rk4_flow(const F& field, double s, double t, const NumArray& x, std::size_t substeps) {
  NumArray y = x;
  const double h = (t - s) / static_cast<double>(substeps);
  auto axpy = [](const NumArray& base, const NumArray& k, double c) {
    NumArray out = base;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += c * k.data[i];
    return out;
  };
  for (std::size_t j = 0; j < substeps; ++j) {
    const double tj = s + h * static_cast<double>(j);
    const double tm = std::min(tj + 0.5 * h, 1.0);
    const double te = std::min(tj + h, 1.0);
    const NumArray k1 = eval_at(field, tj, y);
    const NumArray k2 = eval_at(field, tm, axpy(y, k1, 0.5 * h));
    const NumArray k3 = eval_at(field, tm, axpy(y, k2, 0.5 * h));
    const NumArray k4 = eval_at(field, te, axpy(y, k3, h));
    for (std::size_t i = 0; i < y.size(); ++i) {
      y.data[i] += h / 6.0 * (k1.data[i] + 2.0 * k2.data[i] + 2.0 * k3.data[i] + k4.data[i]);
    }
  }
  ensure_finite(y, "rk4_flow");
  return y;
}

// ---------------------------------------------------------------------------
// Lemma 1: constant velocity along trajectories <=> constant endpoint map.
// ---------------------------------------------------------------------------

struct Lemma1Report {
  double cond1_residual = 0.0;  // max |v(t, g(t)) - v(s, g(s))|
  double cond2_residual = 0.0;  // max |g(t) + (1-t) v(t, g(t)) - g(s) - (1-s) v(s, g(s))|
  bool cond1_holds = false;
  bool cond2_holds = false;
  bool equivalent = false;  // both hold or both fail
};

/// Integrates trajectories from `starts` (at t = grid[0]) through the probe
/// grid and measures both conditions over every pair of grid times.
template <BatchField F>
Lemma1Report verify_lemma1(const F& field, const NumArray& starts, const std::vector<double>& grid, double tol,
                           std::size_t substeps = 16) {
  if (grid.size() < 2) throw DomainError("verify_lemma1: need at least two probe times");
  for (double t : grid) check_time(t, "verify_lemma1");
  std::vector<NumArray> velocity, endpoint;
  NumArray x = starts;
  for (std::size_t j = 0; j < grid.size(); ++j) {
    if (j > 0) x = rk4_flow(field, grid[j - 1], grid[j], x, substeps);
    NumArray v = eval_at(field, grid[j], x);
    NumArray e = x;
    for (std::size_t i = 0; i < e.size(); ++i) e.data[i] += (1.0 - grid[j]) * v.data[i];
    velocity.push_back(std::move(v));
    endpoint.push_back(std::move(e));
  }
  Lemma1Report rep;
  for (std::size_t j = 0; j < grid.size(); ++j) {
    for (std::size_t k = j + 1; k < grid.size(); ++k) {
      for (std::size_t r = 0; r < starts.rows(); ++r) {
        rep.cond1_residual = std::max(rep.cond1_residual, std::sqrt(squared_distance(velocity[j].row(r), velocity[k].row(r))));
        rep.cond2_residual = std::max(rep.cond2_residual, std::sqrt(squared_distance(endpoint[j].row(r), endpoint[k].row(r))));
      }
    }
  }
  rep.cond1_holds = rep.cond1_residual < tol;
  rep.cond2_holds = rep.cond2_residual < tol;
  rep.equivalent = rep.cond1_holds == rep.cond2_holds;
  return rep;
}

// ---------------------------------------------------------------------------
// Theorem 1: asymptotics of the endpoint-matching term.
// ---------------------------------------------------------------------------

struct ScalingRow {
  double dt = 0.0;
  double lhs = 0.0;  // E|f(t, x_t) - f(t + dt, x_{t+dt})|^2, both with theta
  double rhs = 0.0;  // dt^2 E|v - u - (1-t)(d_t v + u . grad v)|^2
  double ratio = 0.0;
  bool degenerate = false;  // rhs vanishes; compare lhs / dt^2 instead
};

/// Flow map of the ground-truth field: (s, t, x_s) -> x_t.
using FlowMap = std::function<NumArray(double, double, const NumArray&)>;

/// Estimates both sides of the Theorem 1 expansion on a shared sample of
/// (t, x_t). x_t is produced by pushing x0 ~ source through the ground-truth
/// flow, and x_{t+dt} by continuing that flow for dt. Derivatives of v along
/// (1, u) use central differences with step h (one-sided at t < h).
template <BatchField V, BatchField U>
std::vector<ScalingRow> theorem1_scaling_probe(const V& v, const U& u, const FlowMap& flow,
                                               const DistributionSpec& source, const std::vector<double>& dts,
                                               std::size_t batch, Rng& rng, double h = 1e-5) {
  if (batch < 1) throw DomainError("theorem1_scaling_probe: batch must be >= 1");
  const NumArray x0 = sample(source, batch, rng);
  std::vector<double> fraction(batch);
  for (auto& f : fraction) f = rng.uniform();

  std::vector<ScalingRow> rows;
  for (double dt : dts) {
    if (!(dt > 0.0 && dt < 1.0)) throw DomainError("theorem1_scaling_probe: dt must lie in (0,1)");
    double lhs = 0.0, rhs = 0.0;
    for (std::size_t r = 0; r < batch; ++r) {
      const double t = fraction[r] * (1.0 - dt);
      NumArray p0 = NumArray::matrix(1, x0.cols());
      std::copy(x0.row(r).begin(), x0.row(r).end(), p0.row(0).begin());
      const NumArray xt = flow(0.0, t, p0);
      const NumArray xtp = flow(t, t + dt, xt);
      const NumArray vt = eval_at(v, t, xt);
      const NumArray vtp = eval_at(v, t + dt, xtp);
      const NumArray ut = eval_at(u, t, xt);

      const double lo = std::max(t - h, 0.0);
      const double hi = t + h;
      NumArray x_lo = xt, x_hi = xt;
      for (std::size_t c = 0; c < xt.size(); ++c) {
        x_lo.data[c] -= (t - lo) * ut.data[c];
        x_hi.data[c] += (hi - t) * ut.data[c];
      }
      const NumArray v_lo = eval_at(v, lo, x_lo);
      const NumArray v_hi = eval_at(v, hi, x_hi);
      for (std::size_t c = 0; c < xt.size(); ++c) {
        const double f_now = xt.data[c] + (1.0 - t) * vt.data[c];
        const double f_next = xtp.data[c] + (1.0 - t - dt) * vtp.data[c];
        lhs += (f_now - f_next) * (f_now - f_next);
        const double material = (v_hi.data[c] - v_lo.data[c]) / (hi - lo);
        const double bracket = vt.data[c] - ut.data[c] - (1.0 - t) * material;
        rhs += bracket * bracket;
      }
    }
    ScalingRow row;
    row.dt = dt;
    row.lhs = lhs / static_cast<double>(batch);
    row.rhs = dt * dt * rhs / static_cast<double>(batch);
    if (row.rhs < 1e-14 * dt * dt) {
      if (row.lhs > 1e-12) throw Error("theorem1_scaling_probe: degenerate probe (rhs vanishes, lhs does not)");
      row.degenerate = true;
    } else {
      row.ratio = row.lhs / row.rhs;
    }
    rows.push_back(row);
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Theorem 2: pointwise minimiser of the segment loss on tabulated trajectories.
// ---------------------------------------------------------------------------

/// 1D trajectories tabulated on times S, S + dt, ..., T. oracle_velocity[k][j]
/// is (x_T - x_j) / (T - t_j) for j < N; the terminal entry is a free
/// tabulated value (the limit is not defined by the chord formula).
struct GridProblem {
  double start = 0.0;
  double end = 1.0;
  std::size_t steps = 20;
  double alpha = 1.0;
  std::vector<std::vector<double>> positions;
  std::vector<std::vector<double>> oracle_velocity;

  double dt() const { return (end - start) / static_cast<double>(steps); }
  double time(std::size_t j) const { return start + static_cast<double>(j) * dt(); }

  void fill_oracle(const std::vector<double>& terminal_velocity) {
    oracle_velocity.clear();
    for (std::size_t k = 0; k < positions.size(); ++k) {
      const auto& x = positions[k];
      std::vector<double> v(steps + 1);
      for (std::size_t j = 0; j < steps; ++j) v[j] = (x[steps] - x[j]) / (end - time(j));
      v[steps] = terminal_velocity[k];
      oracle_velocity.push_back(std::move(v));
    }
  }
};

/// Random inconsistent problem: random-walk trajectories and random terminal
/// velocities. With `consistent` set, trajectories are straight lines and the
/// terminal velocity equals their slope.
inline GridProblem random_grid_problem(Rng& rng, std::size_t trajectories, std::size_t steps, double alpha,
                                       bool consistent = false) {
  GridProblem p;
  p.steps = steps;
  p.alpha = alpha;
  p.start = rng.uniform(0.0, 0.5);
  p.end = p.start + rng.uniform(0.25, 0.5);
  std::vector<double> terminal;
  for (std::size_t k = 0; k < trajectories; ++k) {
    std::vector<double> x(steps + 1);
    x[0] = rng.normal();
    if (consistent) {
      const double slope = rng.normal(0.0, 2.0);
      for (std::size_t j = 1; j <= steps; ++j) x[j] = x[0] + slope * (p.time(j) - p.start);
      terminal.push_back(slope);
    } else {
      for (std::size_t j = 1; j <= steps; ++j) x[j] = x[j - 1] + p.dt() * rng.normal(0.0, 2.0);
      terminal.push_back(rng.normal(0.0, 2.0));
    }
    p.positions.push_back(std::move(x));
  }
  p.fill_oracle(terminal);
  return p;
}

struct Theorem2Report {
  /// errors[k][j] = v_theta(t_j) - v*(t_j) from the direct solve of the
  /// first-order conditions.
  std::vector<std::vector<double>> solved_error;
  /// The same errors propagated by the closed-form recursion.
  std::vector<std::vector<double>> recursion_error;
  double max_discrepancy = 0.0;
  double max_abs_error = 0.0;
};

/// Solves the stationarity conditions (with the target equal to the online
/// field) as one dense linear system per trajectory, unknowns v(t_0..t_{N-1})
/// and v(T) pinned to v*(T):
///   ((T-t)^2 + a) v(t) - ((T-t-dt)(T-t) + a) v(t+dt) = (T-t)(x_{t+dt} - x_t).
/// Separately propagates the error recursion
///   e(t) = a/((T-t)^2+a) (v*(t+dt) - v*(t)) + ((T-t-dt)(T-t)+a)/((T-t)^2+a) e(t+dt)
/// from e(T) = 0, and reports the largest disagreement.
inline Theorem2Report theorem2_grid_oracle(const GridProblem& problem) {
  const std::size_t n = problem.steps;
  const double a = problem.alpha;
  const double big_t = problem.end;
  const double dt = problem.dt();
  if (n < 1) throw DomainError("theorem2_grid_oracle: need at least one step");
  if (!(a > 0.0)) throw DomainError("theorem2_grid_oracle: alpha must be positive");
  Theorem2Report rep;
  for (std::size_t k = 0; k < problem.positions.size(); ++k) {
    const auto& x = problem.positions[k];
    const auto& vstar = problem.oracle_velocity[k];
    if (x.size() != n + 1 || vstar.size() != n + 1) throw ShapeError("theorem2_grid_oracle: ragged trajectory");

    Eigen::MatrixXd system = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    Eigen::VectorXd rhs(static_cast<Eigen::Index>(n));
    for (std::size_t j = 0; j < n; ++j) {
      const double gap = big_t - problem.time(j);
      const double diag = gap * gap + a;
      const double next = (gap - dt) * gap + a;
      const auto row = static_cast<Eigen::Index>(j);
      system(row, row) = diag;
      rhs[row] = gap * (x[j + 1] - x[j]);
      if (j + 1 < n) system(row, row + 1) = -next;
      else rhs[row] += next * vstar[n];
    }
    const Eigen::VectorXd solved = system.fullPivLu().solve(rhs);

    std::vector<double> direct(n + 1, 0.0), recursed(n + 1, 0.0);
    for (std::size_t j = 0; j < n; ++j) direct[j] = solved[static_cast<Eigen::Index>(j)] - vstar[j];
    for (std::size_t j = n; j-- > 0;) {
      const double gap = big_t - problem.time(j);
      const double denom = gap * gap + a;
      recursed[j] = a / denom * (vstar[j + 1] - vstar[j]) + ((gap - dt) * gap + a) / denom * recursed[j + 1];
    }
    for (std::size_t j = 0; j <= n; ++j) {
      rep.max_discrepancy = std::max(rep.max_discrepancy, std::abs(direct[j] - recursed[j]));
      rep.max_abs_error = std::max(rep.max_abs_error, std::abs(direct[j]));
    }
    rep.solved_error.push_back(std::move(direct));
    rep.recursion_error.push_back(std::move(recursed));
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Continuity equation for the 1D affine oracle.
// ---------------------------------------------------------------------------

/// With x0 ~ N(0, 1) and x_t = m_t x0 + t b (m_t = 1 - t + t a) the density is
/// N(t b, m_t^2). Returns max |d_t p + d_x(u p)| over a (t, x) grid, both
/// derivatives by central differences with step h.
inline double continuity_residual_affine_1d(double a, double b, double h = 1e-4, std::size_t t_points = 21,
                                            std::size_t x_points = 81, double x_span = 4.0) {
  const AffineOracle oracle = AffineOracle::scalar(a, b);
  if (!oracle.valid()) throw DomainError("continuity_residual_affine_1d: oracle is not valid");
  auto density = [&](double t, double x) {
    const double m = 1.0 - t + t * a;
    const double z = (x - t * b) / m;
    return std::exp(-0.5 * z * z) / (std::abs(m) * std::sqrt(2.0 * std::numbers::pi));
  };
  auto velocity = [&](double t, double x) { return (a - 1.0) * (x - t * b) / (1.0 - t + t * a) + b; };
  double worst = 0.0;
  for (std::size_t i = 0; i < t_points; ++i) {
    const double t = 0.05 + 0.9 * static_cast<double>(i) / static_cast<double>(t_points - 1);
    const double m = 1.0 - t + t * a;
    for (std::size_t j = 0; j < x_points; ++j) {
      const double x = t * b + m * x_span * (2.0 * static_cast<double>(j) / static_cast<double>(x_points - 1) - 1.0);
      const double dp_dt = (density(t + h, x) - density(t - h, x)) / (2.0 * h);
      const double dflux_dx =
          (velocity(t, x + h) * density(t, x + h) - velocity(t, x - h) * density(t, x - h)) / (2.0 * h);
      worst = std::max(worst, std::abs(dp_dt + dflux_dx));
    }
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Corollary: a consistent ground truth is recovered by training.
// ---------------------------------------------------------------------------

struct RecoveryGrid {
  double t_max = 0.99;
  std::size_t t_points = 12;
  double box = 3.0;            // test points lie in [-box, box]^d
  std::size_t x_points = 13;   // per axis
  double support_radius = 3.0; // |M_t^{-1}(x - t b)|_inf <= radius keeps x in the data support
};

/// Max over the grid of |v(t, x) - u(t, x)|, counting only grid points whose
/// pull-back to t = 0 lies within the source support box.
template <BatchField V>
double recovery_error(const V& v, const AffineOracle& oracle, const RecoveryGrid& grid) {
  const std::size_t d = oracle.dim();
  std::size_t total = 1;
  for (std::size_t c = 0; c < d; ++c) total *= grid.x_points;
  double worst = 0.0;
  for (std::size_t i = 0; i < grid.t_points; ++i) {
    const double t = grid.t_max * static_cast<double>(i) / static_cast<double>(grid.t_points - 1);
    std::vector<double> pts;
    std::size_t kept = 0;
    for (std::size_t idx = 0; idx < total; ++idx) {
      std::size_t rest = idx;
      std::vector<double> p(d);
      for (std::size_t c = 0; c < d; ++c) {
        const std::size_t k = rest % grid.x_points;
        rest /= grid.x_points;
        p[c] = -grid.box + 2.0 * grid.box * static_cast<double>(k) / static_cast<double>(grid.x_points - 1);
      }
      NumArray one = NumArray::matrix(1, d);
      std::copy(p.begin(), p.end(), one.data.begin());
      const NumArray pulled = oracle.flow(t, 0.0, one);
      bool inside = true;
      for (double c : pulled.data) inside = inside && std::abs(c) <= grid.support_radius;
      if (!inside) continue;
      pts.insert(pts.end(), p.begin(), p.end());
      ++kept;
    }
    if (kept == 0) continue;
    const NumArray x({kept, d}, pts);
    const NumArray learned = eval_at(v, t, x);
    const NumArray truth = eval_at(oracle.field(), t, x);
    for (std::size_t r = 0; r < kept; ++r) {
      worst = std::max(worst, std::sqrt(squared_distance(learned.row(r), truth.row(r))));
    }
  }
  return worst;
}

struct RecoveryResult {
  double initial_error = 0.0;
  double final_error = 0.0;
  std::size_t steps = 0;
};

/// Trains `field` with the single-segment multi-segment objective on the
/// deterministic affine coupling of `oracle` (standard normal source, linear
/// path) and reports the field error before and after training. The EMA
/// parameters are the ones evaluated.
inline RecoveryResult corollary_recovery_test(VelocityField& field, const AffineOracle& oracle, TrainSettings settings,
                                              const RecoveryGrid& grid = {}) {
  if (!oracle.valid()) throw DomainError("corollary_recovery_test: oracle is not valid");
  if (field.dim() != oracle.dim()) throw ShapeError("corollary_recovery_test: dimension mismatch");
  settings.loss = LossKind::kMultisegment;
  settings.schedule.segments = 1;
  settings.schedule.weights = {1.0};
  settings.path.kind = PathKind::kLinear;
  settings.path.coupling =
      make_affine_coupling(oracle.matrix(), oracle.offset(), DistributionSpec::standard_gaussian(oracle.dim()));
  RecoveryResult out;
  out.initial_error = recovery_error(NetField(field, ParamSet::kEma), oracle, grid);
  train(field, settings, nullptr, [&](const StepInfo& info) {
    out.steps = info.step;
    return true;
  });
  out.final_error = recovery_error(NetField(field, ParamSet::kEma), oracle, grid);
  if (!std::isfinite(out.final_error)) throw NonFiniteError("corollary_recovery_test: training diverged");
  return out;
}

// ---------------------------------------------------------------------------
// Analytic field family and verification suites.
// ---------------------------------------------------------------------------

struct FamilyMember {
  std::string name;
  AnalyticField field;
  bool consistent = false;  // known analytically
};

/// Twenty 2-D fields: ten consistent (constants and valid affine oracles) and
/// ten that change along their own trajectories.
inline std::vector<FamilyMember> analytic_family() {
  using Fn = AnalyticField::Fn;
  std::vector<FamilyMember> out;
  auto add = [&](std::string name, Fn fn, bool consistent) {
    out.push_back({name, AnalyticField(2, std::move(fn), name), consistent});
  };
  auto oracle = [&](std::string name, std::vector<std::vector<double>> a, std::vector<double> b) {
    NumArray m = NumArray::matrix(2, 2);
    for (std::size_t i = 0; i < 2; ++i) {
      for (std::size_t j = 0; j < 2; ++j) m(i, j) = a[i][j];
    }
    const AffineOracle o(m, std::move(b));
    if (!o.valid()) throw DomainError("analytic_family: invalid oracle " + name);
    out.push_back({name, o.field(), true});
  };
  add("zero", [](double, std::span<const double>, std::span<double> v) { v[0] = v[1] = 0.0; }, true);
  add("constant", [](double, std::span<const double>, std::span<double> v) { v[0] = 1.5; v[1] = -0.7; }, true);
  oracle("translation", {{1, 0}, {0, 1}}, {2, 2});
  oracle("scaling", {{2, 0}, {0, 2}}, {0, 0});
  oracle("general", {{1.5, 0.3}, {-0.2, 0.8}}, {1, -0.5});
  oracle("anisotropic", {{0.5, 0}, {0, 3}}, {0, 1});
  oracle("rotation-scale", {{1, -0.5}, {0.5, 1}}, {0, 0});
  oracle("jordan", {{2, 1}, {0, 2}}, {-1, 0});
  oracle("contraction", {{0.2, 0}, {0, 0.2}}, {1, 1});
  oracle("shear", {{1, 2}, {0, 1}}, {0.5, 0});

  add("time", [](double t, std::span<const double>, std::span<double> v) { v[0] = v[1] = t; }, false);
  add("growth", [](double, std::span<const double> x, std::span<double> v) { v[0] = x[0]; v[1] = x[1]; }, false);
  add("decay", [](double, std::span<const double> x, std::span<double> v) { v[0] = -x[0]; v[1] = -x[1]; }, false);
  add("rotation", [](double, std::span<const double> x, std::span<double> v) { v[0] = -x[1]; v[1] = x[0]; }, false);
  add("oscillating", [](double t, std::span<const double>, std::span<double> v) {
    v[0] = std::sin(2.0 * std::numbers::pi * t);
    v[1] = 0.5;
  }, false);
  add("quadratic-time", [](double t, std::span<const double>, std::span<double> v) { v[0] = t * t; v[1] = 1.0; }, false);
  add("ramp", [](double t, std::span<const double>, std::span<double> v) { v[0] = 3.0 * t; v[1] = -3.0 * t; }, false);
  add("affine-drift", [](double, std::span<const double> x, std::span<double> v) {
    v[0] = 1.0 + 0.5 * x[0];
    v[1] = -1.0 + 0.5 * x[1];
  }, false);
  add("swirl", [](double t, std::span<const double> x, std::span<double> v) {
    v[0] = -t * x[1];
    v[1] = t * x[0];
  }, false);
  add("trig-state", [](double, std::span<const double> x, std::span<double> v) {
    v[0] = std::cos(x[1]);
    v[1] = std::sin(x[0]);
  }, false);
  return out;
}

/// One line of a verifier report.
struct CheckRow {
  std::string check;
  std::string parameter;
  double residual = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

inline CheckRow below(std::string check, std::string parameter, double residual, double tol) {
  return {std::move(check), std::move(parameter), residual, tol, std::isfinite(residual) && residual < tol};
}

inline CheckRow above(std::string check, std::string parameter, double residual, double tol) {
  return {std::move(check), std::move(parameter), residual, tol, std::isfinite(residual) && residual > tol};
}

inline bool all_pass(const std::vector<CheckRow>& rows) {
  return std::all_of(rows.begin(), rows.end(), [](const CheckRow& r) { return r.pass; });
}

inline std::string format_param(const char* key, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s=%g", key, v);
  return buf;
}

struct SuiteOptions {
  std::uint64_t seed = 0;
  double condition_tol = 1e-8;  // Lemma 1 residuals
  double fail_tol = 1e-2;       // inconsistent fields must exceed this
  double pde_tol = 1e-6;        // Lemma 2 residual
  double pde_step = 1e-4;
  std::size_t probes = 64;
};

/// Lemma 1 and Lemma 2 over the analytic family. Consistent members must
/// pass all three residuals, the others must fail all three, and no member
/// may land in a mixed quadrant.
inline std::vector<CheckRow> lemma_suite(const SuiteOptions& opt = {}) {
  Rng rng(opt.seed, Stream::kVerify);
  NumArray starts = NumArray::matrix(opt.probes, 2);
  for (auto& v : starts.data) v = rng.uniform(-2.0, 2.0);
  std::vector<double> pt(opt.probes);
  for (auto& t : pt) t = rng.uniform(0.0, 1.0 - opt.pde_step);
  NumArray px = NumArray::matrix(opt.probes, 2);
  for (auto& v : px.data) v = rng.uniform(-2.0, 2.0);

  std::vector<CheckRow> rows;
  std::size_t mixed = 0;
  for (const auto& m : analytic_family()) {
    const Lemma1Report rep = verify_lemma1(m.field, starts, uniform_grid(11), opt.condition_tol);
    const double pde = consistency_residual(m.field, pt, px, opt.pde_step);
    const std::string p = "field=" + m.name;
    if (m.consistent) {
      rows.push_back(below("lemma1.cond1", p, rep.cond1_residual, opt.condition_tol));
      rows.push_back(below("lemma1.cond2", p, rep.cond2_residual, opt.condition_tol));
      rows.push_back(below("lemma2.pde", p, pde, opt.pde_tol));
    } else {
      rows.push_back(above("lemma1.cond1", p, rep.cond1_residual, opt.fail_tol));
      rows.push_back(above("lemma1.cond2", p, rep.cond2_residual, opt.fail_tol));
      rows.push_back(above("lemma2.pde", p, pde, opt.fail_tol));
    }
    const bool c1 = rep.cond1_residual < opt.condition_tol;
    const bool c2 = rep.cond2_residual < opt.condition_tol;
    const bool c3 = pde < opt.pde_tol;
    if (!(c1 == c2 && c2 == c3)) ++mixed;
  }
  rows.push_back(below("lemma.mixed_quadrant", "fields=20", static_cast<double>(mixed), 0.5));
  return rows;
}

/// Theorem 1 on a fixed random MLP against an affine oracle ground truth,
/// plus the closed-form constant-field pair.
inline std::vector<CheckRow> theorem1_suite(const SuiteOptions& opt = {}) {
  const std::vector<double> dts = {0.1, 0.05, 0.025, 0.0125};
  const AffineOracle o(NumArray::matrix({{1.5, 0.3}, {-0.2, 0.8}}), {1.0, -0.5});
  const FlowMap flow = [&](double s, double t, const NumArray& x) { return o.flow(s, t, x); };
  const VelocityField mlp = init_field(NetSpec{}, opt.seed + 17);
  Rng rng(opt.seed, Stream::kVerify);
  const auto table =
      theorem1_scaling_probe(NetField(mlp, ParamSet::kOnline), o.field(), flow, DistributionSpec::standard_gaussian(2),
                             dts, 2048, rng);
  std::vector<CheckRow> rows;
  double previous = std::numeric_limits<double>::infinity();
  for (const auto& r : table) {
    const double gap = std::abs(r.ratio - 1.0);
    rows.push_back(below("theorem1.monotone", format_param("dt", r.dt), gap, previous));
    previous = gap;
  }
  rows.push_back(below("theorem1.ratio", format_param("dt", table.back().dt), std::abs(table.back().ratio - 1.0), 0.05));

  // v = c, u = c': the bracket is c - c' exactly and the ratio is 1 for every dt.
  const AnalyticField vc = AnalyticField::constant({1.0, 2.0});
  const AnalyticField uc = AnalyticField::constant({-0.5, 0.25});
  const FlowMap drift = [](double s, double t, const NumArray& x) {
    NumArray y = x;
    for (std::size_t r = 0; r < y.rows(); ++r) {
      y(r, 0) += (t - s) * -0.5;
      y(r, 1) += (t - s) * 0.25;
    }
    return y;
  };
  Rng rng2(opt.seed, Stream::kVerify);
  const auto pair = theorem1_scaling_probe(vc, uc, drift, DistributionSpec::standard_gaussian(2), {0.0125}, 256, rng2);
  rows.push_back(below("theorem1.constant_pair", "dt=0.0125", std::abs(pair.back().ratio - 1.0), 1e-6));

  // v = u = consistent oracle: lhs / dt^2 vanishes.
  Rng rng3(opt.seed, Stream::kVerify);
  const auto self = theorem1_scaling_probe(o.field(), o.field(), flow, DistributionSpec::standard_gaussian(2), {0.0125},
                                           256, rng3);
  rows.push_back(below("theorem1.consistent_lhs", "dt=0.0125", self.back().lhs / (0.0125 * 0.0125), 1e-8));
  return rows;
}

/// Direct solve versus recursion on random tabulated problems.
inline std::vector<CheckRow> theorem2_suite(const SuiteOptions& opt = {}, std::size_t problems = 50) {
  Rng rng(opt.seed, Stream::kVerify);
  const double alphas[] = {0.1, 1.0, 10.0};
  double worst = 0.0;
  for (std::size_t k = 0; k < problems; ++k) {
    const GridProblem p = random_grid_problem(rng, 16, 20, alphas[k % 3]);
    worst = std::max(worst, theorem2_grid_oracle(p).max_discrepancy);
  }
  std::vector<CheckRow> rows;
  rows.push_back(below("theorem2.recursion", "problems=" + std::to_string(problems), worst, 1e-10));
  double consistent = 0.0;
  for (double a : alphas) {
    consistent = std::max(consistent, theorem2_grid_oracle(random_grid_problem(rng, 16, 20, a, true)).max_abs_error);
  }
  rows.push_back(below("theorem2.consistent_zero", "problems=3", consistent, 1e-10));
  return rows;
}

inline std::vector<CheckRow> continuity_suite() {
  std::vector<CheckRow> rows;
  const std::pair<double, double> cases[] = {{2.0, 0.0}, {2.0, 1.0}, {0.5, -1.0}};
  for (auto [a, b] : cases) {
    rows.push_back(below("continuity.affine1d", format_param("a", a) + " " + format_param("b", b),
                         continuity_residual_affine_1d(a, b), 1e-4));
  }
  return rows;
}

}  // namespace cfm
