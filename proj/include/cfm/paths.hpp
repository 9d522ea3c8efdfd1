#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cfm/datasets.hpp"
#include "cfm/error.hpp"
#include "cfm/nd.hpp"
#include "cfm/rng.hpp"

namespace cfm {

enum class CouplingKind { kIndependent, kAffine };

/// How (x0, x1) pairs are drawn. The affine kind emits x1 = A x0 + b exactly.
struct Coupling {
  CouplingKind kind = CouplingKind::kIndependent;
  DistributionSpec source;
  DistributionSpec target;  // independent only
  NumArray matrix;          // affine only, [d, d]
  std::vector<double> offset;

  std::size_t dim() const { return source.dim; }

  static Coupling independent(DistributionSpec source, DistributionSpec target) {
    if (source.dim != target.dim) throw ShapeError("independent coupling: source and target dimensions differ");
    Coupling c;
    c.source = std::move(source);
    c.target = std::move(target);
    return c;
  }
};

/// True when (1-t) I + t A is invertible on a grid of `samples` points in [0,1]
/// and its determinant keeps one sign.
inline bool affine_path_valid(const NumArray& a, std::size_t samples = 1001) {
  const auto d = static_cast<Eigen::Index>(a.rows());
  const Eigen::MatrixXd am = a.mat();
  double first = 0.0;
  for (std::size_t k = 0; k < samples; ++k) {
    const double t = static_cast<double>(k) / static_cast<double>(samples - 1);
    const Eigen::MatrixXd m = (1.0 - t) * Eigen::MatrixXd::Identity(d, d) + t * am;
    const double det = m.determinant();
    if (!(std::abs(det) > 1e-12)) return false;
    if (k == 0) first = det;
    else if ((det > 0) != (first > 0)) return false;
  }
  return true;
}

/// x0 ~ source, x1 = A x0 + b.
inline Coupling make_affine_coupling(const NumArray& a, std::vector<double> b, DistributionSpec source) {
  const std::size_t d = source.dim;
  if (a.rank() != 2 || a.rows() != d || a.cols() != d) {
    throw ShapeError("make_affine_coupling: A must be [" + std::to_string(d) + "," + std::to_string(d) + "], got " +
                     shape_string(a.shape));
  }
  if (b.size() != d) throw ShapeError("make_affine_coupling: offset length does not match source dimension");
  Coupling c;
  c.kind = CouplingKind::kAffine;
  c.source = std::move(source);
  c.target = c.source;
  c.matrix = a;
  c.offset = std::move(b);
  return c;
}

inline NumArray apply_affine(const NumArray& a, const std::vector<double>& b, const NumArray& x0) {
  NumArray x1 = NumArray::matrix(x0.rows(), x0.cols());
  x1.mat().noalias() = x0.mat() * a.mat().transpose();
  for (std::size_t r = 0; r < x1.rows(); ++r) {
    for (std::size_t c = 0; c < x1.cols(); ++c) x1(r, c) += b[c];
  }
  return x1;
}

struct PairBatch {
  NumArray x0;
  NumArray x1;
};

inline PairBatch sample_pair(const Coupling& coupling, std::size_t n, Rng& rng) {
  if (n < 1) throw DomainError("sample_pair: n must be >= 1");
  PairBatch p;
  p.x0 = sample(coupling.source, n, rng);
  if (coupling.kind == CouplingKind::kAffine) p.x1 = apply_affine(coupling.matrix, coupling.offset, p.x0);
  else p.x1 = sample(coupling.target, n, rng);
  return p;
}

/// Draws from the target marginal p1: pushed-forward source draws for the
/// affine kind.
inline NumArray sample_target(const Coupling& coupling, std::size_t n, Rng& rng) {
  if (coupling.kind == CouplingKind::kAffine) return sample_pair(coupling, n, rng).x1;
  return sample(coupling.target, n, rng);
}

enum class PathKind { kLinear, kTrig };

inline const char* path_name(PathKind k) { return k == PathKind::kLinear ? "linear" : "trig"; }

inline PathKind parse_path(const std::string& s) {
  if (s == "linear") return PathKind::kLinear;
  if (s == "trig") return PathKind::kTrig;
  throw DomainError("unknown path kind '" + s + "'");
}

struct PathSpec {
  PathKind kind = PathKind::kLinear;
  Coupling coupling;
};

/// Interpolation weights (w0, w1) with x_t = w0 x0 + w1 x1.
inline std::pair<double, double> path_weights(PathKind kind, double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw DomainError("path: time " + std::to_string(t) + " outside [0,1]");
  if (kind == PathKind::kLinear) return {1.0 - t, t};
  const double a = 0.5 * std::numbers::pi * t;
  return {std::cos(a), std::sin(a)};
}

/// d/dt of the interpolation weights.
inline std::pair<double, double> path_weight_rates(PathKind kind, double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw DomainError("path: time " + std::to_string(t) + " outside [0,1]");
  if (kind == PathKind::kLinear) return {-1.0, 1.0};
  const double h = 0.5 * std::numbers::pi;
  return {-h * std::sin(h * t), h * std::cos(h * t)};
}

namespace detail {
inline NumArray combine(const NumArray& x0, const NumArray& x1, std::span<const double> t, PathKind kind,
                        bool rates) {
  if (x0.shape != x1.shape) throw ShapeError("path: x0 and x1 shapes differ");
  if (t.size() != x0.rows()) throw ShapeError("path: one time per row required");
  NumArray out = NumArray::matrix(x0.rows(), x0.cols());
  for (std::size_t r = 0; r < x0.rows(); ++r) {
    const auto [w0, w1] = rates ? path_weight_rates(kind, t[r]) : path_weights(kind, t[r]);
    for (std::size_t c = 0; c < x0.cols(); ++c) {
      // Endpoint rows are copied so the linear path is exact at t = 0 and 1.
      if (!rates && kind == PathKind::kLinear && t[r] == 0.0) out(r, c) = x0(r, c);
      else if (!rates && kind == PathKind::kLinear && t[r] == 1.0) out(r, c) = x1(r, c);
      else out(r, c) = w0 * x0(r, c) + w1 * x1(r, c);
    }
  }
  return out;
}
}  // namespace detail

inline NumArray path_point(PathKind kind, const NumArray& x0, const NumArray& x1, std::span<const double> t) {
  return detail::combine(x0, x1, t, kind, false);
}
inline NumArray path_point(PathKind kind, const NumArray& x0, const NumArray& x1, double t) {
  const std::vector<double> ts(x0.rows(), t);
  return path_point(kind, x0, x1, ts);
}

/// u(t, x_t | x0, x1), the time derivative of path_point.
inline NumArray conditional_velocity(PathKind kind, const NumArray& x0, const NumArray& x1, std::span<const double> t) {
  return detail::combine(x0, x1, t, kind, true);
}
inline NumArray conditional_velocity(PathKind kind, const NumArray& x0, const NumArray& x1, double t) {
  const std::vector<double> ts(x0.rows(), t);
  return conditional_velocity(kind, x0, x1, ts);
}

/// A batch of training tuples. x_t and x_tp come from the same (x0, x1) row.
struct TrainBatch {
  std::vector<double> t;
  std::vector<double> tp;  // t + dt, clamped to the segment end
  NumArray x_t;
  NumArray x_tp;
  NumArray u;
  NumArray x0;
  NumArray x1;
  std::size_t size() const { return t.size(); }
};

/// Row r draws t ~ U[start[r], end[r] - dt]. Pairs are drawn first, then times.
inline TrainBatch sample_train_batch(const PathSpec& path, std::span<const double> start, std::span<const double> end,
                                     double dt, Rng& rng) {
  if (start.size() != end.size()) throw ShapeError("sample_train_batch: bounds differ in length");
  if (!(dt > 0.0)) throw DomainError("sample_train_batch: time gap must be positive");
  for (std::size_t r = 0; r < start.size(); ++r) {
    if (!(end[r] - start[r] > dt)) throw DomainError("sample_train_batch: segment shorter than the time gap");
  }
  TrainBatch b;
  PairBatch p = sample_pair(path.coupling, start.size(), rng);
  b.t.resize(start.size());
  std::vector<double>& tp = b.tp;
  tp.resize(start.size());
  for (std::size_t r = 0; r < start.size(); ++r) {
    b.t[r] = rng.uniform(start[r], end[r] - dt);
    tp[r] = std::min(b.t[r] + dt, end[r]);
  }
  b.x_t = path_point(path.kind, p.x0, p.x1, b.t);
  b.x_tp = path_point(path.kind, p.x0, p.x1, tp);
  b.u = conditional_velocity(path.kind, p.x0, p.x1, b.t);
  b.x0 = std::move(p.x0);
  b.x1 = std::move(p.x1);
  return b;
}

inline TrainBatch sample_train_tuple(const PathSpec& path, double segment_start, double segment_end, double dt,
                                     std::size_t n, Rng& rng) {
  const std::vector<double> s(n, segment_start), e(n, segment_end);
  return sample_train_batch(path, s, e, dt, rng);
}

}  // namespace cfm
