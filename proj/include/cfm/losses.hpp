#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "cfm/error.hpp"
#include "cfm/nd.hpp"
#include "cfm/paths.hpp"
#include "cfm/rng.hpp"
#include "cfm/velocity_net.hpp"

namespace cfm {

/// K equal segments of [0,1] with per-segment weights, time gap and the
/// velocity-term weight alpha.
struct SegmentSchedule {
  std::size_t segments = 1;
  std::vector<double> weights = {1.0};
  double dt = 0.01;
  double alpha = 1.0;

  static SegmentSchedule uniform(std::size_t k, double dt = 0.01, double alpha = 1.0) {
    return {k, std::vector<double>(k, 1.0), dt, alpha};
  }

  /// Weights proportional to 1 + sin(pi (i + 1/2) / K), normalised to mean 1.
  static SegmentSchedule middle_weighted(std::size_t k, double dt = 0.01, double alpha = 1.0) {
    std::vector<double> w(k);
    double total = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      w[i] = 1.0 + std::sin(std::numbers::pi * (static_cast<double>(i) + 0.5) / static_cast<double>(k));
      total += w[i];
    }
    for (auto& v : w) v *= static_cast<double>(k) / total;
    return {k, w, dt, alpha};
  }

  double start(std::size_t i) const { return static_cast<double>(i) / static_cast<double>(segments); }
  double end(std::size_t i) const { return static_cast<double>(i + 1) / static_cast<double>(segments); }

  void validate() const {
    if (segments < 1) throw DomainError("SegmentSchedule: need at least one segment");
    if (weights.size() != segments) throw DomainError("SegmentSchedule: one weight per segment required");
    for (double w : weights) {
      if (!(w > 0.0)) throw DomainError("SegmentSchedule: weights must be positive");
    }
    if (!(dt > 0.0)) throw DomainError("SegmentSchedule: time gap must be positive");
    if (!(alpha > 0.0)) throw DomainError("SegmentSchedule: alpha must be positive");
    if (!(1.0 / static_cast<double>(segments) > dt)) {
      throw DomainError("SegmentSchedule: segment length 1/K must exceed the time gap");
    }
  }
};

struct SegmentInfo {
  std::size_t index;
  double start;
  double end;
};

inline SegmentInfo segment_of(double t, std::size_t k) {
  check_time(t, "segment_of");
  if (k < 1) throw DomainError("segment_of: K must be >= 1");
  auto i = static_cast<std::size_t>(std::floor(t * static_cast<double>(k)));
  if (i >= k) i = k - 1;
  return {i, static_cast<double>(i) / static_cast<double>(k), static_cast<double>(i + 1) / static_cast<double>(k)};
}

struct LossReport {
  double total = 0.0;
  double f_term = 0.0;
  double v_term = 0.0;
  std::size_t segments = 1;
  std::size_t batch = 0;
  /// Weighted contribution of each segment to total; sums to total.
  std::vector<double> segment_totals;
};

struct LossResult {
  LossReport report;
  Params grads;      // d total / d theta, same layout as the online parameters
  Params ema_grads;  // d total / d theta_ema; zero because the EMA branch is detached
};

namespace detail {

inline Params collect_grads(const Tape& tape, std::span<const NodeId> ids) {
  Params g;
  for (NodeId id : ids) g.push_back(tape.grad(id));
  return g;
}

/// Shared body of every consistency-type objective. Row r contributes
///   w[r] (|f_theta(t, x_t) - f_ema(tp, x_tp)|^2 + alpha |v_theta(t, x_t) - v_ema(tp, x_tp)|^2) / n
/// with f(s, x) = x + (end[r] - s) v(s, x).
inline LossResult consistency_objective(const VelocityField& field, std::span<const double> t,
                                        std::span<const double> tp, const NumArray& x_t, const NumArray& x_tp,
                                        std::span<const double> end, std::span<const double> weights,
                                        std::span<const std::size_t> segment, std::size_t segments, double alpha) {
  const std::size_t n = t.size();
  Tape tape;
  const auto online = bind_params(tape, field, ParamSet::kOnline);
  const auto shadow = bind_params(tape, field, ParamSet::kEma);

  const NodeId v = record_velocity(tape, field, online, t, x_t);
  const NodeId v_target = record_velocity(tape, field, shadow, tp, x_tp);

  std::vector<double> reach(n), reach_target(n), row_weight(n);
  for (std::size_t r = 0; r < n; ++r) {
    reach[r] = end[r] - t[r];
    reach_target[r] = end[r] - tp[r];
    row_weight[r] = weights[r] / static_cast<double>(n);
  }
  const NodeId f = tape.add(tape.constant(x_t), tape.row_scale(v, reach));
  const NodeId f_target = tape.add(tape.constant(x_tp), tape.row_scale(v_target, reach_target));

  const NodeId df = tape.sub(f, f_target);
  const NodeId dv = tape.sub(v, v_target);
  const NodeId f_sq = tape.row_scale(tape.mul(df, df), row_weight);
  const NodeId v_sq = tape.row_scale(tape.mul(dv, dv), row_weight);
  const NodeId f_term = tape.sum(f_sq);
  const NodeId v_term = tape.sum(v_sq);
  const NodeId total = tape.add(f_term, tape.scale(v_term, alpha));

  LossResult out;
  out.report.f_term = tape.value(f_term)[0];
  out.report.v_term = tape.value(v_term)[0];
  out.report.total = tape.value(total)[0];
  out.report.segments = segments;
  out.report.batch = n;
  out.report.segment_totals.assign(segments, 0.0);
  const NumArray& fs = tape.value(f_sq);
  const NumArray& vs = tape.value(v_sq);
  for (std::size_t r = 0; r < n; ++r) {
    double row = 0.0;
    for (std::size_t c = 0; c < fs.cols(); ++c) row += fs(r, c) + alpha * vs(r, c);
    out.report.segment_totals[segment[r]] += row;
  }
  if (!std::isfinite(out.report.total)) throw NonFiniteError("consistency loss is not finite");

  tape.backward(total);
  out.grads = collect_grads(tape, online);
  out.ema_grads = collect_grads(tape, shadow);
  return out;
}

}  // namespace detail

/// Conditional flow matching: mean |v_theta(t, x_t) - u(t, x_t | x0, x1)|^2 with t ~ U[0,1].
inline LossResult cfm_loss(const VelocityField& field, const PathSpec& path, std::size_t batch, Rng& rng) {
  if (batch < 1) throw DomainError("cfm_loss: batch must be >= 1");
  PairBatch p = sample_pair(path.coupling, batch, rng);
  std::vector<double> t(batch);
  for (auto& v : t) v = rng.uniform();
  const NumArray x_t = path_point(path.kind, p.x0, p.x1, t);
  const NumArray u = conditional_velocity(path.kind, p.x0, p.x1, t);

  Tape tape;
  const auto online = bind_params(tape, field, ParamSet::kOnline);
  const NodeId v = record_velocity(tape, field, online, t, x_t);
  const NodeId diff = tape.sub(v, tape.constant(u));
  const NodeId total = tape.scale(tape.sum(tape.mul(diff, diff)), 1.0 / static_cast<double>(batch));

  LossResult out;
  out.report.total = tape.value(total)[0];
  out.report.f_term = out.report.total;
  out.report.batch = batch;
  out.report.segment_totals = {out.report.total};
  if (!std::isfinite(out.report.total)) throw NonFiniteError("cfm loss is not finite");
  tape.backward(total);
  out.grads = detail::collect_grads(tape, online);
  out.ema_grads.clear();
  for (const auto& p_ema : field.ema) out.ema_grads.push_back(NumArray::zeros(p_ema.shape));
  return out;
}

/// Single-segment velocity consistency: t ~ U[0, 1 - dt], endpoint map to T = 1,
/// target branch evaluated with the EMA parameters at (t + dt, x_{t+dt}).
/// This is the K = 1 multisegment objective and runs through the same code.
inline LossResult velocity_consistency_loss(const VelocityField& field, const PathSpec& path, std::size_t batch,
                                            double dt, double alpha, Rng& rng);

/// Multi-segment objective. Each row draws a segment uniformly (no draw when
/// K = 1), then t ~ U[i/K, (i+1)/K - dt]; weights lambda_i scale the row.
inline LossResult multisegment_loss(const VelocityField& field, const PathSpec& path, const SegmentSchedule& schedule,
                                    std::size_t batch, Rng& rng) {
  schedule.validate();
  if (batch < 1) throw DomainError("multisegment_loss: batch must be >= 1");
  const std::size_t k = schedule.segments;
  std::vector<std::size_t> seg(batch, 0);
  if (k > 1) {
    for (auto& i : seg) i = static_cast<std::size_t>(rng.below(k));
  }
  std::vector<double> start(batch), end(batch), w(batch);
  for (std::size_t r = 0; r < batch; ++r) {
    start[r] = schedule.start(seg[r]);
    end[r] = schedule.end(seg[r]);
    w[r] = schedule.weights[seg[r]];
  }
  const TrainBatch b = sample_train_batch(path, start, end, schedule.dt, rng);
  return detail::consistency_objective(field, b.t, b.tp, b.x_t, b.x_tp, end, w, seg, k, schedule.alpha);
}

inline LossResult velocity_consistency_loss(const VelocityField& field, const PathSpec& path, std::size_t batch,
                                            double dt, double alpha, Rng& rng) {
  if (batch < 1) throw DomainError("velocity_consistency_loss: batch must be >= 1");
  if (!(dt > 0.0 && dt < 1.0)) throw DomainError("velocity_consistency_loss: time gap must lie in (0,1)");
  if (!(alpha > 0.0)) throw DomainError("velocity_consistency_loss: alpha must be positive");
  return multisegment_loss(field, path, SegmentSchedule::uniform(1, dt, alpha), batch, rng);
}

/// Consistency distillation: x_{t+dt} is replaced by the teacher's Euler step
/// x_t + dt u_phi(t, x_t). The teacher is any BatchField and receives no gradient.
template <BatchField Teacher>
LossResult distill_loss(const VelocityField& student, const Teacher& teacher, const PathSpec& path, std::size_t batch,
                        double dt, double alpha, Rng& rng) {
  if (batch < 1) throw DomainError("distill_loss: batch must be >= 1");
  if (!(dt > 0.0 && dt < 1.0)) throw DomainError("distill_loss: time gap must lie in (0,1)");
  if (!(alpha > 0.0)) throw DomainError("distill_loss: alpha must be positive");
  if (teacher.dim() != student.dim()) throw ShapeError("distill_loss: teacher and student dimensions differ");
  const TrainBatch b = sample_train_tuple(path, 0.0, 1.0, dt, batch, rng);
  const NumArray u = teacher(std::span<const double>(b.t), b.x_t);
  NumArray x_hat = b.x_t;
  for (std::size_t i = 0; i < x_hat.size(); ++i) x_hat.data[i] += dt * u.data[i];
  const std::vector<double> end(batch, 1.0), w(batch, 1.0);
  const std::vector<std::size_t> seg(batch, 0);
  return detail::consistency_objective(student, b.t, b.tp, b.x_t, x_hat, end, w, seg, 1, alpha);
}

}  // namespace cfm
