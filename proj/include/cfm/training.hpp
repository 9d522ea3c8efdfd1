#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>

#include "cfm/error.hpp"
#include "cfm/losses.hpp"
#include "cfm/nd.hpp"
#include "cfm/paths.hpp"
#include "cfm/rng.hpp"
#include "cfm/velocity_net.hpp"

namespace cfm {

enum class LossKind { kCfm, kConsistency, kMultisegment, kDistill };

inline const char* loss_name(LossKind k) {
  switch (k) {
    case LossKind::kCfm: return "cfm";
    case LossKind::kConsistency: return "consistency";
    case LossKind::kMultisegment: return "multisegment";
    case LossKind::kDistill: return "distill";
  }
  return "?";
}

inline LossKind parse_loss(const std::string& s) {
  for (auto k : {LossKind::kCfm, LossKind::kConsistency, LossKind::kMultisegment, LossKind::kDistill}) {
    if (s == loss_name(k)) return k;
  }
  throw DomainError("unknown loss kind '" + s + "'");
}

struct TrainSettings {
  LossKind loss = LossKind::kConsistency;
  PathSpec path;
  SegmentSchedule schedule;
  std::size_t batch = 256;
  std::size_t steps = 20000;
  AdamConfig adam;
  double ema_decay = 0.999;
  std::uint64_t seed = 0;
};

struct StepInfo {
  std::size_t step = 0;
  LossReport report;
  double grad_norm = 0.0;
};

inline double global_norm(const Params& g) {
  double s = 0.0;
  for (const auto& p : g) {
    for (double v : p.data) s += v * v;
  }
  return std::sqrt(s);
}

/// One optimisation step: loss -> backward -> Adam on theta -> EMA update.
/// `teacher` is required for distillation and ignored otherwise.
inline StepInfo train_step(VelocityField& field, AdamState& adam, const TrainSettings& s, Rng& data_rng,
                           const VelocityField* teacher) {
  LossResult r;
  switch (s.loss) {
    case LossKind::kCfm:
      r = cfm_loss(field, s.path, s.batch, data_rng);
      break;
    case LossKind::kConsistency:
      r = velocity_consistency_loss(field, s.path, s.batch, s.schedule.dt, s.schedule.alpha, data_rng);
      break;
    case LossKind::kMultisegment:
      r = multisegment_loss(field, s.path, s.schedule, s.batch, data_rng);
      break;
    case LossKind::kDistill: {
      if (!teacher) throw StateError("distillation requires a teacher field");
      const NetField u(*teacher, ParamSet::kEma);
      r = distill_loss(field, u, s.path, s.batch, s.schedule.dt, s.schedule.alpha, data_rng);
      break;
    }
  }
  StepInfo info;
  info.report = r.report;
  info.grad_norm = global_norm(r.grads);
  if (!std::isfinite(info.report.total) || !std::isfinite(info.grad_norm)) {
    throw NonFiniteError("training produced a non-finite loss or gradient");
  }
  adam_step(field.online, r.grads, adam);
  ema_update(field, s.ema_decay);
  info.step = static_cast<std::size_t>(adam.step);
  return info;
}

/// Runs `s.steps` steps. The callback sees every step and may stop early by
/// returning false.
inline void train(VelocityField& field, const TrainSettings& s, const VelocityField* teacher = nullptr,
                  const std::function<bool(const StepInfo&)>& on_step = {}) {
  if (s.loss == LossKind::kMultisegment) s.schedule.validate();
  AdamState adam(s.adam, field.online);
  Rng data_rng(s.seed, Stream::kData);
  for (std::size_t k = 0; k < s.steps; ++k) {
    const StepInfo info = train_step(field, adam, s, data_rng, teacher);
    if (on_step && !on_step(info)) break;
  }
}

}  // namespace cfm
