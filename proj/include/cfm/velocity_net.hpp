#pragma once

#include <cmath>
#include <concepts>
#include <cstdint>
#include <functional>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "cfm/error.hpp"
#include "cfm/nd.hpp"
#include "cfm/rng.hpp"

namespace cfm {

/// Sinusoidal features of t plus raw t. Frequencies are geometric with ratio
/// sqrt(2) starting at base_frequency.
struct TimeEmbedding {
  std::size_t frequencies = 8;
  double base_frequency = std::numbers::pi;

  std::size_t dim() const { return 2 * frequencies + 1; }

  double frequency(std::size_t k) const { return base_frequency * std::pow(2.0, 0.5 * static_cast<double>(k)); }

  void embed(double t, std::span<double> out) const {
    out[0] = t;
    for (std::size_t k = 0; k < frequencies; ++k) {
      const double w = frequency(k) * t;
      out[1 + 2 * k] = std::sin(w);
      out[2 + 2 * k] = std::cos(w);
    }
  }
};

struct NetSpec {
  std::size_t data_dim = 2;
  std::vector<std::size_t> hidden = {128, 128, 128, 128};
  TimeEmbedding embedding;
  Activation activation = Activation::kGelu;

  std::size_t input_dim() const { return embedding.dim() + data_dim; }

  /// Shapes in storage order: layer-major, weights [out, in] then bias [out].
  std::vector<std::vector<std::size_t>> layout() const {
    std::vector<std::vector<std::size_t>> shapes;
    std::size_t in = input_dim();
    for (std::size_t layer = 0; layer <= hidden.size(); ++layer) {
      const std::size_t out = layer < hidden.size() ? hidden[layer] : data_dim;
      shapes.push_back({out, in});
      shapes.push_back({out});
      in = out;
    }
    return shapes;
  }

  void validate() const {
    if (data_dim < 1) throw DomainError("NetSpec: data dimension must be >= 1");
    for (std::size_t w : hidden) {
      if (w < 1) throw DomainError("NetSpec: hidden widths must be >= 1");
    }
    if (embedding.frequencies > 64) throw DomainError("NetSpec: too many time frequencies");
    if (!(embedding.base_frequency > 0.0)) throw DomainError("NetSpec: base frequency must be positive");
  }
};

using Params = std::vector<NumArray>;

enum class ParamSet { kOnline, kEma };

/// v_theta with its EMA shadow. Both parameter sets share NetSpec::layout().
struct VelocityField {
  NetSpec spec;
  Params online;
  Params ema;

  const Params& params(ParamSet set) const { return set == ParamSet::kOnline ? online : ema; }
  std::size_t dim() const { return spec.data_dim; }
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : online) n += p.size();
    return n;
  }
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases; the EMA
/// copy starts identical.
inline VelocityField init_field(const NetSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed, Stream::kInit);
  VelocityField field{spec, {}, {}};
  const auto shapes = spec.layout();
  for (std::size_t k = 0; k < shapes.size(); k += 2) {
    const std::size_t fan_in = shapes[k][1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (std::size_t j = k; j < k + 2; ++j) {
      NumArray p = NumArray::zeros(shapes[j]);
      for (auto& v : p.data) v = rng.uniform(-bound, bound);
      field.online.push_back(std::move(p));
    }
  }
  field.ema = field.online;
  return field;
}

inline void check_time(double t, const char* where) {
  if (!(t >= 0.0 && t <= 1.0)) throw DomainError(std::string(where) + ": time " + std::to_string(t) + " outside [0,1]");
}

inline void check_points(const NumArray& x, std::size_t d, const char* where) {
  if (x.rank() != 2 || x.cols() != d) {
    throw ShapeError(std::string(where) + ": expected points of shape [n," + std::to_string(d) + "], got " +
                     shape_string(x.shape));
  }
}

/// Network input rows [embed(t_r), x_r].
inline NumArray network_input(const NetSpec& spec, std::span<const double> t, const NumArray& x) {
  check_points(x, spec.data_dim, "network_input");
  if (t.size() != x.rows()) throw ShapeError("network_input: one time per row required");
  const std::size_t e = spec.embedding.dim();
  NumArray in = NumArray::matrix(x.rows(), spec.input_dim());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    check_time(t[r], "eval_velocity");
    auto row = in.row(r);
    spec.embedding.embed(t[r], row.subspan(0, e));
    for (std::size_t c = 0; c < spec.data_dim; ++c) row[e + c] = x(r, c);
  }
  return in;
}

/// Tape-free MLP forward.
inline NumArray mlp_apply(const NetSpec& spec, const Params& params, const NumArray& input) {
  RowMatrix h = input.mat();
  const std::size_t layers = spec.hidden.size() + 1;
  for (std::size_t l = 0; l < layers; ++l) {
    const NumArray& w = params[2 * l];
    const NumArray& b = params[2 * l + 1];
    RowMatrix z = h * w.mat().transpose();
    z.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b.data.data(), static_cast<Eigen::Index>(b.size()));
    if (l + 1 < layers) activate_span(spec.activation, z.data(), z.data(), static_cast<std::size_t>(z.size()));
    h = std::move(z);
  }
  NumArray out = NumArray::matrix(static_cast<std::size_t>(h.rows()), static_cast<std::size_t>(h.cols()));
  out.mat() = h;
  ensure_finite(out, "eval_velocity");
  return out;
}

/// v(t_r, x_r) for each row r.
inline NumArray eval_velocity(const VelocityField& field, ParamSet set, std::span<const double> t, const NumArray& x) {
  return mlp_apply(field.spec, field.params(set), network_input(field.spec, t, x));
}

inline NumArray eval_velocity(const VelocityField& field, ParamSet set, double t, const NumArray& x) {
  const std::vector<double> ts(x.rows(), t);
  return eval_velocity(field, set, ts, x);
}

/// Registers a parameter set on a tape. Online parameters become parameter
/// leaves; any other set is recorded as constants so no gradient reaches it.
inline std::vector<NodeId> bind_params(Tape& tape, const VelocityField& field, ParamSet set) {
  std::vector<NodeId> ids;
  const LeafKind kind = set == ParamSet::kOnline ? LeafKind::kParameter : LeafKind::kConstant;
  for (const auto& p : field.params(set)) ids.push_back(tape.leaf(p, kind));
  return ids;
}

inline NodeId mlp_record(Tape& tape, const NetSpec& spec, std::span<const NodeId> params, NodeId input) {
  NodeId h = input;
  const std::size_t layers = spec.hidden.size() + 1;
  for (std::size_t l = 0; l < layers; ++l) {
    h = tape.add_bias(tape.matmul_bt(h, params[2 * l]), params[2 * l + 1]);
    if (l + 1 < layers) h = tape.activate(h, spec.activation);
  }
  return h;
}

/// Records v(t_r, x_r) on a tape. x is a tape node (so gradients can flow to
/// points when they are inputs) but the time features are constants.
inline NodeId record_velocity(Tape& tape, const VelocityField& field, std::span<const NodeId> params,
                              std::span<const double> t, const NumArray& x) {
  return mlp_record(tape, field.spec, params, tape.constant(network_input(field.spec, t, x)));
}

/// x + (T - t) v(t, x): the one-jump prediction of the segment end T.
inline NumArray flow_endpoint_f(const VelocityField& field, ParamSet set, double t, const NumArray& x,
                                double segment_end) {
  check_time(t, "flow_endpoint_f");
  check_time(segment_end, "flow_endpoint_f");
  if (t > segment_end) throw DomainError("flow_endpoint_f: t exceeds the segment end");
  NumArray out = x;
  if (t == segment_end) return out;
  const NumArray v = eval_velocity(field, set, t, x);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += (segment_end - t) * v.data[i];
  return out;
}

/// theta_ema <- mu * theta_ema + (1 - mu) * theta
inline void ema_update(VelocityField& field, double mu) {
  if (!(mu >= 0.0 && mu <= 1.0)) throw DomainError("ema_update: decay must lie in [0,1]");
  for (std::size_t k = 0; k < field.online.size(); ++k) {
    auto& shadow = field.ema[k].data;
    const auto& live = field.online[k].data;
    for (std::size_t i = 0; i < shadow.size(); ++i) shadow[i] = mu * shadow[i] + (1.0 - mu) * live[i];
  }
}

// ---------------------------------------------------------------------------
// Field adapters shared by the sampler, metrics and theorem checks.
// ---------------------------------------------------------------------------

/// A velocity field evaluated on a batch: row r of the result is v(t[r], x[r]).
template <class F>
concept BatchField = requires(const F& f, std::span<const double> t, const NumArray& x) {
  { f(t, x) } -> std::convertible_to<NumArray>;
  { f.dim() } -> std::convertible_to<std::size_t>;
};

/// One parameter set of a VelocityField seen as a BatchField.
class NetField {
 public:
  NetField(const VelocityField& field, ParamSet set) : field_(&field), set_(set) {}
  NumArray operator()(std::span<const double> t, const NumArray& x) const { return eval_velocity(*field_, set_, t, x); }
  std::size_t dim() const { return field_->dim(); }

 private:
  const VelocityField* field_;
  ParamSet set_;
};

/// Closed-form field given pointwise as fn(t, x, out).
class AnalyticField {
 public:
  using Fn = std::function<void(double, std::span<const double>, std::span<double>)>;

  AnalyticField(std::size_t dim, Fn fn, std::string name = {}) : dim_(dim), fn_(std::move(fn)), name_(std::move(name)) {}

  NumArray operator()(std::span<const double> t, const NumArray& x) const {
    check_points(x, dim_, "AnalyticField");
    NumArray out = NumArray::matrix(x.rows(), dim_);
    for (std::size_t r = 0; r < x.rows(); ++r) fn_(t[r], x.row(r), out.row(r));
    ensure_finite(out, "AnalyticField");
    return out;
  }
  std::size_t dim() const { return dim_; }
  const std::string& name() const { return name_; }

  static AnalyticField constant(std::vector<double> c) {
    const std::size_t d = c.size();
    return AnalyticField(
        d, [c](double, std::span<const double>, std::span<double> out) { std::copy(c.begin(), c.end(), out.begin()); },
        "constant");
  }

 private:
  std::size_t dim_;
  Fn fn_;
  std::string name_;
};

/// Counts batch evaluations; each call is one NFE for every row.
template <BatchField F>
class CountingField {
 public:
  explicit CountingField(const F& inner) : inner_(&inner) {}
  CountingField(const F&&) = delete;  // holds a pointer; the inner field must outlive it
  NumArray operator()(std::span<const double> t, const NumArray& x) const {
    ++calls_;
    return (*inner_)(t, x);
  }
  std::size_t dim() const { return inner_->dim(); }
  std::size_t calls() const { return calls_; }

 private:
  const F* inner_;
  mutable std::size_t calls_ = 0;
};

template <BatchField F>
NumArray eval_at(const F& field, double t, const NumArray& x) {
  const std::vector<double> ts(x.rows(), t);
  return field(ts, x);
}

}  // namespace cfm
