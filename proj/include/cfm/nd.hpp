#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "cfm/error.hpp"

namespace cfm {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

// Storage aligned to Eigen's widest packet. With plain malloc alignment the
// vectorised products peel a heap-address-dependent number of leading terms,
// which changes summation order and breaks run-to-run bit equality.
using Buffer = std::vector<double, Eigen::aligned_allocator<double>>;

/// Dense row-major array of doubles. Rank 1 and rank 2 cover every use here;
/// higher ranks are stored but only touched elementwise.
struct NumArray {
  std::vector<std::size_t> shape;
  Buffer data;

  NumArray() = default;
  NumArray(std::vector<std::size_t> s, const std::vector<double>& d)
      : NumArray(std::move(s), Buffer(d.begin(), d.end())) {}
  NumArray(std::vector<std::size_t> s, std::initializer_list<double> d) : NumArray(std::move(s), Buffer(d)) {}
  NumArray(std::vector<std::size_t> s, Buffer d) : shape(std::move(s)), data(std::move(d)) {
    if (count(shape) != data.size()) {
      throw ShapeError("NumArray: shape holds " + std::to_string(count(shape)) + " values, data has " +
                       std::to_string(data.size()));
    }
  }

  static NumArray zeros(std::vector<std::size_t> s) {
    const std::size_t n = count(s);
    return NumArray(std::move(s), Buffer(n, 0.0));
  }
  static NumArray filled(std::vector<std::size_t> s, double value) {
    const std::size_t n = count(s);
    return NumArray(std::move(s), Buffer(n, value));
  }
  static NumArray matrix(std::size_t rows, std::size_t cols) { return zeros({rows, cols}); }
  static NumArray matrix(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    Buffer d;
    d.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw ShapeError("NumArray::matrix: ragged rows");
      d.insert(d.end(), row.begin(), row.end());
    }
    return NumArray({r, c}, std::move(d));
  }
  static NumArray vector(const std::vector<double>& v) { return NumArray({v.size()}, v); }
  static NumArray vector(Buffer v) {
    const std::size_t n = v.size();
    return NumArray({n}, std::move(v));
  }
  static NumArray vector(std::initializer_list<double> v) { return NumArray({v.size()}, Buffer(v)); }
  static NumArray scalar(double v) { return NumArray({1}, {v}); }

  static std::size_t count(const std::vector<std::size_t>& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
  }

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t rows() const { return shape.empty() ? 1 : shape[0]; }
  std::size_t cols() const {
    if (shape.size() < 2) return 1;
    return std::accumulate(shape.begin() + 1, shape.end(), std::size_t{1}, std::multiplies<>());
  }

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }
  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }

  std::span<double> row(std::size_t r) { return {data.data() + r * cols(), cols()}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols(), cols()}; }

  MatrixMap mat() {
    return MatrixMap(data.data(), static_cast<Eigen::Index>(rows()), static_cast<Eigen::Index>(cols()));
  }
  ConstMatrixMap mat() const {
    return ConstMatrixMap(data.data(), static_cast<Eigen::Index>(rows()), static_cast<Eigen::Index>(cols()));
  }

  bool all_finite() const {
    return std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const NumArray&, const NumArray&) = default;
};

inline std::string shape_string(const std::vector<std::size_t>& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

inline void ensure_finite(const NumArray& a, const char* where) {
  if (!a.all_finite()) throw NonFiniteError(std::string("non-finite value produced by ") + where);
}

// ---------------------------------------------------------------------------
// Smooth activations
// ---------------------------------------------------------------------------

enum class Activation { kGelu, kSoftplus };

// GELU in its tanh form: smooth everywhere and vectorisable through Eigen.
inline constexpr double kGeluScale = 0.7978845608028654;  // sqrt(2/pi)
inline constexpr double kGeluCubic = 0.044715;

inline double gelu(double x) { return 0.5 * x * (1.0 + std::tanh(kGeluScale * (x + kGeluCubic * x * x * x))); }
inline double gelu_grad(double x) {
  const double th = std::tanh(kGeluScale * (x + kGeluCubic * x * x * x));
  return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * kGeluScale * (1.0 + 3.0 * kGeluCubic * x * x);
}
inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }
inline double softplus_grad(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double activate(Activation a, double x) { return a == Activation::kGelu ? gelu(x) : softplus(x); }
inline double activate_grad(Activation a, double x) {
  return a == Activation::kGelu ? gelu_grad(x) : softplus_grad(x);
}

using ArrayMap = Eigen::Map<Eigen::ArrayXd>;
using ConstArrayMap = Eigen::Map<const Eigen::ArrayXd>;

/// out = act(pre), elementwise over n values.
inline void activate_span(Activation a, const double* pre, double* out, std::size_t n) {
  const ConstArrayMap x(pre, static_cast<Eigen::Index>(n));
  ArrayMap y(out, static_cast<Eigen::Index>(n));
  if (a == Activation::kGelu) {
    // 0.5 (1 + tanh(z)) == 1 / (1 + exp(-2z)); Eigen vectorises exp but not tanh for doubles.
    y = x / (1.0 + (-2.0 * kGeluScale * (x + kGeluCubic * x.cube())).exp());
  } else {
    for (std::size_t i = 0; i < n; ++i) out[i] = softplus(pre[i]);
  }
}

/// acc += g * act'(pre), elementwise over n values.
inline void accumulate_activation_grad(Activation a, const double* pre, const double* g, double* acc, std::size_t n) {
  const ConstArrayMap x(pre, static_cast<Eigen::Index>(n));
  const ConstArrayMap gm(g, static_cast<Eigen::Index>(n));
  ArrayMap y(acc, static_cast<Eigen::Index>(n));
  if (a == Activation::kGelu) {
    const Eigen::ArrayXd sig = 1.0 / (1.0 + (-2.0 * kGeluScale * (x + kGeluCubic * x.cube())).exp());
    y += gm * (sig + x * sig * (1.0 - sig) * (2.0 * kGeluScale) * (1.0 + 3.0 * kGeluCubic * x.square()));
  } else {
    for (std::size_t i = 0; i < n; ++i) acc[i] += g[i] * softplus_grad(pre[i]);
  }
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

enum class LeafKind { kParameter, kInput, kConstant };

struct NodeId {
  std::size_t index = 0;
  friend bool operator==(NodeId, NodeId) = default;
};

/// Reverse-mode tape over a fixed primitive set. Values are computed eagerly
/// while recording; forward() replays the recorded graph after input leaves
/// have been rebound. Constant leaves (and anything computed only from them)
/// never receive gradient.
class Tape {
 public:
  enum class Op { kLeaf, kMatMul, kMatMulBt, kAddBias, kAdd, kSub, kMul, kScale, kRowScale, kActivate, kSum };

  NodeId parameter(NumArray value) { return leaf(std::move(value), LeafKind::kParameter); }
  NodeId input(NumArray value) { return leaf(std::move(value), LeafKind::kInput); }
  NodeId constant(NumArray value) { return leaf(std::move(value), LeafKind::kConstant); }

  NodeId leaf(NumArray value, LeafKind kind) {
    ensure_finite(value, "leaf");
    Node n;
    n.op = Op::kLeaf;
    n.kind = kind;
    n.needs_grad = kind != LeafKind::kConstant;
    n.value = std::move(value);
    return push(std::move(n));
  }

  /// a[n,k] * b[k,m]
  NodeId matmul(NodeId a, NodeId b) { return record(Op::kMatMul, a, b); }
  /// a[n,k] * b[m,k]^T; the layout used for weight matrices stored [out, in].
  NodeId matmul_bt(NodeId a, NodeId b) { return record(Op::kMatMulBt, a, b); }
  /// x[n,m] + bias[m] broadcast over rows; the only broadcast supported.
  NodeId add_bias(NodeId x, NodeId bias) { return record(Op::kAddBias, x, bias); }
  NodeId add(NodeId a, NodeId b) { return record(Op::kAdd, a, b); }
  NodeId sub(NodeId a, NodeId b) { return record(Op::kSub, a, b); }
  NodeId mul(NodeId a, NodeId b) { return record(Op::kMul, a, b); }
  NodeId scale(NodeId a, double c) {
    Node n = make(Op::kScale, a, a);
    n.scalar = c;
    return finish(std::move(n));
  }
  /// Multiplies row r of a[n,m] by factors[r].
  NodeId row_scale(NodeId a, std::vector<double> factors) {
    Node n = make(Op::kRowScale, a, a);
    n.aux = std::move(factors);
    return finish(std::move(n));
  }
  NodeId activate(NodeId a, Activation act) {
    Node n = make(Op::kActivate, a, a);
    n.activation = act;
    return finish(std::move(n));
  }
  NodeId sum(NodeId a) { return record(Op::kSum, a, a); }

  const NumArray& value(NodeId id) const { return at(id).value; }
  const NumArray& grad(NodeId id) const {
    if (!has_grads_) throw StateError("Tape::grad: backward has not been run");
    return at(id).grad;
  }
  LeafKind kind(NodeId id) const { return at(id).kind; }
  bool is_leaf(NodeId id) const { return at(id).op == Op::kLeaf; }
  std::size_t size() const { return nodes_.size(); }

  std::vector<NodeId> leaves(LeafKind kind) const {
    std::vector<NodeId> out;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      if (nodes_[i].op == Op::kLeaf && nodes_[i].kind == kind) out.push_back({i});
    }
    return out;
  }

  /// Overwrites a leaf value. The tape becomes stale until forward() runs.
  void set_leaf(NodeId id, NumArray value) {
    Node& n = nodes_.at(id.index);
    if (n.op != Op::kLeaf) throw StateError("Tape::set_leaf: node is not a leaf");
    if (n.value.shape != value.shape) {
      throw ShapeError("Tape::set_leaf: expected " + shape_string(n.value.shape) + ", got " +
                       shape_string(value.shape));
    }
    ensure_finite(value, "leaf");
    n.value = std::move(value);
    fresh_ = false;
    has_grads_ = false;
  }

  /// Rebinds input leaves (in recording order) and replays every recorded op.
  const NumArray& forward(std::span<const NumArray> inputs) {
    const auto ins = leaves(LeafKind::kInput);
    if (inputs.size() != ins.size()) {
      throw ShapeError("Tape::forward: expected " + std::to_string(ins.size()) + " inputs, got " +
                       std::to_string(inputs.size()));
    }
    for (std::size_t i = 0; i < ins.size(); ++i) set_leaf(ins[i], inputs[i]);
    return replay();
  }

  const NumArray& replay() {
    for (auto& n : nodes_) {
      if (n.op != Op::kLeaf) compute(n);
    }
    fresh_ = true;
    has_grads_ = false;
    return nodes_.back().value;
  }

  /// Accumulates d(seed . out)/d(node) for every node that depends on a
  /// parameter or input leaf.
  void backward(NodeId out, const NumArray& seed) {
    if (!fresh_) throw StateError("Tape::backward: forward values are stale; run forward() first");
    const Node& o = at(out);
    if (o.value.shape != seed.shape) {
      throw ShapeError("Tape::backward: seed shape " + shape_string(seed.shape) + " does not match output " +
                       shape_string(o.value.shape));
    }
    for (auto& n : nodes_) n.grad = NumArray::zeros(n.value.shape);
    nodes_[out.index].grad = seed;
    for (std::size_t i = out.index + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.op == Op::kLeaf || !n.needs_grad) continue;
      propagate(n);
    }
    has_grads_ = true;
  }

  void backward(NodeId out) { backward(out, NumArray::filled(at(out).value.shape, 1.0)); }

 private:
  struct Node {
    Op op = Op::kLeaf;
    LeafKind kind = LeafKind::kConstant;
    bool needs_grad = false;
    std::size_t a = 0, b = 0;
    double scalar = 0.0;
    Activation activation = Activation::kGelu;
    std::vector<double> aux;
    NumArray value;
    NumArray grad;
  };

  const Node& at(NodeId id) const {
    if (id.index >= nodes_.size()) throw StateError("Tape: unknown node");
    return nodes_[id.index];
  }

  NodeId push(Node n) {
    nodes_.push_back(std::move(n));
    has_grads_ = false;
    return {nodes_.size() - 1};
  }

  Node make(Op op, NodeId a, NodeId b) const {
    Node n;
    n.op = op;
    at(a);
    at(b);
    n.a = a.index;
    n.b = b.index;
    n.needs_grad = nodes_[a.index].needs_grad || nodes_[b.index].needs_grad;
    return n;
  }

  NodeId record(Op op, NodeId a, NodeId b) { return finish(make(op, a, b)); }

  NodeId finish(Node n) {
    if (!fresh_) throw StateError("Tape: cannot record onto a stale tape; run forward() first");
    compute(n);
    return push(std::move(n));
  }

  static void need_same(const NumArray& x, const NumArray& y, const char* op) {
    if (x.shape != y.shape) {
      throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(x.shape) + " vs " +
                       shape_string(y.shape));
    }
  }
  static void need_matrix(const NumArray& x, const char* op) {
    if (x.rank() != 2) throw ShapeError(std::string(op) + ": operand must be rank 2, got " + shape_string(x.shape));
  }

  void compute(Node& n) const {
    const NumArray& x = nodes_[n.a].value;
    const NumArray& y = nodes_[n.b].value;
    switch (n.op) {
      case Op::kLeaf:
        return;
      case Op::kMatMul: {
        need_matrix(x, "matmul");
        need_matrix(y, "matmul");
        if (x.cols() != y.rows()) throw ShapeError("matmul: " + shape_string(x.shape) + " x " + shape_string(y.shape));
        n.value = NumArray::matrix(x.rows(), y.cols());
        n.value.mat().noalias() = x.mat() * y.mat();
        break;
      }
      case Op::kMatMulBt: {
        need_matrix(x, "matmul_bt");
        need_matrix(y, "matmul_bt");
        if (x.cols() != y.cols()) {
          throw ShapeError("matmul_bt: " + shape_string(x.shape) + " x " + shape_string(y.shape) + "^T");
        }
        n.value = NumArray::matrix(x.rows(), y.rows());
        n.value.mat().noalias() = x.mat() * y.mat().transpose();
        break;
      }
      case Op::kAddBias: {
        need_matrix(x, "add_bias");
        if (y.size() != x.cols()) throw ShapeError("add_bias: bias length does not match columns");
        n.value = x;
        const std::size_t c = x.cols();
        for (std::size_t i = 0; i < n.value.size(); ++i) n.value.data[i] += y.data[i % c];
        break;
      }
      case Op::kAdd:
      case Op::kSub:
      case Op::kMul: {
        need_same(x, y, n.op == Op::kAdd ? "add" : n.op == Op::kSub ? "sub" : "mul");
        n.value = x;
        for (std::size_t i = 0; i < x.size(); ++i) {
          if (n.op == Op::kAdd) n.value.data[i] += y.data[i];
          else if (n.op == Op::kSub) n.value.data[i] -= y.data[i];
          else n.value.data[i] *= y.data[i];
        }
        break;
      }
      case Op::kScale:
        n.value = x;
        for (auto& v : n.value.data) v *= n.scalar;
        break;
      case Op::kRowScale: {
        if (n.aux.size() != x.rows()) throw ShapeError("row_scale: factor count does not match rows");
        n.value = x;
        const std::size_t c = x.cols();
        for (std::size_t i = 0; i < x.size(); ++i) n.value.data[i] *= n.aux[i / c];
        break;
      }
      case Op::kActivate:
        n.value = NumArray::zeros(x.shape);
        activate_span(n.activation, x.data.data(), n.value.data.data(), x.size());
        break;
      case Op::kSum:
        n.value = NumArray::scalar(std::accumulate(x.data.begin(), x.data.end(), 0.0));
        break;
    }
    ensure_finite(n.value, op_name(n.op));
  }

  void propagate(Node& n) {
    Node& pa = nodes_[n.a];
    Node& pb = nodes_[n.b];
    const NumArray& g = n.grad;
    switch (n.op) {
      case Op::kLeaf:
        return;
      case Op::kMatMul:
        if (pa.needs_grad) pa.grad.mat().noalias() += g.mat() * pb.value.mat().transpose();
        if (pb.needs_grad) pb.grad.mat().noalias() += pa.value.mat().transpose() * g.mat();
        break;
      case Op::kMatMulBt:
        if (pa.needs_grad) pa.grad.mat().noalias() += g.mat() * pb.value.mat();
        if (pb.needs_grad) pb.grad.mat().noalias() += g.mat().transpose() * pa.value.mat();
        break;
      case Op::kAddBias: {
        if (pa.needs_grad) add_into(pa.grad, g, 1.0);
        if (pb.needs_grad) {
          const std::size_t c = g.cols();
          for (std::size_t i = 0; i < g.size(); ++i) pb.grad.data[i % c] += g.data[i];
        }
        break;
      }
      case Op::kAdd:
        if (pa.needs_grad) add_into(pa.grad, g, 1.0);
        if (pb.needs_grad) add_into(pb.grad, g, 1.0);
        break;
      case Op::kSub:
        if (pa.needs_grad) add_into(pa.grad, g, 1.0);
        if (pb.needs_grad) add_into(pb.grad, g, -1.0);
        break;
      case Op::kMul:
        // Both operands may be the same node (x*x); accumulate each side separately.
        if (pa.needs_grad) {
          for (std::size_t i = 0; i < g.size(); ++i) pa.grad.data[i] += g.data[i] * pb.value.data[i];
        }
        if (pb.needs_grad) {
          for (std::size_t i = 0; i < g.size(); ++i) pb.grad.data[i] += g.data[i] * pa.value.data[i];
        }
        break;
      case Op::kScale:
        if (pa.needs_grad) add_into(pa.grad, g, n.scalar);
        break;
      case Op::kRowScale: {
        if (!pa.needs_grad) break;
        const std::size_t c = g.cols();
        for (std::size_t i = 0; i < g.size(); ++i) pa.grad.data[i] += g.data[i] * n.aux[i / c];
        break;
      }
      case Op::kActivate:
        if (!pa.needs_grad) break;
        accumulate_activation_grad(n.activation, pa.value.data.data(), g.data.data(), pa.grad.data.data(), g.size());
        break;
      case Op::kSum:
        if (!pa.needs_grad) break;
        for (auto& v : pa.grad.data) v += g.data[0];
        break;
    }
  }

  static void add_into(NumArray& dst, const NumArray& src, double c) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst.data[i] += c * src.data[i];
  }

  static const char* op_name(Op op) {
    switch (op) {
      case Op::kLeaf: return "leaf";
      case Op::kMatMul: return "matmul";
      case Op::kMatMulBt: return "matmul_bt";
      case Op::kAddBias: return "add_bias";
      case Op::kAdd: return "add";
      case Op::kSub: return "sub";
      case Op::kMul: return "mul";
      case Op::kScale: return "scale";
      case Op::kRowScale: return "row_scale";
      case Op::kActivate: return "activate";
      case Op::kSum: return "sum";
    }
    return "?";
  }

  std::vector<Node> nodes_;
  bool fresh_ = true;
  bool has_grads_ = false;
};

/// Compares backward() against central differences for every scalar entry of
/// every parameter leaf. The output node must be scalar. The tape is restored
/// to its original values before returning. Returns the worst
/// |a - fd| / max(|a| + |fd|, 1e-4): relative for ordinary entries, absolute
/// for entries that are zero up to rounding.
inline double check_gradient_fd(Tape& tape, NodeId out, double h) {
  require(h > 0.0, "check_gradient_fd: step must be positive");
  if (tape.value(out).size() != 1) throw ShapeError("check_gradient_fd: output must be scalar");
  tape.replay();
  tape.backward(out);
  const auto params = tape.leaves(LeafKind::kParameter);
  std::vector<NumArray> grads;
  for (NodeId p : params) grads.push_back(tape.grad(p));
  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    const NodeId p = params[k];
    const NumArray original = tape.value(p);
    const NumArray& analytic = grads[k];
    for (std::size_t i = 0; i < original.size(); ++i) {
      NumArray probe = original;
      probe.data[i] = original.data[i] + h;
      tape.set_leaf(p, probe);
      tape.replay();
      const double f_plus = tape.value(out).data[0];
      probe.data[i] = original.data[i] - h;
      tape.set_leaf(p, probe);
      tape.replay();
      const double f_minus = tape.value(out).data[0];
      const double central = (f_plus - f_minus) / (2.0 * h);
      if (!std::isfinite(central)) throw NonFiniteError("check_gradient_fd: non-finite difference");
      const double a = analytic.data[i];
      worst = std::max(worst, std::abs(a - central) / std::max(std::abs(a) + std::abs(central), 1e-4));
    }
    tape.set_leaf(p, original);
  }
  tape.replay();
  return worst;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamConfig {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::vector<NumArray> m;
  std::vector<NumArray> v;
  std::uint64_t step = 0;

  AdamState() = default;
  AdamState(AdamConfig c, const std::vector<NumArray>& layout) : config(c) {
    for (const auto& p : layout) {
      m.push_back(NumArray::zeros(p.shape));
      v.push_back(NumArray::zeros(p.shape));
    }
  }
};

/// Bias-corrected Adam update applied in place.
inline void adam_step(std::vector<NumArray>& params, const std::vector<NumArray>& grads, AdamState& state) {
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    throw ShapeError("adam_step: parameter, gradient and moment layouts differ");
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (params[k].shape != grads[k].shape || params[k].shape != state.m[k].shape) {
      throw ShapeError("adam_step: layout mismatch in tensor " + std::to_string(k));
    }
    if (!grads[k].all_finite()) throw NonFiniteError("adam_step: non-finite gradient");
  }
  const AdamConfig& c = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correct1 = 1.0 - std::pow(c.beta1, t);
  const double correct2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k].data;
    const auto& g = grads[k].data;
    auto& m = state.m[k].data;
    auto& v = state.v[k].data;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
      p[i] -= c.lr * (m[i] / correct1) / (std::sqrt(v[i] / correct2) + c.eps);
    }
  }
}

}  // namespace cfm
