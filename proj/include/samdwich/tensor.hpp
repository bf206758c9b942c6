#pragma once

// Dense float64 tensors with a reverse-mode tape.
//
// Values are plain `Tensor`s. A `Tape` records an operation whenever one of
// its inputs is tracked (has a node id on that tape); untracked inputs are
// treated as constants. There is no broadcasting: every elementwise op needs
// identical shapes, and `scale` is the only scalar op.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace samdwich {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class OpError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class TapeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

struct NodeRef {
  std::uint64_t tape_id = 0;
  std::uint64_t generation = 0;
  std::size_t index = 0;
  friend bool operator==(const NodeRef&, const NodeRef&) = default;
};

struct Tensor {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::optional<NodeRef> node_id;

  Tensor() = default;
  Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (shape.empty()) throw ShapeError("tensor shape must have at least one dimension");
    for (auto dim : shape)
      if (dim == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
    if (shape_numel(shape) != data.size())
      throw ShapeError("tensor data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(shape));
  }

  static Tensor zeros(Shape s) {
    auto n = shape_numel(s);
    return Tensor(std::move(s), std::vector<double>(n, 0.0));
  }
  static Tensor filled(Shape s, double v) {
    auto n = shape_numel(s);
    return Tensor(std::move(s), std::vector<double>(n, v));
  }
  static Tensor scalar(double v) { return Tensor({1}, {v}); }
  static Tensor identity(std::size_t n) {
    auto t = zeros({n, n});
    for (std::size_t i = 0; i < n; ++i) t.data[i * n + i] = 1.0;
    return t;
  }

  std::size_t numel() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t rows() const { return shape.at(0); }
  std::size_t cols() const { return shape.size() > 1 ? shape[1] : 1; }
  double& at(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
  double at(std::size_t i, std::size_t j) const { return data[i * shape[1] + j]; }
  double item() const {
    if (data.size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape));
    return data[0];
  }

  /// Value copy without tape tracking.
  Tensor detached() const { return Tensor(shape, data); }
  bool same_values(const Tensor& o) const { return shape == o.shape && data == o.data; }
};

enum class OpKind : std::uint8_t {
  kLeaf,
  kAdd,
  kSub,
  kMul,
  kScale,
  kMatmul,
  kTranspose,
  kConcat,
  kReshape,
  kMean,
  kSum,
  kSoftmax,
  kSigmoid,
  kRelu,
  kLog,
  kPower,
  kClamp,
};

inline constexpr std::string_view op_name(OpKind k) {
  switch (k) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kScale: return "scale";
    case OpKind::kMatmul: return "matmul";
    case OpKind::kTranspose: return "transpose";
    case OpKind::kConcat: return "concat";
    case OpKind::kReshape: return "reshape";
    case OpKind::kMean: return "mean";
    case OpKind::kSum: return "sum";
    case OpKind::kSoftmax: return "softmax";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kRelu: return "relu";
    case OpKind::kLog: return "log";
    case OpKind::kPower: return "power";
    case OpKind::kClamp: return "clamp";
  }
  return "unknown";
}

inline OpKind op_from_name(std::string_view name) {
  for (int k = static_cast<int>(OpKind::kAdd); k <= static_cast<int>(OpKind::kClamp); ++k) {
    auto kind = static_cast<OpKind>(k);
    if (op_name(kind) == name) return kind;
  }
  throw OpError("unknown op '" + std::string(name) + "'");
}

/// Attributes for the ops that take them. `axis == kAllAxes` reduces every axis.
struct OpAttrs {
  static constexpr int kAllAxes = -1;
  int axis = 0;
  double scalar = 1.0;  // scale factor or exponent
  Shape shape;          // reshape target
  double lo = 0.0, hi = 0.0;
};

namespace detail {

inline void require_same(std::string_view op, const Tensor& a, const Tensor& b) {
  if (a.shape != b.shape)
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape) + " vs " +
                     shape_str(b.shape));
}

inline void require_rank(std::string_view op, const Tensor& a, std::size_t r) {
  if (a.rank() != r)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(r) + ", got shape " +
                     shape_str(a.shape));
}

// outer = product of dims before axis, inner = product after.
struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
};

inline AxisSplit split_axis(const Shape& s, int axis) {
  AxisSplit sp;
  for (int i = 0; i < static_cast<int>(s.size()); ++i) {
    if (i < axis) sp.outer *= s[i];
    else if (i == axis) sp.len = s[i];
    else sp.inner *= s[i];
  }
  return sp;
}

inline Shape reduced_shape(const Shape& s, int axis) {
  if (axis == OpAttrs::kAllAxes) return {1};
  Shape out;
  for (int i = 0; i < static_cast<int>(s.size()); ++i)
    if (i != axis) out.push_back(s[i]);
  if (out.empty()) out.push_back(1);
  return out;
}

inline void check_axis(std::string_view op, const Tensor& a, int axis, bool allow_all) {
  if (allow_all && axis == OpAttrs::kAllAxes) return;
  if (axis < 0 || axis >= static_cast<int>(a.rank()))
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " +
                     shape_str(a.shape));
}

inline void matmul_into(const double* a, const double* b, double* c, std::size_t m,
                        std::size_t k, std::size_t n) {
  std::fill(c, c + m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

inline double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Forward kernels. Validation of shapes happens here so errors name the op.
inline Tensor forward(OpKind kind, std::span<const Tensor* const> in, const OpAttrs& at) {
  auto arity = [&](std::size_t n) {
    if (in.size() != n)
      throw OpError(std::string(op_name(kind)) + ": expected " + std::to_string(n) +
                    " inputs, got " + std::to_string(in.size()));
  };
  switch (kind) {
    case OpKind::kAdd:
    case OpKind::kSub:
    case OpKind::kMul: {
      arity(2);
      const Tensor& a = *in[0];
      const Tensor& b = *in[1];
      require_same(op_name(kind), a, b);
      Tensor out = Tensor::zeros(a.shape);
      const std::size_t n = a.numel();
      if (kind == OpKind::kAdd)
        for (std::size_t i = 0; i < n; ++i) out.data[i] = a.data[i] + b.data[i];
      else if (kind == OpKind::kSub)
        for (std::size_t i = 0; i < n; ++i) out.data[i] = a.data[i] - b.data[i];
      else
        for (std::size_t i = 0; i < n; ++i) out.data[i] = a.data[i] * b.data[i];
      return out;
    }
    case OpKind::kScale: {
      arity(1);
      Tensor out = in[0]->detached();
      for (auto& v : out.data) v *= at.scalar;
      return out;
    }
    case OpKind::kMatmul: {
      arity(2);
      const Tensor& a = *in[0];
      const Tensor& b = *in[1];
      require_rank("matmul", a, 2);
      require_rank("matmul", b, 2);
      if (a.shape[1] != b.shape[0])
        throw ShapeError("matmul: shape mismatch " + shape_str(a.shape) + " vs " +
                         shape_str(b.shape));
      Tensor out = Tensor::zeros({a.shape[0], b.shape[1]});
      matmul_into(a.data.data(), b.data.data(), out.data.data(), a.shape[0], a.shape[1],
                  b.shape[1]);
      return out;
    }
    case OpKind::kTranspose: {
      arity(1);
      const Tensor& a = *in[0];
      require_rank("transpose", a, 2);
      const std::size_t m = a.shape[0], n = a.shape[1];
      Tensor out = Tensor::zeros({n, m});
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out.data[j * m + i] = a.data[i * n + j];
      return out;
    }
    case OpKind::kConcat: {
      if (in.empty()) throw OpError("concat: no inputs");
      const Tensor& first = *in[0];
      check_axis("concat", first, at.axis, false);
      Shape out_shape = first.shape;
      out_shape[at.axis] = 0;
      for (const Tensor* t : in) {
        if (t->rank() != first.rank())
          throw ShapeError("concat: shape mismatch " + shape_str(first.shape) + " vs " +
                           shape_str(t->shape));
        for (std::size_t d = 0; d < first.rank(); ++d)
          if (static_cast<int>(d) != at.axis && t->shape[d] != first.shape[d])
            throw ShapeError("concat: shape mismatch " + shape_str(first.shape) + " vs " +
                             shape_str(t->shape));
        out_shape[at.axis] += t->shape[at.axis];
      }
      Tensor out = Tensor::zeros(out_shape);
      const auto osp = split_axis(out_shape, at.axis);
      std::size_t offset = 0;
      for (const Tensor* t : in) {
        const auto sp = split_axis(t->shape, at.axis);
        const std::size_t chunk = sp.len * sp.inner;
        for (std::size_t o = 0; o < sp.outer; ++o)
          std::copy_n(t->data.begin() + o * chunk, chunk,
                      out.data.begin() + o * osp.len * osp.inner + offset * osp.inner);
        offset += sp.len;
      }
      return out;
    }
    case OpKind::kReshape: {
      arity(1);
      if (shape_numel(at.shape) != in[0]->numel() || at.shape.empty())
        throw ShapeError("reshape: cannot reshape " + shape_str(in[0]->shape) + " to " +
                         shape_str(at.shape));
      return Tensor(at.shape, in[0]->data);
    }
    case OpKind::kMean:
    case OpKind::kSum: {
      arity(1);
      const Tensor& a = *in[0];
      check_axis(op_name(kind), a, at.axis, true);
      if (at.axis == OpAttrs::kAllAxes) {
        double s = 0;
        for (double v : a.data) s += v;
        if (kind == OpKind::kMean) s /= static_cast<double>(a.numel());
        return Tensor::scalar(s);
      }
      const auto sp = split_axis(a.shape, at.axis);
      Tensor out = Tensor::zeros(reduced_shape(a.shape, at.axis));
      for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t l = 0; l < sp.len; ++l)
          for (std::size_t i = 0; i < sp.inner; ++i)
            out.data[o * sp.inner + i] += a.data[(o * sp.len + l) * sp.inner + i];
      if (kind == OpKind::kMean)
        for (auto& v : out.data) v /= static_cast<double>(sp.len);
      return out;
    }
    case OpKind::kSoftmax: {
      arity(1);
      const Tensor& a = *in[0];
      check_axis("softmax", a, at.axis, false);
      const auto sp = split_axis(a.shape, at.axis);
      Tensor out = Tensor::zeros(a.shape);
      for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t i = 0; i < sp.inner; ++i) {
          auto idx = [&](std::size_t l) { return (o * sp.len + l) * sp.inner + i; };
          double mx = -std::numeric_limits<double>::infinity();
          for (std::size_t l = 0; l < sp.len; ++l) mx = std::max(mx, a.data[idx(l)]);
          double z = 0;
          for (std::size_t l = 0; l < sp.len; ++l) {
            const double e = std::exp(a.data[idx(l)] - mx);
            out.data[idx(l)] = e;
            z += e;
          }
          for (std::size_t l = 0; l < sp.len; ++l) out.data[idx(l)] /= z;
        }
      return out;
    }
    case OpKind::kSigmoid:
    case OpKind::kRelu:
    case OpKind::kLog:
    case OpKind::kPower:
    case OpKind::kClamp: {
      arity(1);
      Tensor out = in[0]->detached();
      for (auto& v : out.data) {
        switch (kind) {
          case OpKind::kSigmoid: v = sigmoid_scalar(v); break;
          case OpKind::kRelu: v = v > 0 ? v : 0.0; break;
          case OpKind::kLog:
            if (!(v > 0)) throw std::domain_error("log: non-positive input");
            v = std::log(v);
            break;
          case OpKind::kPower:
            if (v < 0) throw std::domain_error("power: negative base");
            v = std::pow(v, at.scalar);
            break;
          default: v = std::clamp(v, at.lo, at.hi); break;
        }
      }
      return out;
    }
    case OpKind::kLeaf: break;
  }
  throw OpError("unknown op kind " + std::to_string(static_cast<int>(kind)));
}

}  // namespace detail

/// Map from node to gradient, produced by `Tape::backward`.
class Gradients {
 public:
  Gradients() = default;
  Gradients(std::uint64_t tape_id, std::uint64_t gen, std::vector<std::optional<Tensor>> g)
      : tape_id_(tape_id), generation_(gen), grads_(std::move(g)) {}

  /// Gradient for a tracked tensor; a zero tensor of its shape if it did not
  /// influence the loss.
  Tensor of(const Tensor& t) const {
    if (!t.node_id || t.node_id->tape_id != tape_id_ || t.node_id->generation != generation_)
      throw TapeError("gradient requested for a tensor not tracked by this tape");
    const auto& g = grads_.at(t.node_id->index);
    return g ? *g : Tensor::zeros(t.shape);
  }
  bool has(const Tensor& t) const {
    return t.node_id && t.node_id->tape_id == tape_id_ && t.node_id->generation == generation_ &&
           grads_.at(t.node_id->index).has_value();
  }

 private:
  std::uint64_t tape_id_ = 0;
  std::uint64_t generation_ = 0;
  std::vector<std::optional<Tensor>> grads_;
};

class Tape {
 public:
  Tape() : id_(next_id()) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Registers `value` as a differentiable leaf.
  Tensor leaf(Tensor value) {
    value.requires_grad = true;
    value.node_id.reset();
    Record r;
    r.kind = OpKind::kLeaf;
    r.shape = value.shape;
    records_.push_back(std::move(r));
    value.node_id = NodeRef{id_, generation_, records_.size() - 1};
    return value;
  }

  /// Clears all records; tensors tracked before the clear are detached.
  void clear() {
    records_.clear();
    ++generation_;
  }

  std::size_t size() const { return records_.size(); }

  Tensor apply(OpKind kind, std::span<const Tensor* const> inputs, const OpAttrs& attrs = {}) {
    if (kind == OpKind::kLeaf) throw OpError("leaf is not an applicable op");
    Tensor out = detail::forward(kind, inputs, attrs);
    bool track = false;
    for (const Tensor* t : inputs) track = track || tracked(*t);
    if (!track) return out;
    Record r;
    r.kind = kind;
    r.attrs = attrs;
    r.shape = out.shape;
    for (const Tensor* t : inputs) {
      r.parents.push_back(tracked(*t) ? std::optional<std::size_t>(t->node_id->index)
                                      : std::nullopt);
      r.inputs.push_back(t->detached());
    }
    r.output = out.data;
    records_.push_back(std::move(r));
    out.requires_grad = true;
    out.node_id = NodeRef{id_, generation_, records_.size() - 1};
    return out;
  }

  Tensor apply(OpKind kind, std::initializer_list<const Tensor*> inputs, const OpAttrs& attrs = {}) {
    return apply(kind, std::span<const Tensor* const>(inputs.begin(), inputs.size()), attrs);
  }

  // Convenience wrappers.
  Tensor add(const Tensor& a, const Tensor& b) { return apply(OpKind::kAdd, {&a, &b}); }
  Tensor sub(const Tensor& a, const Tensor& b) { return apply(OpKind::kSub, {&a, &b}); }
  Tensor mul(const Tensor& a, const Tensor& b) { return apply(OpKind::kMul, {&a, &b}); }
  Tensor scale(const Tensor& a, double s) { return apply(OpKind::kScale, {&a}, attrs_scalar(s)); }
  Tensor matmul(const Tensor& a, const Tensor& b) { return apply(OpKind::kMatmul, {&a, &b}); }
  Tensor transpose(const Tensor& a) { return apply(OpKind::kTranspose, {&a}); }
  Tensor concat(std::span<const Tensor* const> parts, int axis) {
    OpAttrs at;
    at.axis = axis;
    return apply(OpKind::kConcat, parts, at);
  }
  Tensor concat(std::initializer_list<const Tensor*> parts, int axis) {
    return concat(std::span<const Tensor* const>(parts.begin(), parts.size()), axis);
  }
  Tensor reshape(const Tensor& a, Shape s) {
    OpAttrs at;
    at.shape = std::move(s);
    return apply(OpKind::kReshape, {&a}, at);
  }
  Tensor sum(const Tensor& a, int axis = OpAttrs::kAllAxes) {
    return apply(OpKind::kSum, {&a}, attrs_axis(axis));
  }
  Tensor mean(const Tensor& a, int axis = OpAttrs::kAllAxes) {
    return apply(OpKind::kMean, {&a}, attrs_axis(axis));
  }
  Tensor softmax(const Tensor& a, int axis) { return apply(OpKind::kSoftmax, {&a}, attrs_axis(axis)); }
  Tensor sigmoid(const Tensor& a) { return apply(OpKind::kSigmoid, {&a}); }
  Tensor relu(const Tensor& a) { return apply(OpKind::kRelu, {&a}); }
  Tensor log(const Tensor& a) { return apply(OpKind::kLog, {&a}); }
  Tensor power(const Tensor& a, double p) { return apply(OpKind::kPower, {&a}, attrs_scalar(p)); }
  Tensor clamp(const Tensor& a, double lo, double hi) {
    OpAttrs at;
    at.lo = lo;
    at.hi = hi;
    return apply(OpKind::kClamp, {&a}, at);
  }

  /// Reverse sweep from a [1]-shaped loss.
  Gradients backward(const Tensor& loss) const {
    if (loss.shape != Shape{1})
      throw TapeError("backward: loss must have shape [1], got " + shape_str(loss.shape));
    if (!loss.node_id) throw TapeError("backward: loss is not tracked by any tape");
    if (loss.node_id->tape_id != id_ || loss.node_id->generation != generation_)
      throw TapeError("backward: detached tape (loss recorded on a cleared or different tape)");

    std::vector<std::vector<double>> g(records_.size());
    g[loss.node_id->index] = {1.0};
    for (std::size_t idx = loss.node_id->index + 1; idx-- > 0;) {
      if (g[idx].empty()) continue;
      const Record& r = records_[idx];
      if (r.kind == OpKind::kLeaf) continue;
      propagate(r, g[idx], g);
    }
    std::vector<std::optional<Tensor>> out(records_.size());
    for (std::size_t i = 0; i < records_.size(); ++i)
      if (!g[i].empty()) out[i] = Tensor(records_[i].shape, std::move(g[i]));
    return Gradients(id_, generation_, std::move(out));
  }

 private:
  struct Record {
    OpKind kind = OpKind::kLeaf;
    std::vector<std::optional<std::size_t>> parents;
    std::vector<Tensor> inputs;
    std::vector<double> output;
    Shape shape;
    OpAttrs attrs;
  };

  static std::uint64_t next_id() {
    static std::atomic<std::uint64_t> counter{1};
    return counter.fetch_add(1);
  }
  static OpAttrs attrs_axis(int axis) {
    OpAttrs a;
    a.axis = axis;
    return a;
  }
  static OpAttrs attrs_scalar(double s) {
    OpAttrs a;
    a.scalar = s;
    return a;
  }

  bool tracked(const Tensor& t) const {
    if (!t.node_id) return false;
    if (t.node_id->tape_id != id_) return false;
    if (t.node_id->generation != generation_)
      throw TapeError("input tensor belongs to a cleared tape generation");
    return true;
  }

  static void accumulate(std::vector<std::vector<double>>& g, std::size_t idx,
                         const std::vector<double>& delta) {
    auto& dst = g[idx];
    if (dst.empty()) {
      dst = delta;
      return;
    }
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += delta[i];
  }

  static void propagate(const Record& r, const std::vector<double>& go,
                        std::vector<std::vector<double>>& g) {
    auto want = [&](std::size_t i) { return r.parents[i].has_value(); };
    auto push = [&](std::size_t i, const std::vector<double>& d) {
      if (want(i)) accumulate(g, *r.parents[i], d);
    };
    const std::size_t n = go.size();
    switch (r.kind) {
      case OpKind::kAdd:
        push(0, go);
        push(1, go);
        return;
      case OpKind::kSub: {
        push(0, go);
        if (want(1)) {
          std::vector<double> d(n);
          for (std::size_t i = 0; i < n; ++i) d[i] = -go[i];
          push(1, d);
        }
        return;
      }
      case OpKind::kMul: {
        for (std::size_t k = 0; k < 2; ++k) {
          if (!want(k)) continue;
          const auto& other = r.inputs[1 - k].data;
          std::vector<double> d(n);
          for (std::size_t i = 0; i < n; ++i) d[i] = go[i] * other[i];
          push(k, d);
        }
        return;
      }
      case OpKind::kScale: {
        std::vector<double> d(n);
        for (std::size_t i = 0; i < n; ++i) d[i] = go[i] * r.attrs.scalar;
        push(0, d);
        return;
      }
      case OpKind::kMatmul: {
        const Tensor& a = r.inputs[0];
        const Tensor& b = r.inputs[1];
        const std::size_t m = a.shape[0], k = a.shape[1], nn = b.shape[1];
        if (want(0)) {  // dA = dC * B^T
          std::vector<double> d(m * k, 0.0);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              double s = 0;
              const double* grow = go.data() + i * nn;
              const double* brow = b.data.data() + p * nn;
              for (std::size_t j = 0; j < nn; ++j) s += grow[j] * brow[j];
              d[i * k + p] = s;
            }
          push(0, d);
        }
        if (want(1)) {  // dB = A^T * dC
          std::vector<double> d(k * nn, 0.0);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              const double av = a.data[i * k + p];
              if (av == 0.0) continue;
              const double* grow = go.data() + i * nn;
              double* drow = d.data() + p * nn;
              for (std::size_t j = 0; j < nn; ++j) drow[j] += av * grow[j];
            }
          push(1, d);
        }
        return;
      }
      case OpKind::kTranspose: {
        const std::size_t m = r.inputs[0].shape[0], nn = r.inputs[0].shape[1];
        std::vector<double> d(m * nn);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < nn; ++j) d[i * nn + j] = go[j * m + i];
        push(0, d);
        return;
      }
      case OpKind::kConcat: {
        const int axis = r.attrs.axis;
        const auto osp = detail::split_axis(r.shape, axis);
        std::size_t offset = 0;
        for (std::size_t k = 0; k < r.inputs.size(); ++k) {
          const auto sp = detail::split_axis(r.inputs[k].shape, axis);
          if (want(k)) {
            const std::size_t chunk = sp.len * sp.inner;
            std::vector<double> d(r.inputs[k].numel());
            for (std::size_t o = 0; o < sp.outer; ++o)
              std::copy_n(go.begin() + o * osp.len * osp.inner + offset * osp.inner, chunk,
                          d.begin() + o * chunk);
            push(k, d);
          }
          offset += sp.len;
        }
        return;
      }
      case OpKind::kReshape:
        push(0, go);
        return;
      case OpKind::kMean:
      case OpKind::kSum: {
        const Tensor& a = r.inputs[0];
        std::vector<double> d(a.numel());
        if (r.attrs.axis == OpAttrs::kAllAxes) {
          const double v = r.kind == OpKind::kMean ? go[0] / static_cast<double>(a.numel()) : go[0];
          std::fill(d.begin(), d.end(), v);
        } else {
          const auto sp = detail::split_axis(a.shape, r.attrs.axis);
          const double f = r.kind == OpKind::kMean ? 1.0 / static_cast<double>(sp.len) : 1.0;
          for (std::size_t o = 0; o < sp.outer; ++o)
            for (std::size_t l = 0; l < sp.len; ++l)
              for (std::size_t i = 0; i < sp.inner; ++i)
                d[(o * sp.len + l) * sp.inner + i] = go[o * sp.inner + i] * f;
        }
        push(0, d);
        return;
      }
      case OpKind::kSoftmax: {
        const auto sp = detail::split_axis(r.shape, r.attrs.axis);
        const auto& y = r.output;
        std::vector<double> d(n);
        for (std::size_t o = 0; o < sp.outer; ++o)
          for (std::size_t i = 0; i < sp.inner; ++i) {
            auto idx = [&](std::size_t l) { return (o * sp.len + l) * sp.inner + i; };
            double dot = 0;
            for (std::size_t l = 0; l < sp.len; ++l) dot += go[idx(l)] * y[idx(l)];
            for (std::size_t l = 0; l < sp.len; ++l) d[idx(l)] = y[idx(l)] * (go[idx(l)] - dot);
          }
        push(0, d);
        return;
      }
      case OpKind::kSigmoid: {
        std::vector<double> d(n);
        for (std::size_t i = 0; i < n; ++i) d[i] = go[i] * r.output[i] * (1.0 - r.output[i]);
        push(0, d);
        return;
      }
      case OpKind::kRelu: {
        std::vector<double> d(n);
        for (std::size_t i = 0; i < n; ++i) d[i] = r.inputs[0].data[i] > 0 ? go[i] : 0.0;
        push(0, d);
        return;
      }
      case OpKind::kLog: {
        std::vector<double> d(n);
        for (std::size_t i = 0; i < n; ++i) d[i] = go[i] / r.inputs[0].data[i];
        push(0, d);
        return;
      }
      case OpKind::kPower: {
        const double p = r.attrs.scalar;
        std::vector<double> d(n);
        for (std::size_t i = 0; i < n; ++i) {
          const double x = r.inputs[0].data[i];
          d[i] = p == 0.0 ? 0.0 : go[i] * p * std::pow(x, p - 1.0);
        }
        push(0, d);
        return;
      }
      case OpKind::kClamp: {
        std::vector<double> d(n);
        for (std::size_t i = 0; i < n; ++i) {
          const double x = r.inputs[0].data[i];
          d[i] = (x >= r.attrs.lo && x <= r.attrs.hi) ? go[i] : 0.0;
        }
        push(0, d);
        return;
      }
      case OpKind::kLeaf: return;
    }
  }

  std::uint64_t id_;
  std::uint64_t generation_ = 0;
  std::vector<Record> records_;
};

/// Max over coordinates of |analytic - numeric| / max(1, |numeric|), using
/// central differences with step `eps`.
inline double grad_check(const std::function<Tensor(Tape&, const Tensor&)>& f, const Tensor& x,
                         double eps) {
  if (!(eps > 0)) throw std::invalid_argument("grad_check: eps must be positive");
  Tape tape;
  Tensor leaf = tape.leaf(x.detached());
  Tensor y = f(tape, leaf);
  if (y.numel() != 1) throw TapeError("grad_check: function must be scalar-valued, got shape " +
                                      shape_str(y.shape));
  Tensor analytic = Tensor::zeros(x.shape);
  if (y.node_id) analytic = tape.backward(y).of(leaf);

  double worst = 0;
  Tensor probe = x.detached();
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double orig = probe.data[i];
    Tape t1;
    probe.data[i] = orig + eps;
    const double fp = f(t1, probe).data[0];
    probe.data[i] = orig - eps;
    const double fm = f(t1, probe).data[0];
    probe.data[i] = orig;
    const double numeric = (fp - fm) / (2 * eps);
    worst = std::max(worst, std::abs(analytic.data[i] - numeric) / std::max(1.0, std::abs(numeric)));
  }
  return worst;
}

// Plain-value helpers used by model code.

inline Tensor row_vector(std::vector<double> v) {
  const auto n = v.size();
  return Tensor({1, n}, std::move(v));
}

inline Tensor ones(std::size_t rows, std::size_t cols) { return Tensor::filled({rows, cols}, 1.0); }

inline bool all_finite(const Tensor& t) {
  return std::all_of(t.data.begin(), t.data.end(), [](double v) { return std::isfinite(v); });
}

}  // namespace samdwich
