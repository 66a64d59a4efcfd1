#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace fdct {

using Shape = std::vector<std::int64_t>;

struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& m) : std::runtime_error("shape error: " + m) {}
};
struct DomainError : std::runtime_error {
  explicit DomainError(const std::string& m) : std::runtime_error("domain error: " + m) {}
};
struct ValueError : std::runtime_error {
  explicit ValueError(const std::string& m) : std::runtime_error("value error: " + m) {}
};
struct IoError : std::runtime_error {
  explicit IoError(const std::string& m) : std::runtime_error("io error: " + m) {}
};

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

template <typename Real>
struct TensorNode {
  Shape shape;
  std::vector<Real> value;
  std::vector<Real> grad;  // empty until the backward pass touches this node
  bool requires_grad = false;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), Real(0));
  }
};

// Wengert-list tape. Ops append backward closures in execution order;
// replaying them reversed is a reverse topological walk of the graph.
template <typename Real>
class Tape {
 public:
  void record(std::vector<std::shared_ptr<TensorNode<Real>>> nodes, std::function<void()> fn) {
    for (auto& n : nodes) touched_.push_back(std::move(n));
    entries_.push_back(std::move(fn));
  }

  // Drops all saved intermediates.
  void clear() {
    entries_.clear();
    touched_.clear();
  }

  std::size_t size() const { return entries_.size(); }

  void clear_touched_grads() {
    for (auto& n : touched_) n->grad.clear();
  }

  void replay_reverse() {
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
  }

  static Tape*& active() {
    static thread_local Tape* t = nullptr;
    return t;
  }

 private:
  std::vector<std::function<void()>> entries_;
  std::vector<std::shared_ptr<TensorNode<Real>>> touched_;
};

template <typename Real>
class TapeScope {
 public:
  explicit TapeScope(Tape<Real>& t) : prev_(Tape<Real>::active()) { Tape<Real>::active() = &t; }
  ~TapeScope() { Tape<Real>::active() = prev_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<Real>* prev_;
};

// Suspends recording (forward-only evaluation).
template <typename Real>
class NoGradScope {
 public:
  NoGradScope() : prev_(Tape<Real>::active()) { Tape<Real>::active() = nullptr; }
  ~NoGradScope() { Tape<Real>::active() = prev_; }
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape<Real>* prev_;
};

template <typename Real>
class TensorT {
 public:
  using Node = TensorNode<Real>;

  TensorT() : node_(std::make_shared<Node>()) {}

  static TensorT zeros(Shape s) { return full(std::move(s), Real(0)); }

  static TensorT full(Shape s, Real v) {
    TensorT t;
    auto n = shape_numel(s);
    if (n < 0) throw ShapeError("negative dimension in " + shape_str(s));
    t.node_->shape = std::move(s);
    t.node_->value.assign(static_cast<std::size_t>(n), v);
    return t;
  }

  static TensorT from_data(Shape s, std::vector<Real> data) {
    if (shape_numel(s) != static_cast<std::int64_t>(data.size()))
      throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " + shape_str(s));
    TensorT t;
    t.node_->shape = std::move(s);
    t.node_->value = std::move(data);
    return t;
  }

  static TensorT scalar(Real v) { return from_data({}, {v}); }

  const Shape& shape() const { return node_->shape; }
  std::int64_t numel() const { return static_cast<std::int64_t>(node_->value.size()); }
  std::int64_t dim(int i) const {
    int r = rank();
    if (i < 0) i += r;
    if (i < 0 || i >= r) throw ShapeError("axis " + std::to_string(i) + " out of range for rank " + std::to_string(r));
    return node_->shape[static_cast<std::size_t>(i)];
  }
  int rank() const { return static_cast<int>(node_->shape.size()); }

  const std::vector<Real>& values() const { return node_->value; }
  std::vector<Real>& values_mut() { return node_->value; }
  const std::vector<Real>& grad() const { return node_->grad; }
  std::vector<Real>& grad_mut() { return node_->grad; }
  bool has_grad() const { return !node_->grad.empty(); }

  bool requires_grad() const { return node_->requires_grad; }
  TensorT& set_requires_grad(bool b) {
    node_->requires_grad = b;
    return *this;
  }

  Real item() const {
    if (numel() != 1) throw ShapeError("item() on tensor with " + std::to_string(numel()) + " elements");
    return node_->value[0];
  }

  Real at(std::initializer_list<std::int64_t> idx) const {
    return node_->value[static_cast<std::size_t>(flat_index(idx))];
  }

  std::int64_t flat_index(std::initializer_list<std::int64_t> idx) const {
    if (static_cast<int>(idx.size()) != rank()) throw ShapeError("index rank mismatch");
    std::int64_t off = 0;
    int d = 0;
    for (auto i : idx) {
      if (i < 0 || i >= node_->shape[static_cast<std::size_t>(d)]) throw ShapeError("index out of bounds");
      off = off * node_->shape[static_cast<std::size_t>(d)] + i;
      ++d;
    }
    return off;
  }

  std::shared_ptr<Node> node() const { return node_; }

  void zero_grad() { node_->grad.clear(); }

 private:
  std::shared_ptr<Node> node_;
};

// Marks the output of an op as recorded if any input requires grad and a tape
// is active. `nodes` must contain every node the closure reads or writes.
template <typename Real>
inline void record_op(std::initializer_list<TensorT<Real>> inputs, TensorT<Real>& out,
                      std::function<void()> bw) {
  auto* tape = Tape<Real>::active();
  if (!tape) return;
  bool need = false;
  for (const auto& in : inputs) need = need || in.requires_grad();
  if (!need) return;
  out.node()->requires_grad = true;
  std::vector<std::shared_ptr<TensorNode<Real>>> nodes;
  nodes.reserve(inputs.size() + 1);
  for (const auto& in : inputs) nodes.push_back(in.node());
  nodes.push_back(out.node());
  tape->record(std::move(nodes), std::move(bw));
}

// Reverse pass from a scalar. Grads of every node the tape touched are reset
// first, so repeated calls from the same forward give bit-identical results.
template <typename Real>
inline void backward(const TensorT<Real>& scalar) {
  if (scalar.numel() != 1) throw ShapeError("backward() expects a scalar, got " + shape_str(scalar.shape()));
  auto* tape = Tape<Real>::active();
  if (!tape) throw ValueError("backward() called with no active tape");
  if (!scalar.requires_grad()) throw ValueError("backward() target did not participate in the tape");
  tape->clear_touched_grads();
  scalar.node()->ensure_grad();
  scalar.node()->grad[0] = Real(1);
  tape->replay_reverse();
}

// ---------- broadcasting helpers ----------

// Trailing-dimension broadcasting, numpy style.
inline Shape broadcast_shape(const Shape& a, const Shape& b) {
  Shape out(std::max(a.size(), b.size()));
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::int64_t da = i < out.size() - a.size() ? 1 : a[i - (out.size() - a.size())];
    std::int64_t db = i < out.size() - b.size() ? 1 : b[i - (out.size() - b.size())];
    if (da != db && da != 1 && db != 1)
      throw ShapeError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    out[i] = std::max(da, db);
  }
  return out;
}

// Row-major strides of `in` right-aligned against `out`; 0 where broadcast.
inline std::vector<std::int64_t> broadcast_strides(const Shape& in, const Shape& out) {
  std::vector<std::int64_t> strides(out.size(), 0);
  std::int64_t s = 1;
  for (int i = static_cast<int>(in.size()) - 1; i >= 0; --i) {
    std::size_t oi = out.size() - in.size() + static_cast<std::size_t>(i);
    strides[oi] = (in[static_cast<std::size_t>(i)] == 1 && out[oi] != 1) ? 0 : s;
    s *= in[static_cast<std::size_t>(i)];
  }
  return strides;
}

// Odometer over an output shape tracking flat offsets into two broadcast inputs.
struct Bcast2Iter {
  const Shape& out;
  std::vector<std::int64_t> sa, sb, coord;
  std::int64_t oa = 0, ob = 0;

  Bcast2Iter(const Shape& out_shape, const Shape& a, const Shape& b)
      : out(out_shape), sa(broadcast_strides(a, out_shape)), sb(broadcast_strides(b, out_shape)),
        coord(out_shape.size(), 0) {}

  void next() {
    for (int d = static_cast<int>(out.size()) - 1; d >= 0; --d) {
      auto ud = static_cast<std::size_t>(d);
      if (++coord[ud] < out[ud]) {
        oa += sa[ud];
        ob += sb[ud];
        return;
      }
      coord[ud] = 0;
      oa -= sa[ud] * (out[ud] - 1);
      ob -= sb[ud] * (out[ud] - 1);
    }
  }
};

}  // namespace fdct
