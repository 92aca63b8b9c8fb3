#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "otrack/rng.hpp"

namespace otrack {

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<int>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

template <typename S>
class Tape;

// Dense row-major tensor. Copies share storage; data is treated as immutable
// once an op has consumed the tensor (mutable access exists for leaf
// construction and optimizer updates between steps).
template <typename S>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape) {
    Tensor t;
    t.impl_ = std::make_shared<Impl>();
    t.impl_->shape = std::move(shape);
    t.impl_->data.assign(static_cast<size_t>(shape_numel(t.impl_->shape)), S(0));
    return t;
  }

  static Tensor full(Shape shape, S value) {
    Tensor t = zeros(std::move(shape));
    for (auto& v : t.impl_->data) v = value;
    t.check_finite("full");
    return t;
  }

  static Tensor scalar(S value) { return full({1}, value); }

  static Tensor from(Shape shape, std::vector<S> values) {
    if (static_cast<int64_t>(values.size()) != shape_numel(shape))
      throw ShapeError("Tensor::from: " + std::to_string(values.size()) +
                       " values for shape " + shape_str(shape));
    Tensor t;
    t.impl_ = std::make_shared<Impl>();
    t.impl_->shape = std::move(shape);
    t.impl_->data = std::move(values);
    t.check_finite("from");
    return t;
  }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  int dim(int i) const { return impl_->shape[static_cast<size_t>(i)]; }
  int64_t size() const { return static_cast<int64_t>(impl_->data.size()); }

  std::span<const S> data() const { return impl_->data; }
  // mutable view: leaf setup, optimizer updates, finite-difference probes
  std::span<S> raw() { return impl_->data; }

  S value() const {
    if (size() != 1) throw ShapeError("value(): tensor is not scalar, shape " + shape_str(shape()));
    return impl_->data[0];
  }

  S at(std::initializer_list<int> idx) const {
    if (static_cast<int>(idx.size()) != rank())
      throw ShapeError("at(): index rank mismatch");
    int64_t off = 0;
    int i = 0;
    for (int v : idx) {
      off = off * dim(i) + v;
      ++i;
    }
    return impl_->data[static_cast<size_t>(off)];
  }

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  Tensor& set_requires_grad(bool b) {
    impl_->requires_grad = b;
    return *this;
  }

  bool has_grad() const { return impl_ && !impl_->grad.empty(); }
  std::span<const S> grad() const { return impl_->grad; }

  // lazily allocated accumulation buffer, zero-initialized
  std::span<S> grad_accum() {
    if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), S(0));
    return impl_->grad;
  }

  void zero_grad() {
    if (impl_) impl_->grad.assign(impl_->data.size(), S(0));
  }
  void drop_grad() {
    if (impl_) impl_->grad.clear();
  }

  bool same_storage(const Tensor& o) const { return impl_ == o.impl_; }

  template <typename S2>
  Tensor<S2> cast() const {
    std::vector<S2> v(impl_->data.size());
    for (size_t i = 0; i < v.size(); ++i) v[i] = static_cast<S2>(impl_->data[i]);
    auto out = Tensor<S2>::from(impl_->shape, std::move(v));
    out.set_requires_grad(impl_->requires_grad);
    return out;
  }

  // deep copy of data, detached from any graph
  Tensor clone_detached() const {
    auto out = Tensor::from(impl_->shape, impl_->data);
    return out;
  }

  void check_finite(const char* op) const {
    for (const S v : impl_->data)
      if (!std::isfinite(static_cast<double>(v)))
        throw NumericError(std::string("non-finite value produced by op '") + op + "'");
  }

  uint64_t producer_tape() const { return impl_ ? impl_->producer_tape : 0; }
  void set_producer_tape(uint64_t id) { impl_->producer_tape = id; }

 private:
  struct Impl {
    Shape shape;
    std::vector<S> data;
    std::vector<S> grad;  // empty until populated
    bool requires_grad = false;
    uint64_t producer_tape = 0;  // id of the tape that recorded the producing op
  };
  std::shared_ptr<Impl> impl_;
};

// Ordered record of executed differentiable operations. Entries are appended
// during forward execution, so recording order is a topological order of the
// graph; backward() replays them reversed, visiting each node exactly once.
// The tape is confined to one thread.
template <typename S>
class Tape {
 public:
  Tape() : id_(next_id()++) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  uint64_t id() const { return id_; }
  size_t size() const { return entries_.size(); }

  void record(std::function<void()> backward_fn) {
    entries_.push_back(std::move(backward_fn));
  }

  void backward(Tensor<S> loss) {
    if (!loss.defined() || loss.size() != 1)
      throw ShapeError("backward: loss must be a defined scalar");
    if (!loss.requires_grad() || loss.producer_tape() != id_)
      throw NumericError("backward: loss is detached from this tape");
    loss.grad_accum()[0] += S(1);
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
    entries_.clear();  // consumed
  }

  void clear() { entries_.clear(); }

  static Tape*& active() {
    thread_local Tape* t = nullptr;
    return t;
  }

 private:
  static uint64_t& next_id() {
    static uint64_t id = 1;
    return id;
  }
  std::vector<std::function<void()>> entries_;
  uint64_t id_;
};

template <typename S>
class TapeScope {
 public:
  explicit TapeScope(Tape<S>& t) : prev_(Tape<S>::active()) { Tape<S>::active() = &t; }
  ~TapeScope() { Tape<S>::active() = prev_; }
  TapeScope(const TapeScope&) = delete;

 private:
  Tape<S>* prev_;
};

namespace detail {

// Wire the output of an op into the active tape. `backward_fn` reads
// out.grad() and accumulates into the inputs it captured.
template <typename S>
inline void autograd(std::initializer_list<Tensor<S>> inputs, Tensor<S>& out,
                     std::function<void()> backward_fn) {
  Tape<S>* tape = Tape<S>::active();
  if (!tape) return;
  bool any = false;
  for (const auto& in : inputs)
    if (in.requires_grad()) {
      any = true;
      break;
    }
  if (!any) return;
  out.set_requires_grad(true);
  out.set_producer_tape(tape->id());
  tape->record(std::move(backward_fn));
}

template <typename S>
inline void autograd_vec(const std::vector<Tensor<S>>& inputs, Tensor<S>& out,
                         std::function<void()> backward_fn) {
  Tape<S>* tape = Tape<S>::active();
  if (!tape) return;
  bool any = false;
  for (const auto& in : inputs)
    if (in.requires_grad()) {
      any = true;
      break;
    }
  if (!any) return;
  out.set_requires_grad(true);
  out.set_producer_tape(tape->id());
  tape->record(std::move(backward_fn));
}

}  // namespace detail

// Named map of trainable tensors with deterministic iteration order.
template <typename S>
class ParamStore {
 public:
  Tensor<S>& create(const std::string& name, Shape shape) {
    auto t = Tensor<S>::zeros(std::move(shape));
    t.set_requires_grad(true);
    return add(name, std::move(t));
  }

  Tensor<S>& add(const std::string& name, Tensor<S> t) {
    if (map_.count(name)) throw std::runtime_error("ParamStore: duplicate name '" + name + "'");
    order_.push_back(name);
    auto [it, ok] = map_.emplace(name, std::move(t));
    it->second.set_requires_grad(true);
    return it->second;
  }

  Tensor<S>& get(const std::string& name) {
    auto it = map_.find(name);
    if (it == map_.end()) throw std::runtime_error("ParamStore: unknown name '" + name + "'");
    return it->second;
  }
  const Tensor<S>& get(const std::string& name) const {
    auto it = map_.find(name);
    if (it == map_.end()) throw std::runtime_error("ParamStore: unknown name '" + name + "'");
    return it->second;
  }

  bool contains(const std::string& name) const { return map_.count(name) > 0; }
  const std::vector<std::string>& names() const { return order_; }
  size_t size() const { return order_.size(); }

  int64_t total_elements() const {
    int64_t n = 0;
    for (const auto& name : order_) n += map_.at(name).size();
    return n;
  }

  void zero_grads() {
    for (const auto& name : order_) map_.at(name).zero_grad();
  }

  template <typename S2>
  ParamStore<S2> cast() const {
    ParamStore<S2> out;
    for (const auto& name : order_) out.add(name, map_.at(name).template cast<S2>());
    return out;
  }

 private:
  std::vector<std::string> order_;
  std::unordered_map<std::string, Tensor<S>> map_;
};

// fan-in scaled uniform noise in [-1/sqrt(fan_in), 1/sqrt(fan_in)]
template <typename S>
Tensor<S> fanin_uniform(Shape shape, int fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<S> v(static_cast<size_t>(shape_numel(shape)));
  for (auto& x : v) x = static_cast<S>(rng.uniform(-bound, bound));
  return Tensor<S>::from(std::move(shape), std::move(v));
}

}  // namespace otrack
