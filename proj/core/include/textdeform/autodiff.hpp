#pragma once

// Minimal tape-based reverse-mode automatic differentiation over dense
// tensors. Every network forward pass records onto a Tape; calling
// backward() on a scalar replays the recorded closures in reverse.

#include <deque>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "textdeform/errors.hpp"

namespace textdeform::ad {

template <class T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s, T fill = T(0)) : shape(std::move(s)) {
    data.assign(count(shape), fill);
  }
  Tensor(std::vector<int> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != count(shape)) throw ShapeError("tensor data does not match its shape");
  }

  static std::size_t count(const std::vector<int>& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1},
                           [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
  }

  std::size_t size() const { return data.size(); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape.at(i); }
  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }
  T& operator[](std::size_t i) { return data[i]; }
  const T& operator[](std::size_t i) const { return data[i]; }
};

std::string shape_string(const std::vector<int>& shape);

template <class T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool trainable = true;
};

/// Named parameter storage with stable element addresses.
template <class T>
class ParameterSet {
 public:
  Parameter<T>& add(const std::string& name, std::vector<int> shape) {
    if (find(name)) throw ConfigError("duplicate parameter " + name);
    params_.push_back({name, Tensor<T>(shape), Tensor<T>(shape), true});
    return params_.back();
  }

  Parameter<T>* find(const std::string& name) {
    for (auto& p : params_)
      if (p.name == name) return &p;
    return nullptr;
  }
  const Parameter<T>* find(const std::string& name) const {
    for (const auto& p : params_)
      if (p.name == name) return &p;
    return nullptr;
  }
  Parameter<T>& at(const std::string& name) {
    if (auto* p = find(name)) return *p;
    throw ConfigError("unknown parameter " + name);
  }

  std::deque<Parameter<T>>& all() { return params_; }
  const std::deque<Parameter<T>>& all() const { return params_; }

  void zero_grad() {
    for (auto& p : params_) std::fill(p.grad.data.begin(), p.grad.data.end(), T(0));
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

 private:
  std::deque<Parameter<T>> params_;
};

template <class T>
class Tape;

/// Handle to a node recorded on a Tape.
template <class T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, int id) : tape_(tape), id_(id) {}

  bool valid() const { return tape_ != nullptr; }
  int id() const { return id_; }
  Tape<T>* tape() const { return tape_; }

  const Tensor<T>& value() const { return tape_->value(id_); }
  const std::vector<int>& shape() const { return value().shape; }
  bool requires_grad() const { return tape_->requires_grad(id_); }
  /// Gradient accumulated by the last backward pass (zeros if unreached).
  const Tensor<T>& grad() const { return tape_->grad(id_); }

 private:
  Tape<T>* tape_ = nullptr;
  int id_ = -1;
};

template <class T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> value) { return push(std::move(value), false, {}); }
  Var<T> variable(Tensor<T> value) { return push(std::move(value), true, {}); }

  /// Binds a parameter as a leaf; its gradient is added into p.grad by
  /// flush_parameter_grads().
  Var<T> parameter(Parameter<T>& p) {
    Var<T> v = push(p.value, p.trainable && grad_enabled_, {});
    if (p.trainable && grad_enabled_) bindings_.push_back({&p, v.id()});
    return v;
  }

  /// Records an op result. The closure runs during backward only when at
  /// least one parent requires a gradient.
  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> parents, std::function<void()> backward) {
    bool needs = false;
    for (const Var<T>& p : parents) needs = needs || (p.valid() && p.requires_grad());
    return push(std::move(value), needs, needs ? std::move(backward) : std::function<void()>{});
  }
  Var<T> record(Tensor<T> value, const std::vector<Var<T>>& parents, std::function<void()> backward) {
    bool needs = false;
    for (const Var<T>& p : parents) needs = needs || (p.valid() && p.requires_grad());
    return push(std::move(value), needs, needs ? std::move(backward) : std::function<void()>{});
  }

  void backward(const Var<T>& root) {
    if (root.value().size() != 1) throw ShapeError("backward() needs a scalar root");
    if (!requires_grad(root.id())) return;
    grad(root.id()).data[0] = T(1);
    for (int i = root.id(); i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.backward && !n.grad.data.empty()) n.backward();
    }
  }

  void flush_parameter_grads() {
    for (const auto& [param, id] : bindings_) {
      const Node& n = nodes_[id];
      if (n.grad.data.empty()) continue;
      for (std::size_t k = 0; k < n.grad.size(); ++k) param->grad.data[k] += n.grad.data[k];
    }
  }

  /// When disabled, parameters bind as constants so no backward closures
  /// are recorded (inference mode).
  void set_grad_enabled(bool on) { grad_enabled_ = on; }
  bool grad_enabled() const { return grad_enabled_; }

  const Tensor<T>& value(int id) const { return nodes_[id].value; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  bool has_grad(int id) const { return !nodes_[id].grad.data.empty(); }

  Tensor<T>& grad(int id) {
    Node& n = nodes_[id];
    if (n.grad.data.empty()) n.grad = Tensor<T>(n.value.shape);
    return n.grad;
  }
  const Tensor<T>& grad(int id) const {
    const Node& n = nodes_[id];
    if (n.grad.data.empty()) {
      static thread_local Tensor<T> empty;
      empty = Tensor<T>(n.value.shape);
      return empty;
    }
    return n.grad;
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    std::function<void()> backward;
    bool requires_grad = false;
  };

  Var<T> push(Tensor<T> value, bool needs, std::function<void()> backward) {
    nodes_.push_back({std::move(value), {}, std::move(backward), needs});
    return Var<T>(this, static_cast<int>(nodes_.size()) - 1);
  }

  std::deque<Node> nodes_;
  std::vector<std::pair<Parameter<T>*, int>> bindings_;
  bool grad_enabled_ = true;
};

struct Conv2dSpec {
  int stride = 1;
  int pad = 0;
  int dilation = 1;
};

/// Differentiable primitives. Maps are (C, H, W); matrices are (rows, cols).
template <class T>
struct Ops {
  using V = Var<T>;

  /// w: (out, in, k, k), b: (out) or invalid.
  static V conv2d(const V& x, const V& w, const V& b, Conv2dSpec spec);
  static V relu(const V& x);
  static V sigmoid(const V& x);
  static V tanh(const V& x);
  /// Elementwise clamp to [lo, hi]; zero gradient outside the interval.
  static V clamp(const V& x, T lo, T hi);
  static V upsample_nearest(const V& x, int factor);
  static V concat(const std::vector<V>& xs, int axis);
  static V slice(const V& x, int axis, int start, int count);
  static V matmul(const V& a, const V& b);
  /// a: (N, M) plus b: (M) broadcast over rows.
  static V add_bias(const V& a, const V& b);
  static V add(const V& a, const V& b);
  static V sub(const V& a, const V& b);
  static V mul(const V& a, const V& b);
  static V scale(const V& a, T s);
  static V sum(const V& a);
  static V reverse_rows(const V& a);
  /// Bilinear samples of map (C, H, W) at pts (N, 2) given in map pixel
  /// units after division by `stride`; coordinates are clamped into range.
  static V sample_points(const V& map, const V& pts, T stride);
  /// One LSTM direction over the rows of x (N, D). w_ih: (D, 4H),
  /// w_hh: (H, 4H), b: (4H); gate order i, f, g, o. Output (N, H).
  static V lstm(const V& x, const V& w_ih, const V& w_hh, const V& b, bool reverse);
  /// Circular 1-D convolution over rows. w: (K * Cin, Cout), b: (Cout).
  static V circular_conv1d(const V& x, const V& w, const V& b, int kernel);
};

extern template struct Ops<float>;
extern template struct Ops<double>;

}  // namespace textdeform::ad
