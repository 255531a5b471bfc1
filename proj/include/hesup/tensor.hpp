#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace hesup {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeError : Error {
  using Error::Error;
};

inline std::string shape_str(const std::vector<size_t>& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

inline size_t shape_numel(const std::vector<size_t>& shape) {
  size_t n = 1;
  for (size_t d : shape) n *= d;
  return n;
}

// Dense row-major tensor. The handle has shared-reference semantics: copies
// alias the same storage, which is what the tape's backward closures rely on.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<size_t> shape, bool requires_grad = false)
      : impl_(std::make_shared<Storage>()) {
    if (shape.empty()) throw ShapeError("tensor shape must have rank >= 1");
    for (size_t d : shape)
      if (d == 0) throw ShapeError("tensor dimension must be >= 1, got shape " + shape_str(shape));
    impl_->shape = std::move(shape);
    impl_->data.assign(shape_numel(impl_->shape), T(0));
    impl_->requires_grad = requires_grad;
    if (requires_grad) impl_->grad.assign(impl_->data.size(), T(0));
  }

  static Tensor from_data(std::vector<size_t> shape, std::vector<T> data,
                          bool requires_grad = false) {
    Tensor t(std::move(shape), requires_grad);
    if (data.size() != t.size())
      throw ShapeError("data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(t.shape()));
    t.impl_->data = std::move(data);
    return t;
  }

  static Tensor scalar(T value, bool requires_grad = false) {
    return from_data({1}, {value}, requires_grad);
  }

  bool defined() const { return impl_ != nullptr; }
  const std::vector<size_t>& shape() const { return impl_->shape; }
  size_t dim(size_t i) const { return impl_->shape.at(i); }
  size_t rank() const { return impl_->shape.size(); }
  size_t size() const { return impl_->data.size(); }
  bool requires_grad() const { return impl_->requires_grad; }

  std::span<T> data() { return impl_->data; }
  std::span<const T> data() const { return impl_->data; }

  std::span<T> grad() {
    if (!impl_->requires_grad) throw Error("tensor does not track gradients");
    return impl_->grad;
  }
  std::span<const T> grad() const {
    if (!impl_->requires_grad) throw Error("tensor does not track gradients");
    return impl_->grad;
  }

  void zero_grad() {
    if (impl_->requires_grad) impl_->grad.assign(impl_->data.size(), T(0));
  }

  T item() const {
    if (size() != 1) throw ShapeError("item() requires a scalar, got shape " + shape_str(shape()));
    return impl_->data[0];
  }

  // Stable identity of the underlying storage.
  const void* id() const { return impl_.get(); }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> d(impl_->data.begin(), impl_->data.end());
    return Tensor<U>::from_data(impl_->shape, std::move(d), impl_->requires_grad);
  }

 private:
  struct Storage {
    std::vector<size_t> shape;
    std::vector<T> data;
    std::vector<T> grad;  // allocated iff requires_grad
    bool requires_grad = false;
  };
  std::shared_ptr<Storage> impl_;
};

// Ordered record of backward rules. Ops append closures in execution order;
// backward() replays them in reverse. A tape constructed with recording=false
// (eval path) records nothing and produces grad-free outputs.
template <typename T>
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}

  bool recording() const { return recording_; }

  void record(std::function<void()> rule) {
    if (recording_) records_.push_back(std::move(rule));
  }

  size_t size() const { return records_.size(); }

  void replay_backward() const {
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) (*it)();
  }

 private:
  bool recording_;
  std::vector<std::function<void()>> records_;
};

template <typename T>
void backward(Tensor<T> loss, const Tape<T>& tape) {
  if (loss.size() != 1)
    throw ShapeError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
  if (!loss.requires_grad()) throw Error("loss does not track gradients");
  loss.grad()[0] = T(1);
  tape.replay_backward();
}

}  // namespace hesup
