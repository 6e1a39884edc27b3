#pragma once

#include <Eigen/Core>

#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

namespace ecnet {

using Index = Eigen::Index;

/// Dense extents. Image tensors use NCHW order (batch, channels, height, width).
class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<Index> dims) : dims_(dims) { validate(); }
  explicit Shape(std::vector<Index> dims) : dims_(std::move(dims)) { validate(); }

  Index rank() const { return static_cast<Index>(dims_.size()); }
  Index operator[](Index i) const { return dims_.at(static_cast<size_t>(i)); }
  const std::vector<Index>& dims() const { return dims_; }

  Index numel() const {
    Index n = 1;
    for (Index d : dims_) n *= d;
    return dims_.empty() ? 0 : n;
  }

  bool operator==(const Shape& other) const = default;

  // NCHW accessors, valid for rank-4 shapes.
  Index n() const { return at4(0); }
  Index c() const { return at4(1); }
  Index h() const { return at4(2); }
  Index w() const { return at4(3); }

  std::string str() const {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < dims_.size(); ++i) os << (i ? "," : "") << dims_[i];
    os << ']';
    return os.str();
  }

 private:
  void validate() const {
    for (Index d : dims_)
      if (d <= 0) throw std::invalid_argument("Shape: non-positive extent in " + str());
  }
  Index at4(Index i) const {
    if (rank() != 4) throw std::invalid_argument("Shape: NCHW accessor on rank " + std::to_string(rank()));
    return dims_[static_cast<size_t>(i)];
  }

  std::vector<Index> dims_;
};

/// Dense tensor of f32 or f64 values. Value storage is shared between copies;
/// the gradient buffer, when requires_grad is set, always matches the value shape.
template <typename T>
class Tensor {
  static_assert(std::is_floating_point_v<T>, "Tensor holds f32 or f64 values");

 public:
  Tensor() = default;

  static Tensor zeros(Shape s) { return Tensor(std::move(s), T(0)); }
  static Tensor ones(Shape s) { return Tensor(std::move(s), T(1)); }
  static Tensor full(Shape s, T v) { return Tensor(std::move(s), v); }

  static Tensor from_data(Shape s, std::vector<T> v) {
    if (static_cast<Index>(v.size()) != s.numel())
      throw std::invalid_argument("Tensor::from_data: " + std::to_string(v.size()) +
                                  " values for shape " + s.str());
    Tensor t;
    t.shape_ = std::move(s);
    t.values_ = std::make_shared<std::vector<T>>(std::move(v));
    return t;
  }

  bool defined() const { return values_ != nullptr; }
  const Shape& shape() const { return shape_; }
  Index numel() const { return defined() ? static_cast<Index>(values_->size()) : 0; }

  std::span<T> values() { return {values_->data(), values_->size()}; }
  std::span<const T> values() const { return {values_->data(), values_->size()}; }

  bool requires_grad() const { return requires_grad_; }

  /// Enabling gradient tracking allocates a zero accumulator of the same shape.
  void set_requires_grad(bool on) {
    requires_grad_ = on;
    if (on && !grad_) grad_ = std::make_shared<std::vector<T>>(values_->size(), T(0));
  }

  bool has_grad() const { return grad_ != nullptr; }
  std::span<T> grad() {
    check_grad();
    return {grad_->data(), grad_->size()};
  }
  std::span<const T> grad() const {
    check_grad();
    return {grad_->data(), grad_->size()};
  }
  void zero_grad() {
    if (grad_) std::fill(grad_->begin(), grad_->end(), T(0));
  }

  /// Value of a one-element tensor.
  T item() const {
    if (numel() != 1) throw std::invalid_argument("Tensor::item on shape " + shape_.str());
    return (*values_)[0];
  }

  T at(std::initializer_list<Index> idx) const { return (*values_)[offset_of(idx)]; }
  void set(std::initializer_list<Index> idx, T v) { (*values_)[offset_of(idx)] = v; }

  /// Deep copy of the values; gradient state is not carried over.
  Tensor clone() const {
    Tensor t;
    t.shape_ = shape_;
    t.values_ = std::make_shared<std::vector<T>>(*values_);
    return t;
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(values_->size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = static_cast<U>((*values_)[i]);
    return Tensor<U>::from_data(shape_, std::move(out));
  }

  /// Same data, new extents; element count must be preserved.
  Tensor reshaped(Shape s) const {
    if (s.numel() != numel())
      throw std::invalid_argument("Tensor::reshaped: " + shape_.str() + " -> " + s.str());
    Tensor t = *this;
    t.shape_ = std::move(s);
    return t;
  }

  std::shared_ptr<std::vector<T>> value_ptr() const { return values_; }
  std::shared_ptr<std::vector<T>> grad_ptr() const { return grad_; }

 private:
  Tensor(Shape s, T fill) : shape_(std::move(s)) {
    values_ = std::make_shared<std::vector<T>>(static_cast<size_t>(shape_.numel()), fill);
  }

  void check_grad() const {
    if (!grad_) throw std::runtime_error("Tensor: no gradient buffer (requires_grad not set)");
  }

  size_t offset_of(std::initializer_list<Index> idx) const {
    if (static_cast<Index>(idx.size()) != shape_.rank())
      throw std::invalid_argument("Tensor::at: rank mismatch");
    size_t off = 0;
    Index d = 0;
    for (Index i : idx) {
      if (i < 0 || i >= shape_[d]) throw std::out_of_range("Tensor::at: index out of range");
      off = off * static_cast<size_t>(shape_[d]) + static_cast<size_t>(i);
      ++d;
    }
    return off;
  }

  Shape shape_;
  std::shared_ptr<std::vector<T>> values_;
  std::shared_ptr<std::vector<T>> grad_;
  bool requires_grad_ = false;
};

/// Reverse-mode tape. Operations append their backward rule during the forward
/// pass, so the record order is a topological order of the graph; backward()
/// replays it once in reverse and then the tape is consumed.
template <typename T>
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_ && !consumed_; }
  size_t size() const { return steps_.size(); }

  void record(std::function<void()> backward_step) {
    if (consumed_) throw std::runtime_error("Tape: recording onto a consumed tape");
    steps_.push_back(std::move(backward_step));
  }

  /// Seeds d(loss)/d(loss) = 1 and accumulates gradients into every reachable
  /// tensor with requires_grad. The tape cannot be replayed.
  void backward(Tensor<T>& loss) {
    if (consumed_) throw std::runtime_error("Tape: backward on a consumed tape");
    if (loss.numel() != 1)
      throw std::invalid_argument("Tape::backward: loss must be scalar, got " + loss.shape().str());
    if (!loss.requires_grad())
      throw std::invalid_argument("Tape::backward: loss is not attached to this tape");
    consumed_ = true;
    loss.grad()[0] += T(1);
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
    steps_.clear();
  }

  bool consumed() const { return consumed_; }

 private:
  std::vector<std::function<void()>> steps_;
  bool recording_ = true;
  bool consumed_ = false;
};

// Eigen views over flat tensor storage.
template <typename T>
using ArrayXMap = Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>;
template <typename T>
using ConstArrayXMap = Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>;

template <typename T>
ArrayXMap<T> flat(std::span<T> s) {
  return ArrayXMap<T>(s.data(), static_cast<Index>(s.size()));
}
template <typename T>
ConstArrayXMap<T> flat(std::span<const T> s) {
  return ConstArrayXMap<T>(s.data(), static_cast<Index>(s.size()));
}
template <typename T>
ArrayXMap<T> flat_values(Tensor<T>& t) {
  return flat(t.values());
}
template <typename T>
ConstArrayXMap<T> flat_values(const Tensor<T>& t) {
  return flat(t.values());
}

}  // namespace ecnet
