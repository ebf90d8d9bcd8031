#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace metaformer {

using Shape = std::vector<std::int64_t>;

enum class DType { f32, f64 };

template <typename T>
constexpr DType dtype_of();
template <>
constexpr DType dtype_of<float>() { return DType::f32; }
template <>
constexpr DType dtype_of<double>() { return DType::f64; }

std::int64_t numel(const Shape& shape);
std::string to_string(const Shape& shape);
std::string_view to_string(DType dtype);

namespace detail {

template <typename T>
struct Node;

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::shared_ptr<Node<T>> grad_fn;
};

/// Receives the gradient flowing into the op's output together with the
/// output values, and accumulates vector-Jacobian products into the inputs.
template <typename T>
using BackwardFn =
    std::function<void(std::span<const T> grad_out, std::span<const T> out)>;

template <typename T>
struct Node {
  std::string_view op;
  std::vector<std::shared_ptr<TensorImpl<T>>> inputs;
  BackwardFn<T> backward;
};

}  // namespace detail

/// Dense row-major tensor with shared ownership of its storage.
///
/// Copies alias the same buffer (like a handle); use clone() for a deep copy.
/// A tensor produced by a differentiable op from inputs that require grad
/// records a node in the computation graph. Images use [B, C, H, W].
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, T value);
  static Tensor from_vector(Shape shape, std::vector<T> values);
  static Tensor scalar(T value);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::int64_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  std::int64_t numel() const;
  static constexpr DType dtype() { return dtype_of<T>(); }

  std::span<const T> data() const;
  std::span<T> mutable_data();
  T item() const;

  bool requires_grad() const;
  /// Only valid on leaves; marks the tensor as an optimizer-visible input.
  void set_requires_grad(bool value);
  bool is_leaf() const;

  /// Accumulated gradient; empty span when nothing has been accumulated.
  std::span<const T> grad() const;
  /// Gradient as a dense vector, zeros when nothing has been accumulated.
  std::vector<T> grad_or_zeros() const;
  void zero_grad();
  /// Lazily allocated gradient buffer, or nullptr when this tensor does not
  /// require grad. Used by backward closures.
  T* grad_target() const;

  /// Deep copy as a new leaf with the same requires_grad flag.
  Tensor clone() const;
  /// Deep copy as a new leaf that never requires grad.
  Tensor detach() const;

  template <typename U>
  Tensor<U> cast() const;

  const std::shared_ptr<detail::TensorImpl<T>>& impl() const { return impl_; }
  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl<T>> impl)
      : impl_(std::move(impl)) {}

  std::shared_ptr<detail::TensorImpl<T>> impl_;

  template <typename U>
  friend class Tensor;
  template <typename U>
  friend Tensor<U> record_op(std::string_view, Shape, std::vector<U>,
                             std::vector<Tensor<U>>, detail::BackwardFn<U>);
};

/// Creates the result of a differentiable op. A graph node is attached only
/// when at least one input requires grad.
template <typename T>
Tensor<T> record_op(std::string_view op, Shape shape, std::vector<T> values,
                    std::vector<Tensor<T>> inputs,
                    detail::BackwardFn<T> backward);

/// Reverse-topological replay of the operations that produced a root tensor.
template <typename T>
class Graph {
 public:
  /// Collects every tensor reachable from root; inputs precede consumers.
  static Graph trace(const Tensor<T>& root);

  std::size_t size() const { return order_.size(); }
  std::size_t node_count() const;
  std::vector<std::string_view> op_names() const;

  /// Seeds the root gradient with ones and runs every node exactly once in
  /// reverse order. Intermediate gradient buffers are released afterwards.
  void backward() const;

 private:
  std::vector<std::shared_ptr<detail::TensorImpl<T>>> order_;
};

/// Accumulates d(loss)/d(leaf) into every reachable leaf that requires grad.
/// Throws std::invalid_argument unless loss holds exactly one element.
template <typename T>
void backward(const Tensor<T>& loss);

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace metaformer
