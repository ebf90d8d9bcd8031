#include "metaformer/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace metaformer {

std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::string_view to_string(DType dtype) {
  return dtype == DType::f32 ? "f32" : "f64";
}

namespace {

void check_shape(const Shape& shape) {
  for (auto d : shape) {
    if (d <= 0) {
      throw std::invalid_argument("tensor shape " + to_string(shape) +
                                  " has a non-positive dimension");
    }
  }
}

template <typename T>
void require_defined(const std::shared_ptr<detail::TensorImpl<T>>& impl) {
  if (!impl) throw std::logic_error("access to an undefined tensor");
}

}  // namespace

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape) {
  return full(std::move(shape), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value) {
  check_shape(shape);
  auto impl = std::make_shared<detail::TensorImpl<T>>();
  impl->data.assign(static_cast<std::size_t>(metaformer::numel(shape)), value);
  impl->shape = std::move(shape);
  return Tensor(std::move(impl));
}

template <typename T>
Tensor<T> Tensor<T>::from_vector(Shape shape, std::vector<T> values) {
  check_shape(shape);
  if (metaformer::numel(shape) != static_cast<std::int64_t>(values.size())) {
    throw std::invalid_argument("from_vector: shape " + to_string(shape) +
                                " needs " +
                                std::to_string(metaformer::numel(shape)) +
                                " values, got " + std::to_string(values.size()));
  }
  auto impl = std::make_shared<detail::TensorImpl<T>>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  return Tensor(std::move(impl));
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value) {
  return from_vector({}, {value});
}

template <typename T>
const Shape& Tensor<T>::shape() const {
  require_defined(impl_);
  return impl_->shape;
}

template <typename T>
std::int64_t Tensor<T>::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw std::out_of_range("axis " + std::to_string(axis) +
                            " out of range for shape " + to_string(s));
  }
  return s[axis];
}

template <typename T>
std::int64_t Tensor<T>::numel() const {
  require_defined(impl_);
  return static_cast<std::int64_t>(impl_->data.size());
}

template <typename T>
std::span<const T> Tensor<T>::data() const {
  require_defined(impl_);
  return impl_->data;
}

template <typename T>
std::span<T> Tensor<T>::mutable_data() {
  require_defined(impl_);
  return impl_->data;
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) {
    throw std::invalid_argument("item() on tensor of shape " +
                                to_string(shape()));
  }
  return impl_->data[0];
}

template <typename T>
bool Tensor<T>::requires_grad() const {
  return impl_ && impl_->requires_grad;
}

template <typename T>
void Tensor<T>::set_requires_grad(bool value) {
  require_defined(impl_);
  if (impl_->grad_fn) {
    throw std::logic_error("set_requires_grad on a non-leaf tensor");
  }
  impl_->requires_grad = value;
  if (!value) impl_->grad.clear();
}

template <typename T>
bool Tensor<T>::is_leaf() const {
  return impl_ && !impl_->grad_fn;
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
  require_defined(impl_);
  return impl_->grad;
}

template <typename T>
std::vector<T> Tensor<T>::grad_or_zeros() const {
  require_defined(impl_);
  if (impl_->grad.empty()) return std::vector<T>(impl_->data.size(), T(0));
  return impl_->grad;
}

template <typename T>
void Tensor<T>::zero_grad() {
  require_defined(impl_);
  if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), T(0));
}

template <typename T>
T* Tensor<T>::grad_target() const {
  if (!impl_ || !impl_->requires_grad) return nullptr;
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), T(0));
  return impl_->grad.data();
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  auto t = detach();
  t.impl_->requires_grad = requires_grad();
  return t;
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  require_defined(impl_);
  auto impl = std::make_shared<detail::TensorImpl<T>>();
  impl->shape = impl_->shape;
  impl->data = impl_->data;
  return Tensor(std::move(impl));
}

template <typename T>
template <typename U>
Tensor<U> Tensor<T>::cast() const {
  require_defined(impl_);
  auto impl = std::make_shared<detail::TensorImpl<U>>();
  impl->shape = impl_->shape;
  impl->data.assign(impl_->data.begin(), impl_->data.end());
  impl->requires_grad = impl_->requires_grad && !impl_->grad_fn;
  return Tensor<U>(std::move(impl));
}

template <typename T>
Tensor<T> record_op(std::string_view op, Shape shape, std::vector<T> values,
                    std::vector<Tensor<T>> inputs,
                    detail::BackwardFn<T> backward) {
  if (metaformer::numel(shape) != static_cast<std::int64_t>(values.size())) {
    throw std::logic_error(std::string(op) + ": result shape " +
                           to_string(shape) + " does not match value count");
  }
  auto impl = std::make_shared<detail::TensorImpl<T>>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  const bool needs_grad = std::any_of(inputs.begin(), inputs.end(),
                                      [](const Tensor<T>& t) { return t.requires_grad(); });
  if (needs_grad) {
    auto node = std::make_shared<detail::Node<T>>();
    node->op = op;
    for (auto& in : inputs) {
      if (in.defined()) node->inputs.push_back(in.impl());
    }
    node->backward = std::move(backward);
    impl->requires_grad = true;
    impl->grad_fn = std::move(node);
  }
  return Tensor<T>(std::move(impl));
}

template <typename T>
Graph<T> Graph<T>::trace(const Tensor<T>& root) {
  Graph g;
  if (!root.defined()) return g;
  using ImplPtr = std::shared_ptr<detail::TensorImpl<T>>;
  std::unordered_set<const detail::TensorImpl<T>*> visited;
  // Iterative post-order DFS: (tensor, next input index).
  std::vector<std::pair<ImplPtr, std::size_t>> stack;
  stack.emplace_back(root.impl(), 0);
  visited.insert(root.impl().get());
  while (!stack.empty()) {
    auto& [impl, next] = stack.back();
    const auto* node = impl->grad_fn.get();
    if (node && next < node->inputs.size()) {
      const auto& child = node->inputs[next++];
      if (visited.insert(child.get()).second) stack.emplace_back(child, 0);
      continue;
    }
    g.order_.push_back(impl);
    stack.pop_back();
  }
  return g;
}

template <typename T>
std::size_t Graph<T>::node_count() const {
  return static_cast<std::size_t>(std::count_if(
      order_.begin(), order_.end(), [](const auto& t) { return t->grad_fn != nullptr; }));
}

template <typename T>
std::vector<std::string_view> Graph<T>::op_names() const {
  std::vector<std::string_view> names;
  for (const auto& t : order_) {
    if (t->grad_fn) names.push_back(t->grad_fn->op);
  }
  return names;
}

template <typename T>
void Graph<T>::backward() const {
  if (order_.empty()) return;
  auto& root = order_.back();
  if (root->grad.empty()) root->grad.assign(root->data.size(), T(0));
  for (auto& g : root->grad) g += T(1);
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    auto& impl = *it;
    if (!impl->grad_fn) continue;
    if (!impl->grad.empty()) impl->grad_fn->backward(impl->grad, impl->data);
    impl->grad.clear();
    impl->grad.shrink_to_fit();
  }
}

template <typename T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw std::invalid_argument(
        "backward: loss must be a scalar, got shape " +
        (loss.defined() ? to_string(loss.shape()) : std::string("<undefined>")));
  }
  if (!loss.requires_grad()) {
    throw std::invalid_argument(
        "backward: loss does not depend on any tensor that requires grad");
  }
  Graph<T>::trace(loss).backward();
}

template class Tensor<float>;
template class Tensor<double>;
template class Graph<float>;
template class Graph<double>;
template Tensor<double> Tensor<float>::cast<double>() const;
template Tensor<float> Tensor<float>::cast<float>() const;
template Tensor<float> Tensor<double>::cast<float>() const;
template Tensor<double> Tensor<double>::cast<double>() const;
template Tensor<float> record_op(std::string_view, Shape, std::vector<float>,
                                 std::vector<Tensor<float>>,
                                 detail::BackwardFn<float>);
template Tensor<double> record_op(std::string_view, Shape, std::vector<double>,
                                  std::vector<Tensor<double>>,
                                  detail::BackwardFn<double>);
template void backward(const Tensor<float>&);
template void backward(const Tensor<double>&);

}  // namespace metaformer
