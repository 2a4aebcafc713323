#include "seqbench/tensor.hpp"

#include <cmath>

namespace seqbench {

namespace {

void validate_shape(const Shape& shape) {
  for (int64_t e : shape) {
    if (e < 1) {
      throw ShapeError("extent must be >= 1, got shape " + shape_to_string(shape));
    }
  }
}

}  // namespace

template <typename T>
auto Tensor<T>::make_node(Shape shape, bool requires_grad)
    -> std::shared_ptr<Node> {
  validate_shape(shape);
  auto node = std::make_shared<Node>();
  node->values.resize(static_cast<size_t>(shape_numel(shape)));
  node->shape = std::move(shape);
  node->requires_grad = requires_grad;
  return node;
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return Tensor(make_node(std::move(shape), requires_grad));
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  auto node = make_node(std::move(shape), requires_grad);
  for (T& v : node->values) v = value;
  return Tensor(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::of(Shape shape, std::vector<T> values, bool requires_grad) {
  validate_shape(shape);
  if (shape_numel(shape) != static_cast<int64_t>(values.size())) {
    throw ShapeError("value count " + std::to_string(values.size()) +
                     " does not fill shape " + shape_to_string(shape));
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return of({1}, {value}, requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::uniform(Shape shape, T lo, T hi, RngStream& rng,
                             bool requires_grad) {
  auto node = make_node(std::move(shape), requires_grad);
  for (T& v : node->values) {
    v = static_cast<T>(rng.uniform(static_cast<double>(lo), static_cast<double>(hi)));
  }
  return Tensor(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::glorot_uniform(Shape shape, RngStream& rng,
                                    bool requires_grad) {
  if (shape.size() < 2) {
    throw ShapeError("glorot init needs rank >= 2, got " + shape_to_string(shape));
  }
  int64_t receptive = 1;
  for (size_t i = 0; i + 2 < shape.size(); ++i) receptive *= shape[i];
  const double fan_in = static_cast<double>(receptive * shape[shape.size() - 2]);
  const double fan_out = static_cast<double>(receptive * shape[shape.size() - 1]);
  const double bound = std::sqrt(6.0 / (fan_in + fan_out));
  return uniform(std::move(shape), static_cast<T>(-bound), static_cast<T>(bound),
                 rng, requires_grad);
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) {
    throw ContractError("item() on tensor of shape " + shape_to_string(shape()));
  }
  return node_->values[0];
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
  if (!has_grad()) {
    throw ContractError("tensor has no gradient buffer");
  }
  return node_->grad;
}

template <typename T>
std::span<T> Tensor<T>::grad_accum() const {
  if (node_->grad.empty()) node_->grad.resize(node_->values.size());
  return node_->grad;
}

template <typename T>
void Tensor<T>::zero_grad() const {
  for (T& g : node_->grad) g = T(0);
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace seqbench
