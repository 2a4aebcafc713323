#pragma once

#include <memory>
#include <span>
#include <vector>

#include "seqbench/common.hpp"
#include "seqbench/rng.hpp"

namespace seqbench {

// Reference-counted n-d array with a flat row-major buffer and an optional
// gradient buffer of the same shape. Copying a Tensor shares the storage.
//
// Ops always allocate fresh outputs, so a tensor is never written again once
// its producing op returns; the optimizer, which edits leaf parameters in
// place between steps, is the one exception.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor of(Shape shape, std::vector<T> values, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);
  static Tensor uniform(Shape shape, T lo, T hi, RngStream& rng,
                        bool requires_grad = false);
  // Uniform on +/- sqrt(6 / (fan_in + fan_out)). Requires rank >= 2; for
  // higher ranks the leading extents count as receptive field, so a [k, in,
  // out] kernel gets fan_in = k*in and fan_out = k*out.
  static Tensor glorot_uniform(Shape shape, RngStream& rng,
                               bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int64_t rank() const { return static_cast<int64_t>(node_->shape.size()); }
  int64_t extent(int64_t axis) const { return node_->shape[axis]; }
  int64_t numel() const { return static_cast<int64_t>(node_->values.size()); }

  std::span<const T> values() const { return node_->values; }
  std::span<T> values_mut() const { return node_->values; }
  T item() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag) const { node_->requires_grad = flag; }

  // True for outputs of tape-recorded ops. Distinct from requires_grad so
  // the optimizer can tell leaves from intermediates.
  bool tracked() const { return node_->tracked; }
  void set_tracked(bool flag) const { node_->tracked = flag; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const;
  // Gradient buffer for accumulation; allocated (zero-filled) on first use.
  std::span<T> grad_accum() const;
  void zero_grad() const;

  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

 private:
  struct Node {
    Shape shape;
    std::vector<T> values;
    std::vector<T> grad;
    bool requires_grad = false;
    bool tracked = false;
  };

  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}
  static std::shared_ptr<Node> make_node(Shape shape, bool requires_grad);

  std::shared_ptr<Node> node_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;

// Whether backward must deposit a gradient into this tensor: either it is a
// trainable leaf or it was itself produced on the tape.
template <typename T>
inline bool grad_flows(const Tensor<T>& t) {
  return t.requires_grad() || t.tracked();
}

}  // namespace seqbench
