#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "seqbench/ops.hpp"
#include "seqbench/rng.hpp"
#include "seqbench/tape.hpp"
#include "seqbench/tensor.hpp"

namespace seqbench {

enum class LayerKind {
  kInput,
  kEmbedding,
  kTokenPositionEmbedding,
  kConv1d,
  kMaxPool1d,
  kDense,
  kDropout,
  kLstm,
  kBidirectional,
  kResidualAdd,
  kConcat,
  kGlobalAvgPool,
  kLayerNorm,
  kMultiHeadAttention,
  kTransformerBlock,
  kFlatten,
};

const char* layer_kind_name(LayerKind kind);

// One flat bag of hyperparameters; each kind reads only its own fields and
// build-time validation rejects incomplete combinations.
struct LayerHyper {
  int64_t units = 0;       // dense width, or lstm/bidirectional hidden width
  int64_t width = 0;       // conv kernel width, or pool window
  int64_t stride = 1;
  double rate = 0.0;       // dropout rate
  int64_t heads = 0;
  int64_t key_width = 0;
  int64_t ff_width = 0;
  int64_t vocab = 0;
  int64_t dim = 0;         // embedding width / model width d
  int64_t maxlen = 0;      // position-table extent
  bool return_sequences = false;
  bool trainable = true;
  Activation act = Activation::kNone;
  double l2_activity = 0.0;  // penalty coefficient on squared activations
  double l2_bias = 0.0;      // penalty coefficient on squared bias
};

struct LayerSpec {
  LayerKind kind = LayerKind::kInput;
  std::string name;
  LayerHyper hyper;
};

struct ParamCount {
  int64_t total = 0;
  int64_t trainable = 0;
  int64_t frozen = 0;
};

template <typename T>
struct NamedParam {
  std::string role;
  Tensor<T> tensor;
  bool trainable = true;
};

template <typename T>
struct ParameterBundle {
  std::vector<NamedParam<T>> params;

  bool has(const std::string& role) const;
  const Tensor<T>& get(const std::string& role) const;
  void add(std::string role, Tensor<T> tensor, bool trainable = true);
  // Parameters whose role starts with prefix, with the prefix stripped.
  ParameterBundle sub(const std::string& prefix) const;
  ParamCount counts() const;
};

// Closed-form parameter count for a layer given the shape feeding it.
ParamCount layer_param_count(const LayerSpec& spec, const Shape& input_shape);

// Inferred output shape; input_b is non-null only for two-input kinds
// (residual_add, concat). Throws ShapeError when the layer cannot accept the
// input (e.g. a window larger than the sequence).
Shape layer_output_shape(const LayerSpec& spec, const Shape& input_a,
                         const Shape* input_b = nullptr);

// ---- Forward passes -------------------------------------------------------

template <typename T>
Tensor<T> embedding_forward(std::span<const int64_t> ids, const Tensor<T>& table,
                            Tape<T>* tape = nullptr);

template <typename T>
Tensor<T> token_position_embedding_forward(std::span<const int64_t> ids,
                                           const Tensor<T>& token_table,
                                           const Tensor<T>& pos_table,
                                           Tape<T>* tape = nullptr);

template <typename T>
Tensor<T> dense_forward(const Tensor<T>& x, const Tensor<T>& kernel,
                        const Tensor<T>& bias, Activation act,
                        Tape<T>* tape = nullptr);

// weights: kernel [in,4h], recurrent_kernel [h,4h], bias [4h]; packed gate
// order input, forget, cell, output. Zero initial state.
template <typename T>
Tensor<T> lstm_forward(const Tensor<T>& x, const ParameterBundle<T>& weights,
                       bool return_sequences, Tape<T>* tape = nullptr);

// Forward pass over x and over time-reversed x; backward outputs re-reversed
// (sequences mode) and the halves concatenated on the feature axis.
template <typename T>
Tensor<T> bidirectional_forward(const Tensor<T>& x, const ParameterBundle<T>& fwd,
                                const ParameterBundle<T>& bwd, bool return_sequences,
                                Tape<T>* tape = nullptr);

// weights: query/key/value projections [d, heads*key_width] (+ biases) and
// output projection [heads*key_width, d] (+ bias).
template <typename T>
Tensor<T> multi_head_attention_forward(const Tensor<T>& q, const Tensor<T>& k,
                                       const Tensor<T>& v,
                                       const ParameterBundle<T>& weights,
                                       int64_t heads, int64_t key_width,
                                       Tape<T>* tape = nullptr);

// a = norm(x + dropout(attention(x,x,x))); out = norm(a + dropout(ffn(a)))
// where ffn = dense(ff_width, relu) then dense(d, linear).
template <typename T>
Tensor<T> transformer_block_forward(const Tensor<T>& x,
                                    const ParameterBundle<T>& weights,
                                    int64_t heads, int64_t key_width,
                                    int64_t ff_width, double rate, bool training,
                                    RngStream* rng, Tape<T>* tape = nullptr);

// Inverted dropout: eval mode is the identity handle; training zeroes with
// probability rate and scales survivors by 1/(1-rate).
template <typename T>
Tensor<T> dropout_forward(const Tensor<T>& x, double rate, bool training,
                          RngStream* rng, Tape<T>* tape = nullptr);

template <typename T>
Tensor<T> residual_add(const Tensor<T>& a, const Tensor<T>& b,
                       Tape<T>* tape = nullptr);

// Variance epsilon used by every normalization in this library.
inline constexpr double kLayerNormEps = 1e-5;

}  // namespace seqbench
