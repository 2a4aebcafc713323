#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "seqbench/tape.hpp"
#include "seqbench/tensor.hpp"

namespace seqbench {

enum class Activation { kNone, kReLU, kTanh, kSigmoid, kSoftmax };

std::string activation_name(Activation act);
Activation activation_from_name(const std::string& name);

// Valid-padding output lengths. Throw ShapeError when the window does not fit.
int64_t conv1d_out_length(int64_t length, int64_t width, int64_t stride);
int64_t pool1d_out_length(int64_t length, int64_t size, int64_t stride);

namespace ops {

// Every op allocates a fresh output. With a tape, the op records a pull
// closure when at least one input can receive a gradient; with tape ==
// nullptr it is a plain forward evaluation.

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape = nullptr);

// rows [n, k] + bias [k], broadcast over rows.
template <typename T>
Tensor<T> add_bias_rows(const Tensor<T>& rows, const Tensor<T>& bias,
                        Tape<T>* tape = nullptr);

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape = nullptr);

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor, Tape<T>* tape = nullptr);

// [n, k] x [k, m] -> [n, m]
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape = nullptr);

// [n, k] x [m, k]^T -> [n, m]
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape = nullptr);

template <typename T>
Tensor<T> activation(const Tensor<T>& x, Activation act, Tape<T>* tape = nullptr);

// Row-wise over the last axis, max-subtracted. Rank 1 or 2.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, Tape<T>* tape = nullptr);

// Normalizes each last-axis row to zero mean / unit variance (population
// variance), then applies gain and bias. Rank 1 or 2; gain and bias are
// [last_extent].
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain,
                     const Tensor<T>& bias, T eps, Tape<T>* tape = nullptr);

// input [len, in_ch], kernel [width, in_ch, out_ch], bias [out_ch].
// out[t, o] = bias[o] + sum_{j,c} input[t*stride + j, c] * kernel[j, c, o]
template <typename T>
Tensor<T> conv1d(const Tensor<T>& input, const Tensor<T>& kernel,
                 const Tensor<T>& bias, int64_t stride, Tape<T>* tape = nullptr);

// input [len, ch]; max over non-overlapping-or-strided windows per channel.
// Ties route the gradient to the earliest element of the window.
template <typename T>
Tensor<T> maxpool1d(const Tensor<T>& input, int64_t size, int64_t stride,
                    Tape<T>* tape = nullptr);

// input [len, ch] -> [ch]. Each channel is summed in ascending value order,
// so the result is bit-identical under any permutation of time steps.
template <typename T>
Tensor<T> global_avg_pool1d(const Tensor<T>& input, Tape<T>* tape = nullptr);

// x [n, k] -> [n, ncols] starting at col0.
template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, int64_t col0, int64_t ncols,
                     Tape<T>* tape = nullptr);

// Concatenates along the last axis. All parts rank 1, or all rank 2 with
// equal row counts.
template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts, Tape<T>* tape = nullptr);

// Stacks rank-1 tensors of equal length into [n, k].
template <typename T>
Tensor<T> stack_rows(const std::vector<Tensor<T>>& rows, Tape<T>* tape = nullptr);

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape, Tape<T>* tape = nullptr);

// x [len, ch] -> same shape with the time axis reversed.
template <typename T>
Tensor<T> reverse_time(const Tensor<T>& x, Tape<T>* tape = nullptr);

template <typename T>
Tensor<T> sum(const Tensor<T>& x, Tape<T>* tape = nullptr);

template <typename T>
Tensor<T> sum_squares(const Tensor<T>& x, Tape<T>* tape = nullptr);

}  // namespace ops
}  // namespace seqbench
