#include "seqbench/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "seqbench/common.hpp"

namespace seqbench {

std::string activation_name(Activation act) {
  switch (act) {
    case Activation::kNone: return "linear";
    case Activation::kReLU: return "relu";
    case Activation::kTanh: return "tanh";
    case Activation::kSigmoid: return "sigmoid";
    case Activation::kSoftmax: return "softmax";
  }
  throw ContractError("unknown activation enum value");
}

Activation activation_from_name(const std::string& name) {
  if (name == "linear") return Activation::kNone;
  if (name == "relu") return Activation::kReLU;
  if (name == "tanh") return Activation::kTanh;
  if (name == "sigmoid") return Activation::kSigmoid;
  if (name == "softmax") return Activation::kSoftmax;
  throw ConfigError("unknown activation '" + name + "'");
}

int64_t conv1d_out_length(int64_t length, int64_t width, int64_t stride) {
  if (width < 1 || stride < 1) {
    throw ConfigError("conv1d needs width >= 1 and stride >= 1, got width " +
                      std::to_string(width) + " stride " + std::to_string(stride));
  }
  if (length < width) {
    throw ShapeError("conv1d window of width " + std::to_string(width) +
                     " does not fit length " + std::to_string(length));
  }
  return (length - width) / stride + 1;
}

int64_t pool1d_out_length(int64_t length, int64_t size, int64_t stride) {
  if (size < 1 || stride < 1) {
    throw ConfigError("pool1d needs size >= 1 and stride >= 1, got size " +
                      std::to_string(size) + " stride " + std::to_string(stride));
  }
  if (length < size) {
    throw ShapeError("pool1d window of size " + std::to_string(size) +
                     " does not fit length " + std::to_string(length));
  }
  return (length - size) / stride + 1;
}

namespace ops {
namespace {

template <typename T>
void require_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     shape_to_string(a.shape()) + " vs " + shape_to_string(b.shape()));
  }
}

template <typename T>
void require_rank(const char* op, const Tensor<T>& t, int64_t rank) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) +
                     ", got shape " + shape_to_string(t.shape()));
  }
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape) {
  require_same_shape("add", a, b);
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  auto ov = out.values_mut();
  auto av = a.values();
  auto bv = b.values();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
  if (tape && (grad_flows(a) || grad_flows(b))) {
    tape->record("add", {a, b}, out, [a, b, out]() {
      auto g = out.grad();
      if (grad_flows(a)) {
        auto ga = a.grad_accum();
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (grad_flows(b)) {
        auto gb = b.grad_accum();
        for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> add_bias_rows(const Tensor<T>& rows, const Tensor<T>& bias, Tape<T>* tape) {
  require_rank("add_bias_rows", rows, 2);
  require_rank("add_bias_rows", bias, 1);
  const int64_t n = rows.extent(0);
  const int64_t k = rows.extent(1);
  if (bias.extent(0) != k) {
    throw ShapeError("add_bias_rows: bias length " + std::to_string(bias.extent(0)) +
                     " vs row width " + std::to_string(k));
  }
  Tensor<T> out = Tensor<T>::zeros(rows.shape());
  auto ov = out.values_mut();
  auto rv = rows.values();
  auto bv = bias.values();
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t j = 0; j < k; ++j) ov[i * k + j] = rv[i * k + j] + bv[j];
  }
  if (tape && (grad_flows(rows) || grad_flows(bias))) {
    tape->record("add_bias_rows", {rows, bias}, out, [rows, bias, out, n, k]() {
      auto g = out.grad();
      if (grad_flows(rows)) {
        auto gr = rows.grad_accum();
        for (size_t i = 0; i < g.size(); ++i) gr[i] += g[i];
      }
      if (grad_flows(bias)) {
        auto gb = bias.grad_accum();
        for (int64_t i = 0; i < n; ++i) {
          for (int64_t j = 0; j < k; ++j) gb[j] += g[i * k + j];
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape) {
  require_same_shape("mul", a, b);
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  auto ov = out.values_mut();
  auto av = a.values();
  auto bv = b.values();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
  if (tape && (grad_flows(a) || grad_flows(b))) {
    tape->record("mul", {a, b}, out, [a, b, out]() {
      auto g = out.grad();
      auto av = a.values();
      auto bv = b.values();
      if (grad_flows(a)) {
        auto ga = a.grad_accum();
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
      }
      if (grad_flows(b)) {
        auto gb = b.grad_accum();
        for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor, Tape<T>* tape) {
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  auto ov = out.values_mut();
  auto av = a.values();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * factor;
  if (tape && grad_flows(a)) {
    tape->record("scale", {a}, out, [a, out, factor]() {
      auto g = out.grad();
      auto ga = a.grad_accum();
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
    });
  }
  return out;
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  const int64_t n = a.extent(0), k = a.extent(1), m = b.extent(1);
  if (b.extent(0) != k) {
    throw ShapeError("matmul: inner extents " + shape_to_string(a.shape()) + " x " +
                     shape_to_string(b.shape()));
  }
  Tensor<T> out = Tensor<T>::zeros({n, m});
  auto ov = out.values_mut();
  auto av = a.values();
  auto bv = b.values();
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t kk = 0; kk < k; ++kk) {
      const T s = av[i * k + kk];
      if (s == T(0)) continue;
      const T* brow = &bv[kk * m];
      T* orow = &ov[i * m];
      for (int64_t j = 0; j < m; ++j) orow[j] += s * brow[j];
    }
  }
  if (tape && (grad_flows(a) || grad_flows(b))) {
    tape->record("matmul", {a, b}, out, [a, b, out, n, k, m]() {
      auto g = out.grad();
      auto av = a.values();
      auto bv = b.values();
      if (grad_flows(a)) {
        auto ga = a.grad_accum();
        for (int64_t i = 0; i < n; ++i) {
          for (int64_t kk = 0; kk < k; ++kk) {
            const T* grow = &g[i * m];
            const T* brow = &bv[kk * m];
            T acc = 0;
            for (int64_t j = 0; j < m; ++j) acc += grow[j] * brow[j];
            ga[i * k + kk] += acc;
          }
        }
      }
      if (grad_flows(b)) {
        auto gb = b.grad_accum();
        for (int64_t i = 0; i < n; ++i) {
          for (int64_t kk = 0; kk < k; ++kk) {
            const T s = av[i * k + kk];
            if (s == T(0)) continue;
            const T* grow = &g[i * m];
            T* gbrow = &gb[kk * m];
            for (int64_t j = 0; j < m; ++j) gbrow[j] += s * grow[j];
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape) {
  require_rank("matmul_nt", a, 2);
  require_rank("matmul_nt", b, 2);
  const int64_t n = a.extent(0), k = a.extent(1), m = b.extent(0);
  if (b.extent(1) != k) {
    throw ShapeError("matmul_nt: inner extents " + shape_to_string(a.shape()) +
                     " x " + shape_to_string(b.shape()) + "^T");
  }
  Tensor<T> out = Tensor<T>::zeros({n, m});
  auto ov = out.values_mut();
  auto av = a.values();
  auto bv = b.values();
  for (int64_t i = 0; i < n; ++i) {
    const T* arow = &av[i * k];
    for (int64_t j = 0; j < m; ++j) {
      const T* brow = &bv[j * k];
      T acc = 0;
      for (int64_t kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
      ov[i * m + j] = acc;
    }
  }
  if (tape && (grad_flows(a) || grad_flows(b))) {
    tape->record("matmul_nt", {a, b}, out, [a, b, out, n, k, m]() {
      auto g = out.grad();
      auto av = a.values();
      auto bv = b.values();
      if (grad_flows(a)) {
        auto ga = a.grad_accum();
        for (int64_t i = 0; i < n; ++i) {
          T* garow = &ga[i * k];
          for (int64_t j = 0; j < m; ++j) {
            const T s = g[i * m + j];
            if (s == T(0)) continue;
            const T* brow = &bv[j * k];
            for (int64_t kk = 0; kk < k; ++kk) garow[kk] += s * brow[kk];
          }
        }
      }
      if (grad_flows(b)) {
        auto gb = b.grad_accum();
        for (int64_t i = 0; i < n; ++i) {
          const T* arow = &av[i * k];
          for (int64_t j = 0; j < m; ++j) {
            const T s = g[i * m + j];
            if (s == T(0)) continue;
            T* gbrow = &gb[j * k];
            for (int64_t kk = 0; kk < k; ++kk) gbrow[kk] += s * arow[kk];
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> activation(const Tensor<T>& x, Activation act, Tape<T>* tape) {
  if (act == Activation::kNone) return x;
  if (act == Activation::kSoftmax) return softmax(x, tape);
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  auto ov = out.values_mut();
  auto xv = x.values();
  switch (act) {
    case Activation::kReLU:
      for (size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] > T(0) ? xv[i] : T(0);
      break;
    case Activation::kTanh:
      for (size_t i = 0; i < ov.size(); ++i) ov[i] = std::tanh(xv[i]);
      break;
    case Activation::kSigmoid:
      for (size_t i = 0; i < ov.size(); ++i) ov[i] = T(1) / (T(1) + std::exp(-xv[i]));
      break;
    default:
      throw ContractError("activation: unhandled kind");
  }
  if (tape && grad_flows(x)) {
    tape->record("activation", {x}, out, [x, out, act]() {
      auto g = out.grad();
      auto gx = x.grad_accum();
      auto xv = x.values();
      auto ov = out.values();
      switch (act) {
        case Activation::kReLU:
          for (size_t i = 0; i < g.size(); ++i) {
            if (xv[i] > T(0)) gx[i] += g[i];
          }
          break;
        case Activation::kTanh:
          for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (T(1) - ov[i] * ov[i]);
          break;
        case Activation::kSigmoid:
          for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * ov[i] * (T(1) - ov[i]);
          break;
        default:
          break;
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, Tape<T>* tape) {
  if (x.rank() != 1 && x.rank() != 2) {
    throw ShapeError("softmax: expected rank 1 or 2, got " + shape_to_string(x.shape()));
  }
  const int64_t n = x.rank() == 2 ? x.extent(0) : 1;
  const int64_t k = x.extent(x.rank() - 1);
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  auto ov = out.values_mut();
  auto xv = x.values();
  for (int64_t i = 0; i < n; ++i) {
    const T* row = &xv[i * k];
    T* orow = &ov[i * k];
    T mx = row[0];
    for (int64_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    T s = 0;
    for (int64_t j = 0; j < k; ++j) {
      orow[j] = std::exp(row[j] - mx);
      s += orow[j];
    }
    const T inv = T(1) / s;
    for (int64_t j = 0; j < k; ++j) orow[j] *= inv;
  }
  if (tape && grad_flows(x)) {
    tape->record("softmax", {x}, out, [x, out, n, k]() {
      auto g = out.grad();
      auto gx = x.grad_accum();
      auto ov = out.values();
      for (int64_t i = 0; i < n; ++i) {
        const T* grow = &g[i * k];
        const T* orow = &ov[i * k];
        T dot = 0;
        for (int64_t j = 0; j < k; ++j) dot += grow[j] * orow[j];
        T* gxrow = &gx[i * k];
        for (int64_t j = 0; j < k; ++j) gxrow[j] += orow[j] * (grow[j] - dot);
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                     T eps, Tape<T>* tape) {
  if (x.rank() != 1 && x.rank() != 2) {
    throw ShapeError("layer_norm: expected rank 1 or 2, got " + shape_to_string(x.shape()));
  }
  const int64_t n = x.rank() == 2 ? x.extent(0) : 1;
  const int64_t k = x.extent(x.rank() - 1);
  require_rank("layer_norm", gain, 1);
  require_rank("layer_norm", bias, 1);
  if (gain.extent(0) != k || bias.extent(0) != k) {
    throw ShapeError("layer_norm: gain/bias length must match last extent " +
                     std::to_string(k));
  }
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  auto ov = out.values_mut();
  auto xv = x.values();
  auto gv = gain.values();
  auto bv = bias.values();
  std::vector<T> xhat(static_cast<size_t>(n * k));
  std::vector<T> inv_std(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    const T* row = &xv[i * k];
    T mean = 0;
    for (int64_t j = 0; j < k; ++j) mean += row[j];
    mean /= T(k);
    T var = 0;
    for (int64_t j = 0; j < k; ++j) {
      const T d = row[j] - mean;
      var += d * d;
    }
    var /= T(k);
    const T inv = T(1) / std::sqrt(var + eps);
    inv_std[static_cast<size_t>(i)] = inv;
    for (int64_t j = 0; j < k; ++j) {
      const T h = (row[j] - mean) * inv;
      xhat[static_cast<size_t>(i * k + j)] = h;
      ov[i * k + j] = gv[j] * h + bv[j];
    }
  }
  if (tape && (grad_flows(x) || grad_flows(gain) || grad_flows(bias))) {
    tape->record("layer_norm", {x, gain, bias}, out,
                 [x, gain, bias, out, n, k, xhat = std::move(xhat),
                  inv_std = std::move(inv_std)]() {
      auto g = out.grad();
      auto gv = gain.values();
      if (grad_flows(gain)) {
        auto gg = gain.grad_accum();
        for (int64_t i = 0; i < n; ++i) {
          for (int64_t j = 0; j < k; ++j) {
            gg[j] += g[i * k + j] * xhat[static_cast<size_t>(i * k + j)];
          }
        }
      }
      if (grad_flows(bias)) {
        auto gb = bias.grad_accum();
        for (int64_t i = 0; i < n; ++i) {
          for (int64_t j = 0; j < k; ++j) gb[j] += g[i * k + j];
        }
      }
      if (grad_flows(x)) {
        auto gx = x.grad_accum();
        for (int64_t i = 0; i < n; ++i) {
          const T* grow = &g[i * k];
          const T* hrow = &xhat[static_cast<size_t>(i * k)];
          T mean_d = 0, mean_dh = 0;
          for (int64_t j = 0; j < k; ++j) {
            const T d = grow[j] * gv[j];
            mean_d += d;
            mean_dh += d * hrow[j];
          }
          mean_d /= T(k);
          mean_dh /= T(k);
          const T inv = inv_std[static_cast<size_t>(i)];
          T* gxrow = &gx[i * k];
          for (int64_t j = 0; j < k; ++j) {
            const T d = grow[j] * gv[j];
            gxrow[j] += inv * (d - mean_d - hrow[j] * mean_dh);
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> conv1d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                 int64_t stride, Tape<T>* tape) {
  require_rank("conv1d", input, 2);
  require_rank("conv1d", kernel, 3);
  require_rank("conv1d", bias, 1);
  const int64_t len = input.extent(0);
  const int64_t in_ch = input.extent(1);
  const int64_t width = kernel.extent(0);
  const int64_t out_ch = kernel.extent(2);
  if (kernel.extent(1) != in_ch) {
    throw ShapeError("conv1d: kernel expects " + std::to_string(kernel.extent(1)) +
                     " input channels, input has " + std::to_string(in_ch));
  }
  if (bias.extent(0) != out_ch) {
    throw ShapeError("conv1d: bias length " + std::to_string(bias.extent(0)) +
                     " vs out channels " + std::to_string(out_ch));
  }
  const int64_t out_len = conv1d_out_length(len, width, stride);
  Tensor<T> out = Tensor<T>::zeros({out_len, out_ch});
  auto ov = out.values_mut();
  auto xv = input.values();
  auto kv = kernel.values();
  auto bv = bias.values();
  for (int64_t t = 0; t < out_len; ++t) {
    T* orow = &ov[t * out_ch];
    for (int64_t o = 0; o < out_ch; ++o) orow[o] = bv[o];
    for (int64_t j = 0; j < width; ++j) {
      const T* xrow = &xv[(t * stride + j) * in_ch];
      for (int64_t c = 0; c < in_ch; ++c) {
        const T v = xrow[c];
        if (v == T(0)) continue;
        const T* krow = &kv[(j * in_ch + c) * out_ch];
        for (int64_t o = 0; o < out_ch; ++o) orow[o] += v * krow[o];
      }
    }
  }
  if (tape && (grad_flows(input) || grad_flows(kernel) || grad_flows(bias))) {
    tape->record("conv1d", {input, kernel, bias}, out,
                 [input, kernel, bias, out, out_len, width, in_ch, out_ch, stride]() {
      auto g = out.grad();
      auto xv = input.values();
      auto kv = kernel.values();
      if (grad_flows(bias)) {
        auto gb = bias.grad_accum();
        for (int64_t t = 0; t < out_len; ++t) {
          for (int64_t o = 0; o < out_ch; ++o) gb[o] += g[t * out_ch + o];
        }
      }
      if (grad_flows(kernel)) {
        auto gk = kernel.grad_accum();
        for (int64_t t = 0; t < out_len; ++t) {
          const T* grow = &g[t * out_ch];
          for (int64_t j = 0; j < width; ++j) {
            const T* xrow = &xv[(t * stride + j) * in_ch];
            for (int64_t c = 0; c < in_ch; ++c) {
              const T v = xrow[c];
              if (v == T(0)) continue;
              T* gkrow = &gk[(j * in_ch + c) * out_ch];
              for (int64_t o = 0; o < out_ch; ++o) gkrow[o] += v * grow[o];
            }
          }
        }
      }
      if (grad_flows(input)) {
        auto gx = input.grad_accum();
        for (int64_t t = 0; t < out_len; ++t) {
          const T* grow = &g[t * out_ch];
          for (int64_t j = 0; j < width; ++j) {
            T* gxrow = &gx[(t * stride + j) * in_ch];
            for (int64_t c = 0; c < in_ch; ++c) {
              const T* krow = &kv[(j * in_ch + c) * out_ch];
              T acc = 0;
              for (int64_t o = 0; o < out_ch; ++o) acc += grow[o] * krow[o];
              gxrow[c] += acc;
            }
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> maxpool1d(const Tensor<T>& input, int64_t size, int64_t stride, Tape<T>* tape) {
  require_rank("maxpool1d", input, 2);
  const int64_t len = input.extent(0);
  const int64_t ch = input.extent(1);
  const int64_t out_len = pool1d_out_length(len, size, stride);
  Tensor<T> out = Tensor<T>::zeros({out_len, ch});
  auto ov = out.values_mut();
  auto xv = input.values();
  std::vector<int64_t> argrow(static_cast<size_t>(out_len * ch));
  for (int64_t t = 0; t < out_len; ++t) {
    for (int64_t c = 0; c < ch; ++c) {
      int64_t best_row = t * stride;
      T best = xv[best_row * ch + c];
      for (int64_t j = 1; j < size; ++j) {
        const T v = xv[(t * stride + j) * ch + c];
        if (v > best) {
          best = v;
          best_row = t * stride + j;
        }
      }
      ov[t * ch + c] = best;
      argrow[static_cast<size_t>(t * ch + c)] = best_row;
    }
  }
  if (tape && grad_flows(input)) {
    tape->record("maxpool1d", {input}, out,
                 [input, out, out_len, ch, argrow = std::move(argrow)]() {
      auto g = out.grad();
      auto gx = input.grad_accum();
      for (int64_t t = 0; t < out_len; ++t) {
        for (int64_t c = 0; c < ch; ++c) {
          gx[argrow[static_cast<size_t>(t * ch + c)] * ch + c] += g[t * ch + c];
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> global_avg_pool1d(const Tensor<T>& input, Tape<T>* tape) {
  require_rank("global_avg_pool1d", input, 2);
  const int64_t len = input.extent(0);
  const int64_t ch = input.extent(1);
  Tensor<T> out = Tensor<T>::zeros({ch});
  auto ov = out.values_mut();
  auto xv = input.values();
  // Summing each channel in ascending value order makes the mean invariant,
  // bit for bit, to any permutation of the time axis.
  std::vector<T> column(static_cast<size_t>(len));
  for (int64_t c = 0; c < ch; ++c) {
    for (int64_t t = 0; t < len; ++t) column[static_cast<size_t>(t)] = xv[t * ch + c];
    std::sort(column.begin(), column.end());
    T s = 0;
    for (const T v : column) s += v;
    ov[c] = s / T(len);
  }
  if (tape && grad_flows(input)) {
    tape->record("global_avg_pool1d", {input}, out, [input, out, len, ch]() {
      auto g = out.grad();
      auto gx = input.grad_accum();
      for (int64_t c = 0; c < ch; ++c) {
        const T coef = g[c] / T(len);
        for (int64_t t = 0; t < len; ++t) gx[t * ch + c] += coef;
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, int64_t col0, int64_t ncols, Tape<T>* tape) {
  require_rank("slice_cols", x, 2);
  const int64_t n = x.extent(0);
  const int64_t k = x.extent(1);
  if (col0 < 0 || ncols < 1 || col0 + ncols > k) {
    throw IndexError("slice_cols: columns [" + std::to_string(col0) + ", " +
                     std::to_string(col0 + ncols) + ") out of range for width " +
                     std::to_string(k));
  }
  Tensor<T> out = Tensor<T>::zeros({n, ncols});
  auto ov = out.values_mut();
  auto xv = x.values();
  for (int64_t i = 0; i < n; ++i) {
    const T* row = &xv[i * k + col0];
    T* orow = &ov[i * ncols];
    for (int64_t j = 0; j < ncols; ++j) orow[j] = row[j];
  }
  if (tape && grad_flows(x)) {
    tape->record("slice_cols", {x}, out, [x, out, n, k, col0, ncols]() {
      auto g = out.grad();
      auto gx = x.grad_accum();
      for (int64_t i = 0; i < n; ++i) {
        const T* grow = &g[i * ncols];
        T* gxrow = &gx[i * k + col0];
        for (int64_t j = 0; j < ncols; ++j) gxrow[j] += grow[j];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts, Tape<T>* tape) {
  if (parts.empty()) throw ShapeError("concat_cols: no parts");
  const int64_t rank = parts[0].rank();
  if (rank != 1 && rank != 2) {
    throw ShapeError("concat_cols: expected rank 1 or 2, got " +
                     shape_to_string(parts[0].shape()));
  }
  const int64_t n = rank == 2 ? parts[0].extent(0) : 1;
  int64_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != rank || (rank == 2 && p.extent(0) != n)) {
      throw ShapeError("concat_cols: incompatible part shape " +
                       shape_to_string(p.shape()));
    }
    total += p.extent(rank - 1);
  }
  Shape out_shape = rank == 2 ? Shape{n, total} : Shape{total};
  Tensor<T> out = Tensor<T>::zeros(out_shape);
  auto ov = out.values_mut();
  int64_t off = 0;
  for (const auto& p : parts) {
    const int64_t k = p.extent(rank - 1);
    auto pv = p.values();
    for (int64_t i = 0; i < n; ++i) {
      for (int64_t j = 0; j < k; ++j) ov[i * total + off + j] = pv[i * k + j];
    }
    off += k;
  }
  bool flows = false;
  for (const auto& p : parts) flows = flows || grad_flows(p);
  if (tape && flows) {
    tape->record("concat_cols", parts, out, [parts, out, n, total, rank]() {
      auto g = out.grad();
      int64_t off = 0;
      for (const auto& p : parts) {
        const int64_t k = p.extent(rank - 1);
        if (grad_flows(p)) {
          auto gp = p.grad_accum();
          for (int64_t i = 0; i < n; ++i) {
            for (int64_t j = 0; j < k; ++j) gp[i * k + j] += g[i * total + off + j];
          }
        }
        off += k;
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> stack_rows(const std::vector<Tensor<T>>& rows, Tape<T>* tape) {
  if (rows.empty()) throw ShapeError("stack_rows: no rows");
  require_rank("stack_rows", rows[0], 1);
  const int64_t k = rows[0].extent(0);
  const int64_t n = static_cast<int64_t>(rows.size());
  for (const auto& r : rows) {
    if (r.rank() != 1 || r.extent(0) != k) {
      throw ShapeError("stack_rows: incompatible row shape " + shape_to_string(r.shape()));
    }
  }
  Tensor<T> out = Tensor<T>::zeros({n, k});
  auto ov = out.values_mut();
  for (int64_t i = 0; i < n; ++i) {
    auto rv = rows[static_cast<size_t>(i)].values();
    for (int64_t j = 0; j < k; ++j) ov[i * k + j] = rv[j];
  }
  bool flows = false;
  for (const auto& r : rows) flows = flows || grad_flows(r);
  if (tape && flows) {
    tape->record("stack_rows", rows, out, [rows, out, k]() {
      auto g = out.grad();
      for (size_t i = 0; i < rows.size(); ++i) {
        if (!grad_flows(rows[i])) continue;
        auto gr = rows[i].grad_accum();
        for (int64_t j = 0; j < k; ++j) gr[j] += g[static_cast<int64_t>(i) * k + j];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape, Tape<T>* tape) {
  const int64_t want = shape_numel(shape);
  if (want != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_to_string(x.shape()) + " as " +
                     shape_to_string(shape));
  }
  Tensor<T> out = Tensor<T>::zeros(shape);
  auto ov = out.values_mut();
  auto xv = x.values();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i];
  if (tape && grad_flows(x)) {
    tape->record("reshape", {x}, out, [x, out]() {
      auto g = out.grad();
      auto gx = x.grad_accum();
      for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> reverse_time(const Tensor<T>& x, Tape<T>* tape) {
  require_rank("reverse_time", x, 2);
  const int64_t len = x.extent(0);
  const int64_t ch = x.extent(1);
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  auto ov = out.values_mut();
  auto xv = x.values();
  for (int64_t t = 0; t < len; ++t) {
    const T* row = &xv[(len - 1 - t) * ch];
    T* orow = &ov[t * ch];
    for (int64_t c = 0; c < ch; ++c) orow[c] = row[c];
  }
  if (tape && grad_flows(x)) {
    tape->record("reverse_time", {x}, out, [x, out, len, ch]() {
      auto g = out.grad();
      auto gx = x.grad_accum();
      for (int64_t t = 0; t < len; ++t) {
        const T* grow = &g[t * ch];
        T* gxrow = &gx[(len - 1 - t) * ch];
        for (int64_t c = 0; c < ch; ++c) gxrow[c] += grow[c];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x, Tape<T>* tape) {
  T s = 0;
  for (const T v : x.values()) s += v;
  Tensor<T> out = Tensor<T>::scalar(s);
  if (tape && grad_flows(x)) {
    tape->record("sum", {x}, out, [x, out]() {
      const T g0 = out.grad()[0];
      auto gx = x.grad_accum();
      for (size_t i = 0; i < gx.size(); ++i) gx[i] += g0;
    });
  }
  return out;
}

template <typename T>
Tensor<T> sum_squares(const Tensor<T>& x, Tape<T>* tape) {
  T s = 0;
  for (const T v : x.values()) s += v * v;
  Tensor<T> out = Tensor<T>::scalar(s);
  if (tape && grad_flows(x)) {
    tape->record("sum_squares", {x}, out, [x, out]() {
      const T g0 = out.grad()[0];
      auto gx = x.grad_accum();
      auto xv = x.values();
      for (size_t i = 0; i < gx.size(); ++i) gx[i] += T(2) * xv[i] * g0;
    });
  }
  return out;
}

#define SEQBENCH_INSTANTIATE_OPS(T)                                                  \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&, Tape<T>*);              \
  template Tensor<T> add_bias_rows(const Tensor<T>&, const Tensor<T>&, Tape<T>*);    \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&, Tape<T>*);              \
  template Tensor<T> scale(const Tensor<T>&, T, Tape<T>*);                           \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&, Tape<T>*);           \
  template Tensor<T> matmul_nt(const Tensor<T>&, const Tensor<T>&, Tape<T>*);        \
  template Tensor<T> activation(const Tensor<T>&, Activation, Tape<T>*);             \
  template Tensor<T> softmax(const Tensor<T>&, Tape<T>*);                            \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                T, Tape<T>*);                                        \
  template Tensor<T> conv1d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,    \
                            int64_t, Tape<T>*);                                      \
  template Tensor<T> maxpool1d(const Tensor<T>&, int64_t, int64_t, Tape<T>*);        \
  template Tensor<T> global_avg_pool1d(const Tensor<T>&, Tape<T>*);                  \
  template Tensor<T> slice_cols(const Tensor<T>&, int64_t, int64_t, Tape<T>*);       \
  template Tensor<T> concat_cols(const std::vector<Tensor<T>>&, Tape<T>*);           \
  template Tensor<T> stack_rows(const std::vector<Tensor<T>>&, Tape<T>*);            \
  template Tensor<T> reshape(const Tensor<T>&, Shape, Tape<T>*);                     \
  template Tensor<T> reverse_time(const Tensor<T>&, Tape<T>*);                       \
  template Tensor<T> sum(const Tensor<T>&, Tape<T>*);                                \
  template Tensor<T> sum_squares(const Tensor<T>&, Tape<T>*);

SEQBENCH_INSTANTIATE_OPS(float)
SEQBENCH_INSTANTIATE_OPS(double)

#undef SEQBENCH_INSTANTIATE_OPS

}  // namespace ops
}  // namespace seqbench
