#include "seqbench/layers.hpp"

#include <cmath>

#include "seqbench/common.hpp"

namespace seqbench {

const char* layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::kInput: return "input";
    case LayerKind::kEmbedding: return "embedding";
    case LayerKind::kTokenPositionEmbedding: return "token_position_embedding";
    case LayerKind::kConv1d: return "conv1d";
    case LayerKind::kMaxPool1d: return "maxpool1d";
    case LayerKind::kDense: return "dense";
    case LayerKind::kDropout: return "dropout";
    case LayerKind::kLstm: return "lstm";
    case LayerKind::kBidirectional: return "bidirectional";
    case LayerKind::kResidualAdd: return "residual_add";
    case LayerKind::kConcat: return "concat";
    case LayerKind::kGlobalAvgPool: return "global_avg_pool";
    case LayerKind::kLayerNorm: return "layer_norm";
    case LayerKind::kMultiHeadAttention: return "multi_head_attention";
    case LayerKind::kTransformerBlock: return "transformer_block";
    case LayerKind::kFlatten: return "flatten";
  }
  throw ContractError("unknown layer kind");
}

template <typename T>
bool ParameterBundle<T>::has(const std::string& role) const {
  for (const auto& p : params) {
    if (p.role == role) return true;
  }
  return false;
}

template <typename T>
const Tensor<T>& ParameterBundle<T>::get(const std::string& role) const {
  for (const auto& p : params) {
    if (p.role == role) return p.tensor;
  }
  throw ContractError("parameter bundle has no role '" + role + "'");
}

template <typename T>
void ParameterBundle<T>::add(std::string role, Tensor<T> tensor, bool trainable) {
  tensor.set_requires_grad(trainable);
  params.push_back(NamedParam<T>{std::move(role), std::move(tensor), trainable});
}

template <typename T>
ParameterBundle<T> ParameterBundle<T>::sub(const std::string& prefix) const {
  ParameterBundle<T> out;
  for (const auto& p : params) {
    if (p.role.rfind(prefix, 0) == 0) {
      out.params.push_back(NamedParam<T>{p.role.substr(prefix.size()), p.tensor, p.trainable});
    }
  }
  return out;
}

template <typename T>
ParamCount ParameterBundle<T>::counts() const {
  ParamCount c;
  for (const auto& p : params) {
    const int64_t n = p.tensor.numel();
    c.total += n;
    if (p.trainable) {
      c.trainable += n;
    } else {
      c.frozen += n;
    }
  }
  return c;
}

template struct ParameterBundle<float>;
template struct ParameterBundle<double>;

namespace {

int64_t lstm_count(int64_t in, int64_t h) { return 4 * ((in + h) * h + h); }

void require_positive(const LayerSpec& spec, int64_t value, const char* field) {
  if (value < 1) {
    throw ConfigError("layer '" + spec.name + "' (" + layer_kind_name(spec.kind) +
                      ") needs " + field + " >= 1");
  }
}

int64_t last_extent(const LayerSpec& spec, const Shape& shape) {
  if (shape.empty()) {
    throw ShapeError("layer '" + spec.name + "' got a rank-0 input");
  }
  return shape.back();
}

}  // namespace

ParamCount layer_param_count(const LayerSpec& spec, const Shape& input_shape) {
  const LayerHyper& h = spec.hyper;
  int64_t total = 0;
  switch (spec.kind) {
    case LayerKind::kEmbedding:
      require_positive(spec, h.vocab, "vocab");
      require_positive(spec, h.dim, "dim");
      total = h.vocab * h.dim;
      break;
    case LayerKind::kTokenPositionEmbedding:
      require_positive(spec, h.vocab, "vocab");
      require_positive(spec, h.dim, "dim");
      require_positive(spec, h.maxlen, "maxlen");
      total = h.vocab * h.dim + h.maxlen * h.dim;
      break;
    case LayerKind::kConv1d:
      require_positive(spec, h.units, "units");
      require_positive(spec, h.width, "width");
      total = h.width * last_extent(spec, input_shape) * h.units + h.units;
      break;
    case LayerKind::kDense:
      require_positive(spec, h.units, "units");
      total = last_extent(spec, input_shape) * h.units + h.units;
      break;
    case LayerKind::kLstm:
      require_positive(spec, h.units, "units");
      total = lstm_count(last_extent(spec, input_shape), h.units);
      break;
    case LayerKind::kBidirectional:
      require_positive(spec, h.units, "units");
      total = 2 * lstm_count(last_extent(spec, input_shape), h.units);
      break;
    case LayerKind::kLayerNorm:
      total = 2 * last_extent(spec, input_shape);
      break;
    case LayerKind::kMultiHeadAttention: {
      require_positive(spec, h.heads, "heads");
      require_positive(spec, h.key_width, "key_width");
      const int64_t d = last_extent(spec, input_shape);
      const int64_t proj = h.heads * h.key_width;
      total = 3 * (d * proj + proj) + proj * d + d;
      break;
    }
    case LayerKind::kTransformerBlock: {
      require_positive(spec, h.heads, "heads");
      require_positive(spec, h.key_width, "key_width");
      require_positive(spec, h.ff_width, "ff_width");
      const int64_t d = last_extent(spec, input_shape);
      const int64_t proj = h.heads * h.key_width;
      const int64_t mha = 3 * (d * proj + proj) + proj * d + d;
      total = mha + (d * h.ff_width + h.ff_width) + (h.ff_width * d + d) + 2 * (2 * d);
      break;
    }
    default:
      total = 0;
      break;
  }
  ParamCount count;
  count.total = total;
  if (spec.hyper.trainable) {
    count.trainable = total;
  } else {
    count.frozen = total;
  }
  return count;
}

Shape layer_output_shape(const LayerSpec& spec, const Shape& input_a,
                         const Shape* input_b) {
  const LayerHyper& h = spec.hyper;
  auto expect_rank = [&](const Shape& s, int64_t rank) {
    if (static_cast<int64_t>(s.size()) != rank) {
      throw ShapeError("layer '" + spec.name + "' (" + layer_kind_name(spec.kind) +
                       ") expects rank " + std::to_string(rank) + ", got " +
                       shape_to_string(s));
    }
  };
  switch (spec.kind) {
    case LayerKind::kInput:
      return input_a;
    case LayerKind::kEmbedding:
      expect_rank(input_a, 1);
      return {input_a[0], h.dim};
    case LayerKind::kTokenPositionEmbedding:
      expect_rank(input_a, 1);
      if (input_a[0] > h.maxlen) {
        throw ShapeError("layer '" + spec.name + "': sequence length " +
                         std::to_string(input_a[0]) + " exceeds maxlen " +
                         std::to_string(h.maxlen));
      }
      return {input_a[0], h.dim};
    case LayerKind::kConv1d:
      expect_rank(input_a, 2);
      return {conv1d_out_length(input_a[0], h.width, h.stride), h.units};
    case LayerKind::kMaxPool1d:
      expect_rank(input_a, 2);
      return {pool1d_out_length(input_a[0], h.width, h.stride), input_a[1]};
    case LayerKind::kDense: {
      Shape out = input_a;
      if (out.empty()) throw ShapeError("layer '" + spec.name + "': rank-0 input");
      out.back() = h.units;
      return out;
    }
    case LayerKind::kDropout:
    case LayerKind::kLayerNorm:
      return input_a;
    case LayerKind::kLstm:
      expect_rank(input_a, 2);
      return h.return_sequences ? Shape{input_a[0], h.units} : Shape{h.units};
    case LayerKind::kBidirectional:
      expect_rank(input_a, 2);
      return h.return_sequences ? Shape{input_a[0], 2 * h.units} : Shape{2 * h.units};
    case LayerKind::kResidualAdd:
      if (input_b == nullptr) {
        throw ContractError("layer '" + spec.name + "': residual_add needs two inputs");
      }
      if (input_a != *input_b) {
        throw ShapeError("layer '" + spec.name + "': residual shapes differ, " +
                         shape_to_string(input_a) + " vs " + shape_to_string(*input_b));
      }
      return input_a;
    case LayerKind::kConcat: {
      if (input_b == nullptr) {
        throw ContractError("layer '" + spec.name + "': concat needs two inputs");
      }
      const Shape& b = *input_b;
      if (input_a.size() != b.size() || input_a.empty() ||
          (input_a.size() == 2 && input_a[0] != b[0])) {
        throw ShapeError("layer '" + spec.name + "': cannot concat " +
                         shape_to_string(input_a) + " with " + shape_to_string(b));
      }
      Shape out = input_a;
      out.back() += b.back();
      return out;
    }
    case LayerKind::kGlobalAvgPool:
      expect_rank(input_a, 2);
      return {input_a[1]};
    case LayerKind::kMultiHeadAttention:
    case LayerKind::kTransformerBlock:
      expect_rank(input_a, 2);
      return input_a;
    case LayerKind::kFlatten:
      return {shape_numel(input_a)};
  }
  throw ContractError("unknown layer kind");
}

// ---- Forward passes -------------------------------------------------------

template <typename T>
Tensor<T> embedding_forward(std::span<const int64_t> ids, const Tensor<T>& table,
                            Tape<T>* tape) {
  if (table.rank() != 2) {
    throw ShapeError("embedding: table must be rank 2, got " +
                     shape_to_string(table.shape()));
  }
  const int64_t vocab = table.extent(0);
  const int64_t dim = table.extent(1);
  const int64_t time = static_cast<int64_t>(ids.size());
  for (int64_t t = 0; t < time; ++t) {
    if (ids[t] < 0 || ids[t] >= vocab) {
      throw IndexError("embedding: id " + std::to_string(ids[t]) + " at position " +
                       std::to_string(t) + " outside vocab " + std::to_string(vocab));
    }
  }
  Tensor<T> out = Tensor<T>::zeros({time, dim});
  auto ov = out.values_mut();
  auto tv = table.values();
  for (int64_t t = 0; t < time; ++t) {
    const T* row = &tv[ids[t] * dim];
    T* orow = &ov[t * dim];
    for (int64_t j = 0; j < dim; ++j) orow[j] = row[j];
  }
  if (tape && grad_flows(table)) {
    std::vector<int64_t> idv(ids.begin(), ids.end());
    tape->record("embedding", {table}, out, [table, out, idv = std::move(idv), dim]() {
      auto g = out.grad();
      auto gt = table.grad_accum();
      for (size_t t = 0; t < idv.size(); ++t) {
        const T* grow = &g[static_cast<int64_t>(t) * dim];
        T* trow = &gt[idv[t] * dim];
        for (int64_t j = 0; j < dim; ++j) trow[j] += grow[j];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> token_position_embedding_forward(std::span<const int64_t> ids,
                                           const Tensor<T>& token_table,
                                           const Tensor<T>& pos_table, Tape<T>* tape) {
  if (token_table.rank() != 2 || pos_table.rank() != 2 ||
      token_table.extent(1) != pos_table.extent(1)) {
    throw ShapeError("token_position_embedding: incompatible tables " +
                     shape_to_string(token_table.shape()) + " and " +
                     shape_to_string(pos_table.shape()));
  }
  const int64_t vocab = token_table.extent(0);
  const int64_t dim = token_table.extent(1);
  const int64_t maxlen = pos_table.extent(0);
  const int64_t time = static_cast<int64_t>(ids.size());
  if (time > maxlen) {
    throw ShapeError("token_position_embedding: sequence length " +
                     std::to_string(time) + " exceeds maxlen " + std::to_string(maxlen));
  }
  for (int64_t t = 0; t < time; ++t) {
    if (ids[t] < 0 || ids[t] >= vocab) {
      throw IndexError("token_position_embedding: id " + std::to_string(ids[t]) +
                       " at position " + std::to_string(t) + " outside vocab " +
                       std::to_string(vocab));
    }
  }
  Tensor<T> out = Tensor<T>::zeros({time, dim});
  auto ov = out.values_mut();
  auto tv = token_table.values();
  auto pv = pos_table.values();
  for (int64_t t = 0; t < time; ++t) {
    const T* trow = &tv[ids[t] * dim];
    const T* prow = &pv[t * dim];
    T* orow = &ov[t * dim];
    for (int64_t j = 0; j < dim; ++j) orow[j] = trow[j] + prow[j];
  }
  if (tape && (grad_flows(token_table) || grad_flows(pos_table))) {
    std::vector<int64_t> idv(ids.begin(), ids.end());
    tape->record("token_position_embedding", {token_table, pos_table}, out,
                 [token_table, pos_table, out, idv = std::move(idv), dim]() {
      auto g = out.grad();
      if (grad_flows(token_table)) {
        auto gt = token_table.grad_accum();
        for (size_t t = 0; t < idv.size(); ++t) {
          const T* grow = &g[static_cast<int64_t>(t) * dim];
          T* trow = &gt[idv[t] * dim];
          for (int64_t j = 0; j < dim; ++j) trow[j] += grow[j];
        }
      }
      if (grad_flows(pos_table)) {
        auto gp = pos_table.grad_accum();
        for (size_t t = 0; t < idv.size(); ++t) {
          const T* grow = &g[static_cast<int64_t>(t) * dim];
          T* prow = &gp[static_cast<int64_t>(t) * dim];
          for (int64_t j = 0; j < dim; ++j) prow[j] += grow[j];
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> dense_forward(const Tensor<T>& x, const Tensor<T>& kernel,
                        const Tensor<T>& bias, Activation act, Tape<T>* tape) {
  if (kernel.rank() != 2) {
    throw ShapeError("dense: kernel must be rank 2, got " +
                     shape_to_string(kernel.shape()));
  }
  const int64_t in = kernel.extent(0);
  const int64_t units = kernel.extent(1);
  if (x.rank() == 1) {
    if (x.extent(0) != in) {
      throw ShapeError("dense: input width " + std::to_string(x.extent(0)) +
                       " vs kernel input " + std::to_string(in));
    }
    Tensor<T> rows = ops::reshape(x, {1, in}, tape);
    Tensor<T> y = ops::matmul(rows, kernel, tape);
    y = ops::add_bias_rows(y, bias, tape);
    y = ops::activation(y, act, tape);
    return ops::reshape(y, {units}, tape);
  }
  if (x.rank() == 2) {
    Tensor<T> y = ops::matmul(x, kernel, tape);
    y = ops::add_bias_rows(y, bias, tape);
    return ops::activation(y, act, tape);
  }
  throw ShapeError("dense: expected rank 1 or 2 input, got " +
                   shape_to_string(x.shape()));
}

template <typename T>
Tensor<T> lstm_forward(const Tensor<T>& x, const ParameterBundle<T>& weights,
                       bool return_sequences, Tape<T>* tape) {
  const Tensor<T>& kernel = weights.get("kernel");
  const Tensor<T>& recurrent = weights.get("recurrent_kernel");
  const Tensor<T>& bias = weights.get("bias");
  if (x.rank() != 2) {
    throw ShapeError("lstm: expected [time, in] input, got " +
                     shape_to_string(x.shape()));
  }
  const int64_t time = x.extent(0);
  const int64_t in = x.extent(1);
  if (recurrent.rank() != 2 || recurrent.extent(1) != 4 * recurrent.extent(0)) {
    throw ShapeError("lstm: recurrent kernel must be [h, 4h], got " +
                     shape_to_string(recurrent.shape()));
  }
  const int64_t h = recurrent.extent(0);
  if (kernel.rank() != 2 || kernel.extent(0) != in || kernel.extent(1) != 4 * h) {
    throw ShapeError("lstm: kernel must be [" + std::to_string(in) + ", " +
                     std::to_string(4 * h) + "], got " + shape_to_string(kernel.shape()));
  }
  if (bias.rank() != 1 || bias.extent(0) != 4 * h) {
    throw ShapeError("lstm: bias must be [4h], got " + shape_to_string(bias.shape()));
  }

  const size_t th = static_cast<size_t>(time * h);
  std::vector<T> gate_i(th), gate_f(th), gate_g(th), gate_o(th);
  std::vector<T> cell(th), tanh_c(th), hidden(th);
  std::vector<T> z(static_cast<size_t>(4 * h));

  auto xv = x.values();
  auto kv = kernel.values();
  auto rv = recurrent.values();
  auto bv = bias.values();

  for (int64_t t = 0; t < time; ++t) {
    for (int64_t j = 0; j < 4 * h; ++j) z[static_cast<size_t>(j)] = bv[j];
    const T* xrow = &xv[t * in];
    for (int64_t a = 0; a < in; ++a) {
      const T s = xrow[a];
      if (s == T(0)) continue;
      const T* krow = &kv[a * 4 * h];
      for (int64_t j = 0; j < 4 * h; ++j) z[static_cast<size_t>(j)] += s * krow[j];
    }
    if (t > 0) {
      const T* hrow = &hidden[static_cast<size_t>((t - 1) * h)];
      for (int64_t u = 0; u < h; ++u) {
        const T s = hrow[u];
        if (s == T(0)) continue;
        const T* rrow = &rv[u * 4 * h];
        for (int64_t j = 0; j < 4 * h; ++j) z[static_cast<size_t>(j)] += s * rrow[j];
      }
    }
    for (int64_t u = 0; u < h; ++u) {
      const size_t idx = static_cast<size_t>(t * h + u);
      const T iu = T(1) / (T(1) + std::exp(-z[static_cast<size_t>(u)]));
      const T fu = T(1) / (T(1) + std::exp(-z[static_cast<size_t>(h + u)]));
      const T gu = std::tanh(z[static_cast<size_t>(2 * h + u)]);
      const T ou = T(1) / (T(1) + std::exp(-z[static_cast<size_t>(3 * h + u)]));
      const T cprev = t > 0 ? cell[static_cast<size_t>((t - 1) * h + u)] : T(0);
      const T cu = fu * cprev + iu * gu;
      const T tcu = std::tanh(cu);
      gate_i[idx] = iu;
      gate_f[idx] = fu;
      gate_g[idx] = gu;
      gate_o[idx] = ou;
      cell[idx] = cu;
      tanh_c[idx] = tcu;
      hidden[idx] = ou * tcu;
    }
  }

  Tensor<T> out;
  if (return_sequences) {
    out = Tensor<T>::zeros({time, h});
    auto ov = out.values_mut();
    for (size_t i = 0; i < th; ++i) ov[i] = hidden[i];
  } else {
    out = Tensor<T>::zeros({h});
    auto ov = out.values_mut();
    const T* last = &hidden[static_cast<size_t>((time - 1) * h)];
    for (int64_t u = 0; u < h; ++u) ov[u] = last[u];
  }

  const bool flows = grad_flows(x) || grad_flows(kernel) || grad_flows(recurrent) ||
                     grad_flows(bias);
  if (tape && flows) {
    tape->record(
        "lstm", {x, kernel, recurrent, bias}, out,
        [x, kernel, recurrent, bias, out, time, in, h, return_sequences,
         gate_i = std::move(gate_i), gate_f = std::move(gate_f),
         gate_g = std::move(gate_g), gate_o = std::move(gate_o),
         cell = std::move(cell), tanh_c = std::move(tanh_c),
         hidden = std::move(hidden)]() {
      auto g = out.grad();
      auto xv = x.values();
      auto kv = kernel.values();
      auto rv = recurrent.values();
      const bool fx = grad_flows(x);
      const bool fk = grad_flows(kernel);
      const bool fr = grad_flows(recurrent);
      const bool fb = grad_flows(bias);
      std::span<T> gx, gk, gr, gb;
      if (fx) gx = x.grad_accum();
      if (fk) gk = kernel.grad_accum();
      if (fr) gr = recurrent.grad_accum();
      if (fb) gb = bias.grad_accum();

      std::vector<T> dh_next(static_cast<size_t>(h), T(0));
      std::vector<T> dc_next(static_cast<size_t>(h), T(0));
      std::vector<T> dz(static_cast<size_t>(4 * h));
      for (int64_t t = time - 1; t >= 0; --t) {
        for (int64_t u = 0; u < h; ++u) {
          const size_t idx = static_cast<size_t>(t * h + u);
          T dh = dh_next[static_cast<size_t>(u)];
          if (return_sequences) {
            dh += g[t * h + u];
          } else if (t == time - 1) {
            dh += g[u];
          }
          const T iu = gate_i[idx], fu = gate_f[idx], gu = gate_g[idx],
                  ou = gate_o[idx], tcu = tanh_c[idx];
          const T cprev = t > 0 ? cell[static_cast<size_t>((t - 1) * h + u)] : T(0);
          const T do_u = dh * tcu;
          const T dc = dh * ou * (T(1) - tcu * tcu) + dc_next[static_cast<size_t>(u)];
          const T di = dc * gu;
          const T dg = dc * iu;
          const T df = dc * cprev;
          dz[static_cast<size_t>(u)] = di * iu * (T(1) - iu);
          dz[static_cast<size_t>(h + u)] = df * fu * (T(1) - fu);
          dz[static_cast<size_t>(2 * h + u)] = dg * (T(1) - gu * gu);
          dz[static_cast<size_t>(3 * h + u)] = do_u * ou * (T(1) - ou);
          dc_next[static_cast<size_t>(u)] = dc * fu;
        }
        if (fb) {
          for (int64_t j = 0; j < 4 * h; ++j) gb[j] += dz[static_cast<size_t>(j)];
        }
        if (fk) {
          const T* xrow = &xv[t * in];
          for (int64_t a = 0; a < in; ++a) {
            const T s = xrow[a];
            if (s == T(0)) continue;
            T* gkrow = &gk[a * 4 * h];
            for (int64_t j = 0; j < 4 * h; ++j) gkrow[j] += s * dz[static_cast<size_t>(j)];
          }
        }
        if (fr && t > 0) {
          const T* hrow = &hidden[static_cast<size_t>((t - 1) * h)];
          for (int64_t u = 0; u < h; ++u) {
            const T s = hrow[u];
            if (s == T(0)) continue;
            T* grrow = &gr[u * 4 * h];
            for (int64_t j = 0; j < 4 * h; ++j) grrow[j] += s * dz[static_cast<size_t>(j)];
          }
        }
        if (fx) {
          T* gxrow = &gx[t * in];
          for (int64_t a = 0; a < in; ++a) {
            const T* krow = &kv[a * 4 * h];
            T acc = 0;
            for (int64_t j = 0; j < 4 * h; ++j) acc += dz[static_cast<size_t>(j)] * krow[j];
            gxrow[a] += acc;
          }
        }
        for (int64_t u = 0; u < h; ++u) {
          const T* rrow = &rv[u * 4 * h];
          T acc = 0;
          for (int64_t j = 0; j < 4 * h; ++j) acc += dz[static_cast<size_t>(j)] * rrow[j];
          dh_next[static_cast<size_t>(u)] = acc;
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> bidirectional_forward(const Tensor<T>& x, const ParameterBundle<T>& fwd,
                                const ParameterBundle<T>& bwd, bool return_sequences,
                                Tape<T>* tape) {
  Tensor<T> f_out = lstm_forward(x, fwd, return_sequences, tape);
  Tensor<T> rx = ops::reverse_time(x, tape);
  Tensor<T> b_out = lstm_forward(rx, bwd, return_sequences, tape);
  if (return_sequences) {
    b_out = ops::reverse_time(b_out, tape);
  }
  return ops::concat_cols<T>({f_out, b_out}, tape);
}

template <typename T>
Tensor<T> multi_head_attention_forward(const Tensor<T>& q, const Tensor<T>& k,
                                       const Tensor<T>& v,
                                       const ParameterBundle<T>& weights,
                                       int64_t heads, int64_t key_width, Tape<T>* tape) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2) {
    throw ShapeError("multi_head_attention: rank-2 inputs required");
  }
  const int64_t d = q.extent(1);
  if (k.extent(1) != d || v.extent(1) != d || k.extent(0) != v.extent(0)) {
    throw ShapeError("multi_head_attention: query " + shape_to_string(q.shape()) +
                     ", key " + shape_to_string(k.shape()) + ", value " +
                     shape_to_string(v.shape()) + " disagree");
  }
  const int64_t proj = heads * key_width;
  const Tensor<T>& wq = weights.get("query_kernel");
  if (wq.extent(0) != d || wq.extent(1) != proj) {
    throw ShapeError("multi_head_attention: projections sized for width " +
                     std::to_string(wq.extent(0)) + ", input width " + std::to_string(d));
  }
  Tensor<T> qp = ops::add_bias_rows(ops::matmul(q, wq, tape), weights.get("query_bias"), tape);
  Tensor<T> kp = ops::add_bias_rows(ops::matmul(k, weights.get("key_kernel"), tape),
                                    weights.get("key_bias"), tape);
  Tensor<T> vp = ops::add_bias_rows(ops::matmul(v, weights.get("value_kernel"), tape),
                                    weights.get("value_bias"), tape);
  const T inv_sqrt = T(1) / static_cast<T>(std::sqrt(static_cast<double>(key_width)));
  std::vector<Tensor<T>> contexts;
  contexts.reserve(static_cast<size_t>(heads));
  for (int64_t head = 0; head < heads; ++head) {
    Tensor<T> qh = ops::slice_cols(qp, head * key_width, key_width, tape);
    Tensor<T> kh = ops::slice_cols(kp, head * key_width, key_width, tape);
    Tensor<T> vh = ops::slice_cols(vp, head * key_width, key_width, tape);
    Tensor<T> scores = ops::scale(ops::matmul_nt(qh, kh, tape), inv_sqrt, tape);
    Tensor<T> attn = ops::softmax(scores, tape);
    contexts.push_back(ops::matmul(attn, vh, tape));
  }
  Tensor<T> merged = ops::concat_cols(contexts, tape);
  return ops::add_bias_rows(ops::matmul(merged, weights.get("output_kernel"), tape),
                            weights.get("output_bias"), tape);
}

template <typename T>
Tensor<T> transformer_block_forward(const Tensor<T>& x, const ParameterBundle<T>& weights,
                                    int64_t heads, int64_t key_width, int64_t ff_width,
                                    double rate, bool training, RngStream* rng,
                                    Tape<T>* tape) {
  (void)ff_width;
  ParameterBundle<T> attn = weights.sub("attention.");
  Tensor<T> mha = multi_head_attention_forward(x, x, x, attn, heads, key_width, tape);
  mha = dropout_forward(mha, rate, training, rng, tape);
  Tensor<T> a = ops::layer_norm(ops::add(x, mha, tape), weights.get("norm1_gain"),
                                weights.get("norm1_bias"), T(kLayerNormEps), tape);
  Tensor<T> ff = dense_forward(a, weights.get("ffn1_kernel"), weights.get("ffn1_bias"),
                               Activation::kReLU, tape);
  ff = dense_forward(ff, weights.get("ffn2_kernel"), weights.get("ffn2_bias"),
                     Activation::kNone, tape);
  ff = dropout_forward(ff, rate, training, rng, tape);
  return ops::layer_norm(ops::add(a, ff, tape), weights.get("norm2_gain"),
                         weights.get("norm2_bias"), T(kLayerNormEps), tape);
}

template <typename T>
Tensor<T> dropout_forward(const Tensor<T>& x, double rate, bool training,
                          RngStream* rng, Tape<T>* tape) {
  if (rate < 0.0 || rate >= 1.0) {
    throw ConfigError("dropout rate must be in [0, 1), got " + std::to_string(rate));
  }
  if (!training || rate == 0.0) return x;
  if (rng == nullptr) {
    throw ContractError("dropout in training mode needs an RngStream");
  }
  Tensor<T> mask = Tensor<T>::zeros(x.shape());
  auto mv = mask.values_mut();
  const T keep_scale = T(1.0 / (1.0 - rate));
  for (size_t i = 0; i < mv.size(); ++i) {
    mv[i] = rng->next_unit() >= rate ? keep_scale : T(0);
  }
  return ops::mul(x, mask, tape);
}

template <typename T>
Tensor<T> residual_add(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape) {
  return ops::add(a, b, tape);
}

#define SEQBENCH_INSTANTIATE_LAYERS(T)                                                \
  template Tensor<T> embedding_forward(std::span<const int64_t>, const Tensor<T>&,    \
                                       Tape<T>*);                                     \
  template Tensor<T> token_position_embedding_forward(                                \
      std::span<const int64_t>, const Tensor<T>&, const Tensor<T>&, Tape<T>*);        \
  template Tensor<T> dense_forward(const Tensor<T>&, const Tensor<T>&,                \
                                   const Tensor<T>&, Activation, Tape<T>*);           \
  template Tensor<T> lstm_forward(const Tensor<T>&, const ParameterBundle<T>&, bool,  \
                                  Tape<T>*);                                          \
  template Tensor<T> bidirectional_forward(const Tensor<T>&, const ParameterBundle<T>&, \
                                           const ParameterBundle<T>&, bool, Tape<T>*); \
  template Tensor<T> multi_head_attention_forward(                                    \
      const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const ParameterBundle<T>&, \
      int64_t, int64_t, Tape<T>*);                                                    \
  template Tensor<T> transformer_block_forward(const Tensor<T>&,                      \
                                               const ParameterBundle<T>&, int64_t,    \
                                               int64_t, int64_t, double, bool,        \
                                               RngStream*, Tape<T>*);                 \
  template Tensor<T> dropout_forward(const Tensor<T>&, double, bool, RngStream*,      \
                                     Tape<T>*);                                       \
  template Tensor<T> residual_add(const Tensor<T>&, const Tensor<T>&, Tape<T>*);

SEQBENCH_INSTANTIATE_LAYERS(float)
SEQBENCH_INSTANTIATE_LAYERS(double)

#undef SEQBENCH_INSTANTIATE_LAYERS

}  // namespace seqbench
