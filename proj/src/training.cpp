#include "seqbench/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "seqbench/common.hpp"
#include "seqbench/ops.hpp"

namespace seqbench {

template <typename T>
Tensor<T> sparse_cce_loss(const Tensor<T>& probs, std::span<const int64_t> labels,
                          Tape<T>* tape) {
  if (probs.shape().size() != 2) {
    throw ShapeError("sparse_cce_loss needs [batch, classes] probabilities, got " +
                     shape_to_string(probs.shape()));
  }
  const int64_t batch = probs.shape()[0];
  const int64_t classes = probs.shape()[1];
  if (static_cast<int64_t>(labels.size()) != batch) {
    throw ShapeError("sparse_cce_loss got " + std::to_string(labels.size()) +
                     " labels for a batch of " + std::to_string(batch));
  }
  for (int64_t i = 0; i < batch; ++i) {
    if (labels[static_cast<size_t>(i)] < 0 || labels[static_cast<size_t>(i)] >= classes) {
      throw IndexError("label " + std::to_string(labels[static_cast<size_t>(i)]) +
                       " at row " + std::to_string(i) + " outside [0, " +
                       std::to_string(classes) + ")");
    }
  }

  const T floor = static_cast<T>(kProbFloor);
  auto pv = probs.values();
  double total = 0.0;
  for (int64_t i = 0; i < batch; ++i) {
    const T p = pv[static_cast<size_t>(i * classes + labels[static_cast<size_t>(i)])];
    total -= std::log(static_cast<double>(std::max(p, floor)));
  }
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(total / static_cast<double>(batch)));

  if (tape != nullptr && grad_flows(probs)) {
    std::vector<int64_t> label_copy(labels.begin(), labels.end());
    tape->record("sparse_cce_loss", {probs}, out,
                 [probs, out, label_copy, batch, classes, floor] {
                   const T g0 = out.grad()[0];
                   auto g = probs.grad_accum();
                   auto p = probs.values();
                   const T inv_batch = T(1) / static_cast<T>(batch);
                   for (int64_t i = 0; i < batch; ++i) {
                     const size_t at = static_cast<size_t>(
                         i * classes + label_copy[static_cast<size_t>(i)]);
                     if (p[at] > floor) {
                       g[at] -= g0 * inv_batch / p[at];
                     }
                   }
                 });
  }
  return out;
}

template <typename T>
double accuracy(const Tensor<T>& probs, std::span<const int64_t> labels) {
  if (probs.shape().size() != 2) {
    throw ShapeError("accuracy needs [batch, classes] probabilities, got " +
                     shape_to_string(probs.shape()));
  }
  const int64_t batch = probs.shape()[0];
  const int64_t classes = probs.shape()[1];
  if (static_cast<int64_t>(labels.size()) != batch) {
    throw ShapeError("accuracy got " + std::to_string(labels.size()) +
                     " labels for a batch of " + std::to_string(batch));
  }
  if (batch == 0) return 0.0;
  auto pv = probs.values();
  int64_t correct = 0;
  for (int64_t i = 0; i < batch; ++i) {
    int64_t best = 0;
    T best_value = pv[static_cast<size_t>(i * classes)];
    for (int64_t c = 1; c < classes; ++c) {
      const T value = pv[static_cast<size_t>(i * classes + c)];
      if (value > best_value) {
        best_value = value;
        best = c;
      }
    }
    if (best == labels[static_cast<size_t>(i)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(batch);
}

template <typename T>
void AdamState<T>::init(const std::vector<std::pair<std::string, Tensor<T>>>& params) {
  m.clear();
  v.clear();
  t = 0;
  m.reserve(params.size());
  v.reserve(params.size());
  for (const auto& [name, tensor] : params) {
    m.emplace_back(static_cast<size_t>(tensor.numel()), T(0));
    v.emplace_back(static_cast<size_t>(tensor.numel()), T(0));
  }
}

template <typename T>
void adam_step(const std::vector<std::pair<std::string, Tensor<T>>>& params,
               AdamState<T>& state) {
  if (!state.initialized()) state.init(params);
  if (state.m.size() != params.size()) {
    throw ContractError("optimizer state tracks " + std::to_string(state.m.size()) +
                        " parameters, step got " + std::to_string(params.size()));
  }
  state.t += 1;
  const double lr_t = state.config.learning_rate(state.t);
  const T beta1 = static_cast<T>(state.config.beta1);
  const T beta2 = static_cast<T>(state.config.beta2);
  const T eps = static_cast<T>(state.config.eps);
  const T bias1 = static_cast<T>(
      1.0 - std::pow(state.config.beta1, static_cast<double>(state.t)));
  const T bias2 = static_cast<T>(
      1.0 - std::pow(state.config.beta2, static_cast<double>(state.t)));
  const T lr = static_cast<T>(lr_t);

  for (size_t k = 0; k < params.size(); ++k) {
    const Tensor<T>& p = params[k].second;
    if (state.m[k].size() != static_cast<size_t>(p.numel())) {
      throw ShapeError("optimizer state for '" + params[k].first +
                       "' holds " + std::to_string(state.m[k].size()) +
                       " values, parameter has " + std::to_string(p.numel()));
    }
    if (!p.has_grad()) continue;
    auto grad = p.grad();
    auto values = p.values_mut();
    std::vector<T>& mk = state.m[k];
    std::vector<T>& vk = state.v[k];
    for (size_t i = 0; i < mk.size(); ++i) {
      const T g = grad[i];
      mk[i] = beta1 * mk[i] + (T(1) - beta1) * g;
      vk[i] = beta2 * vk[i] + (T(1) - beta2) * g * g;
      const T m_hat = mk[i] / bias1;
      const T v_hat = vk[i] / bias2;
      values[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
  }
}

EncodedDataset EncodedDataset::subset(const std::vector<int64_t>& indices) const {
  EncodedDataset out;
  out.inputs.resize(inputs.size());
  for (size_t slot = 0; slot < inputs.size(); ++slot) {
    out.inputs[slot].reserve(indices.size());
    for (int64_t i : indices) {
      out.inputs[slot].push_back(inputs[slot].at(static_cast<size_t>(i)));
    }
  }
  out.labels.reserve(indices.size());
  for (int64_t i : indices) out.labels.push_back(labels.at(static_cast<size_t>(i)));
  return out;
}

EncodedDataset encode_for_model(const ModelPlan& plan, const Dataset& data,
                                const CharAlphabet& alphabet, const Vocabulary& vocab) {
  EncodedDataset out;
  out.inputs.resize(plan.inputs.size());
  out.labels = data.labels;
  for (size_t slot = 0; slot < plan.inputs.size(); ++slot) {
    const InputDesc& desc = plan.inputs[slot];
    if (desc.kind == InputDesc::Kind::kWords && vocab.size() > desc.vocab) {
      throw ConfigError("vocabulary has " + std::to_string(vocab.size()) +
                        " ids, model embedding table holds only " +
                        std::to_string(desc.vocab));
    }
    out.inputs[slot].reserve(data.texts.size());
    for (const auto& text : data.texts) {
      out.inputs[slot].push_back(desc.kind == InputDesc::Kind::kChars
                                     ? encode_chars(text, alphabet, desc.length)
                                     : encode_words(text, vocab, desc.length));
    }
  }
  return out;
}

std::pair<std::vector<int64_t>, std::vector<int64_t>> split_stratified(
    std::span<const int64_t> labels, double fraction, RngStream& rng) {
  if (fraction < 0.0 || fraction >= 1.0) {
    throw ConfigError("validation fraction must be in [0, 1), got " +
                      format_double(fraction));
  }
  int64_t max_label = -1;
  for (int64_t l : labels) max_label = std::max(max_label, l);
  std::vector<std::vector<int64_t>> by_class(static_cast<size_t>(max_label + 1));
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0) throw ContractError("negative label id");
    by_class[static_cast<size_t>(labels[i])].push_back(static_cast<int64_t>(i));
  }
  std::vector<int64_t> train, val;
  for (auto& members : by_class) {
    for (size_t i = members.size(); i > 1; --i) {
      const size_t j = static_cast<size_t>(rng.next_below(i));
      std::swap(members[i - 1], members[j]);
    }
    const size_t take =
        static_cast<size_t>(std::floor(fraction * static_cast<double>(members.size())));
    for (size_t i = 0; i < members.size(); ++i) {
      (i < take ? val : train).push_back(members[i]);
    }
  }
  std::sort(train.begin(), train.end());
  std::sort(val.begin(), val.end());
  return {std::move(train), std::move(val)};
}

namespace {

template <typename T>
std::vector<std::span<const int64_t>> example_inputs(const EncodedDataset& data,
                                                     int64_t example) {
  std::vector<std::span<const int64_t>> spans;
  spans.reserve(data.inputs.size());
  for (const auto& slot : data.inputs) {
    spans.emplace_back(slot[static_cast<size_t>(example)]);
  }
  return spans;
}

}  // namespace

template <typename T>
EpochMetrics train_epoch(ModelGraph<T>& model, const EncodedDataset& train_data,
                         const EncodedDataset* val_data, const TrainConfig& config,
                         AdamState<T>& adam, RngStream& shuffle_rng,
                         RngStream& dropout_rng, int64_t epoch_index) {
  const int64_t n = train_data.size();
  if (n == 0) throw ContractError("training split is empty");

  auto params = model.parameters(false);
  EpochMetrics metrics;
  metrics.epoch = epoch_index;

  const auto started = std::chrono::steady_clock::now();
  double loss_sum = 0.0;
  double acc_sum = 0.0;
  for (const auto& batch : batch_indices(n, config.batch, true, &shuffle_rng)) {
    Tape<T> tape;
    std::vector<Tensor<T>> rows;
    std::vector<Tensor<T>> penalties;
    rows.reserve(batch.size());
    std::vector<int64_t> batch_labels;
    batch_labels.reserve(batch.size());
    for (int64_t example : batch) {
      rows.push_back(model.forward(example_inputs<T>(train_data, example), true,
                                   &dropout_rng, &tape, &penalties));
      batch_labels.push_back(train_data.labels[static_cast<size_t>(example)]);
    }
    Tensor<T> probs = ops::stack_rows(rows, &tape);
    Tensor<T> loss = sparse_cce_loss(probs, batch_labels, &tape);
    if (!penalties.empty()) {
      Tensor<T> penalty_sum = penalties[0];
      for (size_t i = 1; i < penalties.size(); ++i) {
        penalty_sum = ops::add(penalty_sum, penalties[i], &tape);
      }
      penalty_sum = ops::scale(penalty_sum,
                               T(1) / static_cast<T>(batch.size()), &tape);
      loss = ops::add(loss, penalty_sum, &tape);
    }
    for (Tensor<T>& extra : model.bias_penalties(&tape)) {
      loss = ops::add(loss, extra, &tape);
    }

    backward(tape, loss);
    adam_step(params, adam);
    for (auto& [name, p] : params) p.zero_grad();

    const double weight = static_cast<double>(batch.size()) / static_cast<double>(n);
    loss_sum += static_cast<double>(loss.values()[0]) * weight;
    acc_sum += accuracy(probs, batch_labels) * weight;
  }
  const auto finished = std::chrono::steady_clock::now();
  metrics.wall_ms =
      std::chrono::duration<double, std::milli>(finished - started).count();
  metrics.train_loss = loss_sum;
  metrics.train_acc = acc_sum;

  if (val_data != nullptr && val_data->size() > 0) {
    metrics.has_validation = true;
    auto [val_loss, val_acc] = evaluate(model, *val_data, config.batch);
    metrics.val_loss = val_loss;
    metrics.val_acc = val_acc;
  }
  return metrics;
}

template <typename T>
std::pair<double, double> evaluate(const ModelGraph<T>& model,
                                   const EncodedDataset& data, int64_t batch) {
  const int64_t n = data.size();
  if (n == 0) throw ContractError("evaluation split is empty");
  double loss_sum = 0.0;
  double acc_sum = 0.0;
  for (const auto& indices : batch_indices(n, batch, false, nullptr)) {
    std::vector<Tensor<T>> rows;
    rows.reserve(indices.size());
    std::vector<int64_t> labels;
    labels.reserve(indices.size());
    for (int64_t example : indices) {
      rows.push_back(model.forward(example_inputs<T>(data, example), false, nullptr,
                                   nullptr, nullptr));
      labels.push_back(data.labels[static_cast<size_t>(example)]);
    }
    Tensor<T> probs = ops::stack_rows(rows);
    Tensor<T> loss = sparse_cce_loss<T>(probs, labels);
    const double weight = static_cast<double>(indices.size()) / static_cast<double>(n);
    loss_sum += static_cast<double>(loss.values()[0]) * weight;
    acc_sum += accuracy(probs, labels) * weight;
  }
  return {loss_sum, acc_sum};
}

template <typename T>
std::vector<EpochMetrics> fit(ModelGraph<T>& model, const EncodedDataset& data,
                              const TrainConfig& config) {
  if (config.epochs < 1) throw ConfigError("epochs must be at least 1");

  RngStream split_rng(config.seed, "split");
  RngStream shuffle_rng(config.seed, "shuffle");
  RngStream dropout_rng(config.seed, "dropout");

  EncodedDataset train_data;
  EncodedDataset val_data;
  const EncodedDataset* val_ptr = nullptr;
  if (config.val_split > 0.0) {
    auto [train_idx, val_idx] = split_stratified(data.labels, config.val_split, split_rng);
    train_data = data.subset(train_idx);
    if (!val_idx.empty()) {
      val_data = data.subset(val_idx);
      val_ptr = &val_data;
    }
  } else {
    train_data = data;
  }

  AdamState<T> adam;
  adam.config = config.adam;
  adam.init(model.parameters(false));

  std::vector<EpochMetrics> history;
  history.reserve(static_cast<size_t>(config.epochs));
  for (int64_t epoch = 1; epoch <= config.epochs; ++epoch) {
    history.push_back(train_epoch(model, train_data, val_ptr, config, adam,
                                  shuffle_rng, dropout_rng, epoch));
  }
  return history;
}

#define SEQBENCH_INSTANTIATE_TRAINING(T)                                             \
  template Tensor<T> sparse_cce_loss(const Tensor<T>&, std::span<const int64_t>,     \
                                     Tape<T>*);                                      \
  template double accuracy(const Tensor<T>&, std::span<const int64_t>);              \
  template struct AdamState<T>;                                                      \
  template void adam_step(const std::vector<std::pair<std::string, Tensor<T>>>&,     \
                          AdamState<T>&);                                            \
  template EpochMetrics train_epoch(ModelGraph<T>&, const EncodedDataset&,           \
                                    const EncodedDataset*, const TrainConfig&,       \
                                    AdamState<T>&, RngStream&, RngStream&, int64_t); \
  template std::pair<double, double> evaluate(const ModelGraph<T>&,                  \
                                              const EncodedDataset&, int64_t);       \
  template std::vector<EpochMetrics> fit(ModelGraph<T>&, const EncodedDataset&,      \
                                         const TrainConfig&);

SEQBENCH_INSTANTIATE_TRAINING(float)
SEQBENCH_INSTANTIATE_TRAINING(double)
#undef SEQBENCH_INSTANTIATE_TRAINING

}  // namespace seqbench
