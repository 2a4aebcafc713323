#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "seqbench/model.hpp"
#include "seqbench/rng.hpp"
#include "seqbench/tape.hpp"
#include "seqbench/tensor.hpp"
#include "seqbench/text.hpp"

namespace seqbench {

// Probabilities are clamped here before the log so a confidently wrong
// softmax cannot produce an infinite loss.
inline constexpr double kProbFloor = 1e-7;

// Mean over the batch of -log(probs[i, labels[i]]).
template <typename T>
Tensor<T> sparse_cce_loss(const Tensor<T>& probs, std::span<const int64_t> labels,
                          Tape<T>* tape = nullptr);

// Fraction of rows whose argmax equals the label; ties go to the lowest index.
template <typename T>
double accuracy(const Tensor<T>& probs, std::span<const int64_t> labels);

struct AdamConfig {
  double lr0 = 3e-4;
  double decay = 5e-6;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-7;

  // Inverse-time decay, t counting optimizer updates.
  double learning_rate(int64_t t) const { return lr0 / (1.0 + decay * static_cast<double>(t)); }
};

template <typename T>
struct AdamState {
  AdamConfig config;
  int64_t t = 0;
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;

  void init(const std::vector<std::pair<std::string, Tensor<T>>>& params);
  bool initialized() const { return !m.empty(); }
};

// One update over every parameter that has a gradient buffer. t is advanced
// before the learning rate is computed, so the first step uses t = 1.
template <typename T>
void adam_step(const std::vector<std::pair<std::string, Tensor<T>>>& params,
               AdamState<T>& state);

struct TrainConfig {
  int64_t epochs = 10;
  int64_t batch = 128;
  uint64_t seed = 1;
  double val_split = 0.2;
  AdamConfig adam;
};

struct EpochMetrics {
  int64_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double train_acc = 0.0;
  bool has_validation = false;
  double val_loss = 0.0;
  double val_acc = 0.0;
  double wall_ms = 0.0;
};

// Encoded id sequences, one vector per model input slot.
struct EncodedDataset {
  std::vector<std::vector<std::vector<int64_t>>> inputs;
  std::vector<int64_t> labels;

  int64_t size() const { return static_cast<int64_t>(labels.size()); }
  EncodedDataset subset(const std::vector<int64_t>& indices) const;
};

EncodedDataset encode_for_model(const ModelPlan& plan, const Dataset& data,
                                const CharAlphabet& alphabet, const Vocabulary& vocab);

// Per-class shuffle, floor(fraction * class count) examples to validation.
// Both index lists come back sorted ascending.
std::pair<std::vector<int64_t>, std::vector<int64_t>> split_stratified(
    std::span<const int64_t> labels, double fraction, RngStream& rng);

template <typename T>
EpochMetrics train_epoch(ModelGraph<T>& model, const EncodedDataset& train_data,
                         const EncodedDataset* val_data, const TrainConfig& config,
                         AdamState<T>& adam, RngStream& shuffle_rng,
                         RngStream& dropout_rng, int64_t epoch_index);

// Evaluation pass: mean loss (no penalty terms) and accuracy in eval mode.
template <typename T>
std::pair<double, double> evaluate(const ModelGraph<T>& model,
                                   const EncodedDataset& data, int64_t batch);

// Splits off the validation slice, then runs config.epochs epochs. Shuffle,
// dropout, and split randomness come from labeled substreams of config.seed.
template <typename T>
std::vector<EpochMetrics> fit(ModelGraph<T>& model, const EncodedDataset& data,
                              const TrainConfig& config);

#define SEQBENCH_DECLARE_TRAINING(T)                                                 \
  extern template Tensor<T> sparse_cce_loss(const Tensor<T>&, std::span<const int64_t>, \
                                            Tape<T>*);                               \
  extern template double accuracy(const Tensor<T>&, std::span<const int64_t>);       \
  extern template struct AdamState<T>;                                               \
  extern template void adam_step(const std::vector<std::pair<std::string, Tensor<T>>>&, \
                                 AdamState<T>&);                                     \
  extern template EpochMetrics train_epoch(ModelGraph<T>&, const EncodedDataset&,    \
                                           const EncodedDataset*, const TrainConfig&, \
                                           AdamState<T>&, RngStream&, RngStream&,    \
                                           int64_t);                                 \
  extern template std::pair<double, double> evaluate(const ModelGraph<T>&,           \
                                                     const EncodedDataset&, int64_t); \
  extern template std::vector<EpochMetrics> fit(ModelGraph<T>&, const EncodedDataset&, \
                                                const TrainConfig&);

SEQBENCH_DECLARE_TRAINING(float)
SEQBENCH_DECLARE_TRAINING(double)
#undef SEQBENCH_DECLARE_TRAINING

}  // namespace seqbench
