#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "seqbench/model.hpp"
#include "seqbench/text.hpp"
#include "seqbench/training.hpp"

namespace seqbench {

// One metric across epochs, one column per model. Column names follow the
// figure legends, in this fixed order when all four models are present.
struct CurveTable {
  static constexpr const char* kFullHeader =
      "Epochs,1-D Char,Glove,Res-CNN-BiLSTM,Transformer";

  std::vector<std::string> columns;          // display names, no "Epochs"
  std::vector<std::vector<double>> rows;     // rows[e][c], epoch e+1

  std::string to_csv() const;
  static CurveTable from_csv(const std::string& text);

  bool operator==(const CurveTable& other) const = default;
};

// Wall time per model at selected epochs, milliseconds.
struct TimingTable {
  struct Row {
    std::string model;
    double epoch1_ms = 0.0;
    double epoch5_ms = 0.0;
    double epoch10_ms = 0.0;
  };
  std::vector<Row> rows;

  std::string to_csv() const;
};

// Five classes, each marked by a handful of high-frequency signature tokens
// (the class digit is embedded in them, so character models see the signal
// too); filler tokens are shared across classes. Word-vocabulary size stays
// under 64 so any reasonable cap keeps every signature token.
Dataset make_synthetic_corpus(int64_t n, uint64_t seed);

// Deterministic stand-in for a pretrained table: pad row zero, every other
// row filled from the seeded stream. Frozen by construction.
template <typename T>
Tensor<T> synthetic_embedding_rows(int64_t vocab, int64_t dim, uint64_t seed);

struct BenchmarkOptions {
  std::vector<ModelKind> models = all_models();
  int64_t epochs = 10;
  int64_t synthetic_n = 2000;
  double scale = 0.125;
  bool full_scale = false;
  uint64_t seed = 1;
  int64_t batch = 128;
  double lr = 3e-4;
  double decay = 5e-6;
  double val_split = 0.2;
};

struct BenchmarkResult {
  std::vector<ModelKind> models;
  // history[m][e] is epoch e+1 of models[m]
  std::vector<std::vector<EpochMetrics>> history;
  std::vector<double> mean_epoch_ms;

  CurveTable curve(const std::string& metric) const;  // accuracy, loss, ...
  TimingTable timing() const;
  // "transformer < glove-bilstm < ..." by mean epoch time
  std::string ordering_line() const;
};

template <typename T>
BenchmarkResult run_benchmark(const BenchmarkOptions& options);

extern template Tensor<float> synthetic_embedding_rows<float>(int64_t, int64_t, uint64_t);
extern template Tensor<double> synthetic_embedding_rows<double>(int64_t, int64_t, uint64_t);
extern template BenchmarkResult run_benchmark<float>(const BenchmarkOptions&);
extern template BenchmarkResult run_benchmark<double>(const BenchmarkOptions&);

}  // namespace seqbench
