#include "seqbench/bench.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "seqbench/common.hpp"

namespace seqbench {

std::string CurveTable::to_csv() const {
  std::string out = "Epochs";
  for (const auto& column : columns) {
    out += ",";
    out += column;
  }
  out += "\n";
  for (size_t e = 0; e < rows.size(); ++e) {
    if (rows[e].size() != columns.size()) {
      throw ContractError("curve row " + std::to_string(e + 1) + " has " +
                          std::to_string(rows[e].size()) + " values for " +
                          std::to_string(columns.size()) + " columns");
    }
    out += std::to_string(e + 1);
    for (double value : rows[e]) {
      out += ",";
      out += format_double(value);
    }
    out += "\n";
  }
  return out;
}

CurveTable CurveTable::from_csv(const std::string& text) {
  const std::vector<std::vector<std::string>> records = parse_csv(text);
  if (records.empty()) throw ParseError("curve file is empty");
  const auto& header = records.front();
  if (header.empty() || header[0] != "Epochs") {
    throw ParseError("curve file must start with an Epochs column");
  }
  CurveTable table;
  table.columns.assign(header.begin() + 1, header.end());
  for (size_t r = 1; r < records.size(); ++r) {
    const auto& record = records[r];
    if (record.size() == 1 && record[0].empty()) continue;
    if (record.size() != header.size()) {
      throw ParseError("curve file row " + std::to_string(r + 1) + " has " +
                       std::to_string(record.size()) + " fields, header has " +
                       std::to_string(header.size()));
    }
    int64_t epoch = 0;
    try {
      epoch = std::stoll(record[0]);
    } catch (const std::exception&) {
      throw ParseError("curve file row " + std::to_string(r + 1) +
                       ": bad epoch '" + record[0] + "'");
    }
    if (epoch != static_cast<int64_t>(table.rows.size()) + 1) {
      throw ParseError("curve file epochs must run 1,2,... got " +
                       std::to_string(epoch) + " at row " + std::to_string(r + 1));
    }
    std::vector<double> values;
    values.reserve(record.size() - 1);
    for (size_t c = 1; c < record.size(); ++c) {
      try {
        size_t pos = 0;
        values.push_back(std::stod(record[c], &pos));
        if (pos != record[c].size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        throw ParseError("curve file row " + std::to_string(r + 1) +
                         ": bad value '" + record[c] + "'");
      }
    }
    table.rows.push_back(std::move(values));
  }
  return table;
}

std::string TimingTable::to_csv() const {
  std::string out = "Model,Epoch1_ms,Epoch5_ms,Epoch10_ms\n";
  for (const auto& row : rows) {
    out += row.model;
    out += ",";
    out += format_double(row.epoch1_ms);
    out += ",";
    out += format_double(row.epoch5_ms);
    out += ",";
    out += format_double(row.epoch10_ms);
    out += "\n";
  }
  return out;
}

Dataset make_synthetic_corpus(int64_t n, uint64_t seed) {
  if (n < 1) throw ConfigError("synthetic corpus needs at least one example");
  Dataset data;
  data.class_names = {"alpha", "bravo", "charlie", "delta", "echo"};
  RngStream rng(seed, "corpus");
  for (int64_t i = 0; i < n; ++i) {
    const int cls = static_cast<int>(i % 5);
    const char digit = static_cast<char>('0' + cls);
    std::string text;
    const int64_t signatures = 3 + static_cast<int64_t>(rng.next_below(4));
    const int64_t fillers = 3 + static_cast<int64_t>(rng.next_below(4));
    for (int64_t k = 0; k < signatures; ++k) {
      text += 's';
      text += digit;
      text += static_cast<char>('a' + rng.next_below(3));
      text += ' ';
    }
    for (int64_t k = 0; k < fillers; ++k) {
      const uint64_t w = rng.next_below(30);
      text += 'w';
      text += static_cast<char>('a' + w % 6);
      text += static_cast<char>('a' + (w / 6) % 5);
      text += ' ';
    }
    if (!text.empty()) text.pop_back();
    data.texts.push_back(std::move(text));
    data.labels.push_back(cls);
  }
  return data;
}

template <typename T>
Tensor<T> synthetic_embedding_rows(int64_t vocab, int64_t dim, uint64_t seed) {
  RngStream rng(seed, "glove-table");
  Tensor<T> table = Tensor<T>::uniform({vocab, dim}, T(-0.5), T(0.5), rng);
  auto values = table.values_mut();
  for (int64_t j = 0; j < dim; ++j) values[static_cast<size_t>(j)] = T(0);
  table.set_requires_grad(false);
  return table;
}

CurveTable BenchmarkResult::curve(const std::string& metric) const {
  CurveTable table;
  size_t epochs = 0;
  for (const auto& h : history) epochs = std::max(epochs, h.size());
  table.rows.assign(epochs, {});
  for (size_t m = 0; m < models.size(); ++m) {
    table.columns.emplace_back(model_display_name(models[m]));
    for (size_t e = 0; e < epochs; ++e) {
      const EpochMetrics& row = history[m].at(e);
      double value = 0.0;
      if (metric == "accuracy") {
        value = row.train_acc;
      } else if (metric == "loss") {
        value = row.train_loss;
      } else if (metric == "validation_accuracy" || metric == "validation_loss") {
        if (!row.has_validation) {
          throw ContractError("no validation split, cannot build " + metric);
        }
        value = metric == "validation_accuracy" ? row.val_acc : row.val_loss;
      } else {
        throw ConfigError("unknown curve metric '" + metric + "'");
      }
      table.rows[e].push_back(value);
    }
  }
  return table;
}

TimingTable BenchmarkResult::timing() const {
  TimingTable table;
  for (size_t m = 0; m < models.size(); ++m) {
    const auto& h = history[m];
    if (h.empty()) continue;
    TimingTable::Row row;
    row.model = model_name(models[m]);
    const auto at = [&](size_t e) { return h[std::min(e, h.size() - 1)].wall_ms; };
    row.epoch1_ms = at(0);
    row.epoch5_ms = at(4);
    row.epoch10_ms = at(9);
    table.rows.push_back(std::move(row));
  }
  return table;
}

std::string BenchmarkResult::ordering_line() const {
  std::vector<size_t> order(models.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return mean_epoch_ms[a] < mean_epoch_ms[b];
  });
  std::string line;
  for (size_t i = 0; i < order.size(); ++i) {
    if (i > 0) line += " < ";
    line += model_name(models[order[i]]);
  }
  line += "  (mean ms/epoch:";
  for (size_t i = 0; i < order.size(); ++i) {
    line += " ";
    line += format_double(std::round(mean_epoch_ms[order[i]] * 10.0) / 10.0);
  }
  line += ")";
  return line;
}

template <typename T>
BenchmarkResult run_benchmark(const BenchmarkOptions& options) {
  if (options.models.empty()) throw ConfigError("no models selected");

  // Canonical model order keeps curve columns stable however the selection
  // was written on the command line.
  std::vector<ModelKind> selected;
  for (ModelKind kind : all_models()) {
    if (std::find(options.models.begin(), options.models.end(), kind) !=
        options.models.end()) {
      selected.push_back(kind);
    }
  }

  const ModelConfigs configs =
      options.full_scale ? ModelConfigs{} : scaled_configs(options.scale);
  const Dataset corpus = make_synthetic_corpus(options.synthetic_n, options.seed);
  const CharAlphabet alphabet;

  BenchmarkResult result;
  result.models = selected;
  for (ModelKind kind : selected) {
    const ModelPlan plan = build_model(kind, configs);

    Vocabulary vocab;
    if (const int64_t cap = word_vocab_cap(plan); cap > 0) {
      vocab = build_word_vocab(corpus.texts, cap);
    }

    RngStream init(options.seed, std::string("init-") + model_name(kind));
    ModelGraph<T> graph;
    if (const PlanNode* frozen = frozen_embedding_node(plan)) {
      const Tensor<T> table = synthetic_embedding_rows<T>(
          frozen->spec.hyper.vocab, frozen->spec.hyper.dim, options.seed);
      graph = instantiate<T>(plan, init, &table);
    } else {
      graph = instantiate<T>(plan, init);
    }

    const EncodedDataset encoded = encode_for_model(plan, corpus, alphabet, vocab);
    TrainConfig config;
    config.epochs = options.epochs;
    config.batch = options.batch;
    config.seed = options.seed;
    config.val_split = options.val_split;
    config.adam.lr0 = options.lr;
    config.adam.decay = options.decay;

    result.history.push_back(fit(graph, encoded, config));
    double total = 0.0;
    for (const auto& row : result.history.back()) total += row.wall_ms;
    result.mean_epoch_ms.push_back(total /
                                   static_cast<double>(result.history.back().size()));
  }
  return result;
}

template Tensor<float> synthetic_embedding_rows<float>(int64_t, int64_t, uint64_t);
template Tensor<double> synthetic_embedding_rows<double>(int64_t, int64_t, uint64_t);
template BenchmarkResult run_benchmark<float>(const BenchmarkOptions&);
template BenchmarkResult run_benchmark<double>(const BenchmarkOptions&);

}  // namespace seqbench
