#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <type_traits>
#include <vector>

#include "CLI11.hpp"
#include "seqbench/bench.hpp"
#include "seqbench/common.hpp"
#include "seqbench/gradcheck.hpp"
#include "seqbench/layers.hpp"
#include "seqbench/model.hpp"
#include "seqbench/ops.hpp"
#include "seqbench/rng.hpp"
#include "seqbench/text.hpp"
#include "seqbench/training.hpp"

namespace {

using namespace seqbench;

constexpr int kOk = 0;
constexpr int kCheckFailed = 1;
constexpr int kUsage = 2;
constexpr int kDataError = 3;

ModelConfigs assemble_configs(double scale, const std::string& config_file,
                              const std::vector<std::string>& overrides) {
  ModelConfigs configs = scale == 1.0 ? ModelConfigs{} : scaled_configs(scale);
  if (!config_file.empty()) configs.load_file(config_file);
  configs.apply_overrides(overrides);
  return configs;
}

// One `key = value` assignment per line; '#' starts a comment. Keys name the
// subcommand's flags without the leading dashes. Values from the file apply
// only where the flag was not given explicitly.
using FlagSetters = std::map<std::string, std::function<void(const std::string&)>>;

void apply_flag_file(const CLI::App& sub, const std::string& path,
                     const FlagSetters& setters) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read '" + path + "'");
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const size_t hash = line.find('#'); hash != std::string::npos) {
      line.erase(hash);
    }
    const size_t eq = line.find('=');
    auto trim = [](std::string s) {
      const size_t b = s.find_first_not_of(" \t\r");
      if (b == std::string::npos) return std::string();
      return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
    };
    if (eq == std::string::npos) {
      if (!trim(line).empty()) {
        throw ConfigError(path + ":" + std::to_string(line_no) +
                          ": expected key = value");
      }
      continue;
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto it = setters.find(key);
    if (it == setters.end()) {
      throw ConfigError(path + ":" + std::to_string(line_no) + ": unknown flag '" +
                        key + "'");
    }
    if (sub.count("--" + key) > 0) continue;  // explicit flag wins
    try {
      it->second(value);
    } catch (const Error&) {
      throw;
    } catch (const std::exception&) {
      throw ConfigError(path + ":" + std::to_string(line_no) + ": bad value '" +
                        value + "' for '" + key + "'");
    }
  }
}

template <typename T>
std::function<void(const std::string&)> set_num(T& target) {
  return [&target](const std::string& v) {
    size_t used = 0;
    if constexpr (std::is_same_v<T, double>) {
      target = std::stod(v, &used);
    } else if constexpr (std::is_same_v<T, uint64_t>) {
      target = std::stoull(v, &used);
    } else {
      target = std::stoll(v, &used);
    }
    if (used != v.size()) throw std::invalid_argument(v);
  };
}

std::function<void(const std::string&)> set_str(std::string& target) {
  return [&target](const std::string& v) { target = v; };
}

void write_text_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << content;
}

// ---- describe / verify ------------------------------------------------------

int cmd_describe(const std::string& which, bool as_json,
                 const std::string& config_file,
                 const std::vector<std::string>& overrides) {
  const ModelConfigs configs = assemble_configs(1.0, config_file, overrides);
  std::vector<ModelKind> kinds =
      which == "all" ? all_models() : std::vector<ModelKind>{model_from_name(which)};
  for (size_t i = 0; i < kinds.size(); ++i) {
    const LayerReport report = describe_model(build_model(kinds[i], configs));
    std::fputs(as_json ? report.to_json().c_str() : report.to_text().c_str(), stdout);
    std::fputc('\n', stdout);
  }
  return kOk;
}

int cmd_verify(const std::string& config_file,
               const std::vector<std::string>& overrides) {
  const ModelConfigs configs = assemble_configs(1.0, config_file, overrides);
  const VerifyResult result = verify_all(configs);
  std::fputs(result.report.c_str(), stdout);
  return result.passed ? kOk : kCheckFailed;
}

// ---- train ------------------------------------------------------------------

struct TrainArgs {
  std::string model;
  std::string data;
  std::string glove;
  std::string out = "train-out";
  std::string precision = "f32";
  std::string config_file;
  std::vector<std::string> overrides;
  double scale = 1.0;
  int64_t epochs = 10;
  int64_t batch = 128;
  double lr = 3e-4;
  double decay = 5e-6;
  double val_split = 0.2;
  uint64_t seed = 1;
};

std::string metrics_csv(const std::vector<EpochMetrics>& history) {
  const bool has_val = !history.empty() && history.front().has_validation;
  std::string out = "Epoch,TrainLoss,TrainAccuracy";
  if (has_val) out += ",ValidationLoss,ValidationAccuracy";
  out += "\n";
  for (const auto& m : history) {
    out += std::to_string(m.epoch);
    out += "," + format_double(m.train_loss);
    out += "," + format_double(m.train_acc);
    if (has_val) {
      out += "," + format_double(m.val_loss);
      out += "," + format_double(m.val_acc);
    }
    out += "\n";
  }
  return out;
}

template <typename T>
int run_train(const TrainArgs& args) {
  const ModelKind kind = model_from_name(args.model);
  const ModelConfigs configs =
      assemble_configs(args.scale, args.config_file, args.overrides);
  const ModelPlan plan = build_model(kind, configs);
  const PlanNode* frozen = frozen_embedding_node(plan);
  if (frozen != nullptr && args.glove.empty()) {
    throw DataError("model '" + args.model +
                    "' needs a pretrained embedding file (--glove)");
  }

  const Dataset data = load_labeled_csv(args.data);
  std::printf("loaded %lld examples, classes:", static_cast<long long>(data.size()));
  for (const auto& name : data.class_names) std::printf(" %s", name.c_str());
  std::printf("\n");

  Vocabulary vocab;
  if (const int64_t cap = word_vocab_cap(plan); cap > 0) {
    vocab = build_word_vocab(data.texts, cap);
    std::printf("vocabulary: %lld tokens (cap %lld)\n",
                static_cast<long long>(vocab.size()), static_cast<long long>(cap));
  }

  RngStream init(args.seed, "init");
  ModelGraph<T> graph;
  std::string coverage;
  if (frozen != nullptr) {
    const EmbeddingMatrix matrix =
        load_glove_embeddings(args.glove, vocab, frozen->spec.hyper.dim);
    Tensor<T> table =
        Tensor<T>::zeros({frozen->spec.hyper.vocab, frozen->spec.hyper.dim});
    auto values = table.values_mut();
    for (size_t i = 0; i < matrix.values.size(); ++i) {
      values[i] = static_cast<T>(matrix.values[i]);
    }
    table.set_requires_grad(false);
    graph = instantiate<T>(plan, init, &table);
    coverage = "embedding coverage: " + std::to_string(matrix.hits) + "/" +
               std::to_string(matrix.hits + matrix.misses) + " tokens found\n";
    std::fputs(coverage.c_str(), stdout);
  } else {
    graph = instantiate<T>(plan, init);
  }

  const CharAlphabet alphabet;
  const EncodedDataset encoded = encode_for_model(plan, data, alphabet, vocab);

  TrainConfig config;
  config.epochs = args.epochs;
  config.batch = args.batch;
  config.seed = args.seed;
  config.val_split = args.val_split;
  config.adam.lr0 = args.lr;
  config.adam.decay = args.decay;
  const std::vector<EpochMetrics> history = fit(graph, encoded, config);
  for (const auto& m : history) {
    std::printf("epoch %2lld  loss %.6f  acc %.4f", static_cast<long long>(m.epoch),
                m.train_loss, m.train_acc);
    if (m.has_validation) std::printf("  val_loss %.6f  val_acc %.4f", m.val_loss, m.val_acc);
    std::printf("  (%.1f ms)\n", m.wall_ms);
  }

  std::filesystem::create_directories(args.out);
  write_text_file(std::filesystem::path(args.out) / "metrics.csv",
                  metrics_csv(history));

  const ParamCount totals = plan.totals();
  std::string summary;
  summary += "model: " + std::string(model_name(kind)) + "\n";
  summary += "precision: " + args.precision + "\n";
  summary += "parameters: " + with_commas(totals.total) + " (trainable " +
             with_commas(totals.trainable) + ", frozen " + with_commas(totals.frozen) +
             ")\n";
  summary += coverage;
  double total_ms = 0.0;
  for (const auto& m : history) total_ms += m.wall_ms;
  summary += "epochs: " + std::to_string(history.size()) + "\n";
  summary += "wall_ms_per_epoch:";
  for (const auto& m : history) summary += " " + format_double(m.wall_ms);
  summary += "\n";
  summary += "total_wall_ms: " + format_double(total_ms) + "\n";
  const EpochMetrics& last = history.back();
  summary += "final_train_loss: " + format_double(last.train_loss) + "\n";
  summary += "final_train_accuracy: " + format_double(last.train_acc) + "\n";
  if (last.has_validation) {
    summary += "final_validation_loss: " + format_double(last.val_loss) + "\n";
    summary += "final_validation_accuracy: " + format_double(last.val_acc) + "\n";
  }
  write_text_file(std::filesystem::path(args.out) / "summary.txt", summary);
  std::printf("wrote %s/metrics.csv and %s/summary.txt\n", args.out.c_str(),
              args.out.c_str());
  return kOk;
}

// ---- benchmark --------------------------------------------------------------

struct BenchArgs {
  std::string models = "all";
  std::string out = "bench-out";
  std::string precision = "f32";
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

std::vector<ModelKind> parse_model_list(const std::string& text) {
  if (text == "all") return all_models();
  std::vector<ModelKind> kinds;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) {
      kinds.push_back(model_from_name(current));
      current.clear();
    }
  };
  for (char c : text) {
    if (c == ',' || c == ' ') {
      flush();
    } else {
      current.push_back(c);
    }
  }
  flush();
  if (kinds.empty()) throw ConfigError("empty model list");
  return kinds;
}

template <typename T>
int run_benchmark_cmd(const BenchArgs& args) {
  BenchmarkOptions options;
  options.models = parse_model_list(args.models);
  options.epochs = args.epochs;
  options.synthetic_n = args.synthetic_n;
  options.scale = args.scale;
  options.full_scale = args.full_scale;
  options.seed = args.seed;
  options.batch = args.batch;
  options.lr = args.lr;
  options.decay = args.decay;
  options.val_split = args.val_split;

  const BenchmarkResult result = run_benchmark<T>(options);

  std::filesystem::create_directories(args.out);
  const std::filesystem::path out_dir(args.out);
  write_text_file(out_dir / "accuracy.csv", result.curve("accuracy").to_csv());
  write_text_file(out_dir / "loss.csv", result.curve("loss").to_csv());
  if (options.val_split > 0.0) {
    write_text_file(out_dir / "validation_accuracy.csv",
                    result.curve("validation_accuracy").to_csv());
    write_text_file(out_dir / "validation_loss.csv",
                    result.curve("validation_loss").to_csv());
  }
  write_text_file(out_dir / "timing.csv", result.timing().to_csv());

  for (size_t m = 0; m < result.models.size(); ++m) {
    const auto& history = result.history[m];
    std::printf("%-16s mean %.1f ms/epoch, final train acc %.4f\n",
                model_name(result.models[m]), result.mean_epoch_ms[m],
                history.back().train_acc);
  }
  std::printf("ordering: %s\n", result.ordering_line().c_str());
  std::printf("wrote curve and timing files to %s\n", args.out.c_str());
  return kOk;
}

// ---- gradcheck --------------------------------------------------------------

using D = double;
using Params = std::vector<std::pair<std::string, Tensor<D>>>;

Tensor<D> away_from_zero(const Shape& shape, RngStream& rng) {
  Tensor<D> t = Tensor<D>::zeros(shape);
  auto values = t.values_mut();
  for (auto& v : values) {
    const double magnitude = rng.uniform(0.1, 1.0);
    v = rng.next_below(2) == 0 ? magnitude : -magnitude;
  }
  t.set_requires_grad(true);
  return t;
}

// Deliberately broken backward used by --inject-backward-bug: the forward is
// a relu, the pull scales the pass-through mask by 0.9.
Tensor<D> wrong_relu(const Tensor<D>& x, Tape<D>* tape) {
  Tensor<D> out = Tensor<D>::zeros(x.shape());
  auto ov = out.values_mut();
  auto xv = x.values();
  for (size_t i = 0; i < xv.size(); ++i) ov[i] = xv[i] > 0 ? xv[i] : 0;
  if (tape != nullptr && grad_flows(x)) {
    tape->record("wrong_relu", {x}, out, [x, out] {
      auto gx = x.grad_accum();
      auto go = out.grad();
      auto xv2 = x.values();
      for (size_t i = 0; i < xv2.size(); ++i) {
        gx[i] += go[i] * (xv2[i] > 0 ? D(0.9) : D(0));
      }
    });
  }
  return out;
}

struct CheckCase {
  std::string name;
  std::function<GradCheckReport(const GradCheckOptions&)> run;
};

CheckCase make_case(std::string name,
                    std::function<Tensor<D>(Tape<D>*)> loss_fn, Params params) {
  return CheckCase{std::move(name),
                   [loss_fn = std::move(loss_fn), params = std::move(params)](
                       const GradCheckOptions& options) {
                     return check_gradients(loss_fn, params, options);
                   }};
}

ModelConfigs tiny_configs() {
  ModelConfigs c;
  c.char_cnn.embed_dim = 4;
  c.char_cnn.length = 123;
  c.char_cnn.filters = 2;
  c.char_cnn.dense_units = 8;
  c.char_cnn.head_units = 4;
  c.glove.vocab = 50;
  c.glove.dim = 6;
  c.glove.length = 6;
  c.glove.hidden = 4;
  c.glove.head_units = 4;
  c.res.char_embed_dim = 4;
  c.res.char_length = 123;
  c.res.filters = 2;
  c.res.glove_vocab = 50;
  c.res.glove_dim = 6;
  c.res.word_length = 6;
  c.res.seq_hidden = 4;
  c.res.final_hidden = 2;
  c.res.head_units = 4;
  c.transformer.vocab = 50;
  c.transformer.maxlen = 8;
  c.transformer.d_model = 8;
  c.transformer.key_width = 4;
  c.transformer.ff_width = 8;
  c.transformer.dense_units = 8;
  return c;
}

std::vector<CheckCase> build_op_cases(uint64_t seed) {
  std::vector<CheckCase> cases;
  RngStream rng(seed, "gradcheck-ops");

  auto uniform_param = [&rng](const Shape& shape, double lo = -1.0, double hi = 1.0) {
    Tensor<D> t = Tensor<D>::uniform(shape, lo, hi, rng);
    t.set_requires_grad(true);
    return t;
  };

  {
    Tensor<D> a = uniform_param({3, 4});
    Tensor<D> b = uniform_param({3, 4});
    cases.push_back(make_case(
        "add",
        [a, b](Tape<D>* tape) { return ops::sum_squares(ops::add(a, b, tape), tape); },
        {{"a", a}, {"b", b}}));
  }
  {
    Tensor<D> a = uniform_param({3, 4});
    Tensor<D> b = uniform_param({3, 4});
    cases.push_back(make_case(
        "mul",
        [a, b](Tape<D>* tape) { return ops::sum_squares(ops::mul(a, b, tape), tape); },
        {{"a", a}, {"b", b}}));
  }
  {
    Tensor<D> a = uniform_param({5});
    cases.push_back(make_case(
        "scale",
        [a](Tape<D>* tape) { return ops::sum_squares(ops::scale(a, D(1.7), tape), tape); },
        {{"a", a}}));
  }
  {
    Tensor<D> rows = uniform_param({3, 4});
    Tensor<D> bias = uniform_param({4});
    cases.push_back(make_case(
        "add_bias_rows",
        [rows, bias](Tape<D>* tape) {
          return ops::sum_squares(ops::add_bias_rows(rows, bias, tape), tape);
        },
        {{"rows", rows}, {"bias", bias}}));
  }
  {
    Tensor<D> a = uniform_param({3, 4});
    Tensor<D> b = uniform_param({4, 2});
    cases.push_back(make_case(
        "matmul",
        [a, b](Tape<D>* tape) {
          return ops::sum_squares(ops::matmul(a, b, tape), tape);
        },
        {{"a", a}, {"b", b}}));
  }
  {
    Tensor<D> a = uniform_param({3, 4});
    Tensor<D> b = uniform_param({2, 4});
    cases.push_back(make_case(
        "matmul_nt",
        [a, b](Tape<D>* tape) {
          return ops::sum_squares(ops::matmul_nt(a, b, tape), tape);
        },
        {{"a", a}, {"b", b}}));
  }
  {
    Tensor<D> x = away_from_zero({4, 3}, rng);
    cases.push_back(make_case(
        "relu",
        [x](Tape<D>* tape) {
          return ops::sum_squares(ops::activation(x, Activation::kReLU, tape), tape);
        },
        {{"x", x}}));
  }
  {
    Tensor<D> x = uniform_param({4, 3});
    cases.push_back(make_case(
        "tanh",
        [x](Tape<D>* tape) {
          return ops::sum_squares(ops::activation(x, Activation::kTanh, tape), tape);
        },
        {{"x", x}}));
  }
  {
    Tensor<D> x = uniform_param({4, 3});
    cases.push_back(make_case(
        "sigmoid",
        [x](Tape<D>* tape) {
          return ops::sum_squares(ops::activation(x, Activation::kSigmoid, tape), tape);
        },
        {{"x", x}}));
  }
  {
    Tensor<D> x = uniform_param({3, 5});
    cases.push_back(make_case(
        "softmax",
        [x](Tape<D>* tape) {
          Tensor<D> probe = Tensor<D>::of({3, 5}, {0.4, -1.1, 0.3, 2.0, -0.2,  //
                                                   1.2, 0.8, -0.5, 0.1, 0.6,  //
                                                   -0.3, 0.9, 1.4, -2.0, 0.2});
          return ops::sum_squares(ops::mul(ops::softmax(x, tape), probe, tape), tape);
        },
        {{"x", x}}));
  }
  {
    Tensor<D> x = uniform_param({4, 6});
    Tensor<D> gain = uniform_param({6}, 0.5, 1.5);
    Tensor<D> bias = uniform_param({6});
    cases.push_back(make_case(
        "layer_norm",
        [x, gain, bias](Tape<D>* tape) {
          return ops::sum_squares(ops::layer_norm(x, gain, bias, D(1e-5), tape), tape);
        },
        {{"x", x}, {"gain", gain}, {"bias", bias}}));
  }
  {
    Tensor<D> x = uniform_param({9, 3});
    Tensor<D> kernel = uniform_param({3, 3, 2});
    Tensor<D> bias = uniform_param({2});
    cases.push_back(make_case(
        "conv1d_stride1",
        [x, kernel, bias](Tape<D>* tape) {
          return ops::sum_squares(ops::conv1d(x, kernel, bias, 1, tape), tape);
        },
        {{"x", x}, {"kernel", kernel}, {"bias", bias}}));
    cases.push_back(make_case(
        "conv1d_stride2",
        [x, kernel, bias](Tape<D>* tape) {
          return ops::sum_squares(ops::conv1d(x, kernel, bias, 2, tape), tape);
        },
        {{"x", x}, {"kernel", kernel}, {"bias", bias}}));
  }
  {
    Tensor<D> x = uniform_param({9, 2});
    cases.push_back(make_case(
        "maxpool1d",
        [x](Tape<D>* tape) {
          return ops::sum_squares(ops::maxpool1d(x, 3, 3, tape), tape);
        },
        {{"x", x}}));
  }
  {
    Tensor<D> x = uniform_param({6, 3});
    cases.push_back(make_case(
        "global_avg_pool1d",
        [x](Tape<D>* tape) {
          return ops::sum_squares(ops::global_avg_pool1d(x, tape), tape);
        },
        {{"x", x}}));
  }
  {
    Tensor<D> x = uniform_param({3, 6});
    cases.push_back(make_case(
        "slice_cols",
        [x](Tape<D>* tape) {
          return ops::sum_squares(ops::slice_cols(x, 1, 3, tape), tape);
        },
        {{"x", x}}));
  }
  {
    Tensor<D> a = uniform_param({3, 2});
    Tensor<D> b = uniform_param({3, 4});
    cases.push_back(make_case(
        "concat_cols",
        [a, b](Tape<D>* tape) {
          return ops::sum_squares(ops::concat_cols<D>({a, b}, tape), tape);
        },
        {{"a", a}, {"b", b}}));
  }
  {
    Tensor<D> a = uniform_param({4});
    Tensor<D> b = uniform_param({4});
    cases.push_back(make_case(
        "stack_rows",
        [a, b](Tape<D>* tape) {
          return ops::sum_squares(ops::stack_rows<D>({a, b}, tape), tape);
        },
        {{"a", a}, {"b", b}}));
  }
  {
    Tensor<D> x = uniform_param({2, 6});
    cases.push_back(make_case(
        "reshape",
        [x](Tape<D>* tape) {
          Tensor<D> flat = ops::reshape(x, {12}, tape);
          Tensor<D> probe = Tensor<D>::of(
              {12}, {0.3, -0.7, 1.1, 0.2, -0.4, 0.9, -1.2, 0.5, 0.8, -0.1, 0.6, -0.9});
          return ops::sum_squares(ops::mul(flat, probe, tape), tape);
        },
        {{"x", x}}));
  }
  {
    Tensor<D> x = uniform_param({5, 2});
    Tensor<D> probe = Tensor<D>::uniform({5, 2}, -1.0, 1.0, rng);
    cases.push_back(make_case(
        "reverse_time",
        [x, probe](Tape<D>* tape) {
          return ops::sum_squares(ops::mul(ops::reverse_time(x, tape), probe, tape),
                                  tape);
        },
        {{"x", x}}));
  }
  {
    Tensor<D> x = uniform_param({3, 3});
    cases.push_back(make_case(
        "sum",
        [x](Tape<D>* tape) {
          Tensor<D> s = ops::sum(x, tape);
          return ops::sum_squares(s, tape);
        },
        {{"x", x}}));
  }
  {
    Tensor<D> x = uniform_param({7});
    cases.push_back(make_case(
        "sum_squares",
        [x](Tape<D>* tape) { return ops::sum_squares(x, tape); }, {{"x", x}}));
  }
  {
    Tensor<D> table = uniform_param({6, 3});
    std::vector<int64_t> ids = {1, 3, 1, 5};
    cases.push_back(make_case(
        "embedding",
        [table, ids](Tape<D>* tape) {
          return ops::sum_squares(embedding_forward<D>(ids, table, tape), tape);
        },
        {{"table", table}}));
  }
  {
    Tensor<D> tokens = uniform_param({6, 3});
    Tensor<D> positions = uniform_param({4, 3});
    std::vector<int64_t> ids = {2, 0, 5, 2};
    cases.push_back(make_case(
        "token_position_embedding",
        [tokens, positions, ids](Tape<D>* tape) {
          return ops::sum_squares(
              token_position_embedding_forward<D>(ids, tokens, positions, tape), tape);
        },
        {{"tokens", tokens}, {"positions", positions}}));
  }
  {
    Tensor<D> x = uniform_param({4});
    Tensor<D> kernel = uniform_param({4, 3});
    Tensor<D> bias = uniform_param({3});
    cases.push_back(make_case(
        "dense_rank1",
        [x, kernel, bias](Tape<D>* tape) {
          return ops::sum_squares(
              dense_forward(x, kernel, bias, Activation::kTanh, tape), tape);
        },
        {{"x", x}, {"kernel", kernel}, {"bias", bias}}));
  }
  {
    Tensor<D> x = uniform_param({3, 4});
    Tensor<D> kernel = uniform_param({4, 3});
    Tensor<D> bias = uniform_param({3});
    cases.push_back(make_case(
        "dense_rank2",
        [x, kernel, bias](Tape<D>* tape) {
          return ops::sum_squares(
              dense_forward(x, kernel, bias, Activation::kSigmoid, tape), tape);
        },
        {{"x", x}, {"kernel", kernel}, {"bias", bias}}));
  }
  for (bool sequences : {false, true}) {
    Tensor<D> x = uniform_param({5, 3});
    ParameterBundle<D> weights;
    weights.add("kernel", uniform_param({3, 8}));
    weights.add("recurrent_kernel", uniform_param({2, 8}));
    weights.add("bias", uniform_param({8}));
    Params params = {{"x", x}};
    for (const auto& p : weights.params) params.emplace_back(p.role, p.tensor);
    cases.push_back(make_case(
        sequences ? "lstm_sequences" : "lstm_final",
        [x, weights, sequences](Tape<D>* tape) {
          return ops::sum_squares(lstm_forward(x, weights, sequences, tape), tape);
        },
        std::move(params)));
  }
  for (bool sequences : {false, true}) {
    Tensor<D> x = uniform_param({4, 3});
    ParameterBundle<D> weights;
    for (const char* dir : {"forward.", "backward."}) {
      weights.add(std::string(dir) + "kernel", uniform_param({3, 8}));
      weights.add(std::string(dir) + "recurrent_kernel", uniform_param({2, 8}));
      weights.add(std::string(dir) + "bias", uniform_param({8}));
    }
    Params params = {{"x", x}};
    for (const auto& p : weights.params) params.emplace_back(p.role, p.tensor);
    cases.push_back(make_case(
        sequences ? "bidirectional_sequences" : "bidirectional_final",
        [x, weights, sequences](Tape<D>* tape) {
          return ops::sum_squares(bidirectional_forward(x, weights.sub("forward."),
                                                        weights.sub("backward."),
                                                        sequences, tape),
                                  tape);
        },
        std::move(params)));
  }
  {
    Tensor<D> a = uniform_param({4, 3});
    Tensor<D> b = uniform_param({4, 3});
    cases.push_back(make_case(
        "residual_add",
        [a, b](Tape<D>* tape) {
          return ops::sum_squares(residual_add(a, b, tape), tape);
        },
        {{"a", a}, {"b", b}}));
  }
  {
    const int64_t heads = 2, key_width = 3, d = 4, time = 5;
    Tensor<D> x = uniform_param({time, d});
    ParameterBundle<D> weights;
    const int64_t proj = heads * key_width;
    weights.add("query_kernel", uniform_param({d, proj}));
    weights.add("query_bias", uniform_param({proj}));
    weights.add("key_kernel", uniform_param({d, proj}));
    weights.add("key_bias", uniform_param({proj}));
    weights.add("value_kernel", uniform_param({d, proj}));
    weights.add("value_bias", uniform_param({proj}));
    weights.add("output_kernel", uniform_param({proj, d}));
    weights.add("output_bias", uniform_param({d}));
    Params params = {{"x", x}};
    for (const auto& p : weights.params) params.emplace_back(p.role, p.tensor);
    cases.push_back(make_case(
        "multi_head_attention",
        [x, weights, heads, key_width](Tape<D>* tape) {
          return ops::sum_squares(
              multi_head_attention_forward(x, x, x, weights, heads, key_width, tape),
              tape);
        },
        std::move(params)));
  }
  {
    const int64_t heads = 2, key_width = 3, d = 4, ff = 6, time = 4;
    Tensor<D> x = uniform_param({time, d});
    ParameterBundle<D> weights;
    const int64_t proj = heads * key_width;
    for (const char* role : {"query", "key", "value"}) {
      weights.add(std::string("attention.") + role + "_kernel", uniform_param({d, proj}));
      weights.add(std::string("attention.") + role + "_bias", uniform_param({proj}));
    }
    weights.add("attention.output_kernel", uniform_param({proj, d}));
    weights.add("attention.output_bias", uniform_param({d}));
    weights.add("ffn1_kernel", uniform_param({d, ff}));
    weights.add("ffn1_bias", uniform_param({ff}));
    weights.add("ffn2_kernel", uniform_param({ff, d}));
    weights.add("ffn2_bias", uniform_param({d}));
    weights.add("norm1_gain", uniform_param({d}, 0.5, 1.5));
    weights.add("norm1_bias", uniform_param({d}));
    weights.add("norm2_gain", uniform_param({d}, 0.5, 1.5));
    weights.add("norm2_bias", uniform_param({d}));
    Params params = {{"x", x}};
    for (const auto& p : weights.params) params.emplace_back(p.role, p.tensor);
    cases.push_back(make_case(
        "transformer_block_eval",
        [x, weights, heads, key_width, ff](Tape<D>* tape) {
          return ops::sum_squares(
              transformer_block_forward(x, weights, heads, key_width, ff, 0.5,
                                        false, nullptr, tape),
              tape);
        },
        params));
    cases.push_back(make_case(
        "transformer_block_train_fixed_mask",
        [x, weights, heads, key_width, ff](Tape<D>* tape) {
          RngStream mask(77, "block-mask");
          return ops::sum_squares(
              transformer_block_forward(x, weights, heads, key_width, ff, 0.3,
                                        true, &mask, tape),
              tape);
        },
        params));
  }
  {
    Tensor<D> x = uniform_param({4, 5});
    cases.push_back(make_case(
        "dropout_train_fixed_mask",
        [x](Tape<D>* tape) {
          RngStream mask(31, "mask");
          return ops::sum_squares(dropout_forward(x, 0.4, true, &mask, tape), tape);
        },
        {{"x", x}}));
  }
  {
    Tensor<D> logits = uniform_param({3, 5});
    std::vector<int64_t> labels = {0, 2, 4};
    cases.push_back(make_case(
        "sparse_cce_of_softmax",
        [logits, labels](Tape<D>* tape) {
          return sparse_cce_loss<D>(ops::softmax(logits, tape), labels, tape);
        },
        {{"logits", logits}}));
  }
  return cases;
}

std::vector<CheckCase> build_architecture_cases(uint64_t seed) {
  std::vector<CheckCase> cases;
  const ModelConfigs configs = tiny_configs();
  for (ModelKind kind : all_models()) {
    const ModelPlan plan = build_model(kind, configs);
    RngStream init(seed, std::string("gc-init-") + model_name(kind));
    auto graph = std::make_shared<ModelGraph<D>>(instantiate<D>(plan, init));

    // Fresh graphs have all-zero biases, which parks relu units whose inputs
    // are dead exactly on the kink; central differences then step across it
    // and disagree with the subgradient convention. Checking at a generic
    // point instead: push every bias well clear of zero.
    RngStream dither(seed, std::string("gc-dither-") + model_name(kind));
    for (auto& [name, tensor] : graph->parameters(false)) {
      if (name.size() >= 4 && name.compare(name.size() - 4, 4, "bias") == 0) {
        auto values = tensor.values_mut();
        for (auto& v : values) {
          const double magnitude = dither.uniform(0.05, 0.15);
          v += dither.next_below(2) == 0 ? magnitude : -magnitude;
        }
      }
    }

    // Two fixed examples per architecture, ids inside every table extent.
    RngStream ids_rng(seed, std::string("gc-ids-") + model_name(kind));
    auto examples = std::make_shared<std::vector<std::vector<std::vector<int64_t>>>>();
    for (int e = 0; e < 2; ++e) {
      std::vector<std::vector<int64_t>> slots;
      for (const auto& desc : plan.inputs) {
        std::vector<int64_t> ids(static_cast<size_t>(desc.length));
        for (auto& id : ids) {
          id = static_cast<int64_t>(ids_rng.next_below(
              static_cast<uint64_t>(desc.vocab)));
        }
        slots.push_back(std::move(ids));
      }
      examples->push_back(std::move(slots));
    }
    const std::vector<int64_t> labels = {1, 3};

    Params params;
    for (auto& [name, tensor] : graph->parameters(false)) {
      params.emplace_back(name, tensor);
    }
    cases.push_back(make_case(
        std::string("model_") + model_name(kind),
        [graph, examples, labels](Tape<D>* tape) {
          std::vector<Tensor<D>> rows;
          for (const auto& slots : *examples) {
            std::vector<std::span<const int64_t>> spans;
            for (const auto& ids : slots) spans.emplace_back(ids);
            rows.push_back(graph->forward(spans, false, nullptr, tape, nullptr));
          }
          Tensor<D> loss =
              sparse_cce_loss<D>(ops::stack_rows(rows, tape), labels, tape);
          for (Tensor<D>& penalty : graph->bias_penalties(tape)) {
            loss = ops::add(loss, penalty, tape);
          }
          return loss;
        },
        std::move(params)));
  }
  return cases;
}

int cmd_gradcheck(double tol, double step, double abs_tol, int64_t max_elements,
                  uint64_t seed, bool inject_bug) {
  GradCheckOptions options;
  options.tol = tol;
  options.step = step;
  options.abs_tol = abs_tol;
  options.max_elements_per_param = max_elements;

  std::vector<CheckCase> cases = build_op_cases(seed);
  for (auto& c : build_architecture_cases(seed)) cases.push_back(std::move(c));
  if (inject_bug) {
    RngStream rng(seed, "bug");
    Tensor<D> x = away_from_zero({4, 4}, rng);
    cases.push_back(make_case(
        "relu_with_injected_backward_bug",
        [x](Tape<D>* tape) { return ops::sum_squares(wrong_relu(x, tape), tape); },
        {{"x", x}}));
  }

  int failed = 0;
  for (const auto& check : cases) {
    const GradCheckReport report = check.run(options);
    if (!report.passed) ++failed;
    std::printf("%-38s %s  max rel %.3e", check.name.c_str(),
                report.passed ? "ok  " : "FAIL", report.max_rel_error);
    if (!report.passed) {
      std::printf("  worst %s[%lld] analytic %.6g numeric %.6g",
                  report.worst_param.c_str(),
                  static_cast<long long>(report.worst_index), report.worst_analytic,
                  report.worst_numeric);
    }
    std::printf("\n");
  }
  std::printf("%zu checks, %d failed (tolerance %s, step %s)\n", cases.size(), failed,
              format_double(tol).c_str(), format_double(step).c_str());
  return failed == 0 ? kOk : kCheckFailed;
}

// ---- synth ------------------------------------------------------------------

int cmd_synth(int64_t n, uint64_t seed, const std::string& out) {
  const Dataset data = make_synthetic_corpus(n, seed);
  write_labeled_csv(out, data);
  std::printf("wrote %lld examples to %s\n", static_cast<long long>(data.size()),
              out.c_str());
  return kOk;
}

int dispatch(const std::function<int()>& command) {
  try {
    return command();
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return kUsage;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kDataError;
  } catch (const ParseError& e) {
    std::fprintf(stderr, "parse error: %s\n", e.what());
    return kDataError;
  } catch (const IoError& e) {
    std::fprintf(stderr, "i/o error: %s\n", e.what());
    return kDataError;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kCheckFailed;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sequence-model benchmark: four text classifiers on one engine"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "seqbench 0.1.0");

  // describe
  std::string describe_model_arg;
  bool describe_json = false;
  std::string describe_config;
  std::vector<std::string> describe_sets;
  CLI::App* describe = app.add_subcommand("describe", "Print a per-layer report");
  describe->add_option("model", describe_model_arg,
                       "char-cnn, glove-bilstm, res-cnn-bilstm, transformer, or all")
      ->required();
  describe->add_flag("--json", describe_json, "Emit JSON instead of a table");
  describe->add_option("--model-config", describe_config,
                       "File with architecture overrides (key = value)");
  describe->add_option("--set", describe_sets, "Architecture override key=value");

  // verify
  std::string verify_config;
  std::vector<std::string> verify_sets;
  CLI::App* verify =
      app.add_subcommand("verify", "Check all architectures against reference counts");
  verify->add_option("--model-config", verify_config,
                     "File with architecture overrides (key = value)");
  verify->add_option("--set", verify_sets, "Architecture override key=value");

  // train
  TrainArgs train_args;
  std::string train_flag_file;
  CLI::App* train = app.add_subcommand("train", "Train one model on a labeled CSV");
  train->add_option("--config", train_flag_file,
                    "File with flag defaults (key = value); explicit flags win");
  train->add_option("--model", train_args.model, "Model name")->required();
  train->add_option("--data", train_args.data, "CSV with text,label columns")
      ->required();
  train->add_option("--glove", train_args.glove,
                    "Pretrained embedding file (needed by glove-bilstm and "
                    "res-cnn-bilstm)");
  train->add_option("--epochs", train_args.epochs, "Training epochs")
      ->default_val(int64_t{10});
  train->add_option("--batch", train_args.batch, "Batch size")->default_val(int64_t{128});
  train->add_option("--lr", train_args.lr, "Initial learning rate")->default_val(3e-4);
  train->add_option("--decay", train_args.decay, "Inverse-time decay rate")
      ->default_val(5e-6);
  train->add_option("--seed", train_args.seed, "Random seed")->default_val(uint64_t{1});
  train->add_option("--val-split", train_args.val_split,
                    "Validation fraction, stratified by class")
      ->default_val(0.2);
  train->add_option("--precision", train_args.precision, "f32 or f64")
      ->check(CLI::IsMember({"f32", "f64"}))
      ->default_val("f32");
  train->add_option("--scale", train_args.scale,
                    "Shrink architecture sizes by this factor (1 = stock)")
      ->default_val(1.0);
  train->add_option("--out", train_args.out, "Output directory")
      ->default_val("train-out");
  train->add_option("--model-config", train_args.config_file,
                    "File with architecture overrides (key = value)");
  train->add_option("--set", train_args.overrides, "Architecture override key=value");

  // benchmark
  BenchArgs bench_args;
  std::string bench_flag_file;
  CLI::App* benchmark = app.add_subcommand(
      "benchmark", "Train the selected models on one synthetic corpus and time them");
  benchmark->add_option("--config", bench_flag_file,
                        "File with flag defaults (key = value); explicit flags win");
  benchmark->add_option("--models", bench_args.models,
                        "all or a comma-separated list of model names")
      ->default_val("all");
  benchmark->add_option("--epochs", bench_args.epochs, "Training epochs")
      ->default_val(int64_t{10});
  benchmark->add_option("--synthetic", bench_args.synthetic_n,
                        "Synthetic corpus size")
      ->default_val(int64_t{2000});
  benchmark->add_option("--scale", bench_args.scale,
                        "Architecture shrink factor for desk-size runs")
      ->default_val(0.125);
  benchmark->add_flag("--full-scale", bench_args.full_scale,
                      "Build the stock architecture sizes (slow)");
  benchmark->add_option("--seed", bench_args.seed, "Random seed")
      ->default_val(uint64_t{1});
  benchmark->add_option("--batch", bench_args.batch, "Batch size")
      ->default_val(int64_t{128});
  benchmark->add_option("--lr", bench_args.lr, "Initial learning rate")
      ->default_val(3e-4);
  benchmark->add_option("--decay", bench_args.decay, "Inverse-time decay rate")
      ->default_val(5e-6);
  benchmark->add_option("--val-split", bench_args.val_split, "Validation fraction")
      ->default_val(0.2);
  benchmark->add_option("--precision", bench_args.precision, "f32 or f64")
      ->check(CLI::IsMember({"f32", "f64"}))
      ->default_val("f32");
  benchmark->add_option("--out", bench_args.out, "Output directory")
      ->default_val("bench-out");

  // gradcheck
  double gc_tol = 1e-4;
  double gc_step = 1e-5;
  double gc_abs_tol = 1e-9;
  int64_t gc_max_elements = 25;
  uint64_t gc_seed = 7;
  bool gc_inject = false;
  std::string gc_flag_file;
  CLI::App* gradcheck = app.add_subcommand(
      "gradcheck", "Compare analytic gradients against central differences");
  gradcheck->add_option("--config", gc_flag_file,
                        "File with flag defaults (key = value); explicit flags win");
  gradcheck->add_option("--tol", gc_tol, "Relative error tolerance")->default_val(1e-4);
  gradcheck->add_option("--step", gc_step, "Finite-difference step")->default_val(1e-5);
  gradcheck->add_option("--abs-tol", gc_abs_tol,
                        "Absolute difference that passes outright")
      ->default_val(1e-9);
  gradcheck->add_option("--max-elements", gc_max_elements,
                        "Elements checked per parameter (0 = all)")
      ->default_val(int64_t{25});
  gradcheck->add_option("--seed", gc_seed, "Random seed")->default_val(uint64_t{7});
  gradcheck
      ->add_flag("--inject-backward-bug", gc_inject,
                 "Add a deliberately wrong backward; the run must fail")
      ->group("");  // hidden: test hook

  // synth
  int64_t synth_n = 2000;
  uint64_t synth_seed = 1;
  std::string synth_out = "synthetic.csv";
  std::string synth_flag_file;
  CLI::App* synth =
      app.add_subcommand("synth", "Write a synthetic 5-class corpus as CSV");
  synth->add_option("--config", synth_flag_file,
                    "File with flag defaults (key = value); explicit flags win");
  synth->add_option("--n", synth_n, "Number of examples")->default_val(int64_t{2000});
  synth->add_option("--seed", synth_seed, "Random seed")->default_val(uint64_t{1});
  synth->add_option("--out", synth_out, "Output CSV path")
      ->default_val("synthetic.csv");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  if (describe->parsed()) {
    return dispatch([&] {
      return cmd_describe(describe_model_arg, describe_json, describe_config,
                          describe_sets);
    });
  }
  if (verify->parsed()) {
    return dispatch([&] { return cmd_verify(verify_config, verify_sets); });
  }
  auto set_precision = [](std::string& target) {
    return [&target](const std::string& v) {
      if (v != "f32" && v != "f64") {
        throw ConfigError("precision must be f32 or f64, got '" + v + "'");
      }
      target = v;
    };
  };
  auto set_bool = [](bool& target) {
    return [&target](const std::string& v) {
      if (v == "true" || v == "1") {
        target = true;
      } else if (v == "false" || v == "0") {
        target = false;
      } else {
        throw std::invalid_argument(v);
      }
    };
  };

  if (train->parsed()) {
    return dispatch([&] {
      if (!train_flag_file.empty()) {
        apply_flag_file(*train, train_flag_file,
                        {{"glove", set_str(train_args.glove)},
                         {"epochs", set_num(train_args.epochs)},
                         {"batch", set_num(train_args.batch)},
                         {"lr", set_num(train_args.lr)},
                         {"decay", set_num(train_args.decay)},
                         {"seed", set_num(train_args.seed)},
                         {"val-split", set_num(train_args.val_split)},
                         {"precision", set_precision(train_args.precision)},
                         {"scale", set_num(train_args.scale)},
                         {"out", set_str(train_args.out)},
                         {"model-config", set_str(train_args.config_file)}});
      }
      return train_args.precision == "f64" ? run_train<double>(train_args)
                                           : run_train<float>(train_args);
    });
  }
  if (benchmark->parsed()) {
    return dispatch([&] {
      if (!bench_flag_file.empty()) {
        apply_flag_file(*benchmark, bench_flag_file,
                        {{"models", set_str(bench_args.models)},
                         {"epochs", set_num(bench_args.epochs)},
                         {"synthetic", set_num(bench_args.synthetic_n)},
                         {"scale", set_num(bench_args.scale)},
                         {"full-scale", set_bool(bench_args.full_scale)},
                         {"seed", set_num(bench_args.seed)},
                         {"batch", set_num(bench_args.batch)},
                         {"lr", set_num(bench_args.lr)},
                         {"decay", set_num(bench_args.decay)},
                         {"val-split", set_num(bench_args.val_split)},
                         {"precision", set_precision(bench_args.precision)},
                         {"out", set_str(bench_args.out)}});
      }
      return bench_args.precision == "f64" ? run_benchmark_cmd<double>(bench_args)
                                           : run_benchmark_cmd<float>(bench_args);
    });
  }
  if (gradcheck->parsed()) {
    return dispatch([&] {
      if (!gc_flag_file.empty()) {
        apply_flag_file(*gradcheck, gc_flag_file,
                        {{"tol", set_num(gc_tol)},
                         {"step", set_num(gc_step)},
                         {"abs-tol", set_num(gc_abs_tol)},
                         {"max-elements", set_num(gc_max_elements)},
                         {"seed", set_num(gc_seed)}});
      }
      return cmd_gradcheck(gc_tol, gc_step, gc_abs_tol, gc_max_elements, gc_seed,
                           gc_inject);
    });
  }
  if (synth->parsed()) {
    return dispatch([&] {
      if (!synth_flag_file.empty()) {
        apply_flag_file(*synth, synth_flag_file,
                        {{"n", set_num(synth_n)},
                         {"seed", set_num(synth_seed)},
                         {"out", set_str(synth_out)}});
      }
      return cmd_synth(synth_n, synth_seed, synth_out);
    });
  }
  return kUsage;
}
