#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "seqbench/layers.hpp"
#include "seqbench/rng.hpp"
#include "seqbench/tensor.hpp"

namespace seqbench {

enum class ModelKind { kCharCnn, kGloveBilstm, kResCnnBilstm, kTransformer };

inline constexpr int kNumModels = 4;
inline constexpr int kNumClasses = 5;

// Stable CLI name ("char-cnn") and report/column display name ("1-D Char").
const char* model_name(ModelKind kind);
const char* model_display_name(ModelKind kind);
ModelKind model_from_name(const std::string& name);
std::vector<ModelKind> all_models();

// ---- Per-architecture hyperparameter sets (defaults = stock sizes) --------

struct CharCnnConfig {
  int64_t vocab = 70;
  int64_t embed_dim = 69;
  int64_t length = 1014;
  int64_t filters = 256;
  int64_t dense_units = 1024;
  int64_t head_units = 32;
  int64_t classes = kNumClasses;
  double dropout = 0.5;
  double l2_activity = 1e-3;
  double l2_bias = 1e-3;
};

struct GloveConfig {
  int64_t vocab = 28870;
  int64_t dim = 100;
  int64_t length = 100;
  int64_t hidden = 512;
  int64_t head_units = 32;
  int64_t classes = kNumClasses;
};

struct ResConfig {
  int64_t char_vocab = 70;
  int64_t char_embed_dim = 69;
  int64_t char_length = 1014;
  int64_t filters = 256;
  int64_t glove_vocab = 28870;
  int64_t glove_dim = 100;
  int64_t word_length = 100;
  int64_t seq_hidden = 512;
  int64_t final_hidden = 64;
  int64_t head_units = 32;
  int64_t classes = kNumClasses;
};

struct TransformerConfig {
  int64_t vocab = 20000;
  int64_t maxlen = 100;
  int64_t d_model = 32;
  int64_t heads = 2;
  int64_t key_width = 32;
  int64_t ff_width = 32;
  int64_t dense_units = 20;
  int64_t classes = kNumClasses;
  double dropout = 0.5;        // the two dropouts in the classifier head
  double block_dropout = 0.1;  // dropout inside the transformer block
};

// All four configs plus a flat key-value view ("char_cnn.filters" etc.) used
// by config files and --set overrides.
struct ModelConfigs {
  CharCnnConfig char_cnn;
  GloveConfig glove;
  ResConfig res;
  TransformerConfig transformer;

  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  static std::vector<std::string> keys();

  // "key = value" per line; '#' starts a comment.
  static ModelConfigs from_file(const std::string& path);
  // Applies the file's entries on top of whatever this already holds.
  void load_file(const std::string& path);
  void save(const std::string& path) const;
  std::string to_text() const;
  // Each entry "key=value"; unknown key or bad value throws ConfigError.
  void apply_overrides(const std::vector<std::string>& assignments);
};

// Shrinks every size knob by `factor` (0 < factor <= 1) while keeping the
// topology legal: sequence lengths, widths, and vocabularies are clamped to
// documented minimums (the char pipeline needs at least 192 input steps for
// its conv/pool chain). factor == 1 returns the stock sizes unchanged.
ModelConfigs scaled_configs(double factor);

// ---- Untyped plan: layer specs + shape inference + counts -----------------

struct InputDesc {
  enum class Kind { kChars, kWords };
  Kind kind = Kind::kChars;
  int64_t length = 0;
  int64_t vocab = 0;  // extent of the embedding table this input feeds
};

struct PlanNode {
  LayerSpec spec;
  int input_a = -1;  // node index, -1 for input nodes
  int input_b = -1;  // second input for residual_add / concat
  Shape out_shape;
  ParamCount count;
};

struct ModelPlan {
  ModelKind kind = ModelKind::kCharCnn;
  std::vector<PlanNode> nodes;
  std::vector<InputDesc> inputs;   // one per kInput node, in node order
  std::vector<int> input_nodes;
  int output_node = -1;
  // Node ranges [begin, end) of the two branches; -1 when not branched.
  int branch_a_begin = -1, branch_a_end = -1;
  int branch_b_begin = -1, branch_b_end = -1;

  ParamCount totals() const;
  ParamCount branch_total(int begin, int end) const;
  const PlanNode& node_by_name(const std::string& name) const;
};

ModelPlan build_char_cnn(const CharCnnConfig& config);
ModelPlan build_glove_bilstm(const GloveConfig& config);
ModelPlan build_res_cnn_bilstm(const ResConfig& config);
ModelPlan build_transformer(const TransformerConfig& config);
ModelPlan build_model(ModelKind kind, const ModelConfigs& configs);

// First frozen embedding layer in the plan, nullptr when every table trains.
const PlanNode* frozen_embedding_node(const ModelPlan& plan);
// Smallest word-input table extent; 0 when the model takes no word input.
int64_t word_vocab_cap(const ModelPlan& plan);

// ---- Reports ---------------------------------------------------------------

struct LayerReport {
  struct Row {
    std::string name;
    std::string kind;
    Shape dims;
    std::string shape;
    int64_t params = 0;
    bool trainable = true;
  };
  std::string model;
  std::string display;
  std::vector<Row> rows;
  ParamCount totals;

  std::string to_text() const;
  std::string to_json() const;
};

LayerReport describe_model(const ModelPlan& plan);

// Expected parameter ledger per architecture: every parameterized layer by
// name, plus totals, the trainable/frozen split, and (for the branched
// model) per-branch totals.
struct ReferenceCounts {
  struct Entry {
    std::string layer;
    int64_t count = 0;
  };
  std::vector<Entry> layers;
  int64_t total = 0;
  int64_t trainable = 0;
  int64_t frozen = 0;
  int64_t branch_a = -1;
  int64_t branch_b = -1;
};

const ReferenceCounts& reference_counts(ModelKind kind);

struct VerifyResult {
  bool passed = true;
  std::string report;
};

VerifyResult verify_reference_counts(const ModelPlan& plan);
VerifyResult verify_all(const ModelConfigs& configs);

// ---- Typed graph: plan + allocated parameters ------------------------------

template <typename T>
struct ModelGraph {
  ModelPlan plan;
  std::vector<ParameterBundle<T>> bundles;  // parallel to plan.nodes

  const ParameterBundle<T>& bundle_of(const std::string& layer_name) const;

  // (layer.role, tensor) pairs; frozen parameters included only on request.
  std::vector<std::pair<std::string, Tensor<T>>> parameters(
      bool include_frozen = false) const;

  // Runs one example through the graph. `inputs` supplies one id sequence
  // per input slot, in plan.inputs order, each of exactly the declared
  // length. Training mode draws dropout masks from rng and, when `penalties`
  // is given, appends each configured activity penalty (coefficient already
  // applied) as a scalar tensor.
  Tensor<T> forward(const std::vector<std::span<const int64_t>>& inputs,
                    bool training, RngStream* rng, Tape<T>* tape,
                    std::vector<Tensor<T>>* penalties = nullptr) const;

  // Scalar penalty terms c * sum(bias^2) for layers configured with a bias
  // regularizer; added to the loss once per optimizer step.
  std::vector<Tensor<T>> bias_penalties(Tape<T>* tape) const;
};

// Allocates and initializes parameters. Kernels are glorot-uniform, biases
// zero (LSTM forget-gate block one), embeddings uniform on [-0.05, 0.05].
// `frozen_embedding`, when given, supplies the values of the non-trainable
// embedding table and must match its declared [vocab, dim]; otherwise the
// frozen table gets stand-in values from rng.
template <typename T>
ModelGraph<T> instantiate(const ModelPlan& plan, RngStream& rng,
                          const Tensor<T>* frozen_embedding = nullptr);

extern template struct ModelGraph<float>;
extern template struct ModelGraph<double>;
extern template ModelGraph<float> instantiate(const ModelPlan&, RngStream&,
                                              const Tensor<float>*);
extern template ModelGraph<double> instantiate(const ModelPlan&, RngStream&,
                                               const Tensor<double>*);

}  // namespace seqbench
