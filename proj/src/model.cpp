#include "seqbench/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "json.hpp"
#include "seqbench/common.hpp"
#include "seqbench/ops.hpp"

namespace seqbench {

const char* model_name(ModelKind kind) {
  switch (kind) {
    case ModelKind::kCharCnn: return "char-cnn";
    case ModelKind::kGloveBilstm: return "glove-bilstm";
    case ModelKind::kResCnnBilstm: return "res-cnn-bilstm";
    case ModelKind::kTransformer: return "transformer";
  }
  throw ContractError("unknown model kind");
}

const char* model_display_name(ModelKind kind) {
  switch (kind) {
    case ModelKind::kCharCnn: return "1-D Char";
    case ModelKind::kGloveBilstm: return "Glove";
    case ModelKind::kResCnnBilstm: return "Res-CNN-BiLSTM";
    case ModelKind::kTransformer: return "Transformer";
  }
  throw ContractError("unknown model kind");
}

ModelKind model_from_name(const std::string& name) {
  for (ModelKind kind : all_models()) {
    if (name == model_name(kind)) return kind;
  }
  throw ConfigError("unknown model '" + name +
                    "' (expected char-cnn, glove-bilstm, res-cnn-bilstm, or "
                    "transformer)");
}

std::vector<ModelKind> all_models() {
  return {ModelKind::kCharCnn, ModelKind::kGloveBilstm, ModelKind::kResCnnBilstm,
          ModelKind::kTransformer};
}

// ---- Config registry -------------------------------------------------------

namespace {

int64_t parse_int_value(const std::string& key, const std::string& text) {
  try {
    size_t pos = 0;
    const long long v = std::stoll(text, &pos);
    if (pos != text.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' needs an integer, got '" + text + "'");
  }
}

double parse_double_value(const std::string& key, const std::string& text) {
  try {
    size_t pos = 0;
    const double v = std::stod(text, &pos);
    if (pos != text.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' needs a number, got '" + text + "'");
  }
}

struct FieldDef {
  const char* key;
  std::function<void(ModelConfigs&, const std::string&)> set;
  std::function<std::string(const ModelConfigs&)> get;
};

const std::vector<FieldDef>& field_defs() {
  static const std::vector<FieldDef> defs = [] {
    std::vector<FieldDef> v;
#define SEQBENCH_INT_FIELD(KEY, MEMBER)                                           \
  v.push_back(FieldDef{                                                           \
      KEY,                                                                        \
      [](ModelConfigs& c, const std::string& s) { c.MEMBER = parse_int_value(KEY, s); }, \
      [](const ModelConfigs& c) { return std::to_string(c.MEMBER); }});
#define SEQBENCH_DBL_FIELD(KEY, MEMBER)                                           \
  v.push_back(FieldDef{                                                           \
      KEY,                                                                        \
      [](ModelConfigs& c, const std::string& s) { c.MEMBER = parse_double_value(KEY, s); }, \
      [](const ModelConfigs& c) { return format_double(c.MEMBER); }});

    SEQBENCH_INT_FIELD("char_cnn.vocab", char_cnn.vocab)
    SEQBENCH_INT_FIELD("char_cnn.embed_dim", char_cnn.embed_dim)
    SEQBENCH_INT_FIELD("char_cnn.length", char_cnn.length)
    SEQBENCH_INT_FIELD("char_cnn.filters", char_cnn.filters)
    SEQBENCH_INT_FIELD("char_cnn.dense_units", char_cnn.dense_units)
    SEQBENCH_INT_FIELD("char_cnn.head_units", char_cnn.head_units)
    SEQBENCH_INT_FIELD("char_cnn.classes", char_cnn.classes)
    SEQBENCH_DBL_FIELD("char_cnn.dropout", char_cnn.dropout)
    SEQBENCH_DBL_FIELD("char_cnn.l2_activity", char_cnn.l2_activity)
    SEQBENCH_DBL_FIELD("char_cnn.l2_bias", char_cnn.l2_bias)

    SEQBENCH_INT_FIELD("glove.vocab", glove.vocab)
    SEQBENCH_INT_FIELD("glove.dim", glove.dim)
    SEQBENCH_INT_FIELD("glove.length", glove.length)
    SEQBENCH_INT_FIELD("glove.hidden", glove.hidden)
    SEQBENCH_INT_FIELD("glove.head_units", glove.head_units)
    SEQBENCH_INT_FIELD("glove.classes", glove.classes)

    SEQBENCH_INT_FIELD("res.char_vocab", res.char_vocab)
    SEQBENCH_INT_FIELD("res.char_embed_dim", res.char_embed_dim)
    SEQBENCH_INT_FIELD("res.char_length", res.char_length)
    SEQBENCH_INT_FIELD("res.filters", res.filters)
    SEQBENCH_INT_FIELD("res.glove_vocab", res.glove_vocab)
    SEQBENCH_INT_FIELD("res.glove_dim", res.glove_dim)
    SEQBENCH_INT_FIELD("res.word_length", res.word_length)
    SEQBENCH_INT_FIELD("res.seq_hidden", res.seq_hidden)
    SEQBENCH_INT_FIELD("res.final_hidden", res.final_hidden)
    SEQBENCH_INT_FIELD("res.head_units", res.head_units)
    SEQBENCH_INT_FIELD("res.classes", res.classes)

    SEQBENCH_INT_FIELD("transformer.vocab", transformer.vocab)
    SEQBENCH_INT_FIELD("transformer.maxlen", transformer.maxlen)
    SEQBENCH_INT_FIELD("transformer.d_model", transformer.d_model)
    SEQBENCH_INT_FIELD("transformer.heads", transformer.heads)
    SEQBENCH_INT_FIELD("transformer.key_width", transformer.key_width)
    SEQBENCH_INT_FIELD("transformer.ff_width", transformer.ff_width)
    SEQBENCH_INT_FIELD("transformer.dense_units", transformer.dense_units)
    SEQBENCH_INT_FIELD("transformer.classes", transformer.classes)
    SEQBENCH_DBL_FIELD("transformer.dropout", transformer.dropout)
    SEQBENCH_DBL_FIELD("transformer.block_dropout", transformer.block_dropout)

#undef SEQBENCH_INT_FIELD
#undef SEQBENCH_DBL_FIELD
    return v;
  }();
  return defs;
}

const FieldDef& field_by_key(const std::string& key) {
  for (const auto& def : field_defs()) {
    if (key == def.key) return def;
  }
  throw ConfigError("unknown config key '" + key + "'");
}

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

void ModelConfigs::set(const std::string& key, const std::string& value) {
  field_by_key(key).set(*this, value);
}

std::string ModelConfigs::get(const std::string& key) const {
  return field_by_key(key).get(*this);
}

std::vector<std::string> ModelConfigs::keys() {
  std::vector<std::string> out;
  for (const auto& def : field_defs()) out.emplace_back(def.key);
  return out;
}

ModelConfigs ModelConfigs::from_file(const std::string& path) {
  ModelConfigs configs;
  configs.load_file(path);
  return configs;
}

void ModelConfigs::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file '" + path + "'");
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ParseError("config file '" + path + "' line " + std::to_string(lineno) +
                       ": expected 'key = value'");
    }
    set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

void ModelConfigs::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write config file '" + path + "'");
  out << to_text();
}

std::string ModelConfigs::to_text() const {
  std::string out;
  for (const auto& def : field_defs()) {
    out += def.key;
    out += " = ";
    out += def.get(*this);
    out += "\n";
  }
  return out;
}

void ModelConfigs::apply_overrides(const std::vector<std::string>& assignments) {
  for (const auto& kv : assignments) {
    const size_t eq = kv.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("override '" + kv + "' is not of the form key=value");
    }
    set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
  }
}

ModelConfigs scaled_configs(double factor) {
  if (!(factor > 0.0) || factor > 1.0) {
    throw ConfigError("scale factor must be in (0, 1], got " + format_double(factor));
  }
  ModelConfigs c;
  if (factor == 1.0) return c;
  auto s = [factor](int64_t stock, int64_t floor_v) {
    return std::max<int64_t>(floor_v, std::llround(static_cast<double>(stock) * factor));
  };
  // The char conv/pool chain consumes 192 steps at minimum, hence the clamp.
  c.char_cnn.length = s(1014, 192);
  c.char_cnn.embed_dim = s(69, 8);
  c.char_cnn.filters = s(256, 8);
  c.char_cnn.dense_units = s(1024, 16);
  c.char_cnn.head_units = s(32, 8);

  c.glove.vocab = s(28870, 64);
  c.glove.dim = s(100, 16);
  c.glove.length = s(100, 16);
  c.glove.hidden = s(512, 8);
  c.glove.head_units = s(32, 8);

  c.res.char_length = s(1014, 192);
  c.res.char_embed_dim = s(69, 8);
  c.res.filters = s(256, 8);
  c.res.glove_vocab = s(28870, 64);
  c.res.glove_dim = s(100, 16);
  c.res.word_length = s(100, 16);
  c.res.seq_hidden = s(512, 8);
  c.res.final_hidden = s(64, 4);
  c.res.head_units = s(32, 8);

  c.transformer.vocab = s(20000, 64);
  c.transformer.maxlen = s(100, 16);
  c.transformer.d_model = s(32, 8);
  c.transformer.key_width = s(32, 2);
  c.transformer.ff_width = s(32, 8);
  c.transformer.dense_units = s(20, 8);
  return c;
}

// ---- Plan construction ------------------------------------------------------

namespace {

class PlanBuilder {
 public:
  explicit PlanBuilder(ModelKind kind) { plan_.kind = kind; }

  int add_input(InputDesc desc, const std::string& name) {
    PlanNode node;
    node.spec.kind = LayerKind::kInput;
    node.spec.name = name;
    node.out_shape = {desc.length};
    return push(std::move(node), [&] {
      plan_.inputs.push_back(desc);
      plan_.input_nodes.push_back(static_cast<int>(plan_.nodes.size()) - 1);
    });
  }

  int add(LayerSpec spec, int input_a, int input_b = -1) {
    PlanNode node;
    node.spec = std::move(spec);
    node.input_a = input_a;
    node.input_b = input_b;
    const Shape& sa = plan_.nodes.at(static_cast<size_t>(input_a)).out_shape;
    const Shape* sb = input_b >= 0
                          ? &plan_.nodes.at(static_cast<size_t>(input_b)).out_shape
                          : nullptr;
    node.out_shape = layer_output_shape(node.spec, sa, sb);
    node.count = layer_param_count(node.spec, sa);
    return push(std::move(node), [] {});
  }

  ModelPlan finish(int output_node) {
    plan_.output_node = output_node;
    return std::move(plan_);
  }

  ModelPlan& plan() { return plan_; }

 private:
  template <typename Fn>
  int push(PlanNode node, Fn after) {
    for (const auto& existing : plan_.nodes) {
      if (existing.spec.name == node.spec.name) {
        throw ContractError("duplicate layer name '" + node.spec.name + "'");
      }
    }
    plan_.nodes.push_back(std::move(node));
    after();
    return static_cast<int>(plan_.nodes.size()) - 1;
  }

  ModelPlan plan_;
};

LayerSpec make_spec(LayerKind kind, std::string name, LayerHyper hyper = {}) {
  LayerSpec spec;
  spec.kind = kind;
  spec.name = std::move(name);
  spec.hyper = hyper;
  return spec;
}

// The shared char pipeline: embedding, two width-7 conv/pool pairs, four
// width-3 convs, final pool. Returns the node holding the pooled [time,
// filters] sequence.
int add_char_stack(PlanBuilder& b, int input, const std::string& suffix,
                   int64_t vocab, int64_t embed_dim, int64_t filters) {
  LayerHyper embed;
  embed.vocab = vocab;
  embed.dim = embed_dim;
  int n = b.add(make_spec(LayerKind::kEmbedding, "embedding" + suffix, embed), input);

  auto conv = [&](const std::string& name, int64_t width, int from) {
    LayerHyper h;
    h.units = filters;
    h.width = width;
    h.stride = 1;
    h.act = Activation::kReLU;
    return b.add(make_spec(LayerKind::kConv1d, name + suffix, h), from);
  };
  auto pool = [&](const std::string& name, int from) {
    LayerHyper h;
    h.width = 3;
    h.stride = 3;
    return b.add(make_spec(LayerKind::kMaxPool1d, name + suffix, h), from);
  };

  n = conv("conv_1", 7, n);
  n = pool("pool_1", n);
  n = conv("conv_2", 7, n);
  n = pool("pool_2", n);
  n = conv("conv_3", 3, n);
  n = conv("conv_4", 3, n);
  n = conv("conv_5", 3, n);
  n = conv("conv_6", 3, n);
  n = pool("pool_3", n);
  return n;
}

LayerHyper dense_hyper(int64_t units, Activation act) {
  LayerHyper h;
  h.units = units;
  h.act = act;
  return h;
}

}  // namespace

ModelPlan build_char_cnn(const CharCnnConfig& config) {
  PlanBuilder b(ModelKind::kCharCnn);
  InputDesc in;
  in.kind = InputDesc::Kind::kChars;
  in.length = config.length;
  in.vocab = config.vocab;
  const int input = b.add_input(in, "chars");

  int n = add_char_stack(b, input, "", config.vocab, config.embed_dim, config.filters);
  n = b.add(make_spec(LayerKind::kFlatten, "flatten"), n);

  LayerHyper d1 = dense_hyper(config.dense_units, Activation::kReLU);
  d1.l2_activity = config.l2_activity;
  d1.l2_bias = config.l2_bias;
  n = b.add(make_spec(LayerKind::kDense, "dense_1", d1), n);

  LayerHyper drop;
  drop.rate = config.dropout;
  n = b.add(make_spec(LayerKind::kDropout, "dropout_1", drop), n);
  n = b.add(make_spec(LayerKind::kDense, "dense_2",
                      dense_hyper(config.dense_units, Activation::kReLU)),
            n);
  n = b.add(make_spec(LayerKind::kDropout, "dropout_2", drop), n);
  n = b.add(make_spec(LayerKind::kDense, "dense_3",
                      dense_hyper(config.head_units, Activation::kReLU)),
            n);
  n = b.add(make_spec(LayerKind::kDense, "dense_4",
                      dense_hyper(config.classes, Activation::kSoftmax)),
            n);
  return b.finish(n);
}

ModelPlan build_glove_bilstm(const GloveConfig& config) {
  PlanBuilder b(ModelKind::kGloveBilstm);
  InputDesc in;
  in.kind = InputDesc::Kind::kWords;
  in.length = config.length;
  in.vocab = config.vocab;
  const int input = b.add_input(in, "words");

  LayerHyper embed;
  embed.vocab = config.vocab;
  embed.dim = config.dim;
  embed.trainable = false;
  int n = b.add(make_spec(LayerKind::kEmbedding, "embedding", embed), input);

  LayerHyper lstm;
  lstm.units = config.hidden;
  lstm.return_sequences = false;
  n = b.add(make_spec(LayerKind::kBidirectional, "bilstm", lstm), n);

  n = b.add(make_spec(LayerKind::kDense, "dense_1",
                      dense_hyper(config.head_units, Activation::kReLU)),
            n);
  n = b.add(make_spec(LayerKind::kDense, "dense_2",
                      dense_hyper(config.classes, Activation::kSoftmax)),
            n);
  return b.finish(n);
}

ModelPlan build_res_cnn_bilstm(const ResConfig& config) {
  PlanBuilder b(ModelKind::kResCnnBilstm);
  InputDesc chars;
  chars.kind = InputDesc::Kind::kChars;
  chars.length = config.char_length;
  chars.vocab = config.char_vocab;
  const int char_input = b.add_input(chars, "chars");

  InputDesc words;
  words.kind = InputDesc::Kind::kWords;
  words.length = config.word_length;
  words.vocab = config.glove_vocab;
  const int word_input = b.add_input(words, "words");

  auto bilstm_chain = [&](int from, const std::string& suffix) {
    LayerHyper seq;
    seq.units = config.seq_hidden;
    seq.return_sequences = true;
    const int b1 = b.add(make_spec(LayerKind::kBidirectional, "bilstm_1" + suffix, seq), from);
    const int b2 = b.add(make_spec(LayerKind::kBidirectional, "bilstm_2" + suffix, seq), b1);
    const int b3 = b.add(make_spec(LayerKind::kBidirectional, "bilstm_3" + suffix, seq), b2);
    const int b4 = b.add(make_spec(LayerKind::kBidirectional, "bilstm_4" + suffix, seq), b3);
    const int res =
        b.add(make_spec(LayerKind::kResidualAdd, "residual" + suffix), b1, b4);
    LayerHyper fin;
    fin.units = config.final_hidden;
    fin.return_sequences = false;
    return b.add(make_spec(LayerKind::kBidirectional, "bilstm_5" + suffix, fin), res);
  };

  b.plan().branch_a_begin = static_cast<int>(b.plan().nodes.size());
  int a = add_char_stack(b, char_input, "_a", config.char_vocab, config.char_embed_dim,
                         config.filters);
  a = bilstm_chain(a, "_a");
  b.plan().branch_a_end = static_cast<int>(b.plan().nodes.size());

  b.plan().branch_b_begin = static_cast<int>(b.plan().nodes.size());
  LayerHyper embed;
  embed.vocab = config.glove_vocab;
  embed.dim = config.glove_dim;
  embed.trainable = false;
  int w = b.add(make_spec(LayerKind::kEmbedding, "embedding_b", embed), word_input);
  w = bilstm_chain(w, "_b");
  b.plan().branch_b_end = static_cast<int>(b.plan().nodes.size());

  if (b.plan().nodes[static_cast<size_t>(a)].out_shape !=
      b.plan().nodes[static_cast<size_t>(w)].out_shape) {
    throw ShapeError("branch outputs differ: " +
                     shape_to_string(b.plan().nodes[static_cast<size_t>(a)].out_shape) +
                     " vs " +
                     shape_to_string(b.plan().nodes[static_cast<size_t>(w)].out_shape));
  }
  int n = b.add(make_spec(LayerKind::kConcat, "concat"), a, w);
  n = b.add(make_spec(LayerKind::kDense, "dense_1",
                      dense_hyper(config.head_units, Activation::kReLU)),
            n);
  n = b.add(make_spec(LayerKind::kDense, "dense_2",
                      dense_hyper(config.classes, Activation::kSoftmax)),
            n);
  return b.finish(n);
}

ModelPlan build_transformer(const TransformerConfig& config) {
  PlanBuilder b(ModelKind::kTransformer);
  InputDesc in;
  in.kind = InputDesc::Kind::kWords;
  in.length = config.maxlen;
  in.vocab = config.vocab;
  const int input = b.add_input(in, "words");

  LayerHyper embed;
  embed.vocab = config.vocab;
  embed.dim = config.d_model;
  embed.maxlen = config.maxlen;
  int n = b.add(make_spec(LayerKind::kTokenPositionEmbedding,
                          "token_position_embedding", embed),
                input);

  LayerHyper block;
  block.heads = config.heads;
  block.key_width = config.key_width;
  block.ff_width = config.ff_width;
  block.rate = config.block_dropout;
  n = b.add(make_spec(LayerKind::kTransformerBlock, "transformer_block", block), n);

  n = b.add(make_spec(LayerKind::kGlobalAvgPool, "global_avg_pool"), n);

  LayerHyper drop;
  drop.rate = config.dropout;
  n = b.add(make_spec(LayerKind::kDropout, "dropout_1", drop), n);
  n = b.add(make_spec(LayerKind::kDense, "dense_1",
                      dense_hyper(config.dense_units, Activation::kReLU)),
            n);
  n = b.add(make_spec(LayerKind::kDropout, "dropout_2", drop), n);
  n = b.add(make_spec(LayerKind::kDense, "dense_2",
                      dense_hyper(config.dense_units, Activation::kReLU)),
            n);
  n = b.add(make_spec(LayerKind::kDense, "dense_3",
                      dense_hyper(config.classes, Activation::kSoftmax)),
            n);
  return b.finish(n);
}

ModelPlan build_model(ModelKind kind, const ModelConfigs& configs) {
  switch (kind) {
    case ModelKind::kCharCnn: return build_char_cnn(configs.char_cnn);
    case ModelKind::kGloveBilstm: return build_glove_bilstm(configs.glove);
    case ModelKind::kResCnnBilstm: return build_res_cnn_bilstm(configs.res);
    case ModelKind::kTransformer: return build_transformer(configs.transformer);
  }
  throw ContractError("unknown model kind");
}

const PlanNode* frozen_embedding_node(const ModelPlan& plan) {
  for (const auto& node : plan.nodes) {
    if (node.spec.kind == LayerKind::kEmbedding && !node.spec.hyper.trainable) {
      return &node;
    }
  }
  return nullptr;
}

int64_t word_vocab_cap(const ModelPlan& plan) {
  int64_t cap = 0;
  for (const auto& desc : plan.inputs) {
    if (desc.kind == InputDesc::Kind::kWords) {
      cap = cap == 0 ? desc.vocab : std::min(cap, desc.vocab);
    }
  }
  return cap;
}

ParamCount ModelPlan::totals() const {
  ParamCount t;
  for (const auto& node : nodes) {
    t.total += node.count.total;
    t.trainable += node.count.trainable;
    t.frozen += node.count.frozen;
  }
  return t;
}

ParamCount ModelPlan::branch_total(int begin, int end) const {
  ParamCount t;
  for (int i = begin; i < end; ++i) {
    const auto& node = nodes.at(static_cast<size_t>(i));
    t.total += node.count.total;
    t.trainable += node.count.trainable;
    t.frozen += node.count.frozen;
  }
  return t;
}

const PlanNode& ModelPlan::node_by_name(const std::string& name) const {
  for (const auto& node : nodes) {
    if (node.spec.name == name) return node;
  }
  throw ContractError("no layer named '" + name + "' in " + model_name(kind));
}

// ---- Reports ----------------------------------------------------------------

LayerReport describe_model(const ModelPlan& plan) {
  LayerReport report;
  report.model = model_name(plan.kind);
  report.display = model_display_name(plan.kind);
  for (const auto& node : plan.nodes) {
    if (node.spec.kind == LayerKind::kInput) continue;
    LayerReport::Row row;
    row.name = node.spec.name;
    row.kind = layer_kind_name(node.spec.kind);
    row.dims = node.out_shape;
    row.shape = shape_to_string(node.out_shape);
    row.params = node.count.total;
    row.trainable = node.count.frozen == 0;
    report.rows.push_back(std::move(row));
  }
  report.totals = plan.totals();
  return report;
}

std::string LayerReport::to_text() const {
  size_t name_w = 5, kind_w = 4, shape_w = 12;
  for (const auto& row : rows) {
    name_w = std::max(name_w, row.name.size());
    kind_w = std::max(kind_w, row.kind.size());
    shape_w = std::max(shape_w, row.shape.size());
  }
  std::ostringstream out;
  out << "Model: " << model << " (" << display << ")\n";
  auto pad = [&](const std::string& s, size_t w) {
    out << s;
    for (size_t i = s.size(); i < w + 2; ++i) out << ' ';
  };
  pad("Layer", name_w);
  pad("Kind", kind_w);
  pad("Output shape", shape_w);
  out << "Params          Trainable\n";
  for (const auto& row : rows) {
    pad(row.name, name_w);
    pad(row.kind, kind_w);
    pad(row.shape, shape_w);
    std::string params = row.params == 0 ? "0" : with_commas(row.params);
    pad(params, 14);
    out << (row.params == 0 ? "-" : (row.trainable ? "yes" : "no")) << "\n";
  }
  out << "Total params: " << with_commas(totals.total) << "\n";
  out << "Trainable params: " << with_commas(totals.trainable) << "\n";
  out << "Non-trainable params: " << with_commas(totals.frozen) << "\n";
  return out.str();
}

std::string LayerReport::to_json() const {
  nlohmann::json j;
  j["model"] = model;
  j["display_name"] = display;
  j["layers"] = nlohmann::json::array();
  for (const auto& row : rows) {
    nlohmann::json r;
    r["name"] = row.name;
    r["kind"] = row.kind;
    r["output_shape"] = row.dims;
    r["params"] = row.params;
    r["trainable"] = row.trainable;
    j["layers"].push_back(std::move(r));
  }
  j["total_params"] = totals.total;
  j["trainable_params"] = totals.trainable;
  j["non_trainable_params"] = totals.frozen;
  return j.dump(2);
}

// ---- Reference counts and verification --------------------------------------

const ReferenceCounts& reference_counts(ModelKind kind) {
  static const ReferenceCounts char_cnn = [] {
    ReferenceCounts r;
    r.layers = {{"embedding", 4830},    {"conv_1", 123904},  {"conv_2", 459008},
                {"conv_3", 196864},     {"conv_4", 196864},  {"conv_5", 196864},
                {"conv_6", 196864},     {"dense_1", 8913920}, {"dense_2", 1049600},
                {"dense_3", 32800},     {"dense_4", 165}};
    r.total = 11371683;
    r.trainable = 11371683;
    r.frozen = 0;
    return r;
  }();
  static const ReferenceCounts glove = [] {
    ReferenceCounts r;
    r.layers = {{"embedding", 2887000},
                {"bilstm", 2510848},
                {"dense_1", 32800},
                {"dense_2", 165}};
    r.total = 5430813;
    r.trainable = 2543813;
    r.frozen = 2887000;
    return r;
  }();
  static const ReferenceCounts res = [] {
    ReferenceCounts r;
    r.layers = {{"embedding_a", 4830},    {"conv_1_a", 123904},
                {"conv_2_a", 459008},     {"conv_3_a", 196864},
                {"conv_4_a", 196864},     {"conv_5_a", 196864},
                {"conv_6_a", 196864},     {"bilstm_1_a", 3149824},
                {"bilstm_2_a", 6295552},  {"bilstm_3_a", 6295552},
                {"bilstm_4_a", 6295552},  {"bilstm_5_a", 557568},
                {"embedding_b", 2887000}, {"bilstm_1_b", 2510848},
                {"bilstm_2_b", 6295552},  {"bilstm_3_b", 6295552},
                {"bilstm_4_b", 6295552},  {"bilstm_5_b", 557568},
                {"dense_1", 8224},        {"dense_2", 165}};
    r.total = 48819707;
    r.trainable = 45932707;
    r.frozen = 2887000;
    r.branch_a = 23969246;
    r.branch_b = 24842072;
    return r;
  }();
  static const ReferenceCounts transformer = [] {
    ReferenceCounts r;
    r.layers = {{"token_position_embedding", 643200},
                {"transformer_block", 10656},
                {"dense_1", 660},
                {"dense_2", 420},
                {"dense_3", 105}};
    r.total = 655041;
    r.trainable = 655041;
    r.frozen = 0;
    return r;
  }();
  switch (kind) {
    case ModelKind::kCharCnn: return char_cnn;
    case ModelKind::kGloveBilstm: return glove;
    case ModelKind::kResCnnBilstm: return res;
    case ModelKind::kTransformer: return transformer;
  }
  throw ContractError("unknown model kind");
}

VerifyResult verify_reference_counts(const ModelPlan& plan) {
  const ReferenceCounts& ref = reference_counts(plan.kind);
  VerifyResult result;
  std::ostringstream out;
  out << model_name(plan.kind) << " (" << model_display_name(plan.kind) << ")\n";
  auto line = [&](const std::string& what, int64_t expected, int64_t actual) {
    if (expected == actual) {
      out << "  ok    " << what << "  " << with_commas(expected) << "\n";
    } else {
      result.passed = false;
      out << "  FAIL  " << what << "  expected " << with_commas(expected)
          << ", actual " << with_commas(actual) << "\n";
    }
  };
  for (const auto& entry : ref.layers) {
    int64_t actual = -1;
    try {
      actual = plan.node_by_name(entry.layer).count.total;
    } catch (const ContractError&) {
      result.passed = false;
      out << "  FAIL  " << entry.layer << "  expected " << with_commas(entry.count)
          << ", layer missing\n";
      continue;
    }
    line(entry.layer, entry.count, actual);
  }
  const ParamCount totals = plan.totals();
  line("total", ref.total, totals.total);
  line("trainable", ref.trainable, totals.trainable);
  line("non-trainable", ref.frozen, totals.frozen);
  if (ref.branch_a >= 0) {
    line("branch_a", ref.branch_a,
         plan.branch_total(plan.branch_a_begin, plan.branch_a_end).total);
    line("branch_b", ref.branch_b,
         plan.branch_total(plan.branch_b_begin, plan.branch_b_end).total);
  }
  out << "  " << (result.passed ? "PASS" : "FAIL") << "\n";
  result.report = out.str();
  return result;
}

VerifyResult verify_all(const ModelConfigs& configs) {
  VerifyResult all;
  for (ModelKind kind : all_models()) {
    VerifyResult one = verify_reference_counts(build_model(kind, configs));
    all.passed = all.passed && one.passed;
    all.report += one.report;
  }
  all.report += all.passed ? "all architectures match the reference counts\n"
                           : "reference count mismatch\n";
  return all;
}

// ---- Instantiation and forward ----------------------------------------------

namespace {

template <typename T>
void add_lstm_params(ParameterBundle<T>& bundle, const std::string& prefix, int64_t in,
                     int64_t h, RngStream& rng) {
  bundle.add(prefix + "kernel", Tensor<T>::glorot_uniform({in, 4 * h}, rng));
  bundle.add(prefix + "recurrent_kernel", Tensor<T>::glorot_uniform({h, 4 * h}, rng));
  Tensor<T> bias = Tensor<T>::zeros({4 * h});
  auto bv = bias.values_mut();
  // Forget-gate block starts at one so early training does not flush state.
  for (int64_t u = h; u < 2 * h; ++u) bv[u] = T(1);
  bundle.add(prefix + "bias", std::move(bias));
}

template <typename T>
void add_dense_params(ParameterBundle<T>& bundle, const std::string& prefix, int64_t in,
                      int64_t units, RngStream& rng) {
  bundle.add(prefix + "kernel", Tensor<T>::glorot_uniform({in, units}, rng));
  bundle.add(prefix + "bias", Tensor<T>::zeros({units}));
}

template <typename T>
void add_attention_params(ParameterBundle<T>& bundle, const std::string& prefix,
                          int64_t d, int64_t proj, RngStream& rng) {
  bundle.add(prefix + "query_kernel", Tensor<T>::glorot_uniform({d, proj}, rng));
  bundle.add(prefix + "query_bias", Tensor<T>::zeros({proj}));
  bundle.add(prefix + "key_kernel", Tensor<T>::glorot_uniform({d, proj}, rng));
  bundle.add(prefix + "key_bias", Tensor<T>::zeros({proj}));
  bundle.add(prefix + "value_kernel", Tensor<T>::glorot_uniform({d, proj}, rng));
  bundle.add(prefix + "value_bias", Tensor<T>::zeros({proj}));
  bundle.add(prefix + "output_kernel", Tensor<T>::glorot_uniform({proj, d}, rng));
  bundle.add(prefix + "output_bias", Tensor<T>::zeros({d}));
}

}  // namespace

template <typename T>
ModelGraph<T> instantiate(const ModelPlan& plan, RngStream& rng,
                          const Tensor<T>* frozen_embedding) {
  ModelGraph<T> graph;
  graph.plan = plan;
  graph.bundles.resize(plan.nodes.size());
  for (size_t i = 0; i < plan.nodes.size(); ++i) {
    const PlanNode& node = plan.nodes[i];
    const LayerHyper& h = node.spec.hyper;
    ParameterBundle<T>& bundle = graph.bundles[i];
    const Shape in_shape =
        node.input_a >= 0 ? plan.nodes[static_cast<size_t>(node.input_a)].out_shape
                          : Shape{};
    switch (node.spec.kind) {
      case LayerKind::kEmbedding: {
        if (h.trainable) {
          bundle.add("table",
                     Tensor<T>::uniform({h.vocab, h.dim}, T(-0.05), T(0.05), rng));
        } else if (frozen_embedding != nullptr) {
          if (frozen_embedding->shape() != Shape{h.vocab, h.dim}) {
            throw ConfigError(
                "frozen embedding table is " +
                shape_to_string(frozen_embedding->shape()) + ", layer '" +
                node.spec.name + "' needs " + shape_to_string({h.vocab, h.dim}));
          }
          Tensor<T> table = Tensor<T>::of(
              frozen_embedding->shape(),
              std::vector<T>(frozen_embedding->values().begin(),
                             frozen_embedding->values().end()));
          bundle.add("table", std::move(table), false);
        } else {
          // Stand-in for a pretrained table: fixed values, never updated.
          Tensor<T> table =
              Tensor<T>::uniform({h.vocab, h.dim}, T(-0.05), T(0.05), rng);
          auto tv = table.values_mut();
          for (int64_t j = 0; j < h.dim; ++j) tv[j] = T(0);  // pad row
          bundle.add("table", std::move(table), false);
        }
        break;
      }
      case LayerKind::kTokenPositionEmbedding:
        bundle.add("token_table",
                   Tensor<T>::uniform({h.vocab, h.dim}, T(-0.05), T(0.05), rng));
        bundle.add("position_table",
                   Tensor<T>::uniform({h.maxlen, h.dim}, T(-0.05), T(0.05), rng));
        break;
      case LayerKind::kConv1d:
        bundle.add("kernel",
                   Tensor<T>::glorot_uniform({h.width, in_shape.back(), h.units}, rng));
        bundle.add("bias", Tensor<T>::zeros({h.units}));
        break;
      case LayerKind::kDense:
        add_dense_params(bundle, "", in_shape.back(), h.units, rng);
        break;
      case LayerKind::kLstm:
        add_lstm_params(bundle, "", in_shape.back(), h.units, rng);
        break;
      case LayerKind::kBidirectional:
        add_lstm_params(bundle, "forward.", in_shape.back(), h.units, rng);
        add_lstm_params(bundle, "backward.", in_shape.back(), h.units, rng);
        break;
      case LayerKind::kLayerNorm:
        bundle.add("gain", Tensor<T>::full({in_shape.back()}, T(1)));
        bundle.add("bias", Tensor<T>::zeros({in_shape.back()}));
        break;
      case LayerKind::kMultiHeadAttention:
        add_attention_params(bundle, "", in_shape.back(), h.heads * h.key_width, rng);
        break;
      case LayerKind::kTransformerBlock: {
        const int64_t d = in_shape.back();
        add_attention_params(bundle, "attention.", d, h.heads * h.key_width, rng);
        add_dense_params(bundle, "ffn1_", d, h.ff_width, rng);
        add_dense_params(bundle, "ffn2_", h.ff_width, d, rng);
        bundle.add("norm1_gain", Tensor<T>::full({d}, T(1)));
        bundle.add("norm1_bias", Tensor<T>::zeros({d}));
        bundle.add("norm2_gain", Tensor<T>::full({d}, T(1)));
        bundle.add("norm2_bias", Tensor<T>::zeros({d}));
        break;
      }
      default:
        break;
    }
    const ParamCount have = bundle.counts();
    if (have.total != node.count.total || have.trainable != node.count.trainable) {
      throw ContractError("layer '" + node.spec.name + "' allocated " +
                          with_commas(have.total) + " parameters, closed form says " +
                          with_commas(node.count.total));
    }
  }
  return graph;
}

template <typename T>
const ParameterBundle<T>& ModelGraph<T>::bundle_of(const std::string& layer_name) const {
  for (size_t i = 0; i < plan.nodes.size(); ++i) {
    if (plan.nodes[i].spec.name == layer_name) return bundles[i];
  }
  throw ContractError("no layer named '" + layer_name + "'");
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> ModelGraph<T>::parameters(
    bool include_frozen) const {
  std::vector<std::pair<std::string, Tensor<T>>> out;
  for (size_t i = 0; i < plan.nodes.size(); ++i) {
    for (const auto& p : bundles[i].params) {
      if (p.trainable || include_frozen) {
        out.emplace_back(plan.nodes[i].spec.name + "." + p.role, p.tensor);
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> ModelGraph<T>::forward(const std::vector<std::span<const int64_t>>& inputs,
                                 bool training, RngStream* rng, Tape<T>* tape,
                                 std::vector<Tensor<T>>* penalties) const {
  if (inputs.size() != plan.inputs.size()) {
    throw ContractError("model takes " + std::to_string(plan.inputs.size()) +
                        " input sequence(s), got " + std::to_string(inputs.size()));
  }
  for (size_t i = 0; i < inputs.size(); ++i) {
    if (static_cast<int64_t>(inputs[i].size()) != plan.inputs[i].length) {
      throw ContractError("input slot " + std::to_string(i) + " expects length " +
                          std::to_string(plan.inputs[i].length) + ", got " +
                          std::to_string(inputs[i].size()));
    }
  }
  auto input_slot = [&](int node_index) -> std::span<const int64_t> {
    for (size_t i = 0; i < plan.input_nodes.size(); ++i) {
      if (plan.input_nodes[i] == node_index) return inputs[i];
    }
    throw ContractError("embedding layer is not wired to an input node");
  };

  std::vector<Tensor<T>> values(plan.nodes.size());
  for (size_t i = 0; i < plan.nodes.size(); ++i) {
    const PlanNode& node = plan.nodes[i];
    const ParameterBundle<T>& bundle = bundles[i];
    const LayerHyper& h = node.spec.hyper;
    Tensor<T> out;
    switch (node.spec.kind) {
      case LayerKind::kInput:
        continue;
      case LayerKind::kEmbedding:
        out = embedding_forward(input_slot(node.input_a), bundle.get("table"), tape);
        break;
      case LayerKind::kTokenPositionEmbedding:
        out = token_position_embedding_forward(input_slot(node.input_a),
                                               bundle.get("token_table"),
                                               bundle.get("position_table"), tape);
        break;
      case LayerKind::kConv1d:
        out = ops::conv1d(values[static_cast<size_t>(node.input_a)],
                          bundle.get("kernel"), bundle.get("bias"), h.stride, tape);
        out = ops::activation(out, h.act, tape);
        break;
      case LayerKind::kMaxPool1d:
        out = ops::maxpool1d(values[static_cast<size_t>(node.input_a)], h.width,
                             h.stride, tape);
        break;
      case LayerKind::kDense:
        out = dense_forward(values[static_cast<size_t>(node.input_a)],
                            bundle.get("kernel"), bundle.get("bias"), h.act, tape);
        break;
      case LayerKind::kDropout:
        out = dropout_forward(values[static_cast<size_t>(node.input_a)], h.rate,
                              training, rng, tape);
        break;
      case LayerKind::kLstm:
        out = lstm_forward(values[static_cast<size_t>(node.input_a)], bundle,
                           h.return_sequences, tape);
        break;
      case LayerKind::kBidirectional:
        out = bidirectional_forward(values[static_cast<size_t>(node.input_a)],
                                    bundle.sub("forward."), bundle.sub("backward."),
                                    h.return_sequences, tape);
        break;
      case LayerKind::kResidualAdd:
        out = residual_add(values[static_cast<size_t>(node.input_a)],
                           values[static_cast<size_t>(node.input_b)], tape);
        break;
      case LayerKind::kConcat:
        out = ops::concat_cols<T>({values[static_cast<size_t>(node.input_a)],
                                   values[static_cast<size_t>(node.input_b)]},
                                  tape);
        break;
      case LayerKind::kGlobalAvgPool:
        out = ops::global_avg_pool1d(values[static_cast<size_t>(node.input_a)], tape);
        break;
      case LayerKind::kLayerNorm:
        out = ops::layer_norm(values[static_cast<size_t>(node.input_a)],
                              bundle.get("gain"), bundle.get("bias"),
                              T(kLayerNormEps), tape);
        break;
      case LayerKind::kMultiHeadAttention: {
        const Tensor<T>& x = values[static_cast<size_t>(node.input_a)];
        out = multi_head_attention_forward(x, x, x, bundle, h.heads, h.key_width, tape);
        break;
      }
      case LayerKind::kTransformerBlock:
        out = transformer_block_forward(values[static_cast<size_t>(node.input_a)],
                                        bundle, h.heads, h.key_width, h.ff_width,
                                        h.rate, training, rng, tape);
        break;
      case LayerKind::kFlatten:
        out = ops::reshape(values[static_cast<size_t>(node.input_a)], node.out_shape,
                           tape);
        break;
    }
    if (training && penalties != nullptr && h.l2_activity > 0.0) {
      penalties->push_back(
          ops::scale(ops::sum_squares(out, tape), T(h.l2_activity), tape));
    }
    values[i] = std::move(out);
  }
  return values[static_cast<size_t>(plan.output_node)];
}

template <typename T>
std::vector<Tensor<T>> ModelGraph<T>::bias_penalties(Tape<T>* tape) const {
  std::vector<Tensor<T>> out;
  for (size_t i = 0; i < plan.nodes.size(); ++i) {
    const double c = plan.nodes[i].spec.hyper.l2_bias;
    if (c > 0.0 && bundles[i].has("bias")) {
      out.push_back(
          ops::scale(ops::sum_squares(bundles[i].get("bias"), tape), T(c), tape));
    }
  }
  return out;
}

template struct ModelGraph<float>;
template struct ModelGraph<double>;
template ModelGraph<float> instantiate(const ModelPlan&, RngStream&,
                                       const Tensor<float>*);
template ModelGraph<double> instantiate(const ModelPlan&, RngStream&,
                                        const Tensor<double>*);

}  // namespace seqbench
