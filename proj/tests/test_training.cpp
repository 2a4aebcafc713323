#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>
#include <vector>

#include "doctest.h"
#include "seqbench/bench.hpp"
#include "seqbench/model.hpp"
#include "seqbench/rng.hpp"
#include "seqbench/text.hpp"
#include "seqbench/training.hpp"

using namespace seqbench;
using doctest::Approx;

TEST_CASE("cross-entropy oracles") {
  SUBCASE("mean of -ln(0.5) and -ln(0.25)") {
    auto probs = Tensor<double>::of({2, 2}, {0.5, 0.5, 0.75, 0.25});
    const std::vector<int64_t> labels = {0, 1};
    auto loss = sparse_cce_loss<double>(probs, labels);
    CHECK(loss.item() == Approx(1.0397207708399179).epsilon(1e-14));
  }
  SUBCASE("uniform over five classes is ln 5") {
    auto probs = Tensor<double>::full({3, 5}, 0.2);
    const std::vector<int64_t> labels = {0, 3, 4};
    auto loss = sparse_cce_loss<double>(probs, labels);
    CHECK(loss.item() == Approx(1.6094379124341003).epsilon(1e-14));
  }
  SUBCASE("probabilities are floored before the log") {
    auto probs = Tensor<double>::of({1, 2}, {0.0, 1.0});
    const std::vector<int64_t> labels = {0};
    auto loss = sparse_cce_loss<double>(probs, labels);
    CHECK(loss.item() == Approx(-std::log(1e-7)).epsilon(1e-12));
  }
  SUBCASE("bad labels and shapes are rejected") {
    auto probs = Tensor<double>::full({2, 3}, 1.0 / 3);
    const std::vector<int64_t> labels = {0, 3};
    CHECK_THROWS_AS(sparse_cce_loss<double>(probs, labels), IndexError);
    const std::vector<int64_t> short_labels = {0};
    CHECK_THROWS_AS(sparse_cce_loss<double>(probs, short_labels), ShapeError);
    auto flat = Tensor<double>::full({3}, 1.0 / 3);
    CHECK_THROWS_AS(sparse_cce_loss<double>(flat, short_labels), ShapeError);
  }
  SUBCASE("gradient matches -1/(n*p) at the label") {
    auto probs = Tensor<double>::of({2, 2}, {0.5, 0.5, 0.8, 0.2}, true);
    const std::vector<int64_t> labels = {0, 1};
    Tape<double> tape;
    auto loss = sparse_cce_loss<double>(probs, labels, &tape);
    tape.run_backward(loss);
    CHECK(probs.grad()[0] == Approx(-1.0 / (2 * 0.5)).epsilon(1e-12));
    CHECK(probs.grad()[1] == 0.0);
    CHECK(probs.grad()[3] == Approx(-1.0 / (2 * 0.2)).epsilon(1e-12));
  }
}

TEST_CASE("accuracy takes the first strict maximum") {
  auto probs = Tensor<double>::of({3, 3},
                                  {0.5, 0.3, 0.2,    // 0
                                   0.2, 0.2, 0.6,    // 2
                                   0.4, 0.4, 0.2});  // tie -> 0
  CHECK(accuracy(probs, std::vector<int64_t>{0, 2, 0}) == Approx(1.0));
  CHECK(accuracy(probs, std::vector<int64_t>{0, 2, 1}) == Approx(2.0 / 3));
}

TEST_CASE("inverse-time learning-rate schedule") {
  AdamConfig config;  // lr0 3e-4, decay 5e-6
  CHECK(config.learning_rate(0) == Approx(3e-4).epsilon(1e-15));
  CHECK(config.learning_rate(1'000'000) == Approx(5e-5).epsilon(1e-12));
  CHECK(config.learning_rate(200'000) == Approx(1.5e-4).epsilon(1e-12));
}

TEST_CASE("adam first step moves by ~lr * sign(grad)") {
  auto p = Tensor<double>::of({2}, {1.0, -2.0}, true);
  auto g = p.grad_accum();
  g[0] = 0.5;
  g[1] = -0.03;

  AdamState<double> state;
  std::vector<std::pair<std::string, Tensor<double>>> params = {{"p", p}};
  adam_step(params, state);
  CHECK(state.t == 1);

  // after bias correction the first update is lr1 * g/(|g| + eps)
  const double lr1 = 3e-4 / (1.0 + 5e-6);
  CHECK(p.values()[0] == Approx(1.0 - lr1 * (0.5 / (0.5 + 1e-7))).epsilon(1e-12));
  CHECK(p.values()[1] == Approx(-2.0 + lr1 * (0.03 / (0.03 + 1e-7))).epsilon(1e-12));
}

TEST_CASE("adam with inverse-time decay settles a quadratic bowl") {
  // With a constant rate adam limit-cycles around the minimum (the
  // normalized step never shrinks), so the schedule has to do the
  // annealing. lr integrates to 5*ln(1+0.02t): the bottom is reached
  // near t=150 and the residual oscillation then tracks the decayed rate.
  auto p = Tensor<double>::of({1}, {5.0}, true);
  AdamState<double> state;
  state.config.lr0 = 0.1;
  state.config.decay = 0.02;
  std::vector<std::pair<std::string, Tensor<double>>> params = {{"p", p}};
  double worst_late = 0.0;
  for (int i = 0; i < 5000; ++i) {
    p.zero_grad();
    p.grad_accum()[0] = 2.0 * p.values()[0];  // d/dp of p^2
    adam_step(params, state);
    if (i >= 4000) worst_late = std::max(worst_late, std::fabs(p.values()[0]));
  }
  CHECK(worst_late < 0.05);
}

TEST_CASE("parameters without a gradient buffer are skipped, not zeroed") {
  auto touched = Tensor<double>::of({1}, {1.0}, true);
  auto untouched = Tensor<double>::of({1}, {7.0}, true);
  touched.grad_accum()[0] = 1.0;
  AdamState<double> state;
  std::vector<std::pair<std::string, Tensor<double>>> params = {
      {"a", touched}, {"b", untouched}};
  adam_step(params, state);
  CHECK(untouched.values()[0] == 7.0);
  const double after_one = touched.values()[0];
  CHECK(after_one < 1.0);

  // zero_grad keeps the buffer, so the next step still sees a gradient
  // of zero and coasts on the decayed moments rather than standing still
  touched.zero_grad();
  adam_step(params, state);
  CHECK(state.t == 2);
  CHECK(untouched.values()[0] == 7.0);

  const double m2 = 0.9 * (0.1 * 1.0);         // beta1-decayed moment of g=1
  const double v2 = 0.999 * (0.001 * 1.0);
  const double mhat = m2 / (1.0 - 0.9 * 0.9);
  const double vhat = v2 / (1.0 - 0.999 * 0.999);
  const double lr2 = 3e-4 / (1.0 + 2 * 5e-6);
  const double want = after_one - lr2 * mhat / (std::sqrt(vhat) + 1e-7);
  CHECK(touched.values()[0] == Approx(want).epsilon(1e-12));
}

TEST_CASE("adam state stays aligned with its parameter list") {
  auto a = Tensor<double>::of({2}, {1, 2}, true);
  AdamState<double> state;
  std::vector<std::pair<std::string, Tensor<double>>> params = {{"a", a}};
  adam_step(params, state);
  auto b = Tensor<double>::of({2}, {1, 2}, true);
  params.emplace_back("b", b);
  CHECK_THROWS_AS(adam_step(params, state), ContractError);
}

TEST_CASE("stratified split keeps class shares and partitions the data") {
  std::vector<int64_t> labels;
  for (int i = 0; i < 100; ++i) labels.push_back(i % 5);
  RngStream rng(9, "split");
  const auto [train, val] = split_stratified(labels, 0.2, rng);
  CHECK(train.size() == 80u);
  CHECK(val.size() == 20u);

  std::map<int64_t, int> val_counts;
  for (int64_t i : val) val_counts[labels[static_cast<size_t>(i)]]++;
  for (const auto& [cls, count] : val_counts) {
    (void)cls;
    CHECK(count == 4);  // 20% of each 20-example class
  }
  std::vector<bool> seen(100, false);
  for (int64_t i : train) seen[static_cast<size_t>(i)] = true;
  for (int64_t i : val) {
    CHECK_FALSE(seen[static_cast<size_t>(i)]);
    seen[static_cast<size_t>(i)] = true;
  }
  for (bool s : seen) CHECK(s);

  CHECK_THROWS_AS(split_stratified(labels, 1.5, rng), ConfigError);
}

TEST_CASE("encoding a dataset for each input slot") {
  Dataset data = make_synthetic_corpus(20, 3);
  const CharAlphabet alphabet;

  SUBCASE("char model: one slot, declared length") {
    const ModelPlan plan = build_model(ModelKind::kCharCnn, scaled_configs(0.125));
    const EncodedDataset enc = encode_for_model(plan, data, alphabet, Vocabulary{});
    REQUIRE(enc.inputs.size() == 1u);
    CHECK(enc.size() == 20);
    CHECK(enc.inputs[0][0].size() == 192u);
    CHECK(enc.labels == data.labels);
  }
  SUBCASE("word model rejects a vocabulary larger than the table") {
    ModelConfigs configs = scaled_configs(0.125);
    configs.glove.vocab = 4;  // smaller than the corpus vocabulary
    const ModelPlan plan = build_model(ModelKind::kGloveBilstm, configs);
    const Vocabulary vocab = build_word_vocab(data.texts, 64);
    CHECK_THROWS_AS(encode_for_model(plan, data, alphabet, vocab), ConfigError);
  }
}

TEST_CASE("fit is deterministic and leaves frozen tables untouched") {
  const Dataset data = make_synthetic_corpus(60, 5);
  const CharAlphabet alphabet;
  const ModelConfigs configs = scaled_configs(0.05);
  const ModelPlan plan = build_model(ModelKind::kGloveBilstm, configs);
  const Vocabulary vocab = build_word_vocab(data.texts, word_vocab_cap(plan));
  const PlanNode* frozen = frozen_embedding_node(plan);
  REQUIRE(frozen != nullptr);

  auto run_once = [&](uint64_t seed) {
    auto table = synthetic_embedding_rows<double>(frozen->spec.hyper.vocab,
                                                  frozen->spec.hyper.dim, 31);
    RngStream init(seed, "fit-test");
    auto graph = instantiate<double>(plan, init, &table);
    const EncodedDataset enc = encode_for_model(plan, data, alphabet, vocab);
    TrainConfig config;
    config.epochs = 2;
    config.batch = 16;
    config.seed = seed;
    config.val_split = 0.25;
    auto history = fit(graph, enc, config);
    return std::make_tuple(std::move(history), std::move(graph), std::move(table));
  };

  const auto [hist_a, graph_a, table_a] = run_once(11);
  const auto [hist_b, graph_b, table_b] = run_once(11);
  REQUIRE(hist_a.size() == 2u);
  CHECK(hist_a[0].has_validation);

  // bitwise equality across the whole metric history for equal seeds
  for (size_t e = 0; e < hist_a.size(); ++e) {
    CHECK(std::memcmp(&hist_a[e].train_loss, &hist_b[e].train_loss,
                      sizeof(double)) == 0);
    CHECK(std::memcmp(&hist_a[e].train_acc, &hist_b[e].train_acc,
                      sizeof(double)) == 0);
    CHECK(std::memcmp(&hist_a[e].val_loss, &hist_b[e].val_loss,
                      sizeof(double)) == 0);
    CHECK(std::memcmp(&hist_a[e].val_acc, &hist_b[e].val_acc, sizeof(double)) == 0);
  }

  // the frozen table still holds its original values, bit for bit
  const auto& stored = graph_a.bundle_of("embedding").get("table");
  auto reference = synthetic_embedding_rows<double>(frozen->spec.hyper.vocab,
                                                    frozen->spec.hyper.dim, 31);
  CHECK(std::memcmp(stored.values().data(), reference.values().data(),
                    sizeof(double) * static_cast<size_t>(reference.numel())) == 0);
  CHECK_FALSE(stored.requires_grad());

  // a different seed reaches different numbers
  const auto [hist_c, graph_c, table_c] = run_once(12);
  CHECK(hist_a[1].train_loss != hist_c[1].train_loss);

  // the trainable weights did move away from their initialization
  RngStream init_again(11, "fit-test");
  auto fresh = instantiate<double>(plan, init_again, &table_a);
  const auto trained = graph_a.parameters(false);
  const auto initial = fresh.parameters(false);
  REQUIRE(trained.size() == initial.size());
  bool moved = false;
  for (size_t i = 0; i < trained.size(); ++i) {
    CHECK(trained[i].first == initial[i].first);
    if (std::memcmp(trained[i].second.values().data(),
                    initial[i].second.values().data(),
                    sizeof(double) *
                        static_cast<size_t>(trained[i].second.numel())) != 0) {
      moved = true;
    }
  }
  CHECK(moved);
}

TEST_CASE("evaluate averages over the full set regardless of batching") {
  const Dataset data = make_synthetic_corpus(30, 7);
  const CharAlphabet alphabet;
  const ModelPlan plan = build_model(ModelKind::kCharCnn, scaled_configs(0.05));
  RngStream init(3, "eval-test");
  auto graph = instantiate<double>(plan, init);
  const EncodedDataset enc = encode_for_model(plan, data, alphabet, Vocabulary{});

  const auto [loss_a, acc_a] = evaluate(graph, enc, 8);
  const auto [loss_b, acc_b] = evaluate(graph, enc, 30);  // one big batch
  CHECK(loss_a == Approx(loss_b).epsilon(1e-9));
  CHECK(acc_a == Approx(acc_b).epsilon(1e-12));
  CHECK(loss_a > 0);
  CHECK(acc_a >= 0);
  CHECK(acc_a <= 1);
}

TEST_CASE("fit rejects nonsense epochs") {
  const Dataset data = make_synthetic_corpus(10, 1);
  const CharAlphabet alphabet;
  const ModelPlan plan = build_model(ModelKind::kCharCnn, scaled_configs(0.05));
  RngStream init(3);
  auto graph = instantiate<double>(plan, init);
  const EncodedDataset enc = encode_for_model(plan, data, alphabet, Vocabulary{});
  TrainConfig config;
  config.epochs = 0;
  CHECK_THROWS_AS(fit(graph, enc, config), ConfigError);
}
