#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstring>
#include <string>
#include <vector>

#include "doctest.h"
#include "seqbench/bench.hpp"
#include "seqbench/model.hpp"
#include "seqbench/text.hpp"

using namespace seqbench;
using doctest::Approx;

TEST_CASE("curve tables round-trip through csv exactly") {
  CurveTable table;
  table.columns = {"1-D Char", "Glove", "Res-CNN-BiLSTM", "Transformer"};
  table.rows = {
      {0.25, 0.3333333333333333, 0.1, 1e-7},
      {0.5, 0.125, 97.25, 3.141592653589793},
      {1.0, 1.0, 1.0, 0.9999999999999999},
  };

  const std::string csv = table.to_csv();
  CHECK(csv.substr(0, csv.find('\n')) == CurveTable::kFullHeader);
  CHECK(csv.find("\n1,") != std::string::npos);
  CHECK(csv.find("\n3,") != std::string::npos);

  const CurveTable back = CurveTable::from_csv(csv);
  CHECK(back == table);
}

TEST_CASE("curve csv parsing rejects malformed input") {
  CHECK_THROWS_AS(CurveTable::from_csv(""), ParseError);
  CHECK_THROWS_AS(CurveTable::from_csv("Epoch,Glove\n1,0.5\n"), ParseError);
  // epochs must be contiguous from 1
  CHECK_THROWS_AS(CurveTable::from_csv("Epochs,Glove\n2,0.5\n"), ParseError);
  CHECK_THROWS_AS(CurveTable::from_csv("Epochs,Glove\n1,0.5\n3,0.6\n"), ParseError);
  CHECK_THROWS_AS(CurveTable::from_csv("Epochs,Glove\nx,0.5\n"), ParseError);
  CHECK_THROWS_AS(CurveTable::from_csv("Epochs,Glove\n1,what\n"), ParseError);
  CHECK_THROWS_AS(CurveTable::from_csv("Epochs,Glove\n1,0.5,0.6\n"), ParseError);

  // a trailing blank line is fine
  const CurveTable ok = CurveTable::from_csv("Epochs,Glove\n1,0.5\n\n");
  CHECK(ok.rows.size() == 1u);
  CHECK(ok.columns == std::vector<std::string>{"Glove"});
}

TEST_CASE("curve serialization keeps row width honest") {
  CurveTable table;
  table.columns = {"Glove"};
  table.rows = {{0.5, 0.6}};
  CHECK_THROWS_AS(table.to_csv(), ContractError);
}

TEST_CASE("timing table csv layout") {
  TimingTable table;
  table.rows.push_back({"char-cnn", 1.5, 2.25, 3.125});
  table.rows.push_back({"transformer", 0.5, 0.5, 0.5});
  CHECK(table.to_csv() ==
        "Model,Epoch1_ms,Epoch5_ms,Epoch10_ms\n"
        "char-cnn,1.5,2.25,3.125\n"
        "transformer,0.5,0.5,0.5\n");
}

TEST_CASE("synthetic corpus is balanced, named, and repeatable") {
  const Dataset data = make_synthetic_corpus(12, 41);
  REQUIRE(data.size() == 12);
  CHECK(data.class_names ==
        std::vector<std::string>{"alpha", "bravo", "charlie", "delta", "echo"});

  // round-robin labels: 12 = 3+3+2+2+2
  std::vector<int> counts(5, 0);
  for (int64_t label : data.labels) {
    REQUIRE(label >= 0);
    REQUIRE(label < 5);
    counts[static_cast<size_t>(label)]++;
  }
  CHECK(counts == std::vector<int>{3, 3, 2, 2, 2});

  // each text embeds its class digit; all bytes stay inside the alphabet
  const CharAlphabet alphabet;
  for (size_t i = 0; i < data.texts.size(); ++i) {
    const char digit = static_cast<char>('0' + data.labels[i]);
    CHECK(data.texts[i].find(digit) != std::string::npos);
    for (unsigned char c : data.texts[i]) CHECK(alphabet.id_of(c) > 0);
  }

  const Dataset again = make_synthetic_corpus(12, 41);
  CHECK(again.texts == data.texts);
  CHECK(again.labels == data.labels);
  const Dataset other = make_synthetic_corpus(12, 42);
  CHECK(other.texts != data.texts);

  CHECK_THROWS_AS(make_synthetic_corpus(0, 1), ConfigError);
}

TEST_CASE("synthetic corpus vocabulary stays small enough to cap") {
  const Dataset data = make_synthetic_corpus(500, 1);
  const Vocabulary vocab = build_word_vocab(data.texts, 4096);
  CHECK(vocab.size() <= 64);
}

TEST_CASE("stand-in embedding table: zero pad row, frozen, seeded") {
  const auto table = synthetic_embedding_rows<double>(7, 5, 13);
  CHECK(table.shape() == Shape{7, 5});
  CHECK_FALSE(table.requires_grad());

  auto values = table.values();
  for (int j = 0; j < 5; ++j) CHECK(values[static_cast<size_t>(j)] == 0.0);
  bool any_nonzero = false;
  for (size_t i = 5; i < values.size(); ++i) {
    CHECK(values[i] >= -0.5);
    CHECK(values[i] < 0.5);
    if (values[i] != 0.0) any_nonzero = true;
  }
  CHECK(any_nonzero);

  const auto again = synthetic_embedding_rows<double>(7, 5, 13);
  CHECK(std::memcmp(values.data(), again.values().data(),
                    sizeof(double) * values.size()) == 0);
  const auto other = synthetic_embedding_rows<double>(7, 5, 14);
  CHECK(std::memcmp(values.data(), other.values().data(),
                    sizeof(double) * values.size()) != 0);
}

TEST_CASE("a small two-model benchmark produces aligned tables") {
  BenchmarkOptions options;
  // listed out of canonical order on purpose
  options.models = {ModelKind::kTransformer, ModelKind::kCharCnn};
  options.epochs = 1;
  options.synthetic_n = 50;
  options.scale = 0.05;
  options.seed = 3;
  options.batch = 16;
  options.val_split = 0.2;

  const BenchmarkResult result = run_benchmark<float>(options);
  REQUIRE(result.models ==
          std::vector<ModelKind>{ModelKind::kCharCnn, ModelKind::kTransformer});
  REQUIRE(result.history.size() == 2u);
  REQUIRE(result.mean_epoch_ms.size() == 2u);
  for (const auto& h : result.history) {
    REQUIRE(h.size() == 1u);
    CHECK(h[0].epoch == 1);
    CHECK(h[0].has_validation);
    CHECK(h[0].train_loss > 0.0);
    CHECK(h[0].wall_ms > 0.0);
  }
  CHECK(result.mean_epoch_ms[0] == Approx(result.history[0][0].wall_ms));

  const CurveTable acc = result.curve("accuracy");
  CHECK(acc.columns == std::vector<std::string>{"1-D Char", "Transformer"});
  REQUIRE(acc.rows.size() == 1u);
  CHECK(acc.rows[0][0] == result.history[0][0].train_acc);
  CHECK(acc.rows[0][1] == result.history[1][0].train_acc);

  const CurveTable loss = result.curve("loss");
  CHECK(loss.rows[0][0] == result.history[0][0].train_loss);
  const CurveTable val_acc = result.curve("validation_accuracy");
  CHECK(val_acc.rows[0][1] == result.history[1][0].val_acc);
  CHECK_THROWS_AS(result.curve("perplexity"), ConfigError);

  // one epoch: the later timing columns clamp to the last epoch measured
  const TimingTable timing = result.timing();
  REQUIRE(timing.rows.size() == 2u);
  CHECK(timing.rows[0].model == "char-cnn");
  CHECK(timing.rows[0].epoch5_ms == timing.rows[0].epoch1_ms);
  CHECK(timing.rows[0].epoch10_ms == timing.rows[0].epoch1_ms);

  const std::string ordering = result.ordering_line();
  CHECK(ordering.find(" < ") != std::string::npos);
  CHECK(ordering.find("char-cnn") != std::string::npos);
  CHECK(ordering.find("transformer") != std::string::npos);
  CHECK(ordering.find("mean ms/epoch:") != std::string::npos);
}

TEST_CASE("benchmark without a validation split omits validation curves") {
  BenchmarkOptions options;
  options.models = {ModelKind::kTransformer};
  options.epochs = 1;
  options.synthetic_n = 30;
  options.scale = 0.05;
  options.seed = 5;
  options.batch = 16;
  options.val_split = 0.0;

  const BenchmarkResult result = run_benchmark<float>(options);
  CHECK_FALSE(result.history[0][0].has_validation);
  CHECK_THROWS_AS(result.curve("validation_accuracy"), ContractError);
  CHECK_THROWS_AS(result.curve("validation_loss"), ContractError);

  BenchmarkOptions empty = options;
  empty.models = {};
  CHECK_THROWS_AS(run_benchmark<float>(empty), ConfigError);
}
