#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "seqbench/rng.hpp"
#include "seqbench/tensor.hpp"

namespace seqbench {

// The 69-character set: 26 lowercase letters, 10 digits, and these 33 marks
// (space and backtick included):
//   - , ; . ! ? : ' " / \ | _ @ # $ % ^ & * ~ + = < > ( ) [ ] { } ` <space>
// Ids run 1..69 in that order; id 0 is shared by padding and unknown bytes,
// so the table fed by encode_chars has 70 rows.
class CharAlphabet {
 public:
  CharAlphabet();

  // 0 for anything outside the set; uppercase letters fold to lowercase.
  int64_t id_of(unsigned char c) const { return ids_[c]; }
  int64_t vocab() const { return 70; }
  const std::string& characters() const { return chars_; }

 private:
  std::array<int64_t, 256> ids_{};
  std::string chars_;
};

std::vector<int64_t> encode_chars(std::string_view text, const CharAlphabet& alphabet,
                                  int64_t length = 1014);

// Lowercased runs of [a-z0-9]; every other byte separates tokens.
std::vector<std::string> tokenize(std::string_view text);

class Vocabulary {
 public:
  static constexpr int64_t kPadId = 0;
  static constexpr int64_t kOovId = 1;

  Vocabulary() : tokens_{"<pad>", "<oov>"}, cap_(2) {}

  int64_t id_of(const std::string& token) const {
    auto it = ids_.find(token);
    return it == ids_.end() ? kOovId : it->second;
  }
  const std::string& token_of(int64_t id) const;
  int64_t size() const { return static_cast<int64_t>(tokens_.size()); }
  int64_t cap() const { return cap_; }

 private:
  friend Vocabulary build_word_vocab(const std::vector<std::string>&, int64_t);

  std::unordered_map<std::string, int64_t> ids_;
  std::vector<std::string> tokens_;
  int64_t cap_;
};

// Keeps the (cap - 2) most frequent tokens; ties break lexicographically so
// identical corpora always yield identical tables.
Vocabulary build_word_vocab(const std::vector<std::string>& corpus, int64_t cap);

std::vector<int64_t> encode_words(std::string_view text, const Vocabulary& vocab,
                                  int64_t length);

struct EmbeddingMatrix {
  int64_t vocab = 0;
  int64_t dim = 0;
  std::vector<double> values;  // row-major [vocab, dim]
  int64_t hits = 0;
  int64_t misses = 0;

  template <typename T>
  Tensor<T> to_tensor() const {
    std::vector<T> data(values.size());
    for (size_t i = 0; i < values.size(); ++i) data[i] = static_cast<T>(values[i]);
    Tensor<T> t = Tensor<T>::of({vocab, dim}, std::move(data));
    t.set_requires_grad(false);
    return t;
  }
};

// File lines are "token v1 ... v<dim>". Rows 0 and 1 (pad, unknown) and rows
// for tokens the file never mentions stay zero; those count as misses.
EmbeddingMatrix load_glove_embeddings(const std::string& path, const Vocabulary& vocab,
                                      int64_t dim = 100);

struct Dataset {
  std::vector<std::string> texts;
  std::vector<int64_t> labels;
  std::vector<std::string> class_names;

  int64_t size() const { return static_cast<int64_t>(texts.size()); }
};

// RFC-style quoting; raw records in file order.
std::vector<std::vector<std::string>> parse_csv(std::string_view content);

// Header must name columns `text` and `label`; label names become ids 0..4 in
// first-appearance order, and exactly 5 distinct labels must appear.
Dataset load_labeled_csv(const std::string& path);

void write_labeled_csv(const std::string& path, const Dataset& data);

// Index batches covering 0..n-1 exactly once; the last batch may be short.
// Shuffling draws from rng (required then), otherwise order is the identity.
std::vector<std::vector<int64_t>> batch_indices(int64_t n, int64_t batch, bool shuffle,
                                                RngStream* rng);

}  // namespace seqbench
