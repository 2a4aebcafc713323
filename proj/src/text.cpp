#include "seqbench/text.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "seqbench/common.hpp"

namespace seqbench {

CharAlphabet::CharAlphabet() {
  chars_ =
      "abcdefghijklmnopqrstuvwxyz"
      "0123456789"
      "-,;.!?:'\"/\\|_@#$%^&*~+=<>()[]{}` ";
  if (chars_.size() != 69) throw ContractError("alphabet must have 69 characters");
  for (size_t i = 0; i < chars_.size(); ++i) {
    ids_[static_cast<unsigned char>(chars_[i])] = static_cast<int64_t>(i) + 1;
  }
  for (int c = 'A'; c <= 'Z'; ++c) {
    ids_[static_cast<size_t>(c)] = ids_[static_cast<size_t>(c - 'A' + 'a')];
  }
}

std::vector<int64_t> encode_chars(std::string_view text, const CharAlphabet& alphabet,
                                  int64_t length) {
  if (length < 1) throw ConfigError("encode_chars length must be positive");
  std::vector<int64_t> ids(static_cast<size_t>(length), 0);
  const size_t n = std::min(text.size(), static_cast<size_t>(length));
  for (size_t i = 0; i < n; ++i) {
    ids[i] = alphabet.id_of(static_cast<unsigned char>(text[i]));
  }
  return ids;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  for (char raw : text) {
    const unsigned char c = static_cast<unsigned char>(raw);
    if (std::isalnum(c)) {
      current.push_back(static_cast<char>(std::tolower(c)));
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

const std::string& Vocabulary::token_of(int64_t id) const {
  if (id < 0 || id >= size()) {
    throw IndexError("vocabulary id " + std::to_string(id) + " out of range [0, " +
                     std::to_string(size()) + ")");
  }
  return tokens_[static_cast<size_t>(id)];
}

Vocabulary build_word_vocab(const std::vector<std::string>& corpus, int64_t cap) {
  if (cap < 2) throw ConfigError("vocabulary cap must be at least 2");
  std::unordered_map<std::string, int64_t> freq;
  for (const auto& text : corpus) {
    for (auto& token : tokenize(text)) ++freq[token];
  }
  std::vector<std::pair<std::string, int64_t>> ranked(freq.begin(), freq.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  Vocabulary vocab;
  vocab.cap_ = cap;
  const size_t keep = std::min(ranked.size(), static_cast<size_t>(cap - 2));
  for (size_t i = 0; i < keep; ++i) {
    vocab.ids_.emplace(ranked[i].first, static_cast<int64_t>(vocab.tokens_.size()));
    vocab.tokens_.push_back(ranked[i].first);
  }
  return vocab;
}

std::vector<int64_t> encode_words(std::string_view text, const Vocabulary& vocab,
                                  int64_t length) {
  if (length < 1) throw ConfigError("encode_words length must be positive");
  std::vector<int64_t> ids(static_cast<size_t>(length), Vocabulary::kPadId);
  size_t i = 0;
  for (const auto& token : tokenize(text)) {
    if (i == static_cast<size_t>(length)) break;
    ids[i++] = vocab.id_of(token);
  }
  return ids;
}

EmbeddingMatrix load_glove_embeddings(const std::string& path, const Vocabulary& vocab,
                                      int64_t dim) {
  if (dim < 1) throw ConfigError("embedding dim must be positive");
  std::ifstream in(path);
  if (!in) throw IoError("cannot open embedding file '" + path + "'");

  EmbeddingMatrix matrix;
  matrix.vocab = vocab.size();
  matrix.dim = dim;
  matrix.values.assign(static_cast<size_t>(matrix.vocab * dim), 0.0);
  std::vector<bool> filled(static_cast<size_t>(matrix.vocab), false);

  std::string line;
  int64_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string token;
    fields >> token;
    const int64_t id = vocab.id_of(token);
    const bool wanted = id >= 2 && vocab.token_of(id) == token;
    double* row = wanted ? &matrix.values[static_cast<size_t>(id * dim)] : nullptr;
    int64_t count = 0;
    std::string value;
    while (fields >> value) {
      if (count < dim && row != nullptr) {
        try {
          size_t pos = 0;
          row[count] = std::stod(value, &pos);
          if (pos != value.size()) throw std::invalid_argument("trailing");
        } catch (const std::exception&) {
          throw ParseError("embedding file '" + path + "' line " +
                           std::to_string(lineno) + ": bad value '" + value + "'");
        }
      }
      ++count;
    }
    if (count != dim) {
      throw ParseError("embedding file '" + path + "' line " + std::to_string(lineno) +
                       ": expected " + std::to_string(dim) + " values, got " +
                       std::to_string(count));
    }
    if (wanted && !filled[static_cast<size_t>(id)]) {
      filled[static_cast<size_t>(id)] = true;
      ++matrix.hits;
    }
  }
  matrix.misses = std::max<int64_t>(0, vocab.size() - 2) - matrix.hits;
  return matrix;
}

std::vector<std::vector<std::string>> parse_csv(std::string_view content) {
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> record;
  std::string field;
  bool quoted = false;
  bool field_started = false;

  auto end_field = [&] {
    record.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  auto end_record = [&] {
    end_field();
    records.push_back(std::move(record));
    record.clear();
  };

  size_t i = 0;
  while (i < content.size()) {
    const char c = content[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < content.size() && content[i + 1] == '"') {
          field.push_back('"');
          i += 2;
        } else {
          quoted = false;
          ++i;
        }
      } else {
        field.push_back(c);
        ++i;
      }
      continue;
    }
    if (c == '"' && !field_started && field.empty()) {
      quoted = true;
      field_started = true;
      ++i;
    } else if (c == ',') {
      end_field();
      ++i;
    } else if (c == '\n') {
      end_record();
      ++i;
    } else if (c == '\r') {
      if (i + 1 < content.size() && content[i + 1] == '\n') {
        end_record();
        i += 2;
      } else {
        end_record();
        ++i;
      }
    } else {
      field.push_back(c);
      field_started = true;
      ++i;
    }
  }
  if (quoted) throw ParseError("unterminated quoted field at end of input");
  if (field_started || !field.empty() || !record.empty()) end_record();
  return records;
}

Dataset load_labeled_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open dataset '" + path + "'");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  const std::string content = buffer.str();

  std::vector<std::vector<std::string>> records = parse_csv(content);
  if (records.empty()) throw DataError("dataset '" + path + "' is empty");

  std::vector<std::string>& header = records.front();
  if (!header.empty() && header[0].size() >= 3 &&
      header[0].compare(0, 3, "\xEF\xBB\xBF") == 0) {
    header[0].erase(0, 3);
  }
  int text_col = -1;
  int label_col = -1;
  for (size_t i = 0; i < header.size(); ++i) {
    if (header[i] == "text") text_col = static_cast<int>(i);
    if (header[i] == "label") label_col = static_cast<int>(i);
  }
  if (text_col < 0 || label_col < 0) {
    throw DataError("dataset '" + path + "' header must name columns text and label");
  }

  Dataset data;
  std::unordered_map<std::string, int64_t> label_ids;
  const size_t need = static_cast<size_t>(std::max(text_col, label_col)) + 1;
  for (size_t r = 1; r < records.size(); ++r) {
    const auto& record = records[r];
    if (record.size() == 1 && record[0].empty()) continue;
    if (record.size() < need) {
      throw ParseError("dataset '" + path + "' record " + std::to_string(r + 1) +
                       " has " + std::to_string(record.size()) + " field(s), needs " +
                       std::to_string(need));
    }
    const std::string& label = record[static_cast<size_t>(label_col)];
    auto it = label_ids.find(label);
    if (it == label_ids.end()) {
      it = label_ids.emplace(label, static_cast<int64_t>(data.class_names.size())).first;
      data.class_names.push_back(label);
    }
    data.texts.push_back(record[static_cast<size_t>(text_col)]);
    data.labels.push_back(it->second);
  }
  if (data.class_names.size() != 5) {
    throw DataError("dataset '" + path + "' has " +
                    std::to_string(data.class_names.size()) +
                    " distinct label(s), expected 5");
  }
  return data;
}

namespace {

std::string csv_escape(const std::string& field) {
  const bool needs_quotes =
      field.find_first_of(",\"\r\n") != std::string::npos;
  if (!needs_quotes) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  out += "\"";
  return out;
}

}  // namespace

void write_labeled_csv(const std::string& path, const Dataset& data) {
  if (data.texts.size() != data.labels.size()) {
    throw ContractError("dataset texts and labels disagree in length");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write dataset '" + path + "'");
  out << "text,label\n";
  for (size_t i = 0; i < data.texts.size(); ++i) {
    const int64_t label = data.labels[i];
    if (label < 0 || label >= static_cast<int64_t>(data.class_names.size())) {
      throw ContractError("label id " + std::to_string(label) + " has no class name");
    }
    out << csv_escape(data.texts[i]) << ','
        << csv_escape(data.class_names[static_cast<size_t>(label)]) << '\n';
  }
}

std::vector<std::vector<int64_t>> batch_indices(int64_t n, int64_t batch, bool shuffle,
                                                RngStream* rng) {
  if (batch < 1) throw ConfigError("batch size must be at least 1");
  if (n < 0) throw ContractError("negative item count");
  std::vector<int64_t> order(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
  if (shuffle) {
    if (rng == nullptr) throw ContractError("shuffling needs an rng stream");
    for (int64_t i = n - 1; i > 0; --i) {
      const int64_t j = static_cast<int64_t>(rng->next_below(static_cast<uint64_t>(i + 1)));
      std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
    }
  }
  std::vector<std::vector<int64_t>> batches;
  for (int64_t start = 0; start < n; start += batch) {
    const int64_t stop = std::min(n, start + batch);
    batches.emplace_back(order.begin() + start, order.begin() + stop);
  }
  return batches;
}

}  // namespace seqbench
