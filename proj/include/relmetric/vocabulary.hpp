#pragma once

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "relmetric/error.hpp"
#include "relmetric/log.hpp"
#include "relmetric/tape.hpp"

namespace relmetric {

inline std::string to_lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

// Dense token <-> index map with reserved PAD (0) and UNK (1) entries.
// Lookup never fails: exact match, then lowercase, then UNK.
class Vocabulary {
 public:
  static constexpr std::size_t pad = 0;
  static constexpr std::size_t unk = 1;

  Vocabulary() : tokens_{"<pad>", "<unk>"} {
    index_.emplace(tokens_[0], pad);
    index_.emplace(tokens_[1], unk);
  }

  explicit Vocabulary(const std::vector<std::string>& tokens) : Vocabulary() {
    for (const auto& t : tokens) add(t);
  }

  std::size_t add(const std::string& token) {
    auto [it, fresh] = index_.emplace(token, tokens_.size());
    if (fresh) tokens_.push_back(token);
    return it->second;
  }

  bool contains(const std::string& token) const { return index_.count(token) != 0; }

  std::size_t lookup(const std::string& token) const {
    if (auto it = index_.find(token); it != index_.end()) return it->second;
    if (auto it = index_.find(to_lower(token)); it != index_.end()) return it->second;
    return unk;
  }

  const std::string& token(std::size_t index) const { return tokens_.at(index); }
  std::size_t size() const noexcept { return tokens_.size(); }

  // Entries in index order, including the reserved ones.
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

  static Vocabulary from_tokens(const std::vector<std::string>& all) {
    if (all.size() < 2 || all[0] != "<pad>" || all[1] != "<unk>") {
      throw CheckpointError("vocabulary: serialized token list lacks reserved entries");
    }
    Vocabulary v;
    for (std::size_t i = 2; i < all.size(); ++i) v.add(all[i]);
    if (v.size() != all.size()) throw CheckpointError("vocabulary: serialized token list has duplicates");
    return v;
  }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Characters are UTF-8 bytes.
inline std::vector<std::string> characters_of(const std::string& word) {
  std::vector<std::string> out;
  out.reserve(word.size());
  for (char c : word) out.emplace_back(1, c);
  return out;
}

struct EmbeddingMatrix {
  Parameter table;
  std::size_t pretrained_rows = 0;  // rows copied from the file
};

// Word vectors from a whitespace-separated text file ("token v1 ... vd" per
// line, optional "count dim" header). Vocabulary rows found in the file
// (exact, then lowercase key) are copied; the rest are drawn from N(0, stddev).
inline EmbeddingMatrix load_embeddings(std::istream& in, const Vocabulary& vocab, std::size_t dim, std::mt19937_64& rng,
                                       Real stddev = Real{0.1}, const std::string& source = "<stream>") {
  EmbeddingMatrix out{Parameter("word_embeddings", Tensor({vocab.size(), dim})), 0};
  Tensor& table = out.table.value;
  {
    std::normal_distribution<double> normal(0.0, static_cast<double>(stddev));
    for (Real& v : table.values()) v = static_cast<Real>(normal(rng));
  }
  std::vector<bool> filled(vocab.size(), false);
  std::vector<bool> from_exact(vocab.size(), false);
  // vocabulary rows keyed by their lowercase form, for the fallback match
  std::unordered_map<std::string, std::vector<std::size_t>> by_lower;
  for (std::size_t row = 2; row < vocab.size(); ++row) {
    const std::string lower = to_lower(vocab.token(row));
    if (lower != vocab.token(row)) by_lower[lower].push_back(row);
  }
  std::string line;
  std::size_t line_no = 0;
  std::vector<Real> values;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream fields(line);
    std::string word;
    if (!(fields >> word)) continue;
    values.clear();
    std::string tok;
    while (fields >> tok) {
      try {
        std::size_t used = 0;
        values.push_back(static_cast<Real>(std::stod(tok, &used)));
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw IngestionError(source + ":" + std::to_string(line_no) + ": non-numeric value '" + tok + "'");
      }
    }
    if (line_no == 1 && values.size() == 1 && word.find_first_not_of("0123456789") == std::string::npos) continue;
    if (values.size() != dim) {
      throw IngestionError(source + ":" + std::to_string(line_no) + ": expected " + std::to_string(dim) +
                           " values, found " + std::to_string(values.size()));
    }
    auto place = [&](std::size_t row, bool exact) {
      if (filled[row] && (from_exact[row] || !exact)) return;
      std::copy(values.begin(), values.end(), table.data() + row * dim);
      filled[row] = true;
      from_exact[row] = exact;
    };
    if (vocab.contains(word)) place(vocab.lookup(word), true);
    if (auto it = by_lower.find(word); it != by_lower.end())
      for (std::size_t row : it->second) place(row, false);
  }
  out.pretrained_rows = static_cast<std::size_t>(std::count(filled.begin(), filled.end(), true));
  return out;
}

inline EmbeddingMatrix load_embeddings(const std::string& path, const Vocabulary& vocab, std::size_t dim,
                                       std::mt19937_64& rng, Real stddev = Real{0.1}) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot open embedding file '" + path + "'");
  return load_embeddings(in, vocab, dim, rng, stddev, path);
}

// Words of an embedding file, without reading the vectors.
inline std::vector<std::string> embedding_file_words(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot open embedding file '" + path + "'");
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream fields(line);
    std::string word;
    if (fields >> word) out.push_back(word);
  }
  return out;
}

}  // namespace relmetric
