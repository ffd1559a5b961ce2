#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "prefx/sparse.hpp"

namespace prefx {

enum class VocabKind { token_unigram, char_ngram };

std::string_view to_string(VocabKind k);
VocabKind vocab_kind_from_string(std::string_view s);

// Character n-grams span 1..3 characters and never cross the string
// boundary; spaces are ordinary characters.
inline constexpr int kCharNgramMax = 3;

// A fitted TF-IDF vocabulary. Feature ids follow lexicographic (byte) order of
// the terms, so fitting is independent of corpus order.
//
// idf(t) = ln((1 + N) / (1 + df(t))) + 1
class TfidfVocab {
 public:
  TfidfVocab() = default;

  static TfidfVocab fit(std::span<const std::string> corpus, VocabKind kind, uint32_t min_df, bool position_weighted = false);

  // Uses position weighting iff the vocabulary was fitted with it.
  SparseVector vectorize(std::string_view text) const;
  SparseVector vectorize_simple(std::string_view text) const;
  SparseVector vectorize_position_weighted(std::string_view text) const;

  // Raw (count, not idf-weighted, not normalized) term weights, keyed by
  // feature id. `position_weighted` selects 1/position counting.
  std::vector<std::pair<uint32_t, double>> term_counts(std::string_view text, bool position_weighted) const;

  VocabKind kind() const { return kind_; }
  bool position_weighted() const { return position_weighted_; }
  uint32_t dim() const { return static_cast<uint32_t>(terms_.size()); }
  const std::string& term(uint32_t id) const { return terms_.at(id); }
  double idf(uint32_t id) const { return idf_.at(id); }
  std::optional<uint32_t> feature_id(std::string_view term) const;

  nlohmann::json to_json() const;
  static TfidfVocab from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static TfidfVocab load(const std::filesystem::path& path);

  bool operator==(const TfidfVocab& o) const {
    return kind_ == o.kind_ && position_weighted_ == o.position_weighted_ && terms_ == o.terms_ && idf_ == o.idf_;
  }

 private:
  void build_lookup();
  SparseVector weigh(std::vector<std::pair<uint32_t, double>> counts) const;

  VocabKind kind_ = VocabKind::token_unigram;
  bool position_weighted_ = false;
  std::vector<std::string> terms_;
  std::vector<double> idf_;
  std::unordered_map<std::string, uint32_t> token_ids_;
  // Character n-grams of length <= 3 packed as (len << 24 | bytes).
  std::unordered_map<uint32_t, uint32_t> ngram_ids_;
};

// Visits every character n-gram (n = 1..3) with its 1-based start position.
template <typename F>
void for_each_char_ngram(std::string_view text, F&& f) {
  for (int n = 1; n <= kCharNgramMax; ++n) {
    if (text.size() < static_cast<size_t>(n)) break;
    for (size_t i = 0; i + static_cast<size_t>(n) <= text.size(); ++i) f(text.substr(i, static_cast<size_t>(n)), i + 1);
  }
}

// Splits on single spaces, skipping empty pieces.
std::vector<std::string_view> tokenize(std::string_view text);

enum class InputMode { prev_only, prev_concat_prefix };

std::string_view to_string(InputMode m);
InputMode input_mode_from_string(std::string_view s);

// Encodes (previous query, prefix) into the model input space.
class InputEncoder {
 public:
  InputEncoder() = default;
  InputEncoder(TfidfVocab prev_vocab, TfidfVocab prefix_vocab, InputMode mode);

  // prev_only: token vector of the previous query. prev_concat_prefix: the
  // token block and the character block are normalized independently, and
  // the prefix block is offset by prev_vocab.dim().
  SparseVector encode(std::string_view prev_query, std::string_view prefix) const;

  uint32_t dim() const;
  InputMode mode() const { return mode_; }
  const TfidfVocab& prev_vocab() const { return prev_vocab_; }
  const TfidfVocab& prefix_vocab() const { return prefix_vocab_; }

  // Writes prev_vocab.json, prefix_vocab.json and encoder.json into `dir`.
  void save(const std::filesystem::path& dir) const;
  static InputEncoder load(const std::filesystem::path& dir);

 private:
  TfidfVocab prev_vocab_;
  TfidfVocab prefix_vocab_;
  InputMode mode_ = InputMode::prev_concat_prefix;
};

}  // namespace prefx
