#include "prefx/vectorize.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace prefx {

namespace {

constexpr const char* kVocabFormat = "prefx-tfidf-vocab/1";
constexpr const char* kEncoderFormat = "prefx-input-encoder/1";

uint32_t pack_ngram(std::string_view g) {
  uint32_t key = static_cast<uint32_t>(g.size()) << 24;
  for (size_t i = 0; i < g.size(); ++i) key |= static_cast<uint32_t>(static_cast<unsigned char>(g[i])) << (16 - 8 * i);
  return key;
}

std::string unpack_ngram(uint32_t key) {
  size_t len = key >> 24;
  std::string s(len, '\0');
  for (size_t i = 0; i < len; ++i) s[i] = static_cast<char>((key >> (16 - 8 * i)) & 0xff);
  return s;
}

}  // namespace

std::string_view to_string(VocabKind k) { return k == VocabKind::token_unigram ? "token_unigram" : "char_ngram"; }

VocabKind vocab_kind_from_string(std::string_view s) {
  if (s == "token_unigram") return VocabKind::token_unigram;
  if (s == "char_ngram") return VocabKind::char_ngram;
  throw Error("unknown vocabulary kind: " + std::string(s));
}

std::string_view to_string(InputMode m) { return m == InputMode::prev_only ? "prev_only" : "prev_concat_prefix"; }

InputMode input_mode_from_string(std::string_view s) {
  if (s == "prev_only") return InputMode::prev_only;
  if (s == "prev_concat_prefix") return InputMode::prev_concat_prefix;
  throw Error("unknown input mode: " + std::string(s));
}

std::vector<std::string_view> tokenize(std::string_view text) {
  std::vector<std::string_view> out;
  size_t i = 0;
  while (i < text.size()) {
    size_t j = text.find(' ', i);
    if (j == std::string_view::npos) j = text.size();
    if (j > i) out.push_back(text.substr(i, j - i));
    i = j + 1;
  }
  return out;
}

TfidfVocab TfidfVocab::fit(std::span<const std::string> corpus, VocabKind kind, uint32_t min_df, bool position_weighted) {
  if (corpus.empty()) throw Error("fit_vocab: empty corpus");
  if (position_weighted && kind != VocabKind::char_ngram) throw Error("fit_vocab: position weighting applies to character n-grams only");

  std::vector<std::pair<std::string, uint32_t>> df_terms;
  if (kind == VocabKind::char_ngram) {
    std::unordered_map<uint32_t, uint32_t> df;
    std::vector<uint32_t> keys;
    for (const auto& doc : corpus) {
      keys.clear();
      for_each_char_ngram(doc, [&](std::string_view g, size_t) { keys.push_back(pack_ngram(g)); });
      std::sort(keys.begin(), keys.end());
      keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
      for (uint32_t k : keys) ++df[k];
    }
    df_terms.reserve(df.size());
    for (auto [k, c] : df) df_terms.emplace_back(unpack_ngram(k), c);
  } else {
    std::unordered_map<std::string, uint32_t> df;
    std::vector<std::string_view> toks;
    for (const auto& doc : corpus) {
      toks = tokenize(doc);
      std::sort(toks.begin(), toks.end());
      toks.erase(std::unique(toks.begin(), toks.end()), toks.end());
      for (auto t : toks) ++df[std::string(t)];
    }
    df_terms.reserve(df.size());
    for (auto& [t, c] : df) df_terms.emplace_back(t, c);
  }

  std::erase_if(df_terms, [&](const auto& p) { return p.second < min_df; });
  if (df_terms.empty()) throw Error("fit_vocab: vocabulary is empty after min_df filtering");
  std::sort(df_terms.begin(), df_terms.end());

  TfidfVocab v;
  v.kind_ = kind;
  v.position_weighted_ = position_weighted;
  const double n_docs = static_cast<double>(corpus.size());
  v.terms_.reserve(df_terms.size());
  v.idf_.reserve(df_terms.size());
  for (auto& [t, c] : df_terms) {
    v.terms_.push_back(std::move(t));
    v.idf_.push_back(std::log((1.0 + n_docs) / (1.0 + static_cast<double>(c))) + 1.0);
  }
  v.build_lookup();
  return v;
}

void TfidfVocab::build_lookup() {
  token_ids_.clear();
  ngram_ids_.clear();
  for (uint32_t i = 0; i < terms_.size(); ++i) {
    if (kind_ == VocabKind::char_ngram) {
      if (terms_[i].empty() || terms_[i].size() > kCharNgramMax) throw Error("char vocabulary: bad n-gram '" + terms_[i] + "'");
      ngram_ids_.emplace(pack_ngram(terms_[i]), i);
    } else {
      token_ids_.emplace(terms_[i], i);
    }
  }
}

std::optional<uint32_t> TfidfVocab::feature_id(std::string_view term) const {
  if (kind_ == VocabKind::char_ngram) {
    if (term.empty() || term.size() > kCharNgramMax) return std::nullopt;
    auto it = ngram_ids_.find(pack_ngram(term));
    if (it == ngram_ids_.end()) return std::nullopt;
    return it->second;
  }
  auto it = token_ids_.find(std::string(term));
  if (it == token_ids_.end()) return std::nullopt;
  return it->second;
}

std::vector<std::pair<uint32_t, double>> TfidfVocab::term_counts(std::string_view text, bool position_weighted) const {
  std::vector<std::pair<uint32_t, double>> counts;
  if (kind_ == VocabKind::char_ngram) {
    for_each_char_ngram(text, [&](std::string_view g, size_t pos) {
      auto it = ngram_ids_.find(pack_ngram(g));
      if (it != ngram_ids_.end()) counts.emplace_back(it->second, position_weighted ? 1.0 / static_cast<double>(pos) : 1.0);
    });
  } else {
    for (auto t : tokenize(text)) {
      auto it = token_ids_.find(std::string(t));
      if (it != token_ids_.end()) counts.emplace_back(it->second, 1.0);
    }
  }
  // Merge duplicates in occurrence order so sums do not depend on sorting.
  std::stable_sort(counts.begin(), counts.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<std::pair<uint32_t, double>> merged;
  for (const auto& [id, c] : counts) {
    if (!merged.empty() && merged.back().first == id) {
      merged.back().second += c;
    } else {
      merged.emplace_back(id, c);
    }
  }
  return merged;
}

SparseVector TfidfVocab::weigh(std::vector<std::pair<uint32_t, double>> counts) const {
  SparseVector v(dim());
  v.indices.reserve(counts.size());
  v.values.reserve(counts.size());
  for (const auto& [id, c] : counts) {
    v.indices.push_back(id);
    v.values.push_back(c * idf_[id]);
  }
  v.normalize();
  return v;
}

SparseVector TfidfVocab::vectorize_simple(std::string_view text) const { return weigh(term_counts(text, false)); }

SparseVector TfidfVocab::vectorize_position_weighted(std::string_view text) const { return weigh(term_counts(text, true)); }

SparseVector TfidfVocab::vectorize(std::string_view text) const {
  return position_weighted_ ? vectorize_position_weighted(text) : vectorize_simple(text);
}

nlohmann::json TfidfVocab::to_json() const {
  nlohmann::json terms = nlohmann::json::object();
  for (uint32_t i = 0; i < terms_.size(); ++i) terms[terms_[i]] = i;
  nlohmann::json j;
  j["format"] = kVocabFormat;
  j["kind"] = to_string(kind_);
  j["position_weighted"] = position_weighted_;
  j["terms"] = std::move(terms);
  j["idf"] = idf_;
  return j;
}

TfidfVocab TfidfVocab::from_json(const nlohmann::json& j) {
  if (j.value("format", "") != kVocabFormat) throw Error("vocabulary: unsupported format tag");
  TfidfVocab v;
  v.kind_ = vocab_kind_from_string(j.at("kind").get<std::string>());
  v.position_weighted_ = j.at("position_weighted").get<bool>();
  v.idf_ = j.at("idf").get<std::vector<double>>();
  v.terms_.assign(v.idf_.size(), std::string());
  std::vector<bool> seen(v.idf_.size(), false);
  for (const auto& [term, id_json] : j.at("terms").items()) {
    auto id = id_json.get<uint64_t>();
    if (id >= v.terms_.size() || seen[id]) throw Error("vocabulary: feature ids are not dense");
    seen[id] = true;
    v.terms_[id] = term;
  }
  if (std::find(seen.begin(), seen.end(), false) != seen.end()) throw Error("vocabulary: feature ids are not dense");
  for (double x : v.idf_) {
    if (!std::isfinite(x) || x <= 0.0) throw Error("vocabulary: idf must be finite and positive");
  }
  v.build_lookup();
  return v;
}

void TfidfVocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open for writing: " + path.string());
  out << to_json().dump() << '\n';
  if (!out) throw Error("write failed: " + path.string());
}

TfidfVocab TfidfVocab::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open vocabulary: " + path.string());
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

InputEncoder::InputEncoder(TfidfVocab prev_vocab, TfidfVocab prefix_vocab, InputMode mode)
    : prev_vocab_(std::move(prev_vocab)), prefix_vocab_(std::move(prefix_vocab)), mode_(mode) {}

uint32_t InputEncoder::dim() const {
  return mode_ == InputMode::prev_only ? prev_vocab_.dim() : prev_vocab_.dim() + prefix_vocab_.dim();
}

SparseVector InputEncoder::encode(std::string_view prev_query, std::string_view prefix) const {
  SparseVector prev = prev_vocab_.vectorize(prev_query);
  if (mode_ == InputMode::prev_only) return prev;
  SparseVector out = concat(prev, prefix_vocab_.vectorize(prefix));
  out.normalized = false;
  return out;
}

void InputEncoder::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  prev_vocab_.save(dir / "prev_vocab.json");
  prefix_vocab_.save(dir / "prefix_vocab.json");
  nlohmann::ordered_json j;
  j["format"] = kEncoderFormat;
  j["mode"] = to_string(mode_);
  j["prev_vocab"] = "prev_vocab.json";
  j["prefix_vocab"] = "prefix_vocab.json";
  j["dim"] = dim();
  std::ofstream out(dir / "encoder.json", std::ios::trunc);
  out << j.dump(2) << '\n';
  if (!out) throw Error("write failed: " + (dir / "encoder.json").string());
}

InputEncoder InputEncoder::load(const std::filesystem::path& dir) {
  std::ifstream in(dir / "encoder.json");
  if (!in) throw Error("cannot open encoder config: " + (dir / "encoder.json").string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error((dir / "encoder.json").string() + ": " + e.what());
  }
  if (j.value("format", "") != kEncoderFormat) throw Error("encoder: unsupported format tag");
  InputEncoder enc(TfidfVocab::load(dir / j.at("prev_vocab").get<std::string>()),
                   TfidfVocab::load(dir / j.at("prefix_vocab").get<std::string>()),
                   input_mode_from_string(j.at("mode").get<std::string>()));
  return enc;
}

}  // namespace prefx
