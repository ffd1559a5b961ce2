#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "prefx/corpus.hpp"
#include "prefx/embed.hpp"
#include "prefx/eval.hpp"
#include "prefx/index.hpp"
#include "prefx/model.hpp"
#include "prefx/vectorize.hpp"

namespace prefx {

// Every choice that shapes a trained model.
struct PipelineConfig {
  int ablation_id = -1;  // -1 for a custom configuration
  InputMode input_mode = InputMode::prev_concat_prefix;
  // Position weighting for the prefix and label-text vectorizers.
  bool position_weighted = true;
  EmbeddingSource embedding = EmbeddingSource::label_text_posweighted;
  IndexParams index;
  TrainParams train;
  uint32_t token_min_df = 2;
  uint32_t char_min_df = 1;

  bool needs_embeddings() const { return index.algo != IndexAlgo::trie; }

  nlohmann::json to_json() const;
  static PipelineConfig from_json(const nlohmann::json& j);
  // SHA-1 of the canonical JSON form.
  std::string fingerprint() const;
};

inline constexpr int kNumAblationConfigs = 12;

// Configurations 0-11 of the ablation table.
//   0  prev only, PIFA, HC                 1  prev only, label text (simple), HC
//   2  prev+prefix simple, PIFA, HC        3  prev+prefix simple, label text, HC
//   4  prev+prefix pw, PIFA, HC            5  prev+prefix pw, label text pw, HC
//   6-8  as 5 with hybrid trie, d_trie 1, 2, 3
//   9  prev+prefix pw, trie d_trie 16      10 as 9 with simple vectorizers
//   11 as 5 with must-link constraints, d_mlc 5
PipelineConfig ablation_config(int id, uint64_t seed = 0);

struct Vectorizers {
  InputEncoder encoder;
  // Character n-gram vocabulary over train label strings; empty unless the
  // configuration embeds label text.
  std::optional<TfidfVocab> label_vocab;

  void save(const std::filesystem::path& dir) const;
  static Vectorizers load(const std::filesystem::path& dir);
};

// Token vocabulary over train previous queries, character vocabulary over
// train prefixes, label-text vocabulary over train labels.
Vectorizers fit_vectorizers(std::span<const QueryTriplet> train, const LabelVocab& labels, const PipelineConfig& config);

// Encoded training inputs. Triplets whose next query is not a label are
// skipped.
struct EncodedExamples {
  SparseMatrix inputs;
  std::vector<uint32_t> label_ids;
};
EncodedExamples encode_examples(const InputEncoder& encoder, std::span<const QueryTriplet> triplets, const LabelVocab& labels,
                                unsigned threads = 0);

LabelEmbeddings embed_labels(const PipelineConfig& config, const Vectorizers& vec, const EncodedExamples& train,
                             const LabelVocab& labels);

struct FitTimings {
  double vectorize_seconds = 0.0;
  double embed_seconds = 0.0;
  double index_seconds = 0.0;
  double train_seconds = 0.0;
  TrainStats train;

  double build_seconds() const { return index_seconds + train_seconds; }
  double total_seconds() const { return vectorize_seconds + embed_seconds + index_seconds + train_seconds; }
};

// Encoder, tree model and the MFQ fallback, as served.
class QacModel {
 public:
  QacModel() = default;
  QacModel(PipelineConfig config, Vectorizers vectorizers, TreeModel model, MfqIndex mfq);

  static QacModel fit(std::span<const QueryTriplet> train, const LabelVocab& labels, const PipelineConfig& config,
                      FitTimings* timings = nullptr);

  // Normalizes both strings, encodes and runs beam search.
  SuggestionList suggest(std::string_view prev_query, std::string_view prefix, uint32_t beam, uint32_t k,
                         PredictStats* stats = nullptr) const;
  // Same, for inputs that are already normalized.
  SuggestionList suggest_normalized(std::string_view prev_query, std::string_view prefix, uint32_t beam, uint32_t k,
                                    PredictStats* stats = nullptr) const;

  const PipelineConfig& config() const { return config_; }
  const InputEncoder& encoder() const { return vectorizers_.encoder; }
  const Vectorizers& vectorizers() const { return vectorizers_; }
  const TreeModel& tree_model() const { return model_; }
  const MfqIndex& mfq() const { return mfq_; }

  // Model files plus encoder files, config.json and mfq.tsv.
  void save(const std::filesystem::path& dir) const;
  static QacModel load(const std::filesystem::path& dir);

 private:
  PipelineConfig config_;
  Vectorizers vectorizers_;
  TreeModel model_;
  MfqIndex mfq_;
};

struct EvalOptions {
  uint32_t k = kEvalK;
  uint32_t beam = 10;
  bool baseline = true;
  bool latency = true;
  // Untimed predictions run before measurement starts.
  size_t warmup = 100;
  // Cap on timed predictions; 0 times every example (repeating the set when
  // it holds fewer than the minimum sample count).
  size_t max_latency_samples = 0;
  unsigned threads = 0;
};

// Metrics of the model (and optionally the MFQ baseline) on `test`.
// Coverage is the fraction of test next queries that are model labels.
EvalReport evaluate(const QacModel& model, std::span<const QueryTriplet> test, const EvalOptions& options);

// Restricts to examples whose next query is a model label.
std::vector<QueryTriplet> seen_subset(const QacModel& model, std::span<const QueryTriplet> test);

}  // namespace prefx
