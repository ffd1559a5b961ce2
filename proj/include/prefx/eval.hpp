#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "prefx/corpus.hpp"
#include "prefx/model.hpp"

namespace prefx {

// Default evaluation cutoff.
inline constexpr uint32_t kEvalK = 10;

using RankedQueries = std::vector<std::string>;

RankedQueries to_ranked(const SuggestionList& list);

// 1-based rank of `truth` within the first k entries, or 0 when absent.
uint32_t rank_of(const RankedQueries& list, std::string_view truth, uint32_t k);

double mrr(std::span<const RankedQueries> predictions, std::span<const std::string> truths, uint32_t k = kEvalK);

// Sentence BLEU over whitespace tokens with uniform weights on n-gram orders
// 1..N, N = min(4, |hyp|, |ref|), smoothing method 1 (epsilon 0.1 added to
// zero matched counts) and the standard brevity penalty. An empty hypothesis
// scores 0.
double sentence_bleu(std::string_view reference, std::string_view hypothesis);

using SimilarityFn = std::function<double(std::string_view reference, std::string_view hypothesis)>;

// Per example: sum_j (1/j) sim(truth, s_j) / sum_j (1/j) over j = 1..k, with
// missing slots contributing 0; averaged over examples.
double bleu_rr(std::span<const RankedQueries> predictions, std::span<const std::string> truths, uint32_t k = kEvalK);
double bleu_rr_with(std::span<const RankedQueries> predictions, std::span<const std::string> truths, uint32_t k,
                    const SimilarityFn& similarity);

// Most-frequent-query baseline: a trie over train next queries where every
// node caches the k most frequent queries beneath it (ties in lexicographic
// order). Nodes holding a single query are not expanded further.
class MfqIndex {
 public:
  MfqIndex() = default;

  static MfqIndex build(std::span<const QueryTriplet> train, uint32_t k);
  static MfqIndex from_counts(std::vector<std::pair<std::string, uint64_t>> counts, uint32_t k);

  // Top-k (query, frequency) pairs whose query starts with `prefix`.
  std::vector<std::pair<std::string, uint64_t>> lookup(std::string_view prefix) const;
  RankedQueries suggest(std::string_view prefix) const;

  uint64_t frequency(std::string_view query) const;
  uint32_t k() const { return k_; }
  size_t num_queries() const { return queries_.size(); }
  size_t num_nodes() const { return nodes_.size(); }

  // query \t count lines, sorted by query.
  void save(const std::filesystem::path& path) const;
  static MfqIndex load(const std::filesystem::path& path, uint32_t k);

 private:
  struct Node {
    uint32_t first_child = 0;
    uint32_t child_count = 0;
    uint32_t top_begin = 0;
    uint32_t top_count = 0;
    uint32_t lo = 0, hi = 0;  // range of sorted queries below this node
    char edge = 0;
  };

  void build_node(uint32_t id, uint32_t depth, uint32_t lo, uint32_t hi, char edge);

  uint32_t k_ = kEvalK;
  std::vector<std::string> queries_;  // sorted
  std::vector<uint64_t> freq_;
  std::vector<Node> nodes_;
  std::vector<uint32_t> tops_;
};

// Latency percentiles by nearest rank: the p-th percentile is the sample at
// 1-based rank ceil(p/100 * n) of the sorted samples.
struct LatencySummary {
  double p50 = 0.0;
  double p99 = 0.0;
};
inline constexpr size_t kMinLatencySamples = 100;
LatencySummary latency_percentiles(std::span<const double> samples_ms);
double nearest_rank_percentile(std::vector<double> samples, double p);

// Per-example metadata kept so reports can be re-bucketed without re-running.
struct ExampleOutcome {
  uint32_t prefix_length = 0;
  uint64_t truth_frequency = 0;  // count of the truth among train next queries
  uint32_t rank = 0;             // 0 when the truth is not in the top k
  bool seen = false;             // truth is a train label
};

enum class BucketAxis { prefix_length, label_frequency };

struct Bucket {
  std::string key;
  uint64_t lo = 0;
  std::optional<uint64_t> hi;  // exclusive; open-ended when absent
  uint64_t count = 0;
  std::optional<double> mrr;  // null for empty bands
  double fraction = 0.0;      // share of all examples
};

// Band i covers [edges[i], edges[i+1]); the last band is open-ended. Values
// below edges[0] are reported in a leading "<edges[0]" band when present.
std::vector<Bucket> bucket_report(std::span<const ExampleOutcome> outcomes, BucketAxis axis, std::span<const uint64_t> edges);
std::vector<uint64_t> default_bucket_edges(BucketAxis axis);

struct MethodMetrics {
  double mrr = 0.0;
  double bleu_rr = 0.0;
  LatencySummary latency;
  std::vector<ExampleOutcome> outcomes;
};

struct EvalReport {
  MethodMetrics model;
  std::optional<MethodMetrics> baseline;  // MFQ
  double coverage = 0.0;
  uint32_t k = kEvalK;
  uint32_t beam = 0;
  uint64_t examples = 0;
  std::string config_fingerprint;
  std::string model_hash;

  nlohmann::json to_json() const;
};

// Git-style content hash of a directory: SHA-1 of a tree object whose entries
// are the SHA-1 blob hashes of the regular files, in name order.
std::string directory_content_hash(const std::filesystem::path& dir);
std::string sha1_hex(std::string_view data);

}  // namespace prefx
