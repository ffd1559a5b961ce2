#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "prefx/sparse.hpp"

namespace prefx {

// Idle gap (seconds) that closes a session.
inline constexpr int64_t kSessionGapSeconds = 1800;

struct LogRecord {
  std::string user_id;
  std::string query;
  int64_t timestamp = 0;
};

struct TimedQuery {
  std::string query;
  int64_t timestamp = 0;
};

struct Session {
  std::string user_id;
  std::vector<TimedQuery> queries;

  int64_t start() const { return queries.front().timestamp; }
};

struct QueryTriplet {
  std::string prev_query;
  std::string prefix;
  std::string next_query;

  bool operator==(const QueryTriplet&) const = default;
};

// Dense label ids over the distinct train next-queries, in first-seen order.
class LabelVocab {
 public:
  LabelVocab() = default;
  explicit LabelVocab(std::vector<std::string> labels);

  // Returns the id, adding the label if new.
  uint32_t add(const std::string& label);
  std::optional<uint32_t> find(std::string_view label) const;
  bool contains(std::string_view label) const { return find(label).has_value(); }

  const std::string& label(uint32_t id) const { return labels_.at(id); }
  const std::vector<std::string>& labels() const { return labels_; }
  uint32_t size() const { return static_cast<uint32_t>(labels_.size()); }

  // One label per line; line number (0-based) is the label id.
  void save(const std::filesystem::path& path) const;
  static LabelVocab load(const std::filesystem::path& path);

 private:
  std::vector<std::string> labels_;
  std::unordered_map<std::string, uint32_t> ids_;
};

enum class SplitName { train, dev, test };
std::string_view to_string(SplitName s);

struct DatasetSplit {
  SplitName name = SplitName::train;
  std::vector<QueryTriplet> triplets;
};

struct TemporalSplit {
  DatasetSplit train{SplitName::train, {}};
  DatasetSplit dev{SplitName::dev, {}};
  DatasetSplit test{SplitName::test, {}};
  LabelVocab labels;
  // Fraction of test triplets whose next query is in the train label vocabulary.
  double coverage = 0.0;
  size_t train_sessions = 0, dev_sessions = 0, test_sessions = 0;
};

// Lowercases, maps '.' to ' ', drops everything outside [a-z0-9 ], collapses
// whitespace runs and trims. Returns "" when nothing survives.
std::string normalize_query(std::string_view raw);
// As normalize_query, but a trailing separator survives as one space: the
// typed prefix "nike " only matches queries with a word after "nike".
std::string normalize_prefix(std::string_view raw);

// Parses `user \t query \t epoch_seconds` lines. Queries are normalized on
// ingestion and records that normalize to nothing are dropped. The result is
// sorted by (user_id, timestamp), stable within equal keys.
std::vector<LogRecord> read_log_tsv(const std::filesystem::path& path);
std::vector<LogRecord> parse_log_tsv(std::istream& in);
void write_log_tsv(const std::filesystem::path& path, std::span<const LogRecord> records);

// Sorts records into the order split_sessions expects.
void sort_records(std::vector<LogRecord>& records);

// Records must be sorted by (user_id, timestamp). Queries are expected to be
// normalized already.
std::vector<Session> split_sessions(std::span<const LogRecord> records);

// k-1 triplets for a session of k queries. Deterministic given the seed.
std::vector<QueryTriplet> make_triplets(const Session& session, uint64_t seed);

// Seed for one session's triplets; depends only on the global seed and the
// session identity, so output does not depend on session order.
uint64_t session_seed(uint64_t seed, const Session& session);

// Assigns each session by its first timestamp: [.., train_end) → train,
// [train_end, dev_end) → dev, [dev_end, ..) → test.
TemporalSplit temporal_split(std::span<const Session> sessions, int64_t train_end, int64_t dev_end, uint64_t seed);

void write_triplets_jsonl(const std::filesystem::path& path, std::span<const QueryTriplet> triplets);
std::vector<QueryTriplet> read_triplets_jsonl(const std::filesystem::path& path);

// Writes train.jsonl, dev.jsonl, test.jsonl and labels.txt into `dir`.
void write_split_dir(const std::filesystem::path& dir, const TemporalSplit& split);
TemporalSplit read_split_dir(const std::filesystem::path& dir);

// 64-bit mixing used for seed derivation throughout the library.
uint64_t splitmix64(uint64_t x);
uint64_t hash_string(std::string_view s);
inline uint64_t mix_seed(uint64_t seed, uint64_t salt) { return splitmix64(seed ^ splitmix64(salt + 0x9e3779b97f4a7c15ULL)); }

}  // namespace prefx
