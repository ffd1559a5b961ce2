#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "prefx/corpus.hpp"

namespace prefx {

// Calendar boundaries of the generated log (UTC).
inline constexpr int64_t kSynthStart = 1141171200;     // 2006-03-01
inline constexpr int64_t kSynthTrainEnd = 1147737600;  // 2006-05-16
inline constexpr int64_t kSynthDevEnd = 1148428800;    // 2006-05-24
inline constexpr int64_t kSynthEnd = 1149120000;       // 2006-06-01

// Topical search-log generator. Each topic owns a few head terms; its queries
// combine a head with shared modifiers placed before or after it. Each next
// query in a session keeps the topic, hops to a linked topic or jumps to a
// random one, and a share of queries are one-off tail queries.
struct SynthParams {
  uint32_t sessions = 1000;
  uint32_t sessions_per_user = 4;
  uint32_t topics = 1000;
  uint32_t queries_per_topic = 40;
  uint32_t modifiers = 150;
  double topic_zipf = 1.0;
  double query_zipf = 1.1;
  double stay_on_topic = 0.35;
  double linked_topic = 0.2;
  double tail_query = 0.3;
  // Chance a session ends after each query; mean length 1 + (1 - p) / p.
  double session_end_p = 0.4;
  uint64_t seed = 0;
};

// Records sorted by (user_id, timestamp).
std::vector<LogRecord> synth_log(const SynthParams& params);

// n distinct queries shaped like the log's topic queries, grouped by topic
// with at most `per_topic` per group.
std::vector<std::vector<std::string>> synth_topic_queries(uint32_t n, uint32_t per_topic, uint64_t seed);

}  // namespace prefx
