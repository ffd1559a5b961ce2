#include "prefx/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace prefx {

uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

uint64_t hash_string(std::string_view s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

LabelVocab::LabelVocab(std::vector<std::string> labels) {
  for (auto& l : labels) {
    if (ids_.count(l)) throw Error("label vocabulary: duplicate label '" + l + "'");
    ids_.emplace(l, static_cast<uint32_t>(labels_.size()));
    labels_.push_back(std::move(l));
  }
}

uint32_t LabelVocab::add(const std::string& label) {
  auto [it, inserted] = ids_.emplace(label, static_cast<uint32_t>(labels_.size()));
  if (inserted) labels_.push_back(label);
  return it->second;
}

std::optional<uint32_t> LabelVocab::find(std::string_view label) const {
  auto it = ids_.find(std::string(label));
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

void LabelVocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open for writing: " + path.string());
  for (const auto& l : labels_) out << l << '\n';
  if (!out) throw Error("write failed: " + path.string());
}

LabelVocab LabelVocab::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open label vocabulary: " + path.string());
  std::vector<std::string> labels;
  std::string line;
  while (std::getline(in, line)) labels.push_back(line);
  return LabelVocab(std::move(labels));
}

std::string_view to_string(SplitName s) {
  switch (s) {
    case SplitName::train: return "train";
    case SplitName::dev: return "dev";
    case SplitName::test: return "test";
  }
  return "?";
}

namespace {

std::string normalize_text(std::string_view raw, bool keep_trailing_space) {
  std::string out;
  out.reserve(raw.size());
  bool pending_space = false;
  for (char ch : raw) {
    unsigned char c = static_cast<unsigned char>(ch);
    if (c >= 'A' && c <= 'Z') c = static_cast<unsigned char>(c - 'A' + 'a');
    if (c == '.' || c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v') {
      pending_space = !out.empty();
      continue;
    }
    if ((c >= 'a' && c <= 'z') || (c >= '0' && c <= '9')) {
      if (pending_space) out.push_back(' ');
      pending_space = false;
      out.push_back(static_cast<char>(c));
    }
  }
  if (keep_trailing_space && pending_space) out.push_back(' ');
  return out;
}

}  // namespace

std::string normalize_query(std::string_view raw) { return normalize_text(raw, false); }

std::string normalize_prefix(std::string_view raw) { return normalize_text(raw, true); }

void sort_records(std::vector<LogRecord>& records) {
  std::stable_sort(records.begin(), records.end(), [](const LogRecord& a, const LogRecord& b) {
    if (a.user_id != b.user_id) return a.user_id < b.user_id;
    return a.timestamp < b.timestamp;
  });
}

std::vector<LogRecord> parse_log_tsv(std::istream& in) {
  std::vector<LogRecord> records;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    size_t t1 = line.find('\t');
    size_t t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
    if (t2 == std::string::npos) throw Error("log line " + std::to_string(line_no) + ": expected 3 tab-separated fields");
    std::string_view ts_field(line.data() + t2 + 1, line.size() - t2 - 1);
    int64_t ts = 0;
    auto [ptr, ec] = std::from_chars(ts_field.data(), ts_field.data() + ts_field.size(), ts);
    if (ec != std::errc() || ptr != ts_field.data() + ts_field.size() || ts < 0) {
      throw Error("log line " + std::to_string(line_no) + ": bad timestamp '" + std::string(ts_field) + "'");
    }
    std::string query = normalize_query(std::string_view(line).substr(t1 + 1, t2 - t1 - 1));
    if (query.empty()) continue;
    records.push_back({line.substr(0, t1), std::move(query), ts});
  }
  sort_records(records);
  return records;
}

std::vector<LogRecord> read_log_tsv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open log file: " + path.string());
  return parse_log_tsv(in);
}

void write_log_tsv(const std::filesystem::path& path, std::span<const LogRecord> records) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open for writing: " + path.string());
  for (const auto& r : records) out << r.user_id << '\t' << r.query << '\t' << r.timestamp << '\n';
  if (!out) throw Error("write failed: " + path.string());
}

std::vector<Session> split_sessions(std::span<const LogRecord> records) {
  std::vector<Session> sessions;
  const LogRecord* prev = nullptr;
  for (const auto& r : records) {
    bool new_session = prev == nullptr || r.user_id != prev->user_id || r.timestamp - prev->timestamp >= kSessionGapSeconds;
    if (new_session) {
      sessions.push_back({r.user_id, {}});
    }
    auto& qs = sessions.back().queries;
    // repeat of the previous query: keep one, latest timestamp
    if (!qs.empty() && qs.back().query == r.query) {
      qs.back().timestamp = r.timestamp;
    } else {
      qs.push_back({r.query, r.timestamp});
    }
    prev = &r;
  }
  return sessions;
}

uint64_t session_seed(uint64_t seed, const Session& session) {
  uint64_t h = mix_seed(seed, hash_string(session.user_id));
  return mix_seed(h, static_cast<uint64_t>(session.start()));
}

std::vector<QueryTriplet> make_triplets(const Session& session, uint64_t seed) {
  std::vector<QueryTriplet> out;
  if (session.queries.size() < 2) return out;
  out.reserve(session.queries.size() - 1);
  for (size_t i = 0; i + 1 < session.queries.size(); ++i) {
    const std::string& next = session.queries[i + 1].query;
    uint64_t r = splitmix64(seed + i);
    size_t len = 1 + static_cast<size_t>(r % next.size());
    out.push_back({session.queries[i].query, next.substr(0, len), next});
  }
  return out;
}

TemporalSplit temporal_split(std::span<const Session> sessions, int64_t train_end, int64_t dev_end, uint64_t seed) {
  if (train_end > dev_end) throw Error("temporal split: boundaries out of order");
  TemporalSplit split;
  for (const auto& s : sessions) {
    if (s.queries.empty()) continue;
    DatasetSplit* target = nullptr;
    if (s.start() < train_end) {
      target = &split.train;
      ++split.train_sessions;
    } else if (s.start() < dev_end) {
      target = &split.dev;
      ++split.dev_sessions;
    } else {
      target = &split.test;
      ++split.test_sessions;
    }
    auto ts = make_triplets(s, session_seed(seed, s));
    target->triplets.insert(target->triplets.end(), std::make_move_iterator(ts.begin()), std::make_move_iterator(ts.end()));
  }
  if (split.train.triplets.empty() || split.dev.triplets.empty() || split.test.triplets.empty()) {
    throw Error("temporal split: boundaries leave an empty split (train=" + std::to_string(split.train.triplets.size()) +
                ", dev=" + std::to_string(split.dev.triplets.size()) + ", test=" + std::to_string(split.test.triplets.size()) + ")");
  }
  for (const auto& t : split.train.triplets) split.labels.add(t.next_query);
  size_t seen = 0;
  for (const auto& t : split.test.triplets) seen += split.labels.contains(t.next_query) ? 1 : 0;
  split.coverage = static_cast<double>(seen) / static_cast<double>(split.test.triplets.size());
  return split;
}

void write_triplets_jsonl(const std::filesystem::path& path, std::span<const QueryTriplet> triplets) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open for writing: " + path.string());
  for (const auto& t : triplets) {
    nlohmann::ordered_json j;
    j["prev_query"] = t.prev_query;
    j["prefix"] = t.prefix;
    j["next_query"] = t.next_query;
    out << j.dump() << '\n';
  }
  if (!out) throw Error("write failed: " + path.string());
}

std::vector<QueryTriplet> read_triplets_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open triplet file: " + path.string());
  std::vector<QueryTriplet> out;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      auto j = nlohmann::json::parse(line);
      out.push_back({j.at("prev_query").get<std::string>(), j.at("prefix").get<std::string>(), j.at("next_query").get<std::string>()});
    } catch (const nlohmann::json::exception& e) {
      throw Error(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

void write_split_dir(const std::filesystem::path& dir, const TemporalSplit& split) {
  std::filesystem::create_directories(dir);
  write_triplets_jsonl(dir / "train.jsonl", split.train.triplets);
  write_triplets_jsonl(dir / "dev.jsonl", split.dev.triplets);
  write_triplets_jsonl(dir / "test.jsonl", split.test.triplets);
  split.labels.save(dir / "labels.txt");
}

TemporalSplit read_split_dir(const std::filesystem::path& dir) {
  TemporalSplit split;
  split.train.triplets = read_triplets_jsonl(dir / "train.jsonl");
  split.dev.triplets = read_triplets_jsonl(dir / "dev.jsonl");
  split.test.triplets = read_triplets_jsonl(dir / "test.jsonl");
  split.labels = LabelVocab::load(dir / "labels.txt");
  if (!split.test.triplets.empty()) {
    size_t seen = 0;
    for (const auto& t : split.test.triplets) seen += split.labels.contains(t.next_query) ? 1 : 0;
    split.coverage = static_cast<double>(seen) / static_cast<double>(split.test.triplets.size());
  }
  return split;
}

}  // namespace prefx
