#include "prefx/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <openssl/evp.h>

#include "prefx/vectorize.hpp"

namespace prefx {

RankedQueries to_ranked(const SuggestionList& list) {
  RankedQueries out;
  out.reserve(list.size());
  for (const auto& s : list) out.push_back(s.query);
  return out;
}

uint32_t rank_of(const RankedQueries& list, std::string_view truth, uint32_t k) {
  const size_t n = std::min<size_t>(k, list.size());
  for (size_t j = 0; j < n; ++j) {
    if (list[j] == truth) return static_cast<uint32_t>(j + 1);
  }
  return 0;
}

double mrr(std::span<const RankedQueries> predictions, std::span<const std::string> truths, uint32_t k) {
  if (predictions.empty()) throw Error("mrr: empty evaluation set");
  if (predictions.size() != truths.size()) throw Error("mrr: predictions and truths differ in length");
  double sum = 0.0;
  for (size_t i = 0; i < predictions.size(); ++i) {
    uint32_t r = rank_of(predictions[i], truths[i], k);
    if (r > 0) sum += 1.0 / r;
  }
  return sum / static_cast<double>(predictions.size());
}

double sentence_bleu(std::string_view reference, std::string_view hypothesis) {
  auto ref = tokenize(reference);
  auto hyp = tokenize(hypothesis);
  if (hyp.empty() || ref.empty()) return 0.0;
  const size_t order = std::min<size_t>({4, hyp.size(), ref.size()});
  double log_sum = 0.0;
  for (size_t n = 1; n <= order; ++n) {
    std::map<std::vector<std::string_view>, int> ref_counts;
    for (size_t i = 0; i + n <= ref.size(); ++i) ++ref_counts[{ref.begin() + i, ref.begin() + i + n}];
    std::map<std::vector<std::string_view>, int> hyp_counts;
    for (size_t i = 0; i + n <= hyp.size(); ++i) ++hyp_counts[{hyp.begin() + i, hyp.begin() + i + n}];
    int matched = 0;
    for (const auto& [g, c] : hyp_counts) {
      auto it = ref_counts.find(g);
      if (it != ref_counts.end()) matched += std::min(c, it->second);
    }
    const double total = static_cast<double>(hyp.size() - n + 1);
    const double p = matched > 0 ? matched / total : 0.1 / total;
    log_sum += std::log(p);
  }
  const double c = static_cast<double>(hyp.size());
  const double r = static_cast<double>(ref.size());
  const double bp = c < r ? std::exp(1.0 - r / c) : 1.0;
  return bp * std::exp(log_sum / static_cast<double>(order));
}

double bleu_rr_with(std::span<const RankedQueries> predictions, std::span<const std::string> truths, uint32_t k,
                    const SimilarityFn& similarity) {
  if (predictions.empty()) throw Error("bleu_rr: empty evaluation set");
  if (predictions.size() != truths.size()) throw Error("bleu_rr: predictions and truths differ in length");
  double norm = 0.0;
  for (uint32_t j = 1; j <= k; ++j) norm += 1.0 / j;
  double sum = 0.0;
  for (size_t i = 0; i < predictions.size(); ++i) {
    double s = 0.0;
    const size_t n = std::min<size_t>(k, predictions[i].size());
    for (size_t j = 0; j < n; ++j) s += similarity(truths[i], predictions[i][j]) / static_cast<double>(j + 1);
    sum += s / norm;
  }
  return sum / static_cast<double>(predictions.size());
}

double bleu_rr(std::span<const RankedQueries> predictions, std::span<const std::string> truths, uint32_t k) {
  return bleu_rr_with(predictions, truths, k, [](std::string_view r, std::string_view h) { return sentence_bleu(r, h); });
}

// ---------------------------------------------------------------------------
// MFQ

MfqIndex MfqIndex::build(std::span<const QueryTriplet> train, uint32_t k) {
  std::map<std::string, uint64_t> counts;
  for (const auto& t : train) ++counts[t.next_query];
  return from_counts({counts.begin(), counts.end()}, k);
}

MfqIndex MfqIndex::from_counts(std::vector<std::pair<std::string, uint64_t>> counts, uint32_t k) {
  if (k == 0) throw Error("mfq: k must be at least 1");
  std::sort(counts.begin(), counts.end());
  MfqIndex idx;
  idx.k_ = k;
  for (auto& [q, c] : counts) {
    if (!idx.queries_.empty() && idx.queries_.back() == q) {
      idx.freq_.back() += c;
      continue;
    }
    idx.queries_.push_back(std::move(q));
    idx.freq_.push_back(c);
  }
  if (!idx.queries_.empty()) {
    idx.nodes_.emplace_back();
    idx.build_node(0, 0, 0, static_cast<uint32_t>(idx.queries_.size()), 0);
  }
  return idx;
}

void MfqIndex::build_node(uint32_t id, uint32_t depth, uint32_t lo, uint32_t hi, char edge) {
  nodes_[id] = Node{0, 0, 0, 0, lo, hi, edge};
  if (hi - lo == 1) {
    nodes_[id].top_begin = static_cast<uint32_t>(tops_.size());
    nodes_[id].top_count = 1;
    tops_.push_back(lo);
    return;
  }

  std::vector<uint32_t> cand;
  uint32_t i = lo;
  if (queries_[lo].size() == depth) {
    cand.push_back(lo);
    ++i;
  }
  std::vector<std::pair<uint32_t, uint32_t>> ranges;
  while (i < hi) {
    char c = queries_[i][depth];
    uint32_t j = i;
    while (j < hi && queries_[j][depth] == c) ++j;
    ranges.emplace_back(i, j);
    i = j;
  }
  // Children occupy a contiguous block of node ids.
  const auto first = static_cast<uint32_t>(nodes_.size());
  nodes_[id].first_child = first;
  nodes_[id].child_count = static_cast<uint32_t>(ranges.size());
  nodes_.resize(nodes_.size() + ranges.size());
  for (size_t r = 0; r < ranges.size(); ++r) {
    const auto slot = static_cast<uint32_t>(first + r);
    build_node(slot, depth + 1, ranges[r].first, ranges[r].second, queries_[ranges[r].first][depth]);
    const Node& child = nodes_[slot];
    cand.insert(cand.end(), tops_.begin() + child.top_begin, tops_.begin() + child.top_begin + child.top_count);
  }
  auto by_freq = [&](uint32_t a, uint32_t b) {
    if (freq_[a] != freq_[b]) return freq_[a] > freq_[b];
    return a < b;
  };
  const size_t keep = std::min<size_t>(k_, cand.size());
  std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(keep), cand.end(), by_freq);
  nodes_[id].top_begin = static_cast<uint32_t>(tops_.size());
  nodes_[id].top_count = static_cast<uint32_t>(keep);
  tops_.insert(tops_.end(), cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(keep));
}

std::vector<std::pair<std::string, uint64_t>> MfqIndex::lookup(std::string_view prefix) const {
  std::vector<std::pair<std::string, uint64_t>> out;
  if (nodes_.empty()) return out;
  uint32_t id = 0;
  for (size_t depth = 0; depth < prefix.size(); ++depth) {
    const Node& n = nodes_[id];
    if (n.child_count == 0) {
      // Unexpanded single-query node: the query must carry the rest of the prefix.
      if (!std::string_view(queries_[n.lo]).starts_with(prefix)) return out;
      break;
    }
    uint32_t next = UINT32_MAX;
    for (uint32_t c = n.first_child; c < n.first_child + n.child_count; ++c) {
      if (nodes_[c].edge == prefix[depth]) {
        next = c;
        break;
      }
    }
    if (next == UINT32_MAX) return out;
    id = next;
  }
  const Node& n = nodes_[id];
  if (n.child_count == 0 && !std::string_view(queries_[n.lo]).starts_with(prefix)) return out;
  for (uint32_t t = n.top_begin; t < n.top_begin + n.top_count; ++t) out.emplace_back(queries_[tops_[t]], freq_[tops_[t]]);
  return out;
}

RankedQueries MfqIndex::suggest(std::string_view prefix) const {
  RankedQueries out;
  for (auto& [q, f] : lookup(prefix)) out.push_back(std::move(q));
  return out;
}

uint64_t MfqIndex::frequency(std::string_view query) const {
  auto it = std::lower_bound(queries_.begin(), queries_.end(), query, [](const std::string& a, std::string_view b) { return a < b; });
  if (it == queries_.end() || *it != query) return 0;
  return freq_[static_cast<size_t>(it - queries_.begin())];
}

void MfqIndex::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open for writing: " + path.string());
  for (size_t i = 0; i < queries_.size(); ++i) out << queries_[i] << '\t' << freq_[i] << '\n';
  if (!out) throw Error("write failed: " + path.string());
}

MfqIndex MfqIndex::load(const std::filesystem::path& path, uint32_t k) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open query counts: " + path.string());
  std::vector<std::pair<std::string, uint64_t>> counts;
  std::string line;
  while (std::getline(in, line)) {
    size_t tab = line.rfind('\t');
    if (tab == std::string::npos) throw Error("query counts: malformed line in " + path.string());
    counts.emplace_back(line.substr(0, tab), std::stoull(line.substr(tab + 1)));
  }
  return from_counts(std::move(counts), k);
}

// ---------------------------------------------------------------------------
// Latency and buckets

double nearest_rank_percentile(std::vector<double> samples, double p) {
  if (samples.empty()) throw Error("percentile: no samples");
  std::sort(samples.begin(), samples.end());
  auto rank = static_cast<size_t>(std::ceil(p / 100.0 * static_cast<double>(samples.size())));
  rank = std::clamp<size_t>(rank, 1, samples.size());
  return samples[rank - 1];
}

LatencySummary latency_percentiles(std::span<const double> samples_ms) {
  if (samples_ms.size() < kMinLatencySamples) {
    throw Error("latency: need at least " + std::to_string(kMinLatencySamples) + " samples, got " + std::to_string(samples_ms.size()));
  }
  std::vector<double> s(samples_ms.begin(), samples_ms.end());
  return {nearest_rank_percentile(s, 50.0), nearest_rank_percentile(s, 99.0)};
}

std::vector<uint64_t> default_bucket_edges(BucketAxis axis) {
  if (axis == BucketAxis::prefix_length) return {1, 2, 3, 4, 5, 6, 7};
  return {0, 1, 4, 16, 64, 256, 1024, 2048};
}

std::vector<Bucket> bucket_report(std::span<const ExampleOutcome> outcomes, BucketAxis axis, std::span<const uint64_t> edges) {
  if (edges.empty()) throw Error("bucket_report: no band edges");
  for (size_t i = 1; i < edges.size(); ++i) {
    if (edges[i] <= edges[i - 1]) throw Error("bucket_report: band edges must increase");
  }
  std::vector<Bucket> bands;
  const bool has_low = edges[0] > 0;
  if (has_low) bands.push_back({"<" + std::to_string(edges[0]), 0, edges[0], 0, std::nullopt, 0.0});
  for (size_t i = 0; i < edges.size(); ++i) {
    Bucket b;
    b.lo = edges[i];
    if (i + 1 < edges.size()) {
      b.hi = edges[i + 1];
      b.key = edges[i + 1] == edges[i] + 1 ? std::to_string(edges[i]) : std::to_string(edges[i]) + "-" + std::to_string(edges[i + 1] - 1);
    } else {
      b.key = std::to_string(edges[i]) + "+";
    }
    bands.push_back(b);
  }
  std::vector<double> rr_sum(bands.size(), 0.0);
  for (const auto& o : outcomes) {
    const uint64_t v = axis == BucketAxis::prefix_length ? o.prefix_length : o.truth_frequency;
    size_t band = 0;
    if (v < edges[0]) {
      band = 0;
    } else {
      size_t i = static_cast<size_t>(std::upper_bound(edges.begin(), edges.end(), v) - edges.begin()) - 1;
      band = i + (has_low ? 1 : 0);
    }
    ++bands[band].count;
    if (o.rank > 0) rr_sum[band] += 1.0 / o.rank;
  }
  for (size_t b = 0; b < bands.size(); ++b) {
    if (bands[b].count > 0) bands[b].mrr = rr_sum[b] / static_cast<double>(bands[b].count);
    bands[b].fraction = outcomes.empty() ? 0.0 : static_cast<double>(bands[b].count) / static_cast<double>(outcomes.size());
  }
  if (has_low && bands[0].count == 0) bands.erase(bands.begin());
  return bands;
}

namespace {

nlohmann::ordered_json buckets_json(const std::vector<Bucket>& bands) {
  auto arr = nlohmann::ordered_json::array();
  for (const auto& b : bands) {
    nlohmann::ordered_json j;
    j["band"] = b.key;
    j["count"] = b.count;
    j["mrr"] = b.mrr ? nlohmann::ordered_json(*b.mrr) : nlohmann::ordered_json(nullptr);
    j["fraction"] = b.fraction;
    arr.push_back(std::move(j));
  }
  return arr;
}

nlohmann::ordered_json method_json(const MethodMetrics& m, bool with_examples) {
  nlohmann::ordered_json j;
  j["mrr"] = m.mrr;
  j["bleu_rr"] = m.bleu_rr;
  j["latency_p50_ms"] = m.latency.p50;
  j["latency_p99_ms"] = m.latency.p99;
  auto pl = default_bucket_edges(BucketAxis::prefix_length);
  auto lf = default_bucket_edges(BucketAxis::label_frequency);
  std::vector<ExampleOutcome> seen;
  for (const auto& o : m.outcomes) {
    if (o.seen) seen.push_back(o);
  }
  j["buckets"] = {{"prefix_length", buckets_json(bucket_report(m.outcomes, BucketAxis::prefix_length, pl))},
                  {"label_frequency_seen", buckets_json(bucket_report(seen, BucketAxis::label_frequency, lf))}};
  if (with_examples) {
    auto ex = nlohmann::ordered_json::array();
    for (const auto& o : m.outcomes) ex.push_back({o.prefix_length, o.truth_frequency, o.rank});
    j["examples"] = {{"fields", {"prefix_length", "truth_frequency", "rank"}}, {"rows", std::move(ex)}};
  }
  return j;
}

}  // namespace

nlohmann::json EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["format"] = "prefx-eval-report/1";
  j["k"] = k;
  j["beam"] = beam;
  j["examples"] = examples;
  j["coverage"] = coverage;
  j["config_fingerprint"] = config_fingerprint;
  j["model_hash"] = model_hash;
  j["model"] = method_json(model, true);
  if (baseline) j["baseline_mfq"] = method_json(*baseline, true);
  return nlohmann::json::parse(j.dump());
}

// ---------------------------------------------------------------------------
// Hashing

std::string sha1_raw(std::string_view data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx) throw Error("sha1: allocation failed");
  EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr);
  EVP_DigestUpdate(ctx, data.data(), data.size());
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  return std::string(reinterpret_cast<const char*>(md), len);
}

std::string sha1_hex(std::string_view data) {
  static const char* digits = "0123456789abcdef";
  std::string raw = sha1_raw(data), hex;
  for (unsigned char c : raw) {
    hex.push_back(digits[c >> 4]);
    hex.push_back(digits[c & 15]);
  }
  return hex;
}

std::string directory_content_hash(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_regular_file()) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end(), [](const auto& a, const auto& b) { return a.filename().string() < b.filename().string(); });
  std::string tree;
  for (const auto& f : files) {
    std::ifstream in(f, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    std::string content = ss.str();
    std::string blob = "blob " + std::to_string(content.size()) + '\0' + content;
    tree += "100644 " + f.filename().string() + '\0' + sha1_raw(blob);
  }
  return sha1_hex("tree " + std::to_string(tree.size()) + '\0' + tree);
}

}  // namespace prefx
