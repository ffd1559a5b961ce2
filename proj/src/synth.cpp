#include "prefx/synth.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <string>

namespace prefx {

namespace {

std::vector<double> zipf_weights(size_t n, double s) {
  std::vector<double> w(n);
  for (size_t i = 0; i < n; ++i) w[i] = 1.0 / std::pow(static_cast<double>(i + 1), s);
  return w;
}

class WordMaker {
 public:
  explicit WordMaker(std::mt19937_64& rng) : rng_(rng) {}

  std::string make(int min_syllables, int max_syllables) {
    static constexpr std::string_view consonants = "bcdfghjklmnprstvwz";
    static constexpr std::string_view vowels = "aeiou";
    for (;;) {
      std::uniform_int_distribution<int> len(min_syllables, max_syllables);
      std::string w;
      for (int s = len(rng_); s > 0; --s) {
        w += consonants[pick(consonants.size())];
        w += vowels[pick(vowels.size())];
        if (pick(4) == 0) w += consonants[pick(consonants.size())];
      }
      if (used_.insert(w).second) return w;
    }
  }

 private:
  size_t pick(size_t n) { return std::uniform_int_distribution<size_t>(0, n - 1)(rng_); }

  std::mt19937_64& rng_;
  std::set<std::string> used_;
};

struct Topic {
  std::vector<std::string> queries;
  std::discrete_distribution<size_t> popularity;
  std::vector<uint32_t> links;
};


class TopicMaker {
 public:
  TopicMaker(std::mt19937_64& rng, WordMaker& words, uint32_t modifiers) : rng_(rng), words_(words), modifiers_(modifiers) {
    for (auto& m : modifiers_) m = words_.make(1, 2);
    auto mw = zipf_weights(modifiers_.size(), 1.0);
    modifier_pick_ = std::discrete_distribution<size_t>(mw.begin(), mw.end());
  }

  // Up to `count` distinct queries around one to three fresh head terms.
  std::vector<std::string> queries(uint32_t count) {
    std::vector<std::string> heads(1 + uniform(3));
    for (auto& h : heads) h = words_.make(2, 3);
    std::set<std::string> seen;
    std::vector<std::string> out;
    for (uint32_t tries = 0; out.size() < count && tries < 50 * count; ++tries) {
      std::string q = heads[uniform(heads.size())];
      if (coin(0.3) && heads.size() > 1) q += " " + heads[uniform(heads.size())];
      const size_t mods = uniform(3);
      for (size_t m = 0; m < mods; ++m) {
        const std::string& w = modifiers_[modifier_pick_(rng_)];
        q = coin(0.5) ? w + " " + q : q + " " + w;
      }
      q = normalize_query(q);
      if (seen.insert(q).second) out.push_back(q);
    }
    return out;
  }

 private:
  bool coin(double p) { return std::bernoulli_distribution(p)(rng_); }
  size_t uniform(size_t n) { return std::uniform_int_distribution<size_t>(0, n - 1)(rng_); }

  std::mt19937_64& rng_;
  WordMaker& words_;
  std::vector<std::string> modifiers_;
  std::discrete_distribution<size_t> modifier_pick_;
};

}  // namespace

std::vector<std::vector<std::string>> synth_topic_queries(uint32_t n, uint32_t per_topic, uint64_t seed) {
  if (per_topic == 0) throw Error("synth: per_topic must be positive");
  std::mt19937_64 rng(seed);
  WordMaker words(rng);
  TopicMaker maker(rng, words, 150);
  std::vector<std::vector<std::string>> topics;
  std::set<std::string> all;
  uint32_t total = 0;
  while (total < n) {
    auto qs = maker.queries(std::min(per_topic, n - total));
    std::vector<std::string> fresh;
    for (auto& q : qs) {
      if (all.insert(q).second) fresh.push_back(std::move(q));
    }
    total += static_cast<uint32_t>(fresh.size());
    if (!fresh.empty()) topics.push_back(std::move(fresh));
  }
  return topics;
}

std::vector<LogRecord> synth_log(const SynthParams& p) {
  if (p.sessions == 0 || p.topics == 0 || p.queries_per_topic == 0) throw Error("synth: sizes must be positive");
  std::mt19937_64 rng(p.seed);
  WordMaker words(rng);
  TopicMaker maker(rng, words, p.modifiers);
  auto coin = [&](double prob) { return std::bernoulli_distribution(prob)(rng); };
  auto uniform = [&](size_t n) { return std::uniform_int_distribution<size_t>(0, n - 1)(rng); };

  std::vector<Topic> topics(p.topics);
  for (uint32_t t = 0; t < p.topics; ++t) {
    Topic& topic = topics[t];
    topic.queries = maker.queries(p.queries_per_topic);
    auto w = zipf_weights(topic.queries.size(), p.query_zipf);
    std::shuffle(w.begin(), w.end(), rng);
    topic.popularity = std::discrete_distribution<size_t>(w.begin(), w.end());
    for (int l = 0; l < 3; ++l) topic.links.push_back(static_cast<uint32_t>(uniform(p.topics)));
  }
  auto tw = zipf_weights(p.topics, p.topic_zipf);
  std::discrete_distribution<size_t> topic_pick(tw.begin(), tw.end());

  auto tail_query = [&](size_t topic) {
    const auto& base = topics[topic].queries[uniform(topics[topic].queries.size())];
    std::string q = coin(0.5) ? words.make(2, 3) + " " + base : base + " " + words.make(2, 3);
    return normalize_query(q);
  };
  auto draw = [&](size_t topic) {
    if (coin(p.tail_query)) return tail_query(topic);
    return topics[topic].queries[topics[topic].popularity(rng)];
  };

  const uint32_t per_user = std::max(1u, p.sessions_per_user);
  const uint32_t users = (p.sessions + per_user - 1) / per_user;
  std::vector<std::vector<int64_t>> starts(users);
  std::uniform_int_distribution<int64_t> when(kSynthStart, kSynthEnd - 1);
  for (uint32_t s = 0; s < p.sessions; ++s) starts[s % users].push_back(when(rng));

  std::vector<LogRecord> records;
  for (uint32_t u = 0; u < users; ++u) {
    auto& st = starts[u];
    std::sort(st.begin(), st.end());
    const std::string user = "u" + std::to_string(100000 + u);
    int64_t busy_until = 0;
    for (int64_t start : st) {
      int64_t ts = std::max(start, busy_until + kSessionGapSeconds);
      size_t topic = topic_pick(rng);
      std::string q = draw(topic);
      records.push_back({user, q, ts});
      while (!coin(p.session_end_p)) {
        if (!coin(p.stay_on_topic)) {
          topic = coin(p.linked_topic / (1.0 - p.stay_on_topic)) ? topics[topic].links[uniform(topics[topic].links.size())]
                                                                   : topic_pick(rng);
        }
        std::string next = draw(topic);
        for (int retry = 0; next == q && retry < 8; ++retry) next = draw(topic);
        if (next == q) break;
        q = std::move(next);
        ts += 5 + static_cast<int64_t>(uniform(900));
        records.push_back({user, q, ts});
      }
      busy_until = ts;
    }
  }
  sort_records(records);
  return records;
}

}  // namespace prefx
