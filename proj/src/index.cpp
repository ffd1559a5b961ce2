#include "prefx/index.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <future>
#include <map>
#include <mutex>
#include <numeric>
#include <thread>

#include "binio.hpp"
#include "prefx/corpus.hpp"

namespace prefx {

namespace {

constexpr char kTreeMagic[] = "PXTREE01";
constexpr int kMaxLloydRounds = 20;
// Upper bound on the subset-sum table (in bits) used to rebalance weighted splits.
constexpr uint64_t kMaxBalanceTableBits = uint64_t{1} << 27;

unsigned resolve_threads(unsigned threads) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  return threads;
}

// Depth below which subtree builds are handed to new threads.
unsigned spawn_depth(unsigned threads) {
  unsigned d = 0;
  while ((1u << d) < threads) ++d;
  return d;
}

// Dense accumulator with a touched-index list so resets cost O(nnz).
class DenseAccumulator {
 public:
  void reset(uint64_t dim) {
    if (values_.size() < dim) {
      values_.assign(dim, 0.0);
      marked_.assign(dim, 0);
    }
    for (uint32_t i : touched_) {
      values_[i] = 0.0;
      marked_[i] = 0;
    }
    touched_.clear();
  }

  void add(SparseView v, double scale) {
    for (size_t k = 0; k < v.size(); ++k) {
      uint32_t i = v.indices[k];
      if (!marked_[i]) {
        marked_[i] = 1;
        touched_.push_back(i);
      }
      values_[i] += scale * v.values[k];
    }
  }

  void normalize() {
    double s = 0.0;
    for (uint32_t i : touched_) s += values_[i] * values_[i];
    if (s == 0.0) return;
    double inv = 1.0 / std::sqrt(s);
    for (uint32_t i : touched_) values_[i] *= inv;
  }

  double dot(SparseView v) const {
    double s = 0.0;
    for (size_t k = 0; k < v.size(); ++k) s += values_[v.indices[k]] * v.values[k];
    return s;
  }

  void assign(SparseView v, uint64_t dim) {
    reset(dim);
    add(v, 1.0);
  }

 private:
  std::vector<double> values_;
  std::vector<uint8_t> marked_;
  std::vector<uint32_t> touched_;
};

// Assigns items to side 0 in `order` until the side holds ceil(total/2)
// weight. Falls back to an exact subset-sum pass when the greedy pass misses
// the balance window.
bool assign_balanced(std::span<const uint32_t> order, std::span<const uint32_t> weights, std::span<const double> margin,
                     std::vector<uint8_t>& side) {
  const size_t n = order.size();
  uint64_t total = 0;
  uint32_t heaviest = 0;
  for (size_t i = 0; i < n; ++i) {
    total += weights[i];
    if (weights[i] > weights[heaviest]) heaviest = static_cast<uint32_t>(i);
  }
  const uint64_t cap = (total + 1) / 2;
  const uint64_t low = total / 2;
  side.assign(n, 1);

  if (weights[heaviest] > cap) {
    // One group outweighs a whole child: it goes alone to the side it prefers.
    uint8_t s = margin[heaviest] >= 0.0 ? 0 : 1;
    for (size_t i = 0; i < n; ++i) side[i] = static_cast<uint8_t>(1 - s);
    side[heaviest] = s;
    return false;
  }

  uint64_t sum = 0;
  for (uint32_t i : order) {
    if (sum + weights[i] <= cap) {
      side[i] = 0;
      sum += weights[i];
    }
  }
  if (sum >= low) return true;

  if (static_cast<uint64_t>(n + 1) * (cap + 1) > kMaxBalanceTableBits) return false;
  // reach[k] = sums achievable by items order[k..n).
  const size_t words = static_cast<size_t>(cap / 64 + 1);
  std::vector<uint64_t> reach((n + 1) * words, 0);
  auto row = [&](size_t k) { return reach.data() + k * words; };
  row(n)[0] = 1;
  for (size_t k = n; k-- > 0;) {
    const uint64_t* next = row(k + 1);
    uint64_t* cur = row(k);
    std::copy(next, next + words, cur);
    const uint32_t w = weights[order[k]];
    const size_t ws = w / 64, bs = w % 64;
    for (size_t j = words; j-- > ws;) {
      uint64_t v = next[j - ws] << bs;
      if (bs != 0 && j - ws >= 1) v |= next[j - ws - 1] >> (64 - bs);
      cur[j] |= v;
    }
  }
  auto test = [&](size_t k, uint64_t s) { return (row(k)[s / 64] >> (s % 64)) & 1u; };
  for (uint64_t target : {cap, low}) {
    if (!test(0, target)) continue;
    uint64_t t = target;
    for (size_t k = 0; k < n; ++k) {
      const uint32_t i = order[k];
      if (weights[i] <= t && test(k + 1, t - weights[i])) {
        side[i] = 0;
        t -= weights[i];
      } else {
        side[i] = 1;
      }
    }
    return true;
  }
  return false;
}

}  // namespace

std::string_view to_string(IndexAlgo a) {
  switch (a) {
    case IndexAlgo::hc: return "hc";
    case IndexAlgo::trie: return "trie";
    case IndexAlgo::hybrid: return "hybrid";
    case IndexAlgo::mlc: return "mlc";
  }
  return "?";
}

IndexAlgo index_algo_from_string(std::string_view s) {
  if (s == "hc") return IndexAlgo::hc;
  if (s == "trie") return IndexAlgo::trie;
  if (s == "hybrid") return IndexAlgo::hybrid;
  if (s == "mlc") return IndexAlgo::mlc;
  throw Error("unknown index algorithm: " + std::string(s));
}

namespace detail {

SplitResult balanced_two_means(std::span<const SparseView> items, std::span<const uint32_t> weights, uint64_t dim,
                               uint64_t seed) {
  const size_t n = items.size();
  SplitResult out;
  out.side.assign(n, 0);
  if (n < 2) return out;

  thread_local DenseAccumulator centers[2];

  // Farthest-pair seeding: a random first item, then the item least similar to it.
  const size_t first = static_cast<size_t>(splitmix64(seed) % n);
  centers[0].assign(items[first], dim);
  size_t second = first == 0 ? 1 : 0;
  double worst = std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < n; ++i) {
    if (i == first) continue;
    double s = centers[0].dot(items[i]);
    if (s < worst) {
      worst = s;
      second = i;
    }
  }
  centers[0].normalize();
  centers[1].assign(items[second], dim);
  centers[1].normalize();

  std::vector<double> margin(n);
  std::vector<uint32_t> order(n);
  std::vector<uint8_t> side, prev;
  bool balanced = true;
  for (int round = 0; round < kMaxLloydRounds; ++round) {
    for (size_t i = 0; i < n; ++i) margin[i] = centers[0].dot(items[i]) - centers[1].dot(items[i]);
    std::iota(order.begin(), order.end(), 0u);
    std::sort(order.begin(), order.end(), [&](uint32_t a, uint32_t b) {
      if (margin[a] != margin[b]) return margin[a] > margin[b];
      return a < b;
    });
    balanced = assign_balanced(order, weights, margin, side);
    if (side == prev) break;
    prev = side;
    for (int c = 0; c < 2; ++c) centers[c].reset(dim);
    for (size_t i = 0; i < n; ++i) centers[side[i]].add(items[i], static_cast<double>(weights[i]));
    centers[0].normalize();
    centers[1].normalize();
  }
  out.side = std::move(side);
  out.relaxed = !balanced;
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// LabelTree

LabelTree LabelTree::from_draft(const Draft& root, uint32_t num_labels) {
  LabelTree t;
  std::deque<std::pair<const Draft*, uint32_t>> queue;  // (draft, node id)
  t.nodes_.push_back(Node{});
  queue.emplace_back(&root, 0);
  while (!queue.empty()) {
    auto [d, id] = queue.front();
    queue.pop_front();
    if (d->children.empty()) {
      std::vector<uint32_t> ls = d->labels;
      std::sort(ls.begin(), ls.end());
      t.nodes_[id].label_begin = static_cast<uint32_t>(t.labels_.size());
      t.nodes_[id].label_count = static_cast<uint32_t>(ls.size());
      t.labels_.insert(t.labels_.end(), ls.begin(), ls.end());
      continue;
    }
    t.nodes_[id].first_child = static_cast<uint32_t>(t.nodes_.size());
    t.nodes_[id].child_count = static_cast<uint32_t>(d->children.size());
    for (const auto& c : d->children) {
      Node child;
      child.parent = id;
      child.depth = t.nodes_[id].depth + 1;
      t.nodes_.push_back(child);
      queue.emplace_back(&c, static_cast<uint32_t>(t.nodes_.size() - 1));
    }
  }
  if (t.labels_.size() != num_labels) throw Error("label tree: leaves hold " + std::to_string(t.labels_.size()) +
                                                  " labels, expected " + std::to_string(num_labels));
  t.index_labels();
  return t;
}

void LabelTree::index_labels() {
  leaf_of_label_.assign(labels_.size(), UINT32_MAX);
  for (uint32_t id = 0; id < nodes_.size(); ++id) {
    if (!nodes_[id].is_leaf()) continue;
    for (uint32_t l : leaf_labels(id)) {
      if (l >= labels_.size()) throw Error("label tree: label id out of range");
      if (leaf_of_label_[l] != UINT32_MAX) throw Error("label tree: label " + std::to_string(l) + " in two leaves");
      leaf_of_label_[l] = id;
    }
  }
}

std::vector<uint32_t> LabelTree::leaves() const {
  std::vector<uint32_t> out;
  for (uint32_t id = 0; id < nodes_.size(); ++id) {
    if (nodes_[id].is_leaf()) out.push_back(id);
  }
  return out;
}

std::vector<uint32_t> LabelTree::path_to(uint32_t id) const {
  std::vector<uint32_t> path{id};
  while (id != 0) {
    id = nodes_[id].parent;
    path.push_back(id);
  }
  std::reverse(path.begin(), path.end());
  return path;
}

uint32_t LabelTree::depth() const {
  uint32_t d = 0;
  for (const auto& n : nodes_) d = std::max(d, n.depth);
  return d;
}

uint32_t LabelTree::max_fanout() const {
  uint32_t f = 0;
  for (const auto& n : nodes_) f = std::max(f, n.child_count);
  return f;
}

uint32_t LabelTree::max_leaf_labels() const {
  uint32_t m = 0;
  for (const auto& n : nodes_) m = std::max(m, n.label_count);
  return m;
}

void LabelTree::validate() const {
  if (nodes_.empty()) throw Error("label tree: no nodes");
  std::vector<uint32_t> seen(labels_.size(), 0);
  for (uint32_t id = 0; id < nodes_.size(); ++id) {
    const Node& n = nodes_[id];
    if (id != 0 && (n.parent >= id || nodes_[n.parent].is_leaf())) throw Error("label tree: bad parent link at node " + std::to_string(id));
    if (id != 0 && n.depth != nodes_[n.parent].depth + 1) throw Error("label tree: bad depth at node " + std::to_string(id));
    if (n.is_leaf()) {
      if (n.label_count == 0) throw Error("label tree: empty leaf " + std::to_string(id));
      if (uint64_t{n.label_begin} + n.label_count > labels_.size()) throw Error("label tree: label range out of bounds");
      for (uint32_t l : leaf_labels(id)) {
        if (l >= labels_.size() || seen[l]++) throw Error("label tree: leaves do not partition the labels");
      }
    } else {
      if (n.label_count != 0) throw Error("label tree: internal node holds labels");
      if (uint64_t{n.first_child} + n.child_count > nodes_.size() || n.first_child <= id) throw Error("label tree: bad child range");
      for (uint32_t c = n.first_child; c < n.first_child + n.child_count; ++c) {
        if (nodes_[c].parent != id) throw Error("label tree: child/parent mismatch at node " + std::to_string(c));
      }
    }
  }
  for (uint32_t l = 0; l < seen.size(); ++l) {
    if (seen[l] != 1) throw Error("label tree: label " + std::to_string(l) + " missing from leaves");
  }
}

void LabelTree::save(const std::filesystem::path& path) const {
  binio::Writer w(path.string());
  w.put_bytes(std::string(kTreeMagic, 8));
  w.put<uint32_t>(size());
  w.put<uint32_t>(num_labels());
  for (const Node& n : nodes_) {
    w.put<uint32_t>(n.parent);
    w.put<uint32_t>(n.first_child);
    w.put<uint32_t>(n.child_count);
    w.put<uint8_t>(n.is_leaf() ? 1 : 0);
    w.put<uint32_t>(n.label_begin);
    w.put<uint32_t>(n.label_count);
  }
  w.put_array<uint32_t>(labels_);
  w.finish();
}

LabelTree LabelTree::load(const std::filesystem::path& path) {
  binio::Reader r(path.string());
  if (r.get_bytes(8) != std::string(kTreeMagic, 8)) throw Error("not a label tree file: " + path.string());
  LabelTree t;
  uint32_t count = r.get<uint32_t>();
  uint32_t num_labels = r.get<uint32_t>();
  t.nodes_.resize(count);
  for (uint32_t id = 0; id < count; ++id) {
    Node& n = t.nodes_[id];
    n.parent = r.get<uint32_t>();
    n.first_child = r.get<uint32_t>();
    n.child_count = r.get<uint32_t>();
    uint8_t leaf = r.get<uint8_t>();
    n.label_begin = r.get<uint32_t>();
    n.label_count = r.get<uint32_t>();
    if ((leaf != 0) != n.is_leaf()) throw Error("label tree: leaf flag disagrees with child count in " + path.string());
    if (id != 0) {
      if (n.parent >= id) throw Error("label tree: nodes not in breadth-first order in " + path.string());
      n.depth = t.nodes_[n.parent].depth + 1;
    }
  }
  t.labels_ = r.get_array<uint32_t>(num_labels);
  t.validate();
  t.index_labels();
  return t;
}

// ---------------------------------------------------------------------------
// Builders

namespace {

using Draft = LabelTree::Draft;

struct HcContext {
  const SparseMatrix& embeddings;
  uint32_t max_leaf_size;
  unsigned spawn_below;
};

Draft hc_recurse(const HcContext& ctx, std::vector<uint32_t> ids, uint64_t seed, unsigned depth) {
  Draft d;
  if (ids.size() < ctx.max_leaf_size || ids.size() <= 1) {
    d.labels = std::move(ids);
    return d;
  }
  std::vector<SparseView> items;
  items.reserve(ids.size());
  for (uint32_t l : ids) items.push_back(ctx.embeddings.row(l));
  std::vector<uint32_t> weights(ids.size(), 1);
  auto split = detail::balanced_two_means(items, weights, ctx.embeddings.dim(), seed);
  std::vector<uint32_t> part[2];
  for (size_t i = 0; i < ids.size(); ++i) part[split.side[i]].push_back(ids[i]);
  items.clear();
  items.shrink_to_fit();
  ids.clear();
  ids.shrink_to_fit();

  d.children.resize(2);
  if (depth < ctx.spawn_below) {
    auto left = std::async(std::launch::async, [&] { return hc_recurse(ctx, std::move(part[0]), mix_seed(seed, 0), depth + 1); });
    d.children[1] = hc_recurse(ctx, std::move(part[1]), mix_seed(seed, 1), depth + 1);
    d.children[0] = left.get();
  } else {
    d.children[0] = hc_recurse(ctx, std::move(part[0]), mix_seed(seed, 0), depth + 1);
    d.children[1] = hc_recurse(ctx, std::move(part[1]), mix_seed(seed, 1), depth + 1);
  }
  return d;
}

void check_labels_unique(std::span<const std::string> labels) {
  std::vector<std::string_view> sorted(labels.begin(), labels.end());
  std::sort(sorted.begin(), sorted.end());
  auto dup = std::adjacent_find(sorted.begin(), sorted.end());
  if (dup != sorted.end()) throw Error("index: duplicate label '" + std::string(*dup) + "'");
}

// Builds the trie region. `ids` are sorted by label string. Leaves reached
// at depth `d_trie` with more than one label are handed to `on_group`.
template <typename OnGroup>
Draft trie_recurse(std::span<const std::string> labels, std::span<const uint32_t> ids, uint32_t depth, uint32_t d_trie,
                   const std::string& path, OnGroup& on_group) {
  if (depth >= d_trie || ids.size() == 1) {
    return on_group(std::vector<uint32_t>(ids.begin(), ids.end()), path);
  }
  Draft d;
  size_t i = 0;
  // Sorted order puts the label ending here (if any) first.
  if (labels[ids[0]].size() == depth) {
    Draft dummy;
    dummy.labels = {ids[0]};
    d.children.push_back(std::move(dummy));
    i = 1;
  }
  while (i < ids.size()) {
    char c = labels[ids[i]][depth];
    size_t j = i;
    while (j < ids.size() && labels[ids[j]][depth] == c) ++j;
    d.children.push_back(trie_recurse(labels, ids.subspan(i, j - i), depth + 1, d_trie, path + c, on_group));
    i = j;
  }
  return d;
}

std::vector<uint32_t> ids_by_string(std::span<const std::string> labels) {
  std::vector<uint32_t> ids(labels.size());
  std::iota(ids.begin(), ids.end(), 0u);
  std::sort(ids.begin(), ids.end(), [&](uint32_t a, uint32_t b) { return labels[a] < labels[b]; });
  return ids;
}

struct MlcContext {
  HcContext hc;
  std::span<const std::string> labels;
  uint32_t d_mlc;
  std::mutex mu;
  std::vector<BalanceRelaxation> relaxations;
};

Draft mlc_recurse(MlcContext& ctx, std::vector<uint32_t> ids, uint32_t depth, uint64_t seed) {
  const size_t n = ids.size();
  if (n < ctx.hc.max_leaf_size || n <= 1) {
    Draft d;
    d.labels = std::move(ids);
    return d;
  }
  if (depth >= ctx.d_mlc) return hc_recurse(ctx.hc, std::move(ids), seed, ctx.hc.spawn_below);

  // Must-link groups: labels sharing their first depth+1 characters.
  std::map<std::string_view, std::vector<uint32_t>> groups;
  for (uint32_t l : ids) {
    std::string_view s = ctx.labels[l];
    groups[s.substr(0, std::min<size_t>(s.size(), depth + 1))].push_back(l);
  }
  if (groups.size() == 1) {
    Draft d;
    d.children.push_back(mlc_recurse(ctx, std::move(ids), depth + 1, mix_seed(seed, 0)));
    return d;
  }

  std::vector<SparseVector> group_vecs;
  std::vector<uint32_t> weights;
  std::vector<const std::vector<uint32_t>*> members;
  group_vecs.reserve(groups.size());
  for (const auto& [key, ls] : groups) {
    std::vector<std::pair<uint32_t, double>> pairs;
    for (uint32_t l : ls) {
      SparseView r = ctx.hc.embeddings.row(l);
      for (size_t k = 0; k < r.size(); ++k) pairs.emplace_back(r.indices[k], r.values[k]);
    }
    SparseVector v = SparseVector::from_pairs(std::move(pairs), static_cast<uint32_t>(ctx.hc.embeddings.dim()));
    v.normalize();
    group_vecs.push_back(std::move(v));
    weights.push_back(static_cast<uint32_t>(ls.size()));
    members.push_back(&ls);
  }
  std::vector<SparseView> items;
  for (const auto& v : group_vecs) items.push_back(v.view());
  auto split = detail::balanced_two_means(items, weights, ctx.hc.embeddings.dim(), seed);

  std::vector<uint32_t> part[2];
  for (size_t g = 0; g < members.size(); ++g) {
    part[split.side[g]].insert(part[split.side[g]].end(), members[g]->begin(), members[g]->end());
  }
  for (auto& p : part) std::sort(p.begin(), p.end());
  if (split.relaxed) {
    std::lock_guard lock(ctx.mu);
    ctx.relaxations.push_back({depth, static_cast<uint32_t>(part[0].size()), static_cast<uint32_t>(part[1].size())});
  }
  groups.clear();
  ids.clear();
  ids.shrink_to_fit();

  Draft d;
  d.children.resize(2);
  d.children[0] = mlc_recurse(ctx, std::move(part[0]), depth + 1, mix_seed(seed, 0));
  d.children[1] = mlc_recurse(ctx, std::move(part[1]), depth + 1, mix_seed(seed, 1));
  return d;
}

std::vector<uint32_t> all_ids(uint32_t n) {
  std::vector<uint32_t> ids(n);
  std::iota(ids.begin(), ids.end(), 0u);
  return ids;
}

}  // namespace

LabelTree build_hc(const SparseMatrix& embeddings, uint32_t max_leaf_size, uint64_t seed, unsigned threads) {
  const auto n = static_cast<uint32_t>(embeddings.rows());
  if (n == 0) throw Error("build_hc: no labels");
  HcContext ctx{embeddings, max_leaf_size, spawn_depth(resolve_threads(threads))};
  LabelTree t = LabelTree::from_draft(hc_recurse(ctx, all_ids(n), seed, 0), n);
  t.params = {IndexAlgo::hc, max_leaf_size, 0, 0, seed, threads};
  return t;
}

LabelTree build_trie(std::span<const std::string> labels, uint32_t d_trie) {
  if (labels.empty()) throw Error("build_trie: no labels");
  check_labels_unique(labels);
  auto ids = ids_by_string(labels);
  auto leaf = [](std::vector<uint32_t> group, const std::string&) {
    Draft d;
    d.labels = std::move(group);
    return d;
  };
  LabelTree t = LabelTree::from_draft(trie_recurse(labels, ids, 0, d_trie, std::string(), leaf),
                                      static_cast<uint32_t>(labels.size()));
  t.params = {IndexAlgo::trie, 0, d_trie, 0, 0, 1};
  return t;
}

LabelTree build_hybrid(std::span<const std::string> labels, const SparseMatrix& embeddings, uint32_t d_trie,
                       uint32_t max_leaf_size, uint64_t seed, unsigned threads) {
  if (labels.empty()) throw Error("build_hybrid: no labels");
  if (embeddings.rows() != labels.size()) throw Error("build_hybrid: one embedding row per label required");
  check_labels_unique(labels);
  const unsigned nthreads = resolve_threads(threads);
  HcContext ctx{embeddings, max_leaf_size, spawn_depth(nthreads)};
  auto ids = ids_by_string(labels);
  auto cluster = [&](std::vector<uint32_t> group, const std::string& path) {
    std::sort(group.begin(), group.end());
    uint64_t s = path.empty() ? seed : mix_seed(seed, hash_string(path));
    return hc_recurse(ctx, std::move(group), s, path.empty() ? 0 : ctx.spawn_below);
  };
  LabelTree t = LabelTree::from_draft(trie_recurse(labels, ids, 0, d_trie, std::string(), cluster),
                                      static_cast<uint32_t>(labels.size()));
  t.params = {IndexAlgo::hybrid, max_leaf_size, d_trie, 0, seed, threads};
  return t;
}

LabelTree build_mlc(std::span<const std::string> labels, const SparseMatrix& embeddings, uint32_t max_leaf_size,
                    uint32_t d_mlc, uint64_t seed, unsigned threads) {
  if (labels.empty()) throw Error("build_mlc: no labels");
  if (embeddings.rows() != labels.size()) throw Error("build_mlc: one embedding row per label required");
  check_labels_unique(labels);
  MlcContext ctx{{embeddings, max_leaf_size, spawn_depth(resolve_threads(threads))}, labels, d_mlc, {}, {}};
  // The must-link region and the clustered subtrees below it run sequentially.
  ctx.hc.spawn_below = 0;
  Draft root = mlc_recurse(ctx, all_ids(static_cast<uint32_t>(labels.size())), 0, seed);
  LabelTree t = LabelTree::from_draft(root, static_cast<uint32_t>(labels.size()));
  t.params = {IndexAlgo::mlc, max_leaf_size, 0, d_mlc, seed, threads};
  t.relaxations = std::move(ctx.relaxations);
  return t;
}

LabelTree build_index(const IndexParams& p, std::span<const std::string> labels, const SparseMatrix& embeddings) {
  LabelTree t;
  switch (p.algo) {
    case IndexAlgo::hc: t = build_hc(embeddings, p.max_leaf_size, p.seed, p.threads); break;
    case IndexAlgo::trie: t = build_trie(labels, p.d_trie); break;
    case IndexAlgo::hybrid: t = build_hybrid(labels, embeddings, p.d_trie, p.max_leaf_size, p.seed, p.threads); break;
    case IndexAlgo::mlc: t = build_mlc(labels, embeddings, p.max_leaf_size, p.d_mlc, p.seed, p.threads); break;
  }
  t.params = p;
  return t;
}

}  // namespace prefx
