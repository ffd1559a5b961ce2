#include "prefx/model.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <thread>

#include <json.hpp>

#include "prefx/corpus.hpp"
#include "parallel.hpp"

namespace prefx {

namespace {

constexpr const char* kModelFormat = "prefx-tree-model/1";

struct Candidate {
  double score;
  uint32_t id;
};

bool better(const Candidate& a, const Candidate& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.id < b.id;
}

void keep_top(std::vector<Candidate>& c, size_t n) {
  if (c.size() > n) {
    std::partial_sort(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(n), c.end(), better);
    c.resize(n);
  } else {
    std::sort(c.begin(), c.end(), better);
  }
}

}  // namespace

std::string_view to_string(ScoreTransform t) { return t == ScoreTransform::cubic_hinge ? "cubic_hinge" : "sigmoid"; }

ScoreTransform score_transform_from_string(std::string_view s) {
  if (s == "cubic_hinge") return ScoreTransform::cubic_hinge;
  if (s == "sigmoid") return ScoreTransform::sigmoid;
  throw Error("unknown score transform: " + std::string(s));
}

double score_transform(double margin, ScoreTransform t) {
  if (t == ScoreTransform::sigmoid) return 1.0 / (1.0 + std::exp(-margin));
  double h = std::max(0.0, 1.0 - margin);
  return std::exp(-h * h * h);
}

TreeModel::TreeModel(LabelTree tree, SparseMatrix node_weights, SparseMatrix label_weights, std::vector<std::string> labels,
                     uint32_t input_dim, ScoreTransform transform, double reg_C)
    : tree_(std::move(tree)),
      node_weights_(std::move(node_weights)),
      label_weights_(std::move(label_weights)),
      labels_(std::move(labels)),
      input_dim_(input_dim),
      transform_(transform),
      reg_C_(reg_C) {
  prepare();
}

void TreeModel::prepare() {
  if (node_weights_.rows() != tree_.size()) throw Error("model: one node weight row per tree node required");
  if (label_weights_.rows() != tree_.num_labels()) throw Error("model: one label weight row per label required");
  if (labels_.size() != tree_.num_labels()) throw Error("model: label strings do not match the tree");
  if (node_weights_.dim() != uint64_t{input_dim_} + 1 || label_weights_.dim() != uint64_t{input_dim_} + 1) {
    throw Error("model: weight dimension must be input dim + 1");
  }
  leaf_prefix_.assign(tree_.size(), std::string());
  for (uint32_t id = 0; id < tree_.size(); ++id) {
    if (!tree_.node(id).is_leaf()) continue;
    auto ls = tree_.leaf_labels(id);
    std::string_view lcp = labels_[ls[0]];
    for (uint32_t l : ls.subspan(1)) {
      std::string_view s = labels_[l];
      size_t k = 0;
      while (k < lcp.size() && k < s.size() && lcp[k] == s[k]) ++k;
      lcp = lcp.substr(0, k);
    }
    leaf_prefix_[id] = std::string(lcp);
  }
}

bool TreeModel::leaf_may_match(uint32_t leaf, std::string_view prefix) const {
  const std::string& lcp = leaf_prefix_[leaf];
  size_t m = std::min(lcp.size(), prefix.size());
  return lcp.compare(0, m, prefix.substr(0, m)) == 0;
}

TreeModel TreeModel::train(LabelTree tree, const SparseMatrix& inputs, std::span<const uint32_t> label_ids,
                           std::vector<std::string> labels, const TrainParams& params, TrainStats* stats) {
  auto t0 = std::chrono::steady_clock::now();
  if (label_ids.size() != inputs.rows()) throw Error("train: one label id per input row required");
  const uint32_t num_nodes = tree.size();
  const uint32_t num_labels = tree.num_labels();
  const auto input_dim = static_cast<uint32_t>(inputs.dim());
  for (uint32_t l : label_ids) {
    if (l >= num_labels) throw Error("train: label id " + std::to_string(l) + " is not in the tree");
  }

  // Number leaves in depth-first order; every subtree then owns a contiguous
  // rank range, and sorting examples by rank makes each node's routed
  // examples a contiguous slice.
  std::vector<uint32_t> rank_lo(num_nodes), rank_hi(num_nodes);
  {
    uint32_t next_rank = 0;
    std::vector<std::pair<uint32_t, bool>> stack{{0, false}};
    while (!stack.empty()) {
      auto [id, done] = stack.back();
      stack.pop_back();
      const auto& n = tree.node(id);
      if (done) {
        rank_hi[id] = next_rank;
        continue;
      }
      rank_lo[id] = next_rank;
      if (n.is_leaf()) {
        rank_hi[id] = ++next_rank;
        continue;
      }
      stack.push_back({id, true});
      for (uint32_t c = n.first_child + n.child_count; c-- > n.first_child;) stack.push_back({c, false});
    }
  }
  const uint32_t num_leaves = rank_hi[0];
  std::vector<uint64_t> rank_start(num_leaves + 1, 0);
  std::vector<uint32_t> example_rank(label_ids.size());
  for (size_t i = 0; i < label_ids.size(); ++i) {
    example_rank[i] = rank_lo[tree.leaf_of(label_ids[i])];
    ++rank_start[example_rank[i] + 1];
  }
  for (uint32_t r = 0; r < num_leaves; ++r) rank_start[r + 1] += rank_start[r];
  std::vector<uint32_t> sorted(label_ids.size());
  {
    std::vector<uint64_t> fill(rank_start.begin(), rank_start.end() - 1);
    for (size_t i = 0; i < label_ids.size(); ++i) sorted[fill[example_rank[i]]++] = static_cast<uint32_t>(i);
  }
  std::vector<SparseView> views(sorted.size());
  std::vector<uint32_t> sorted_labels(sorted.size());
  for (size_t k = 0; k < sorted.size(); ++k) {
    views[k] = inputs.row(sorted[k]);
    sorted_labels[k] = label_ids[sorted[k]];
  }
  auto range_of = [&](uint32_t node) { return std::pair<uint64_t, uint64_t>{rank_start[rank_lo[node]], rank_start[rank_hi[node]]}; };

  // One task per internal node (its children's problems) and per leaf (its
  // labels' problems).
  std::vector<SparseVector> node_w(num_nodes, SparseVector(input_dim + 1));
  std::vector<SparseVector> label_w(num_labels, SparseVector(input_dim + 1));
  std::atomic<uint64_t> node_problems{0}, label_problems{0}, visits{0}, epochs{0};
  const unsigned threads = resolve_threads(params.threads);
  std::vector<SquaredHingeSolver> solvers(threads, SquaredHingeSolver(input_dim));

  SolverParams sp;
  sp.reg_C = params.reg_C;
  sp.tol = params.tol;
  sp.max_epochs = params.max_epochs;
  sp.bias = true;
  sp.weight_threshold = params.weight_threshold;

  run_parallel(num_nodes, threads, [&](size_t task, unsigned worker) {
    const auto id = static_cast<uint32_t>(task);
    const auto& n = tree.node(id);
    auto [b, e] = range_of(id);
    std::span<const SparseView> xs(views.data() + b, e - b);
    std::vector<int8_t> y(e - b);
    SolverParams local = sp;
    if (n.is_leaf()) {
      for (uint32_t l : tree.leaf_labels(id)) {
        for (uint64_t k = b; k < e; ++k) y[k - b] = sorted_labels[k] == l ? 1 : -1;
        local.seed = mix_seed(params.seed, uint64_t{num_nodes} + l);
        auto r = solvers[worker].solve(xs, y, local);
        label_w[l] = std::move(r.weights);
        ++label_problems;
        visits += xs.size();
        epochs += static_cast<uint64_t>(r.epochs);
      }
      return;
    }
    for (uint32_t c = n.first_child; c < n.first_child + n.child_count; ++c) {
      auto [cb, ce] = range_of(c);
      for (uint64_t k = b; k < e; ++k) y[k - b] = (k >= cb && k < ce) ? 1 : -1;
      local.seed = mix_seed(params.seed, c);
      auto r = solvers[worker].solve(xs, y, local);
      node_w[c] = std::move(r.weights);
      ++node_problems;
      visits += xs.size();
      epochs += static_cast<uint64_t>(r.epochs);
    }
  });

  SparseMatrix nw = SparseMatrix::from_rows(node_w, uint64_t{input_dim} + 1);
  node_w.clear();
  node_w.shrink_to_fit();
  SparseMatrix lw = SparseMatrix::from_rows(label_w, uint64_t{input_dim} + 1);
  label_w.clear();
  label_w.shrink_to_fit();
  if (stats) {
    stats->node_problems = node_problems;
    stats->label_problems = label_problems;
    stats->example_visits = visits;
    stats->epochs = epochs;
    stats->seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
  return TreeModel(std::move(tree), std::move(nw), std::move(lw), std::move(labels), input_dim, params.transform, params.reg_C);
}

SuggestionList TreeModel::predict(const SparseVector& x, std::string_view prefix, uint32_t beam, uint32_t k,
                                  PredictStats* stats) const {
  if (beam == 0 || k == 0) throw Error("predict: beam and k must be at least 1");
  PredictStats local;
  const SparseView xv = x.view();

  std::vector<Candidate> frontier{{1.0, tree_.root()}};
  std::vector<Candidate> next;
  for (;;) {
    bool expanded = false;
    next.clear();
    for (const Candidate& c : frontier) {
      const auto& n = tree_.node(c.id);
      if (n.is_leaf()) {
        next.push_back(c);
        continue;
      }
      expanded = true;
      for (uint32_t ch = n.first_child; ch < n.first_child + n.child_count; ++ch) {
        next.push_back({c.score * score_transform(node_margin(ch, xv), transform_), ch});
        ++local.node_evaluations;
      }
    }
    if (!expanded) break;
    keep_top(next, beam);
    frontier.swap(next);
  }

  std::vector<Candidate> hits;
  for (const Candidate& leaf : frontier) {
    ++local.leaves_reached;
    if (!leaf_may_match(leaf.id, prefix)) {
      ++local.leaves_skipped;
      continue;
    }
    for (uint32_t l : tree_.leaf_labels(leaf.id)) {
      if (!std::string_view(labels_[l]).starts_with(prefix)) continue;
      hits.push_back({leaf.score * score_transform(label_margin(l, xv), transform_), l});
      ++local.label_evaluations;
    }
  }
  keep_top(hits, k);

  SuggestionList out;
  out.reserve(hits.size());
  for (const Candidate& h : hits) out.push_back({labels_[h.id], h.score, h.id});
  if (stats) *stats = local;
  return out;
}

void TreeModel::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  tree_.save(dir / "tree.bin");
  node_weights_.save(dir / "node_weights.bin");
  label_weights_.save(dir / "label_weights.bin");
  {
    std::ofstream out(dir / "labels.txt", std::ios::trunc);
    for (const auto& l : labels_) out << l << '\n';
    if (!out) throw Error("write failed: " + (dir / "labels.txt").string());
  }
  nlohmann::ordered_json j;
  j["format"] = kModelFormat;
  j["transform"] = to_string(transform_);
  j["reg_C"] = reg_C_;
  j["input_dim"] = input_dim_;
  j["num_labels"] = tree_.num_labels();
  j["num_nodes"] = tree_.size();
  j["index"] = {{"algo", to_string(tree_.params.algo)},
                {"max_leaf_size", tree_.params.max_leaf_size},
                {"d_trie", tree_.params.d_trie},
                {"d_mlc", tree_.params.d_mlc},
                {"seed", tree_.params.seed}};
  j["files"] = {{"tree", "tree.bin"}, {"node_weights", "node_weights.bin"}, {"label_weights", "label_weights.bin"}, {"labels", "labels.txt"}};
  std::ofstream out(dir / "model.json", std::ios::trunc);
  out << j.dump(2) << '\n';
  if (!out) throw Error("write failed: " + (dir / "model.json").string());
}

TreeModel TreeModel::load(const std::filesystem::path& dir) {
  std::ifstream in(dir / "model.json");
  if (!in) throw Error("cannot open model config: " + (dir / "model.json").string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error((dir / "model.json").string() + ": " + e.what());
  }
  if (j.value("format", "") != kModelFormat) throw Error("model: unsupported format tag in " + (dir / "model.json").string());
  LabelTree tree = LabelTree::load(dir / "tree.bin");
  if (j.contains("index")) {
    const auto& ix = j["index"];
    tree.params.algo = index_algo_from_string(ix.at("algo").get<std::string>());
    tree.params.max_leaf_size = ix.at("max_leaf_size").get<uint32_t>();
    tree.params.d_trie = ix.at("d_trie").get<uint32_t>();
    tree.params.d_mlc = ix.at("d_mlc").get<uint32_t>();
    tree.params.seed = ix.at("seed").get<uint64_t>();
  }
  std::vector<std::string> labels;
  {
    std::ifstream lin(dir / "labels.txt");
    if (!lin) throw Error("cannot open " + (dir / "labels.txt").string());
    std::string line;
    while (std::getline(lin, line)) labels.push_back(line);
  }
  return TreeModel(std::move(tree), SparseMatrix::load(dir / "node_weights.bin"), SparseMatrix::load(dir / "label_weights.bin"),
                   std::move(labels), j.at("input_dim").get<uint32_t>(), score_transform_from_string(j.at("transform").get<std::string>()),
                   j.at("reg_C").get<double>());
}

}  // namespace prefx
