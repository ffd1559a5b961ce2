#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "prefx/sparse.hpp"

namespace prefx {

enum class IndexAlgo { hc, trie, hybrid, mlc };

std::string_view to_string(IndexAlgo a);
IndexAlgo index_algo_from_string(std::string_view s);

struct IndexParams {
  IndexAlgo algo = IndexAlgo::hc;
  // Clustering stops splitting a node once it holds fewer than this many labels.
  uint32_t max_leaf_size = 100;
  uint32_t d_trie = 3;
  uint32_t d_mlc = 5;
  uint64_t seed = 0;
  // Worker threads for subtree builds; 0 picks hardware concurrency.
  unsigned threads = 0;
};

// A split whose children could not be balanced because of must-link groups.
struct BalanceRelaxation {
  uint32_t depth = 0;
  uint32_t left = 0;
  uint32_t right = 0;
};

// Hierarchical label index. Nodes are stored in breadth-first order with the
// root at 0, so the children of a node occupy a contiguous id range and every
// leaf's labels a contiguous range of `labels`.
class LabelTree {
 public:
  struct Node {
    uint32_t parent = 0;
    uint32_t first_child = 0;
    uint32_t child_count = 0;
    uint32_t label_begin = 0;
    uint32_t label_count = 0;
    uint32_t depth = 0;

    bool is_leaf() const { return child_count == 0; }
    bool operator==(const Node&) const = default;
  };

  // Temporary pointer-based form used by the builders.
  struct Draft {
    std::vector<uint32_t> labels;
    std::vector<Draft> children;
  };

  LabelTree() = default;
  static LabelTree from_draft(const Draft& root, uint32_t num_labels);

  uint32_t root() const { return 0; }
  uint32_t size() const { return static_cast<uint32_t>(nodes_.size()); }
  uint32_t num_labels() const { return static_cast<uint32_t>(labels_.size()); }
  const Node& node(uint32_t id) const { return nodes_[id]; }
  const std::vector<Node>& nodes() const { return nodes_; }

  std::span<const uint32_t> leaf_labels(uint32_t id) const {
    const Node& n = nodes_[id];
    return std::span<const uint32_t>(labels_.data() + n.label_begin, n.label_count);
  }
  uint32_t leaf_of(uint32_t label) const { return leaf_of_label_[label]; }
  std::vector<uint32_t> leaves() const;
  // Root-to-node path, root first.
  std::vector<uint32_t> path_to(uint32_t id) const;

  uint32_t depth() const;
  uint32_t max_fanout() const;
  uint32_t max_leaf_labels() const;

  // Throws Error unless the structure is a tree whose leaves partition
  // 0..num_labels-1.
  void validate() const;

  IndexParams params;
  std::vector<BalanceRelaxation> relaxations;

  // Binary layout, little-endian: 8-byte magic "PXTREE01", u32 node count,
  // u32 label count, per node (u32 parent, u32 first_child, u32 child_count,
  // u8 leaf flag, u32 label_begin, u32 label_count), then the flat label
  // array.
  void save(const std::filesystem::path& path) const;
  static LabelTree load(const std::filesystem::path& path);

  bool same_structure(const LabelTree& o) const { return nodes_ == o.nodes_ && labels_ == o.labels_; }

 private:
  void index_labels();

  std::vector<Node> nodes_;
  std::vector<uint32_t> labels_;
  std::vector<uint32_t> leaf_of_label_;
};

// Recursive balanced spherical 2-means. Children of every split differ in size
// by at most one label; nodes with fewer than `max_leaf_size` labels (or a
// single label) become leaves.
LabelTree build_hc(const SparseMatrix& embeddings, uint32_t max_leaf_size, uint64_t seed, unsigned threads = 0);

// Character trie over label strings, collapsed at depth `d_trie`. A label that
// ends at an internal node is moved to a dummy leaf under that node. A node
// holding a single label is a leaf.
LabelTree build_trie(std::span<const std::string> labels, uint32_t d_trie);

// Trie down to `d_trie`, then build_hc inside every trie leaf.
LabelTree build_hybrid(std::span<const std::string> labels, const SparseMatrix& embeddings, uint32_t d_trie,
                       uint32_t max_leaf_size, uint64_t seed, unsigned threads = 0);

// Balanced 2-means where, for every depth d <= d_mlc, labels sharing their
// first d characters stay in one depth-d node.
LabelTree build_mlc(std::span<const std::string> labels, const SparseMatrix& embeddings, uint32_t max_leaf_size,
                    uint32_t d_mlc, uint64_t seed, unsigned threads = 0);

// Dispatches on params.algo. `embeddings` may be empty for the trie.
LabelTree build_index(const IndexParams& params, std::span<const std::string> labels, const SparseMatrix& embeddings);

namespace detail {

// One balanced spherical 2-means split over weighted items (an item is a
// label, or a must-link group of labels). Returns the side (0/1) of each item.
// `relaxed` is set when the weights cannot be split within one label.
struct SplitResult {
  std::vector<uint8_t> side;
  bool relaxed = false;
};
SplitResult balanced_two_means(std::span<const SparseView> items, std::span<const uint32_t> weights, uint64_t dim,
                               uint64_t seed);

}  // namespace detail

}  // namespace prefx
