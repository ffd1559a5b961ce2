#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "prefx/index.hpp"
#include "prefx/solver.hpp"
#include "prefx/sparse.hpp"

namespace prefx {

// Monotone map from a classifier margin to a score in (0, 1].
enum class ScoreTransform {
  cubic_hinge,  // exp(-max(0, 1 - s)^3)
  sigmoid,      // 1 / (1 + exp(-s))
};

std::string_view to_string(ScoreTransform t);
ScoreTransform score_transform_from_string(std::string_view s);

double score_transform(double margin, ScoreTransform t = ScoreTransform::cubic_hinge);

struct TrainParams {
  double reg_C = 1.0;
  double tol = 1e-4;
  double weight_threshold = 0.1;
  int max_epochs = 2000;
  ScoreTransform transform = ScoreTransform::cubic_hinge;
  unsigned threads = 0;
  uint64_t seed = 0;
};

struct TrainStats {
  uint64_t node_problems = 0;
  uint64_t label_problems = 0;
  // Sum over problems of the examples each one saw.
  uint64_t example_visits = 0;
  uint64_t epochs = 0;
  double seconds = 0.0;
};

struct Suggestion {
  std::string query;
  double score = 0.0;
  uint32_t label_id = 0;

  bool operator==(const Suggestion&) const = default;
};

// At most k entries, scores non-increasing, ties in ascending label id.
using SuggestionList = std::vector<Suggestion>;

// Work done by one predict call.
struct PredictStats {
  uint64_t node_evaluations = 0;
  uint64_t label_evaluations = 0;
  uint64_t leaves_reached = 0;
  uint64_t leaves_skipped = 0;

  uint64_t classifier_evaluations() const { return node_evaluations + label_evaluations; }
};

// Label tree plus one linear classifier per non-root node (deciding whether
// to descend into it) and one per label. Weight rows live in `input_dim + 1`
// space; index `input_dim` holds the bias.
class TreeModel {
 public:
  TreeModel() = default;
  TreeModel(LabelTree tree, SparseMatrix node_weights, SparseMatrix label_weights, std::vector<std::string> labels,
            uint32_t input_dim, ScoreTransform transform, double reg_C);

  // Teacher-forced training: the problem at node n sees the examples routed
  // to n's parent by their ground-truth label; those whose label lies under
  // n are positives and the rest (sibling subtrees) are negatives. Label
  // classifiers in a leaf see the examples routed to that leaf.
  static TreeModel train(LabelTree tree, const SparseMatrix& inputs, std::span<const uint32_t> label_ids,
                         std::vector<std::string> labels, const TrainParams& params, TrainStats* stats = nullptr);

  // Beam search: every level keeps the `beam` highest path scores, where a
  // node's path score is its parent's times the transformed margin. Labels in
  // the final leaves are scored by path score times their own transformed
  // margin, filtered to those starting with `prefix`, and the top `k`
  // returned.
  SuggestionList predict(const SparseVector& x, std::string_view prefix, uint32_t beam, uint32_t k,
                         PredictStats* stats = nullptr) const;

  double node_margin(uint32_t node, SparseView x) const { return linear_margin(x, node_weights_.row(node), input_dim_); }
  double label_margin(uint32_t label, SparseView x) const { return linear_margin(x, label_weights_.row(label), input_dim_); }

  const LabelTree& tree() const { return tree_; }
  const SparseMatrix& node_weights() const { return node_weights_; }
  const SparseMatrix& label_weights() const { return label_weights_; }
  const std::vector<std::string>& labels() const { return labels_; }
  uint32_t input_dim() const { return input_dim_; }
  ScoreTransform transform() const { return transform_; }
  double reg_C() const { return reg_C_; }

  // Directory layout: tree.bin, node_weights.bin, label_weights.bin,
  // labels.txt, model.json.
  void save(const std::filesystem::path& dir) const;
  static TreeModel load(const std::filesystem::path& dir);

 private:
  void prepare();
  bool leaf_may_match(uint32_t leaf, std::string_view prefix) const;

  LabelTree tree_;
  SparseMatrix node_weights_;
  SparseMatrix label_weights_;
  std::vector<std::string> labels_;
  uint32_t input_dim_ = 0;
  ScoreTransform transform_ = ScoreTransform::cubic_hinge;
  double reg_C_ = 1.0;
  // Longest common prefix of the labels in each leaf (empty for internal nodes).
  std::vector<std::string> leaf_prefix_;
};

}  // namespace prefx
