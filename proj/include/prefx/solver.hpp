#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "prefx/sparse.hpp"

namespace prefx {

struct SolverParams {
  // Weight of the loss term.
  double reg_C = 1.0;
  // Stop once the duality gap is at most tol times the primal objective; the
  // remaining possible relative improvement is then below tol.
  double tol = 1e-4;
  int max_epochs = 2000;
  // Appends a constant-1 feature at index `dim` whose weight acts as a bias.
  bool bias = true;
  // Entries with |w| below this are dropped after solving (the bias is kept).
  double weight_threshold = 0.0;
  uint64_t seed = 0;
};

struct SolverResult {
  SparseVector weights;
  double objective = 0.0;  // primal objective before thresholding
  double gap = 0.0;
  int epochs = 0;
};

// Binary linear classifier with L2 regularization and squared hinge loss:
//
//   min_w  0.5 * |w|^2 + C * sum_i max(0, 1 - y_i * w.x_i)^2
//
// solved by dual coordinate descent. `labels` hold +1 / -1.
class SquaredHingeSolver {
 public:
  explicit SquaredHingeSolver(uint32_t dim) : dim_(dim) {}

  SolverResult solve(std::span<const SparseView> inputs, std::span<const int8_t> labels, const SolverParams& params);

  uint32_t dim() const { return dim_; }

 private:
  void reset_weights();
  double margin(SparseView x, bool bias) const;
  void axpy(double a, SparseView x, bool bias);

  uint32_t dim_;
  std::vector<double> w_;
  std::vector<uint8_t> marked_;
  std::vector<uint32_t> touched_;
  std::vector<double> alpha_;
  std::vector<double> diag_;
  std::vector<uint32_t> order_;
};

// Primal objective of `w` (dimension dim, or dim + 1 with bias) on the data.
double squared_hinge_objective(const SparseVector& w, std::span<const SparseView> inputs, std::span<const int8_t> labels,
                               double reg_C, bool bias);

// Margin w.x including the bias entry stored at index x-space dim, if present.
double linear_margin(SparseView x, SparseView w, uint32_t input_dim);

}  // namespace prefx
