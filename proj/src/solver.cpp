#include "prefx/solver.hpp"

#include <algorithm>
#include <cmath>

#include "prefx/corpus.hpp"

namespace prefx {

double linear_margin(SparseView x, SparseView w, uint32_t input_dim) {
  double s = dot_query(x, w);
  if (!w.empty() && w.indices.back() == input_dim) s += w.values.back();
  return s;
}

void SquaredHingeSolver::reset_weights() {
  if (w_.size() < static_cast<size_t>(dim_) + 1) {
    w_.assign(static_cast<size_t>(dim_) + 1, 0.0);
    marked_.assign(static_cast<size_t>(dim_) + 1, 0);
  }
  for (uint32_t i : touched_) {
    w_[i] = 0.0;
    marked_[i] = 0;
  }
  touched_.clear();
}

double SquaredHingeSolver::margin(SparseView x, bool bias) const {
  double s = bias ? w_[dim_] : 0.0;
  for (size_t k = 0; k < x.size(); ++k) s += w_[x.indices[k]] * x.values[k];
  return s;
}

void SquaredHingeSolver::axpy(double a, SparseView x, bool bias) {
  for (size_t k = 0; k < x.size(); ++k) w_[x.indices[k]] += a * x.values[k];
  if (bias) w_[dim_] += a;
}

SolverResult SquaredHingeSolver::solve(std::span<const SparseView> inputs, std::span<const int8_t> labels,
                                       const SolverParams& p) {
  if (inputs.size() != labels.size()) throw Error("solver: inputs and labels differ in length");
  const size_t n = inputs.size();
  const uint32_t out_dim = p.bias ? dim_ + 1 : dim_;
  SolverResult res;
  res.weights = SparseVector(out_dim);
  bool any_positive = std::any_of(labels.begin(), labels.end(), [](int8_t y) { return y > 0; });
  if (n == 0 || !any_positive) return res;

  reset_weights();
  for (const auto& x : inputs) {
    for (uint32_t i : x.indices) {
      if (i >= dim_) throw Error("solver: feature index out of range");
      if (!marked_[i]) {
        marked_[i] = 1;
        touched_.push_back(i);
      }
    }
  }
  if (p.bias) {
    marked_[dim_] = 1;
    touched_.push_back(dim_);
  }

  const double d_ii = 1.0 / (2.0 * p.reg_C);
  alpha_.assign(n, 0.0);
  diag_.resize(n);
  for (size_t i = 0; i < n; ++i) {
    double sq = p.bias ? 1.0 : 0.0;
    for (double v : inputs[i].values) sq += v * v;
    diag_[i] = sq + d_ii;
  }
  order_.resize(n);
  for (size_t i = 0; i < n; ++i) order_[i] = static_cast<uint32_t>(i);

  uint64_t rng = p.seed;
  for (int epoch = 1; epoch <= p.max_epochs; ++epoch) {
    for (size_t i = n; i > 1; --i) {
      rng = splitmix64(rng);
      std::swap(order_[i - 1], order_[rng % i]);
    }
    for (uint32_t i : order_) {
      const double y = labels[i];
      const double g = y * margin(inputs[i], p.bias) - 1.0 + d_ii * alpha_[i];
      const double pg = alpha_[i] == 0.0 ? std::min(g, 0.0) : g;
      if (pg == 0.0) continue;
      const double a_new = std::max(alpha_[i] - g / diag_[i], 0.0);
      const double delta = a_new - alpha_[i];
      if (delta == 0.0) continue;
      alpha_[i] = a_new;
      axpy(delta * y, inputs[i], p.bias);
    }

    double wsq = 0.0;
    for (uint32_t i : touched_) wsq += w_[i] * w_[i];
    double loss = 0.0, asum = 0.0, asq = 0.0;
    for (size_t i = 0; i < n; ++i) {
      double xi = std::max(0.0, 1.0 - labels[i] * margin(inputs[i], p.bias));
      loss += xi * xi;
      asum += alpha_[i];
      asq += alpha_[i] * alpha_[i];
    }
    const double primal = 0.5 * wsq + p.reg_C * loss;
    const double dual = asum - 0.5 * wsq - asq / (4.0 * p.reg_C);
    res.objective = primal;
    res.gap = primal - dual;
    res.epochs = epoch;
    if (res.gap <= p.tol * std::abs(primal)) break;
  }

  std::sort(touched_.begin(), touched_.end());
  res.weights.indices.reserve(touched_.size());
  res.weights.values.reserve(touched_.size());
  for (uint32_t i : touched_) {
    const double v = w_[i];
    if (v == 0.0) continue;
    if (i != dim_ && std::abs(v) < p.weight_threshold) continue;
    res.weights.indices.push_back(i);
    res.weights.values.push_back(v);
  }
  return res;
}

double squared_hinge_objective(const SparseVector& w, std::span<const SparseView> inputs, std::span<const int8_t> labels,
                               double reg_C, bool bias) {
  const uint32_t input_dim = bias ? w.dim - 1 : w.dim;
  double wsq = 0.0;
  for (double v : w.values) wsq += v * v;
  double loss = 0.0;
  for (size_t i = 0; i < inputs.size(); ++i) {
    double m = linear_margin(inputs[i], w.view(), bias ? input_dim : UINT32_MAX);
    double xi = std::max(0.0, 1.0 - labels[i] * m);
    loss += xi * xi;
  }
  return 0.5 * wsq + reg_C * loss;
}

}  // namespace prefx
