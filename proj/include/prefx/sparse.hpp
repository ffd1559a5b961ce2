#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace prefx {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Read-only view of one sparse row: parallel index/value arrays, indices
// strictly increasing.
struct SparseView {
  std::span<const uint32_t> indices;
  std::span<const double> values;

  size_t size() const { return indices.size(); }
  bool empty() const { return indices.empty(); }
};

// Sorted index/value pairs over a feature space of size `dim`.
struct SparseVector {
  std::vector<uint32_t> indices;
  std::vector<double> values;
  uint32_t dim = 0;
  bool normalized = false;

  SparseVector() = default;
  explicit SparseVector(uint32_t d) : dim(d) {}

  // Builds from unsorted (index, value) pairs. Duplicate indices are summed
  // and exact zeros dropped.
  static SparseVector from_pairs(std::vector<std::pair<uint32_t, double>> pairs, uint32_t dim);

  size_t nnz() const { return indices.size(); }
  bool empty() const { return indices.empty(); }
  SparseView view() const { return {indices, values}; }

  double norm() const;
  // Scales to unit Euclidean norm. A zero vector stays zero and unflagged.
  void normalize();
  // Throws Error if the representation invariants do not hold.
  void validate() const;

  bool operator==(const SparseVector&) const = default;
};

double dot(SparseView a, SparseView b);
inline double dot(const SparseVector& a, const SparseVector& b) { return dot(a.view(), b.view()); }

// Dot product tuned for a short query vector against a possibly long weight
// row: switches from merge to binary search when `w` is much longer than `x`.
// Summation order is always the order of matched indices, so the result is
// identical to `dot`.
double dot_query(SparseView x, SparseView w);

double cosine(const SparseVector& a, const SparseVector& b);

// Concatenates two vectors; indices of `b` are shifted by a.dim.
SparseVector concat(const SparseVector& a, const SparseVector& b);

// Compressed sparse rows. Row i occupies [row_ptr[i], row_ptr[i+1]).
class SparseMatrix {
 public:
  SparseMatrix() = default;
  SparseMatrix(uint64_t rows, uint64_t dim);

  static SparseMatrix from_rows(std::span<const SparseVector> rows, uint64_t dim);

  uint64_t rows() const { return row_ptr_.size() - 1; }
  uint64_t dim() const { return dim_; }
  uint64_t nnz() const { return indices_.size(); }

  SparseView row(uint64_t i) const;
  SparseVector row_vector(uint64_t i) const;
  double row_norm(uint64_t i) const;

  void append_row(SparseView r);
  void append_row(const SparseVector& r) { append_row(r.view()); }

  // Binary layout, little-endian: u64 rows, u64 dim, u64 nnz, then
  // (rows + 1) u64 row pointers, nnz u32 indices, nnz f64 values.
  void save(const std::filesystem::path& path) const;
  static SparseMatrix load(const std::filesystem::path& path);

  bool operator==(const SparseMatrix&) const = default;

 private:
  uint64_t dim_ = 0;
  std::vector<uint64_t> row_ptr_{0};
  std::vector<uint32_t> indices_;
  std::vector<double> values_;
};

}  // namespace prefx
