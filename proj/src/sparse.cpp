#include "prefx/sparse.hpp"

#include <algorithm>
#include <cmath>

#include "binio.hpp"

namespace prefx {

SparseVector SparseVector::from_pairs(std::vector<std::pair<uint32_t, double>> pairs, uint32_t dim) {
  std::sort(pairs.begin(), pairs.end());
  SparseVector v(dim);
  v.indices.reserve(pairs.size());
  v.values.reserve(pairs.size());
  for (size_t i = 0; i < pairs.size();) {
    uint32_t idx = pairs[i].first;
    double sum = 0.0;
    for (; i < pairs.size() && pairs[i].first == idx; ++i) sum += pairs[i].second;
    if (sum != 0.0) {
      v.indices.push_back(idx);
      v.values.push_back(sum);
    }
  }
  return v;
}

double SparseVector::norm() const {
  double s = 0.0;
  for (double x : values) s += x * x;
  return std::sqrt(s);
}

void SparseVector::normalize() {
  double n = norm();
  if (n == 0.0) {
    normalized = false;
    return;
  }
  for (double& x : values) x /= n;
  normalized = true;
}

void SparseVector::validate() const {
  if (indices.size() != values.size()) throw Error("sparse vector: index/value length mismatch");
  for (size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= dim) throw Error("sparse vector: index out of range");
    if (i > 0 && indices[i] <= indices[i - 1]) throw Error("sparse vector: indices not strictly increasing");
    if (values[i] == 0.0) throw Error("sparse vector: explicit zero");
    if (!std::isfinite(values[i])) throw Error("sparse vector: non-finite value");
  }
  if (normalized && std::abs(norm() - 1.0) > 1e-6) throw Error("sparse vector: flagged normalized but norm != 1");
}

double dot(SparseView a, SparseView b) {
  double s = 0.0;
  size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    if (a.indices[i] < b.indices[j]) {
      ++i;
    } else if (a.indices[i] > b.indices[j]) {
      ++j;
    } else {
      s += a.values[i] * b.values[j];
      ++i;
      ++j;
    }
  }
  return s;
}

double dot_query(SparseView x, SparseView w) {
  if (w.size() <= 8 * x.size() + 16) return dot(x, w);
  double s = 0.0;
  auto lo = w.indices.begin();
  for (size_t i = 0; i < x.size(); ++i) {
    lo = std::lower_bound(lo, w.indices.end(), x.indices[i]);
    if (lo == w.indices.end()) break;
    if (*lo == x.indices[i]) s += x.values[i] * w.values[static_cast<size_t>(lo - w.indices.begin())];
  }
  return s;
}

double cosine(const SparseVector& a, const SparseVector& b) {
  double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot(a, b) / (na * nb);
}

SparseVector concat(const SparseVector& a, const SparseVector& b) {
  SparseVector out(a.dim + b.dim);
  out.indices.reserve(a.nnz() + b.nnz());
  out.values.reserve(a.nnz() + b.nnz());
  out.indices = a.indices;
  out.values = a.values;
  for (size_t i = 0; i < b.nnz(); ++i) {
    out.indices.push_back(b.indices[i] + a.dim);
    out.values.push_back(b.values[i]);
  }
  return out;
}

SparseMatrix::SparseMatrix(uint64_t rows, uint64_t dim) : dim_(dim), row_ptr_(rows + 1, 0) {}

SparseMatrix SparseMatrix::from_rows(std::span<const SparseVector> rows, uint64_t dim) {
  SparseMatrix m;
  m.dim_ = dim;
  size_t total = 0;
  for (const auto& r : rows) total += r.nnz();
  m.indices_.reserve(total);
  m.values_.reserve(total);
  m.row_ptr_.reserve(rows.size() + 1);
  for (const auto& r : rows) m.append_row(r.view());
  return m;
}

SparseView SparseMatrix::row(uint64_t i) const {
  uint64_t b = row_ptr_[i], e = row_ptr_[i + 1];
  return {std::span<const uint32_t>(indices_.data() + b, e - b), std::span<const double>(values_.data() + b, e - b)};
}

SparseVector SparseMatrix::row_vector(uint64_t i) const {
  SparseView r = row(i);
  SparseVector v(static_cast<uint32_t>(dim_));
  v.indices.assign(r.indices.begin(), r.indices.end());
  v.values.assign(r.values.begin(), r.values.end());
  double n = v.norm();
  v.normalized = n != 0.0 && std::abs(n - 1.0) <= 1e-6;
  return v;
}

double SparseMatrix::row_norm(uint64_t i) const {
  double s = 0.0;
  for (double x : row(i).values) s += x * x;
  return std::sqrt(s);
}

void SparseMatrix::append_row(SparseView r) {
  for (uint32_t idx : r.indices) {
    if (idx >= dim_) throw Error("sparse matrix: row index exceeds dim");
  }
  indices_.insert(indices_.end(), r.indices.begin(), r.indices.end());
  values_.insert(values_.end(), r.values.begin(), r.values.end());
  row_ptr_.push_back(indices_.size());
}

void SparseMatrix::save(const std::filesystem::path& path) const {
  binio::Writer w(path.string());
  w.put<uint64_t>(rows());
  w.put<uint64_t>(dim_);
  w.put<uint64_t>(nnz());
  w.put_array<uint64_t>(row_ptr_);
  w.put_array<uint32_t>(indices_);
  w.put_array<double>(values_);
  w.finish();
}

SparseMatrix SparseMatrix::load(const std::filesystem::path& path) {
  binio::Reader r(path.string());
  SparseMatrix m;
  uint64_t rows = r.get<uint64_t>();
  m.dim_ = r.get<uint64_t>();
  uint64_t nnz = r.get<uint64_t>();
  m.row_ptr_ = r.get_array<uint64_t>(rows + 1);
  m.indices_ = r.get_array<uint32_t>(nnz);
  m.values_ = r.get_array<double>(nnz);
  if (m.row_ptr_.front() != 0 || m.row_ptr_.back() != nnz) throw Error("sparse matrix: corrupt row pointers in " + path.string());
  for (size_t i = 1; i < m.row_ptr_.size(); ++i) {
    if (m.row_ptr_[i] < m.row_ptr_[i - 1]) throw Error("sparse matrix: corrupt row pointers in " + path.string());
  }
  for (uint32_t idx : m.indices_) {
    if (idx >= m.dim_) throw Error("sparse matrix: index out of range in " + path.string());
  }
  return m;
}

}  // namespace prefx
