#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "prefx/embed.hpp"
#include "test_util.hpp"

using namespace prefx;

namespace {

// dense sum-and-normalize
std::vector<std::vector<double>> brute_pifa(const std::vector<SparseVector>& xs, const std::vector<uint32_t>& ys,
                                            uint32_t labels, uint32_t dim) {
  std::vector<std::vector<double>> out(labels, std::vector<double>(dim, 0.0));
  for (size_t i = 0; i < xs.size(); ++i) {
    auto d = tu::dense(xs[i]);
    for (uint32_t j = 0; j < dim; ++j) out[ys[i]][j] += d[j];
  }
  for (auto& row : out) {
    double s = 0;
    for (double v : row) s += v * v;
    if (s > 0)
      for (double& v : row) v /= std::sqrt(s);
  }
  return out;
}

std::vector<double> dense_row(const SparseMatrix& m, uint64_t r) {
  auto v = m.row_vector(r);
  v.dim = static_cast<uint32_t>(m.dim());
  return tu::dense(v);
}

}  // namespace

TEST(Pifa, ToyCaseMatchesBruteForce) {
  std::vector<SparseVector> xs = {
      SparseVector::from_pairs({{0, 1.0}, {2, 2.0}}, 5), SparseVector::from_pairs({{1, 1.0}}, 5),
      SparseVector::from_pairs({{0, -1.0}, {4, 3.0}}, 5), SparseVector::from_pairs({{2, 0.5}, {3, 0.5}}, 5)};
  std::vector<uint32_t> ys = {0, 1, 0, 2};
  auto emb = pifa_embed(SparseMatrix::from_rows(xs, 5), ys, 3);
  auto ref = brute_pifa(xs, ys, 3, 5);
  ASSERT_EQ(emb.num_labels(), 3u);
  for (uint32_t l = 0; l < 3; ++l) {
    auto got = dense_row(emb.matrix, l);
    for (uint32_t j = 0; j < 5; ++j) EXPECT_NEAR(got[j], ref[l][j], 1e-9);
  }
  EXPECT_TRUE(emb.zero_rows.empty());
}

TEST(Pifa, RandomCasesMatchBruteForceAndArePermutationInvariant) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 30; ++trial) {
    const uint32_t labels = 1 + rng() % 12, dim = 40;
    std::vector<SparseVector> xs;
    std::vector<uint32_t> ys;
    for (uint32_t l = 0; l < labels; ++l) {
      for (int c = 1 + rng() % 4; c > 0; --c) {
        xs.push_back(tu::random_unit(rng, dim, 1 + rng() % 8));
        ys.push_back(l);
      }
    }
    auto emb = pifa_embed(SparseMatrix::from_rows(xs, dim), ys, labels);
    auto ref = brute_pifa(xs, ys, labels, dim);
    for (uint32_t l = 0; l < labels; ++l) {
      auto got = dense_row(emb.matrix, l);
      for (uint32_t j = 0; j < dim; ++j) ASSERT_NEAR(got[j], ref[l][j], 1e-9);
      if (!emb.matrix.row(l).empty()) EXPECT_NEAR(emb.matrix.row_norm(l), 1.0, 1e-12);
    }

    std::vector<size_t> perm(xs.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<SparseVector> px;
    std::vector<uint32_t> py;
    for (size_t i : perm) {
      px.push_back(xs[i]);
      py.push_back(ys[i]);
    }
    auto again = pifa_embed(SparseMatrix::from_rows(px, dim), py, labels);
    EXPECT_TRUE(again.matrix == emb.matrix);
  }
}

TEST(Pifa, SingleAndRepeatedPositives) {
  auto x = SparseVector::from_pairs({{1, 3.0}, {2, 4.0}}, 3);
  auto one = pifa_embed(SparseMatrix::from_rows(std::vector{x}, 3), std::vector<uint32_t>{0}, 1);
  auto two = pifa_embed(SparseMatrix::from_rows(std::vector{x, x}, 3), std::vector<uint32_t>{0, 0}, 1);
  auto r = one.matrix.row_vector(0);
  EXPECT_DOUBLE_EQ(r.values[0], 0.6);
  EXPECT_DOUBLE_EQ(r.values[1], 0.8);
  EXPECT_TRUE(one.matrix == two.matrix);
}

TEST(Pifa, ZeroSumRowIsFlagged) {
  auto a = SparseVector::from_pairs({{0, 1.0}}, 2);
  auto b = SparseVector::from_pairs({{0, -1.0}}, 2);
  auto c = SparseVector::from_pairs({{1, 1.0}}, 2);
  auto emb = pifa_embed(SparseMatrix::from_rows(std::vector{a, b, c}, 2), std::vector<uint32_t>{0, 0, 1}, 2);
  EXPECT_EQ(emb.zero_rows, std::vector<uint32_t>{0});
  EXPECT_TRUE(emb.matrix.row(0).empty());
}

TEST(Pifa, Errors) {
  auto x = SparseVector::from_pairs({{0, 1.0}}, 2);
  auto m = SparseMatrix::from_rows(std::vector{x}, 2);
  EXPECT_THROW(pifa_embed(m, std::vector<uint32_t>{0}, 2), Error);  // label 1 has no example
  EXPECT_THROW(pifa_embed(m, std::vector<uint32_t>{5}, 2), Error);
  EXPECT_THROW(pifa_embed(m, std::vector<uint32_t>{0, 0}, 1), Error);
}

TEST(LabelText, RowsFollowVocabulary) {
  std::vector<std::string> labels = {"nike shoes", "nike shirt", "shorts nike", "nike shoes x"};
  for (bool pw : {false, true}) {
    auto vocab = TfidfVocab::fit(labels, VocabKind::char_ngram, 1, pw);
    auto emb = label_text_embed(labels, vocab);
    EXPECT_EQ(emb.source, pw ? EmbeddingSource::label_text_posweighted : EmbeddingSource::label_text_simple);
    for (uint32_t l = 0; l < labels.size(); ++l) {
      auto v = vocab.vectorize(labels[l]);
      auto r = emb.matrix.row_vector(l);
      EXPECT_EQ(r.indices, v.indices);
      EXPECT_EQ(r.values, v.values);
      EXPECT_NEAR(emb.matrix.row_norm(l), 1.0, 1e-12);
    }
    auto twice = label_text_embed(std::vector<std::string>{"nike shoes", "nike shoes"}, vocab);
    EXPECT_TRUE(twice.matrix.row_vector(0) == twice.matrix.row_vector(1));
  }
}

TEST(LabelText, PositionWeightingPullsSharedStartsTogether) {
  std::vector<std::string> labels = {"nike shoes", "nike shirt", "shorts nike"};
  auto vocab = TfidfVocab::fit(labels, VocabKind::char_ngram, 1, true);
  auto emb = label_text_embed(labels, vocab);
  auto r0 = emb.matrix.row_vector(0), r1 = emb.matrix.row_vector(1), r2 = emb.matrix.row_vector(2);
  EXPECT_GT(dot(r0, r1), dot(r0, r2));
  EXPECT_NEAR(dot(r0, r0), 1.0, 1e-12);
}

TEST(EmbeddingSource, Names) {
  for (auto s : {EmbeddingSource::pifa, EmbeddingSource::label_text_simple, EmbeddingSource::label_text_posweighted})
    EXPECT_EQ(embedding_source_from_string(to_string(s)), s);
  EXPECT_THROW(embedding_source_from_string("dense"), Error);
}
