#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "prefx/embed.hpp"
#include "prefx/model.hpp"
#include "oracles.hpp"

using namespace prefx;

namespace {

// Plain dense Newton on 0.5|w|^2 + C sum max(0, 1 - y w.x)^2, x augmented with 1.
struct Dense {
  std::vector<std::vector<double>> x;
  std::vector<double> y;
};

double dense_objective(const Dense& d, const std::vector<double>& w, double C) {
  double f = 0;
  for (double v : w) f += 0.5 * v * v;
  for (size_t i = 0; i < d.x.size(); ++i) {
    double m = std::inner_product(w.begin(), w.end(), d.x[i].begin(), 0.0);
    double xi = std::max(0.0, 1.0 - d.y[i] * m);
    f += C * xi * xi;
  }
  return f;
}

std::vector<double> solve_linear(std::vector<std::vector<double>> a, std::vector<double> b) {
  const size_t n = b.size();
  for (size_t c = 0; c < n; ++c) {
    size_t p = c;
    for (size_t r = c + 1; r < n; ++r)
      if (std::abs(a[r][c]) > std::abs(a[p][c])) p = r;
    std::swap(a[c], a[p]);
    std::swap(b[c], b[p]);
    for (size_t r = c + 1; r < n; ++r) {
      double f = a[r][c] / a[c][c];
      for (size_t k = c; k < n; ++k) a[r][k] -= f * a[c][k];
      b[r] -= f * b[c];
    }
  }
  std::vector<double> x(n);
  for (size_t c = n; c-- > 0;) {
    double s = b[c];
    for (size_t k = c + 1; k < n; ++k) s -= a[c][k] * x[k];
    x[c] = s / a[c][c];
  }
  return x;
}

double newton_optimum(const Dense& d, double C) {
  const size_t m = d.x[0].size();
  std::vector<double> w(m, 0.0);
  for (int it = 0; it < 200; ++it) {
    std::vector<double> g = w;
    std::vector<std::vector<double>> h(m, std::vector<double>(m, 0.0));
    for (size_t j = 0; j < m; ++j) h[j][j] = 1.0;
    for (size_t i = 0; i < d.x.size(); ++i) {
      double mg = std::inner_product(w.begin(), w.end(), d.x[i].begin(), 0.0);
      double xi = 1.0 - d.y[i] * mg;
      if (xi <= 0) continue;
      for (size_t j = 0; j < m; ++j) {
        g[j] -= 2 * C * xi * d.y[i] * d.x[i][j];
        for (size_t k = 0; k < m; ++k) h[j][k] += 2 * C * d.x[i][j] * d.x[i][k];
      }
    }
    double gn = std::sqrt(std::inner_product(g.begin(), g.end(), g.begin(), 0.0));
    if (gn < 1e-11) break;
    auto step = solve_linear(h, g);
    double f0 = dense_objective(d, w, C), t = 1.0;
    double slope = std::inner_product(g.begin(), g.end(), step.begin(), 0.0);
    std::vector<double> cand(m);
    for (;;) {
      for (size_t j = 0; j < m; ++j) cand[j] = w[j] - t * step[j];
      if (dense_objective(d, cand, C) <= f0 - 1e-4 * t * slope || t < 1e-12) break;
      t *= 0.5;
    }
    w = cand;
  }
  return dense_objective(d, w, C);
}

Dense to_dense(const std::vector<SparseVector>& xs, const std::vector<int8_t>& ys, uint32_t dim) {
  Dense d;
  for (size_t i = 0; i < xs.size(); ++i) {
    auto row = tu::dense(xs[i]);
    row.resize(dim);
    row.push_back(1.0);
    d.x.push_back(row);
    d.y.push_back(ys[i]);
  }
  return d;
}

double weights_objective(const SparseVector& w, const Dense& d, double C) {
  std::vector<double> dw(w.dim, 0.0);
  for (size_t i = 0; i < w.nnz(); ++i) dw[w.indices[i]] = w.values[i];
  return dense_objective(d, dw, C);
}

using tu::exhaustive;
using tu::path_score;
using tu::random_model;
using tu::random_prefix;
using tu::random_tree;
using tu::random_weights;

}  // namespace

TEST(ScoreTransform, CubicHingeValues) {
  EXPECT_DOUBLE_EQ(score_transform(1.0), 1.0);
  EXPECT_DOUBLE_EQ(score_transform(3.0), 1.0);
  EXPECT_NEAR(score_transform(0.0), std::exp(-1.0), 1e-15);
  EXPECT_NEAR(score_transform(-1.0), std::exp(-8.0), 1e-18);
  EXPECT_NEAR(score_transform(-1.0), 3.355e-4, 1e-7);
  EXPECT_DOUBLE_EQ(score_transform(0.0, ScoreTransform::sigmoid), 0.5);
}

TEST(ScoreTransform, MonotoneAndInUnitInterval) {
  for (auto tf : {ScoreTransform::cubic_hinge, ScoreTransform::sigmoid}) {
    double prev = 0.0;
    for (double s = -3.0; s <= 5.0; s += 0.01) {
      double v = score_transform(s, tf);
      EXPECT_GT(v, 0.0);
      EXPECT_LE(v, 1.0);
      EXPECT_GE(v, prev);
      prev = v;
    }
    EXPECT_EQ(score_transform_from_string(to_string(tf)), tf);
  }
  EXPECT_THROW(score_transform_from_string("tanh"), Error);
}

TEST(Solver, MatchesDenseNewtonOptimum) {
  std::mt19937_64 rng(21);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int trial = 0; trial < 25; ++trial) {
    const uint32_t dim = 3 + rng() % 8;
    const size_t n = 10 + rng() % 80;
    std::vector<SparseVector> xs;
    std::vector<int8_t> ys;
    std::vector<double> truth(dim);
    for (double& t : truth) t = g(rng);
    for (size_t i = 0; i < n; ++i) {
      auto x = tu::random_unit(rng, dim, 1 + rng() % dim);
      double m = 0;
      for (size_t k = 0; k < x.nnz(); ++k) m += truth[x.indices[k]] * x.values[k];
      xs.push_back(x);
      ys.push_back((m + 0.3 * g(rng)) > 0 ? 1 : -1);
    }
    if (std::none_of(ys.begin(), ys.end(), [](int8_t y) { return y > 0; })) ys[0] = 1;
    const double C = std::pow(10.0, -1.0 + (rng() % 30) / 10.0);
    std::vector<SparseView> views;
    for (auto& x : xs) views.push_back(x.view());
    SolverParams p;
    p.reg_C = C;
    p.tol = 1e-7;
    p.max_epochs = 100000;
    p.weight_threshold = 0.0;
    p.seed = trial;
    SquaredHingeSolver solver(dim);
    auto r = solver.solve(views, ys, p);
    auto d = to_dense(xs, ys, dim);
    const double ref = newton_optimum(d, C);
    EXPECT_NEAR(weights_objective(r.weights, d, C), ref, 1e-4 * std::max(1.0, ref)) << "trial " << trial;
    EXPECT_NEAR(r.objective, ref, 1e-4 * std::max(1.0, ref));
    EXPECT_LE(r.gap, 1e-7 * r.objective + 1e-15);
    EXPECT_NEAR(squared_hinge_objective(r.weights, views, ys, C, true), weights_objective(r.weights, d, C), 1e-9);
  }
}

TEST(Solver, NoPositivesGivesZeroWeights) {
  auto x = SparseVector::from_pairs({{0, 1.0}}, 2);
  std::vector<SparseView> v{x.view(), x.view()};
  std::vector<int8_t> y{-1, -1};
  SquaredHingeSolver s(2);
  auto r = s.solve(v, y, SolverParams{});
  EXPECT_TRUE(r.weights.empty());
  EXPECT_EQ(r.weights.dim, 3u);
}

TEST(Train, TenLabelFlatModelMatchesNewtonPerLabel) {
  std::mt19937_64 rng(22);
  const uint32_t dim = 6, L = 10;
  std::vector<SparseVector> xs;
  std::vector<uint32_t> ys;
  for (uint32_t l = 0; l < L; ++l)
    for (int c = 0; c < 4 + static_cast<int>(rng() % 4); ++c) {
      xs.push_back(tu::random_unit(rng, dim, 3));
      ys.push_back(l);
    }
  std::vector<std::string> labels;
  for (uint32_t l = 0; l < L; ++l) labels.push_back("q" + std::to_string(l));
  auto inputs = SparseMatrix::from_rows(xs, dim);
  auto tree = build_hc(SparseMatrix::from_rows(std::vector<SparseVector>(L, SparseVector::from_pairs({{0, 1.0}}, 1)), 1), 100, 0);
  ASSERT_EQ(tree.size(), 1u);
  TrainParams tp;
  tp.tol = 1e-7;
  tp.weight_threshold = 0.0;
  tp.max_epochs = 100000;
  tp.threads = 2;
  auto model = TreeModel::train(tree, inputs, ys, labels, tp);
  for (uint32_t l = 0; l < L; ++l) {
    std::vector<int8_t> y;
    for (uint32_t v : ys) y.push_back(v == l ? 1 : -1);
    auto d = to_dense(xs, y, dim);
    EXPECT_NEAR(weights_objective(model.label_weights().row_vector(l), d, 1.0), newton_optimum(d, 1.0), 1e-4) << l;
  }
}

TEST(Train, SeparableTwoLabelsReachUnitMargin) {
  std::vector<std::string> labels = {"a", "b"};
  auto tree = build_trie(labels, 4);
  ASSERT_EQ(tree.node(0).child_count, 2u);
  std::vector<SparseVector> xs;
  std::vector<uint32_t> ys;
  for (int i = 0; i < 10; ++i) {
    xs.push_back(SparseVector::from_pairs({{0, 1.0}, {2, 0.1 * i}}, 3));
    ys.push_back(0);
    xs.push_back(SparseVector::from_pairs({{1, 1.0}, {2, 0.1 * i}}, 3));
    ys.push_back(1);
  }
  TrainParams tp;
  tp.reg_C = 1e6;
  tp.tol = 1e-9;
  tp.max_epochs = 100000;
  tp.weight_threshold = 0.0;
  auto m = TreeModel::train(tree, SparseMatrix::from_rows(xs, 3), ys, labels, tp);
  for (size_t i = 0; i < xs.size(); ++i) {
    const uint32_t own = m.tree().leaf_of(ys[i]), other = m.tree().leaf_of(1 - ys[i]);
    // squared hinge with finite C stops a hair short of 1
    EXPECT_GE(m.node_margin(own, xs[i].view()), 1.0 - 1e-4);
    EXPECT_LE(m.node_margin(other, xs[i].view()), -1.0 + 1e-4);
    EXPECT_GE(m.label_margin(ys[i], xs[i].view()), 1.0 - 1e-4);
  }
}

TEST(Train, TeacherForcedProblemSizes) {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 10; ++trial) {
    auto labels = tu::random_model_labels(rng, 5 + rng() % 40);
    auto tree = random_tree(rng, labels);
    std::vector<SparseVector> xs;
    std::vector<uint32_t> ys;
    for (uint32_t l = 0; l < labels.size(); ++l)
      for (int c = 1 + rng() % 3; c > 0; --c) {
        xs.push_back(tu::random_unit(rng, 30, 4));
        ys.push_back(l);
      }
    // examples reaching each node by ground-truth routing
    std::vector<uint64_t> reach(tree.size(), 0);
    for (uint32_t l : ys)
      for (uint32_t n : tree.path_to(tree.leaf_of(l))) ++reach[n];
    uint64_t visits = 0, node_problems = 0;
    for (uint32_t n = 0; n < tree.size(); ++n) {
      const auto& nd = tree.node(n);
      if (nd.is_leaf()) visits += reach[n] * nd.label_count;
      else visits += reach[n] * nd.child_count, node_problems += nd.child_count;
    }
    TrainStats st;
    TrainParams tp;
    tp.threads = 1 + trial % 3;
    auto m = TreeModel::train(tree, SparseMatrix::from_rows(xs, 30), ys, labels, tp, &st);
    EXPECT_EQ(st.example_visits, visits);
    EXPECT_EQ(st.node_problems, node_problems);
    EXPECT_EQ(st.label_problems, labels.size());
    EXPECT_TRUE(m.node_weights().row(0).empty());
    for (uint64_t r = 0; r < m.node_weights().rows(); ++r)
      for (double v : m.node_weights().row(r).values) EXPECT_TRUE(std::isfinite(v));
  }
}

TEST(Train, ThreadCountDoesNotChangeWeights) {
  std::mt19937_64 rng(24);
  auto labels = tu::random_model_labels(rng, 40);
  auto tree = random_tree(rng, labels);
  std::vector<SparseVector> xs;
  std::vector<uint32_t> ys;
  for (uint32_t l = 0; l < labels.size(); ++l)
    for (int c = 0; c < 3; ++c) xs.push_back(tu::random_unit(rng, 50, 5)), ys.push_back(l);
  auto in = SparseMatrix::from_rows(xs, 50);
  TrainParams a, b;
  a.threads = 1;
  b.threads = 3;
  auto ma = TreeModel::train(tree, in, ys, labels, a), mb = TreeModel::train(tree, in, ys, labels, b);
  EXPECT_TRUE(ma.node_weights() == mb.node_weights());
  EXPECT_TRUE(ma.label_weights() == mb.label_weights());
}

TEST(Train, Errors) {
  std::vector<std::string> labels = {"a", "b"};
  auto tree = build_trie(labels, 2);
  auto x = SparseMatrix::from_rows(std::vector{SparseVector::from_pairs({{0, 1.0}}, 1)}, 1);
  EXPECT_THROW(TreeModel::train(tree, x, std::vector<uint32_t>{2}, labels, TrainParams{}), Error);
  EXPECT_THROW(TreeModel::train(tree, x, std::vector<uint32_t>{0, 1}, labels, TrainParams{}), Error);
}

TEST(Predict, FullBeamEqualsExhaustiveScoring) {
  std::mt19937_64 rng(25);
  for (int trial = 0; trial < 200; ++trial) {
    auto m = random_model(rng, 2 + rng() % 63, 20);
    const uint32_t B = static_cast<uint32_t>(m.tree().leaves().size());
    for (int q = 0; q < 5; ++q) {
      auto x = tu::random_unit(rng, 20, 1 + rng() % 8);
      auto prefix = random_prefix(rng, m);
      const uint32_t k = 1 + rng() % 12;
      auto got = m.predict(x, prefix, B, k);
      auto want = exhaustive(m, x, prefix, k);
      ASSERT_EQ(got.size(), want.size()) << "trial " << trial;
      for (size_t i = 0; i < got.size(); ++i) {
        EXPECT_EQ(got[i].label_id, want[i].second);
        EXPECT_NEAR(got[i].score, want[i].first, 1e-12);
        EXPECT_EQ(got[i].query, m.labels()[got[i].label_id]);
      }
    }
  }
}

TEST(Predict, ScoresFactorAlongPath) {
  std::mt19937_64 rng(26);
  for (int trial = 0; trial < 100; ++trial) {
    auto m = random_model(rng, 2 + rng() % 63, 20, trial % 2 ? ScoreTransform::sigmoid : ScoreTransform::cubic_hinge);
    auto x = tu::random_unit(rng, 20, 6);
    auto got = m.predict(x, "", 1 + rng() % 4, 10);
    for (const auto& s : got) EXPECT_NEAR(s.score, path_score(m, s.label_id, x), 1e-9);
  }
}

TEST(Predict, BeamOneFollowsArgmaxPath) {
  const std::vector<std::string> labels = {"a", "ab", "abfgh", "abfgi", "abd", "bcde", "bcdf", "bcg"};
  std::mt19937_64 rng(27);
  for (int trial = 0; trial < 100; ++trial) {
    LabelTree tree = trial % 2 ? build_trie(labels, 16) : build_hybrid(labels, label_text_embed(labels, TfidfVocab::fit(labels, VocabKind::char_ngram, 1)).matrix, 1, 1, 0, 1);
    TreeModel m(tree, random_weights(rng, tree.size(), 10), random_weights(rng, 8, 10), labels, 10, ScoreTransform::sigmoid, 1.0);
    auto x = tu::random_unit(rng, 10, 4);
    uint32_t id = 0;
    while (!m.tree().node(id).is_leaf()) {
      const auto& n = m.tree().node(id);
      uint32_t best = n.first_child;
      for (uint32_t c = n.first_child; c < n.first_child + n.child_count; ++c)
        if (m.node_margin(c, x.view()) > m.node_margin(best, x.view())) best = c;
      id = best;
    }
    auto leaf = m.tree().leaf_labels(id);
    for (const auto& s : m.predict(x, "", 1, 8)) EXPECT_NE(std::find(leaf.begin(), leaf.end(), s.label_id), leaf.end());
  }
}

TEST(Predict, WorkStaysWithinComplexityBound) {
  std::mt19937_64 rng(28);
  for (int trial = 0; trial < 100; ++trial) {
    auto m = random_model(rng, 2 + rng() % 200, 20);
    const auto& t = m.tree();
    for (uint32_t B : {1u, 2u, 5u, 10u}) {
      PredictStats st;
      m.predict(tu::random_unit(rng, 20, 5), random_prefix(rng, m), B, 10, &st);
      EXPECT_LE(st.classifier_evaluations(), uint64_t{B} * (t.max_fanout() * t.depth() + t.max_leaf_labels()));
      EXPECT_LE(st.leaves_reached, B);
    }
  }
}

TEST(Predict, LargerBeamRarelyDropsGoodLabels) {
  std::mt19937_64 rng(29);
  size_t checked = 0, violations = 0;
  for (int trial = 0; trial < 100; ++trial) {
    auto m = random_model(rng, 20 + rng() % 44, 20);
    for (int q = 0; q < 10; ++q) {
      auto x = tu::random_unit(rng, 20, 5);
      const uint32_t B = 1 + rng() % 4, k = 5;
      auto small = m.predict(x, "", B, k), big = m.predict(x, "", 2 * B, k);
      auto top = exhaustive(m, x, "", k);
      for (const auto& s : small) {
        if (std::none_of(top.begin(), top.end(), [&](auto& p) { return p.second == s.label_id; })) continue;
        ++checked;
        violations += std::none_of(big.begin(), big.end(), [&](auto& b) { return b.label_id == s.label_id; });
      }
    }
  }
  ASSERT_GT(checked, 500u);
  EXPECT_LE(static_cast<double>(violations) / checked, 0.02) << violations << " of " << checked;
}

TEST(Predict, PrefixSoundnessAndListInvariants) {
  std::mt19937_64 rng(30);
  for (int trial = 0; trial < 200; ++trial) {
    auto m = random_model(rng, 2 + rng() % 100, 20);
    auto prefix = random_prefix(rng, m);
    auto got = m.predict(tu::random_unit(rng, 20, 5), prefix, 1 + rng() % 8, 1 + rng() % 10);
    std::set<uint32_t> ids;
    for (size_t i = 0; i < got.size(); ++i) {
      EXPECT_TRUE(got[i].query.starts_with(prefix));
      EXPECT_GT(got[i].score, 0.0);
      EXPECT_LE(got[i].score, 1.0);
      if (i) EXPECT_LE(got[i].score, got[i - 1].score);
      EXPECT_TRUE(ids.insert(got[i].label_id).second);
    }
    if (prefix == "zz") EXPECT_TRUE(got.empty());
  }
}

TEST(Predict, LeafSkippingDoesNotChangeOutput) {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 100; ++trial) {
    auto m = random_model(rng, 10 + rng() % 54, 20);
    auto x = tu::random_unit(rng, 20, 5);
    const uint32_t B = 1 + rng() % 5;
    auto prefix = random_prefix(rng, m);
    // unfiltered beam output, filtered afterwards
    auto all = m.predict(x, "", B, 1000);
    std::vector<Suggestion> want;
    for (auto& s : all)
      if (s.query.starts_with(prefix) && want.size() < 10) want.push_back(s);
    EXPECT_EQ(m.predict(x, prefix, B, 10), want);
  }
}

TEST(Predict, SingleLeafIsFlatForAnyBeam) {
  std::mt19937_64 rng(32);
  auto labels = tu::random_model_labels(rng, 30);
  auto tree = build_hc(SparseMatrix::from_rows(std::vector<SparseVector>(30, SparseVector::from_pairs({{0, 1.0}}, 1)), 1), 100, 0);
  TreeModel m(tree, random_weights(rng, 1, 15), random_weights(rng, 30, 15), labels, 15, ScoreTransform::cubic_hinge, 1.0);
  for (uint32_t B : {1u, 3u, 50u}) {
    auto x = tu::random_unit(rng, 15, 5);
    auto got = m.predict(x, "", B, 30);
    auto want = exhaustive(m, x, "", 30);
    ASSERT_EQ(got.size(), want.size());
    for (size_t i = 0; i < got.size(); ++i) EXPECT_EQ(got[i].label_id, want[i].second);
  }
}

TEST(Predict, Errors) {
  std::mt19937_64 rng(33);
  auto m = random_model(rng, 5, 10);
  auto x = tu::random_unit(rng, 10, 3);
  EXPECT_THROW(m.predict(x, "", 0, 10), Error);
  EXPECT_THROW(m.predict(x, "", 10, 0), Error);
}

TEST(TreeModel, SaveLoadRoundTripIsExact) {
  tu::TempDir dir("model");
  std::mt19937_64 rng(34);
  auto labels = tu::random_model_labels(rng, 60);
  auto tree = random_tree(rng, labels);
  std::vector<SparseVector> xs;
  std::vector<uint32_t> ys;
  for (uint32_t l = 0; l < labels.size(); ++l)
    for (int c = 0; c < 2; ++c) xs.push_back(tu::random_unit(rng, 40, 5)), ys.push_back(l);
  auto m = TreeModel::train(tree, SparseMatrix::from_rows(xs, 40), ys, labels, TrainParams{});
  m.save(dir.path());
  auto back = TreeModel::load(dir.path());
  EXPECT_TRUE(back.tree().same_structure(m.tree()));
  EXPECT_TRUE(back.node_weights() == m.node_weights());
  EXPECT_TRUE(back.label_weights() == m.label_weights());
  EXPECT_EQ(back.labels(), m.labels());
  EXPECT_EQ(back.input_dim(), m.input_dim());
  EXPECT_EQ(back.transform(), m.transform());
  for (int q = 0; q < 50; ++q) {
    auto x = tu::random_unit(rng, 40, 5);
    auto prefix = random_prefix(rng, m);
    EXPECT_EQ(back.predict(x, prefix, 5, 10), m.predict(x, prefix, 5, 10));
  }
  std::filesystem::remove(dir / "label_weights.bin");
  EXPECT_THROW(TreeModel::load(dir.path()), Error);
}
