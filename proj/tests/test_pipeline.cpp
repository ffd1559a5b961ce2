#include <gtest/gtest.h>

#include "fixture.hpp"
#include "prefx/pipeline.hpp"
#include "test_util.hpp"

using namespace prefx;

namespace {

const TemporalSplit& split() {
  static const TemporalSplit s = tu::synth_split(3000, 150, 11);
  return s;
}

}  // namespace

TEST(AblationConfig, TableRows) {
  for (int id = 0; id < kNumAblationConfigs; ++id) {
    auto c = ablation_config(id, 4);
    EXPECT_EQ(c.ablation_id, id);
    EXPECT_EQ(c.index.seed, 4u);
    EXPECT_EQ(c.input_mode, id <= 1 ? InputMode::prev_only : InputMode::prev_concat_prefix);
  }
  EXPECT_EQ(ablation_config(0).embedding, EmbeddingSource::pifa);
  EXPECT_EQ(ablation_config(1).embedding, EmbeddingSource::label_text_simple);
  EXPECT_FALSE(ablation_config(2).position_weighted);
  EXPECT_TRUE(ablation_config(4).position_weighted);
  EXPECT_EQ(ablation_config(5).embedding, EmbeddingSource::label_text_posweighted);
  for (int id = 6; id <= 8; ++id) {
    EXPECT_EQ(ablation_config(id).index.algo, IndexAlgo::hybrid);
    EXPECT_EQ(ablation_config(id).index.d_trie, static_cast<uint32_t>(id - 5));
  }
  EXPECT_EQ(ablation_config(9).index.algo, IndexAlgo::trie);
  EXPECT_FALSE(ablation_config(10).position_weighted);
  EXPECT_EQ(ablation_config(11).index.algo, IndexAlgo::mlc);
  EXPECT_EQ(ablation_config(11).index.d_mlc, 5u);
  EXPECT_THROW(ablation_config(12), Error);
  EXPECT_THROW(ablation_config(-1), Error);
}

TEST(PipelineConfig, JsonRoundTripAndFingerprint) {
  for (int id = 0; id < kNumAblationConfigs; ++id) {
    auto c = ablation_config(id, 9);
    auto back = PipelineConfig::from_json(c.to_json());
    EXPECT_EQ(back.to_json(), c.to_json());
    EXPECT_EQ(back.fingerprint(), c.fingerprint());
    EXPECT_EQ(c.fingerprint().size(), 40u);
  }
  EXPECT_NE(ablation_config(5).fingerprint(), ablation_config(6).fingerprint());
  auto c = ablation_config(5);
  auto threaded = c;
  threaded.train.threads = 7;
  EXPECT_EQ(c.fingerprint(), threaded.fingerprint());
  EXPECT_THROW(PipelineConfig::from_json(nlohmann::json{{"format", "other"}}), Error);
}

TEST(FitVectorizers, LabelVocabOnlyForLabelText) {
  const auto& s = split();
  EXPECT_FALSE(fit_vectorizers(s.train.triplets, s.labels, ablation_config(2)).label_vocab.has_value());
  auto v = fit_vectorizers(s.train.triplets, s.labels, ablation_config(5));
  ASSERT_TRUE(v.label_vocab.has_value());
  EXPECT_TRUE(v.label_vocab->position_weighted());
  EXPECT_EQ(v.encoder.mode(), InputMode::prev_concat_prefix);
}

TEST(EncodeExamples, SkipsUnknownNextQueries) {
  const auto& s = split();
  auto v = fit_vectorizers(s.train.triplets, s.labels, ablation_config(8));
  std::vector<QueryTriplet> mixed = {s.train.triplets[0], {"a", "zzz", "zzz qqq never"}, s.train.triplets[1]};
  auto e = encode_examples(v.encoder, mixed, s.labels, 2);
  ASSERT_EQ(e.label_ids.size(), 2u);
  EXPECT_EQ(e.inputs.rows(), 2u);
  EXPECT_EQ(s.labels.label(e.label_ids[0]), s.train.triplets[0].next_query);
}

TEST(QacModel, FitSaveLoadServesIdenticalSuggestions) {
  tu::TempDir dir("qac");
  const auto& s = split();
  auto cfg = tu::small_config(8);
  auto m = QacModel::fit(s.train.triplets, s.labels, cfg);
  m.save(dir.path());
  auto back = QacModel::load(dir.path());
  EXPECT_EQ(back.config().fingerprint(), m.config().fingerprint());
  for (const auto& t : s.test.triplets) EXPECT_EQ(back.suggest(t.prev_query, t.prefix, 10, 10), m.suggest(t.prev_query, t.prefix, 10, 10));
  const std::string h = directory_content_hash(dir.path());
  tu::TempDir again("qac2");
  QacModel::fit(s.train.triplets, s.labels, cfg).save(again.path());
  EXPECT_EQ(directory_content_hash(again.path()), h);
  EXPECT_THROW(QacModel::load(dir / "missing"), Error);
}

TEST(QacModel, EveryAlgorithmTrains) {
  const auto& s = split();
  for (int id : {0, 3, 5, 7, 9, 11}) {
    FitTimings t;
    auto m = QacModel::fit(s.train.triplets, s.labels, tu::small_config(id), &t);
    EXPECT_EQ(m.tree_model().labels().size(), s.labels.size()) << id;
    EXPECT_GT(t.build_seconds(), 0.0);
    EXPECT_GE(t.total_seconds(), t.build_seconds());
    m.tree_model().tree().validate();
  }
}

TEST(Evaluate, MetricsMatchIndependentRecomputation) {
  const auto& s = split();
  auto m = QacModel::fit(s.train.triplets, s.labels, tu::small_config(8));
  EvalOptions opt;
  opt.latency = false;
  opt.threads = 2;
  auto r = evaluate(m, s.test.triplets, opt);
  ASSERT_EQ(r.examples, s.test.triplets.size());
  std::vector<RankedQueries> mp, bp;
  std::vector<std::string> truths;
  size_t seen = 0;
  for (const auto& t : s.test.triplets) {
    mp.push_back(to_ranked(m.suggest(t.prev_query, t.prefix, opt.beam, opt.k)));
    auto b = m.mfq().suggest(t.prefix);
    if (b.size() > opt.k) b.resize(opt.k);
    bp.push_back(b);
    truths.push_back(t.next_query);
    seen += s.labels.contains(t.next_query);
  }
  EXPECT_DOUBLE_EQ(r.model.mrr, mrr(mp, truths));
  EXPECT_DOUBLE_EQ(r.model.bleu_rr, bleu_rr(mp, truths));
  ASSERT_TRUE(r.baseline);
  EXPECT_DOUBLE_EQ(r.baseline->mrr, mrr(bp, truths));
  EXPECT_DOUBLE_EQ(r.coverage, static_cast<double>(seen) / truths.size());
  EXPECT_NEAR(r.coverage, s.coverage, 1e-12);

  opt.latency = true;
  auto timed = evaluate(m, s.test.triplets, opt);
  EXPECT_DOUBLE_EQ(timed.model.mrr, r.model.mrr);
  EXPECT_GT(timed.model.latency.p50, 0.0);
  EXPECT_LE(timed.model.latency.p50, timed.model.latency.p99);
  EXPECT_LE(timed.baseline->latency.p50, timed.baseline->latency.p99);
}

TEST(Evaluate, SeenSubsetNeverLowersMrr) {
  const auto& s = split();
  EvalOptions opt;
  opt.latency = false;
  opt.baseline = false;
  for (int id : {2, 8}) {
    auto m = QacModel::fit(s.train.triplets, s.labels, tu::small_config(id));
    auto all = evaluate(m, s.test.triplets, opt);
    auto subset = seen_subset(m, s.test.triplets);
    ASSERT_FALSE(subset.empty());
    for (const auto& t : subset) EXPECT_TRUE(s.labels.contains(t.next_query));
    EXPECT_GE(evaluate(m, subset, opt).model.mrr, all.model.mrr);
  }
  auto m = QacModel::fit(s.train.triplets, s.labels, tu::small_config(8));
  std::vector<QueryTriplet> none;
  EXPECT_THROW(evaluate(m, none, opt), Error);
}
