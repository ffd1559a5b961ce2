#include "prefx/pipeline.hpp"

#include <chrono>
#include <fstream>

#include "parallel.hpp"

namespace prefx {

namespace {

constexpr const char* kConfigFormat = "prefx-pipeline-config/1";

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::trunc);
  out << j.dump(2) << '\n';
  if (!out) throw Error("write failed: " + path.string());
}

}  // namespace

nlohmann::json PipelineConfig::to_json() const {
  nlohmann::ordered_json j;
  j["format"] = kConfigFormat;
  j["ablation_id"] = ablation_id;
  j["input_mode"] = to_string(input_mode);
  j["position_weighted"] = position_weighted;
  j["embedding"] = to_string(embedding);
  j["index"] = {{"algo", to_string(index.algo)},
                {"max_leaf_size", index.max_leaf_size},
                {"d_trie", index.d_trie},
                {"d_mlc", index.d_mlc},
                {"seed", index.seed}};
  j["train"] = {{"reg_C", train.reg_C},
                {"tol", train.tol},
                {"weight_threshold", train.weight_threshold},
                {"max_epochs", train.max_epochs},
                {"transform", to_string(train.transform)},
                {"seed", train.seed}};
  j["token_min_df"] = token_min_df;
  j["char_min_df"] = char_min_df;
  return nlohmann::json::parse(j.dump());
}

PipelineConfig PipelineConfig::from_json(const nlohmann::json& j) {
  if (j.value("format", "") != kConfigFormat) throw Error("pipeline config: unsupported format tag");
  PipelineConfig c;
  try {
    c.ablation_id = j.value("ablation_id", -1);
    c.input_mode = input_mode_from_string(j.at("input_mode").get<std::string>());
    c.position_weighted = j.at("position_weighted").get<bool>();
    c.embedding = embedding_source_from_string(j.at("embedding").get<std::string>());
    const auto& ix = j.at("index");
    c.index.algo = index_algo_from_string(ix.at("algo").get<std::string>());
    c.index.max_leaf_size = ix.at("max_leaf_size").get<uint32_t>();
    c.index.d_trie = ix.at("d_trie").get<uint32_t>();
    c.index.d_mlc = ix.at("d_mlc").get<uint32_t>();
    c.index.seed = ix.at("seed").get<uint64_t>();
    const auto& tr = j.at("train");
    c.train.reg_C = tr.at("reg_C").get<double>();
    c.train.tol = tr.at("tol").get<double>();
    c.train.weight_threshold = tr.at("weight_threshold").get<double>();
    c.train.max_epochs = tr.at("max_epochs").get<int>();
    c.train.transform = score_transform_from_string(tr.at("transform").get<std::string>());
    c.train.seed = tr.at("seed").get<uint64_t>();
    c.token_min_df = j.value("token_min_df", 2u);
    c.char_min_df = j.value("char_min_df", 1u);
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("pipeline config: ") + e.what());
  }
  return c;
}

std::string PipelineConfig::fingerprint() const { return sha1_hex(to_json().dump()); }

PipelineConfig ablation_config(int id, uint64_t seed) {
  if (id < 0 || id >= kNumAblationConfigs) throw Error("ablation config id must be in 0.." + std::to_string(kNumAblationConfigs - 1));
  PipelineConfig c;
  c.ablation_id = id;
  c.index.seed = seed;
  c.train.seed = seed;
  c.index.algo = IndexAlgo::hc;
  switch (id) {
    case 0:
      c.input_mode = InputMode::prev_only;
      c.position_weighted = false;
      c.embedding = EmbeddingSource::pifa;
      break;
    case 1:
      c.input_mode = InputMode::prev_only;
      c.position_weighted = false;
      c.embedding = EmbeddingSource::label_text_simple;
      break;
    case 2:
      c.position_weighted = false;
      c.embedding = EmbeddingSource::pifa;
      break;
    case 3:
      c.position_weighted = false;
      c.embedding = EmbeddingSource::label_text_simple;
      break;
    case 4:
      c.embedding = EmbeddingSource::pifa;
      break;
    case 5:
      break;
    case 6:
    case 7:
    case 8:
      c.index.algo = IndexAlgo::hybrid;
      c.index.d_trie = static_cast<uint32_t>(id - 5);
      break;
    case 9:
    case 10:
      c.index.algo = IndexAlgo::trie;
      c.index.d_trie = 16;
      c.position_weighted = id == 9;
      c.embedding = id == 9 ? EmbeddingSource::label_text_posweighted : EmbeddingSource::label_text_simple;
      break;
    case 11:
      c.index.algo = IndexAlgo::mlc;
      c.index.d_mlc = 5;
      break;
  }
  return c;
}

void Vectorizers::save(const std::filesystem::path& dir) const {
  encoder.save(dir);
  if (label_vocab) label_vocab->save(dir / "label_vocab.json");
}

Vectorizers Vectorizers::load(const std::filesystem::path& dir) {
  Vectorizers v;
  v.encoder = InputEncoder::load(dir);
  if (std::filesystem::exists(dir / "label_vocab.json")) v.label_vocab = TfidfVocab::load(dir / "label_vocab.json");
  return v;
}

Vectorizers fit_vectorizers(std::span<const QueryTriplet> train, const LabelVocab& labels, const PipelineConfig& config) {
  if (train.empty()) throw Error("fit_vectorizers: empty train split");
  std::vector<std::string> prevs, prefixes;
  prevs.reserve(train.size());
  prefixes.reserve(train.size());
  for (const auto& t : train) {
    prevs.push_back(t.prev_query);
    prefixes.push_back(t.prefix);
  }
  Vectorizers v;
  auto prev_vocab = TfidfVocab::fit(prevs, VocabKind::token_unigram, config.token_min_df);
  auto prefix_vocab = TfidfVocab::fit(prefixes, VocabKind::char_ngram, config.char_min_df, config.position_weighted);
  v.encoder = InputEncoder(std::move(prev_vocab), std::move(prefix_vocab), config.input_mode);
  if (config.embedding != EmbeddingSource::pifa && config.needs_embeddings()) {
    const bool pw = config.embedding == EmbeddingSource::label_text_posweighted;
    v.label_vocab = TfidfVocab::fit(labels.labels(), VocabKind::char_ngram, config.char_min_df, pw);
  }
  return v;
}

EncodedExamples encode_examples(const InputEncoder& encoder, std::span<const QueryTriplet> triplets, const LabelVocab& labels,
                                unsigned threads) {
  std::vector<uint32_t> keep;
  EncodedExamples out;
  for (uint32_t i = 0; i < triplets.size(); ++i) {
    if (auto id = labels.find(triplets[i].next_query)) {
      keep.push_back(i);
      out.label_ids.push_back(*id);
    }
  }
  std::vector<SparseVector> rows(keep.size());
  constexpr size_t kChunk = 1024;
  run_parallel((keep.size() + kChunk - 1) / kChunk, threads, [&](size_t chunk, unsigned) {
    const size_t end = std::min(keep.size(), (chunk + 1) * kChunk);
    for (size_t i = chunk * kChunk; i < end; ++i) {
      const auto& t = triplets[keep[i]];
      rows[i] = encoder.encode(t.prev_query, t.prefix);
    }
  });
  out.inputs = SparseMatrix::from_rows(rows, encoder.dim());
  return out;
}

LabelEmbeddings embed_labels(const PipelineConfig& config, const Vectorizers& vec, const EncodedExamples& train,
                             const LabelVocab& labels) {
  if (config.embedding == EmbeddingSource::pifa) return pifa_embed(train.inputs, train.label_ids, labels.size());
  if (!vec.label_vocab) throw Error("embed_labels: label-text embeddings need a fitted label vocabulary");
  return label_text_embed(labels.labels(), *vec.label_vocab);
}

QacModel::QacModel(PipelineConfig config, Vectorizers vectorizers, TreeModel model, MfqIndex mfq)
    : config_(std::move(config)), vectorizers_(std::move(vectorizers)), model_(std::move(model)), mfq_(std::move(mfq)) {
  if (model_.input_dim() != vectorizers_.encoder.dim()) throw Error("model input dimension does not match the encoder");
}

QacModel QacModel::fit(std::span<const QueryTriplet> train, const LabelVocab& labels, const PipelineConfig& config,
                       FitTimings* timings) {
  FitTimings t;
  auto t0 = std::chrono::steady_clock::now();
  Vectorizers vec = fit_vectorizers(train, labels, config);
  EncodedExamples examples = encode_examples(vec.encoder, train, labels, config.train.threads);
  t.vectorize_seconds = seconds_since(t0);

  t0 = std::chrono::steady_clock::now();
  SparseMatrix embeddings;
  if (config.needs_embeddings()) embeddings = embed_labels(config, vec, examples, labels).matrix;
  t.embed_seconds = seconds_since(t0);

  t0 = std::chrono::steady_clock::now();
  IndexParams ip = config.index;
  if (ip.threads == 0) ip.threads = config.train.threads;
  LabelTree tree = build_index(ip, labels.labels(), embeddings);
  t.index_seconds = seconds_since(t0);
  embeddings = SparseMatrix();

  t0 = std::chrono::steady_clock::now();
  TreeModel model = TreeModel::train(std::move(tree), examples.inputs, examples.label_ids, labels.labels(), config.train, &t.train);
  t.train_seconds = seconds_since(t0);

  MfqIndex mfq = MfqIndex::build(train, kEvalK);
  if (timings) *timings = t;
  return QacModel(config, std::move(vec), std::move(model), std::move(mfq));
}

SuggestionList QacModel::suggest(std::string_view prev_query, std::string_view prefix, uint32_t beam, uint32_t k,
                                 PredictStats* stats) const {
  return suggest_normalized(normalize_query(prev_query), normalize_prefix(prefix), beam, k, stats);
}

SuggestionList QacModel::suggest_normalized(std::string_view prev_query, std::string_view prefix, uint32_t beam, uint32_t k,
                                            PredictStats* stats) const {
  return model_.predict(vectorizers_.encoder.encode(prev_query, prefix), prefix, beam, k, stats);
}

void QacModel::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  model_.save(dir);
  vectorizers_.save(dir);
  write_json(dir / "config.json", config_.to_json());
  mfq_.save(dir / "mfq.tsv");
}

QacModel QacModel::load(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw Error("model directory not found: " + dir.string());
  PipelineConfig config = PipelineConfig::from_json(read_json(dir / "config.json"));
  Vectorizers vec = Vectorizers::load(dir);
  TreeModel model = TreeModel::load(dir);
  MfqIndex mfq = MfqIndex::load(dir / "mfq.tsv", kEvalK);
  return QacModel(std::move(config), std::move(vec), std::move(model), std::move(mfq));
}

std::vector<QueryTriplet> seen_subset(const QacModel& model, std::span<const QueryTriplet> test) {
  std::vector<QueryTriplet> out;
  for (const auto& t : test) {
    if (model.mfq().frequency(t.next_query) > 0) out.push_back(t);
  }
  return out;
}

EvalReport evaluate(const QacModel& model, std::span<const QueryTriplet> test, const EvalOptions& options) {
  if (test.empty()) throw Error("evaluate: empty test set");
  const size_t n = test.size();
  std::vector<RankedQueries> model_preds(n), mfq_preds(options.baseline ? n : 0);
  std::vector<double> model_ms, mfq_ms;

  if (options.latency) {
    using clock = std::chrono::steady_clock;
    for (size_t i = 0; i < std::min(options.warmup, n); ++i) model.suggest(test[i].prev_query, test[i].prefix, options.beam, options.k);
    size_t samples = std::max(n, kMinLatencySamples);
    if (options.max_latency_samples > 0) samples = std::max(std::min(samples, options.max_latency_samples), kMinLatencySamples);
    for (size_t s = 0; s < std::max(samples, n); ++s) {
      const auto& t = test[s % n];
      const bool timed = s < samples;
      auto t0 = clock::now();
      auto list = model.suggest(t.prev_query, t.prefix, options.beam, options.k);
      auto t1 = clock::now();
      if (timed) model_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
      if (s < n) model_preds[s] = to_ranked(list);
      if (options.baseline) {
        t0 = clock::now();
        auto m = model.mfq().suggest(normalize_prefix(t.prefix));
        t1 = clock::now();
        if (timed) mfq_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
        if (s < n) {
          if (m.size() > options.k) m.resize(options.k);
          mfq_preds[s] = std::move(m);
        }
      }
    }
  } else {
    run_parallel(n, options.threads, [&](size_t i, unsigned) {
      model_preds[i] = to_ranked(model.suggest(test[i].prev_query, test[i].prefix, options.beam, options.k));
      if (options.baseline) {
        auto m = model.mfq().suggest(normalize_prefix(test[i].prefix));
        if (m.size() > options.k) m.resize(options.k);
        mfq_preds[i] = std::move(m);
      }
    });
  }

  std::vector<std::string> truths;
  truths.reserve(n);
  for (const auto& t : test) truths.push_back(t.next_query);

  auto metrics = [&](const std::vector<RankedQueries>& preds, const std::vector<double>& ms) {
    MethodMetrics m;
    m.mrr = mrr(preds, truths, options.k);
    m.bleu_rr = bleu_rr(preds, truths, options.k);
    if (!ms.empty()) m.latency = latency_percentiles(ms);
    m.outcomes.reserve(n);
    for (size_t i = 0; i < n; ++i) {
      ExampleOutcome o;
      o.prefix_length = static_cast<uint32_t>(test[i].prefix.size());
      o.truth_frequency = model.mfq().frequency(truths[i]);
      o.rank = rank_of(preds[i], truths[i], options.k);
      o.seen = o.truth_frequency > 0;
      m.outcomes.push_back(o);
    }
    return m;
  };

  EvalReport report;
  report.k = options.k;
  report.beam = options.beam;
  report.examples = n;
  report.config_fingerprint = model.config().fingerprint();
  report.model = metrics(model_preds, model_ms);
  if (options.baseline) report.baseline = metrics(mfq_preds, mfq_ms);
  size_t seen = 0;
  for (const auto& o : report.model.outcomes) seen += o.seen ? 1 : 0;
  report.coverage = static_cast<double>(seen) / static_cast<double>(n);
  return report;
}

}  // namespace prefx
