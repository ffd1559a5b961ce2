#include <csignal>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "prefx/pipeline.hpp"
#include "prefx/serve.hpp"
#include "prefx/synth.hpp"

namespace fs = std::filesystem;
using namespace prefx;

namespace {

// Epoch seconds or a UTC calendar date YYYY-MM-DD.
int64_t parse_time(const std::string& s) {
  if (s.find('-') == std::string::npos) return std::stoll(s);
  std::tm tm{};
  if (std::sscanf(s.c_str(), "%d-%d-%d", &tm.tm_year, &tm.tm_mon, &tm.tm_mday) != 3) throw Error("bad date: " + s);
  tm.tm_year -= 1900;
  tm.tm_mon -= 1;
  return static_cast<int64_t>(timegm(&tm));
}

void require_file(const fs::path& p, const std::string& what) {
  if (!fs::exists(p)) throw Error("missing " + what + ": expected " + p.string());
}

nlohmann::json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw Error("cannot open " + p.string());
  return nlohmann::json::parse(in);
}

void write_json(const fs::path& p, const nlohmann::json& j) {
  std::ofstream out(p, std::ios::trunc);
  out << j.dump(2) << '\n';
  if (!out) throw Error("write failed: " + p.string());
}

struct TrainSet {
  std::vector<QueryTriplet> triplets;
  LabelVocab labels;
};

TrainSet load_train(const fs::path& data) {
  require_file(data / "train.jsonl", "train split");
  require_file(data / "labels.txt", "label vocabulary");
  return {read_triplets_jsonl(data / "train.jsonl"), LabelVocab::load(data / "labels.txt")};
}

PipelineConfig load_work_config(const fs::path& work) {
  require_file(work / "config.json", "pipeline config (run fit-vectorizers first)");
  return PipelineConfig::from_json(read_json(work / "config.json"));
}

void print_suggestions(const SuggestionList& list) {
  for (const auto& s : list) std::cout << s.score << '\t' << s.query << '\n';
}

HttpServer* g_server = nullptr;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"prefx: session-aware query auto-completion"};
  app.require_subcommand(1);
  app.fallthrough();
  uint64_t seed = 0;
  unsigned threads = 0;
  auto* seed_opt = app.add_option("--seed", seed, "Seed for every stochastic stage (later stages reuse the stored seed)")
                       ->capture_default_str();
  app.add_option("--threads", threads, "Worker threads (0 = all cores)");

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic search log (TSV)");
  fs::path synth_out;
  SynthParams sp;
  synth->add_option("--out", synth_out, "Output TSV")->required();
  synth->add_option("--sessions", sp.sessions, "Number of sessions")->capture_default_str();
  synth->add_option("--topics", sp.topics, "Number of topics")->capture_default_str();
  synth->add_option("--queries-per-topic", sp.queries_per_topic, "Distinct head queries per topic")->capture_default_str();
  synth->add_option("--stay", sp.stay_on_topic, "Chance the next query keeps the topic")->capture_default_str();
  synth->add_option("--linked", sp.linked_topic, "Chance the next query moves to a linked topic")->capture_default_str();
  synth->add_option("--tail", sp.tail_query, "Share of one-off tail queries")->capture_default_str();

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Sessionize a TSV log into train/dev/test triplets");
  fs::path log_path, data_dir;
  std::string train_end = "2006-05-16", dev_end = "2006-05-24";
  ingest->add_option("--log", log_path, "user \\t query \\t epoch_seconds")->required();
  ingest->add_option("--out", data_dir, "Split directory")->required();
  ingest->add_option("--train-end", train_end, "First dev timestamp (epoch or YYYY-MM-DD)")->capture_default_str();
  ingest->add_option("--dev-end", dev_end, "First test timestamp (epoch or YYYY-MM-DD)")->capture_default_str();

  // fit-vectorizers
  auto* fitvec = app.add_subcommand("fit-vectorizers", "Fit the input encoder and label-text vocabulary");
  fs::path work_dir;
  int config_id = 8;
  std::optional<fs::path> config_file;
  std::optional<std::string> input_mode, embedding;
  std::optional<bool> position_weighted;
  fitvec->add_option("--data", data_dir, "Split directory")->required();
  fitvec->add_option("--out", work_dir, "Work directory")->required();
  fitvec->add_option("--config", config_id, "Ablation configuration 0-11")->capture_default_str();
  fitvec->add_option("--config-file", config_file, "Pipeline config JSON (overrides --config)");
  fitvec->add_option("--input-mode", input_mode, "prev_only | prev_concat_prefix");
  fitvec->add_option("--embedding", embedding, "pifa | label_text_simple | label_text_posweighted");
  fitvec->add_flag("--position-weighted,!--simple", position_weighted, "Position-weighted prefix/label vectorizers");

  // embed-labels
  auto* embed = app.add_subcommand("embed-labels", "Compute label embeddings");
  embed->add_option("--data", data_dir, "Split directory")->required();
  embed->add_option("--work", work_dir, "Work directory")->required();

  // build-index
  auto* index = app.add_subcommand("build-index", "Build the label tree");
  std::optional<std::string> algo;
  std::optional<uint32_t> max_leaf, d_trie, d_mlc;
  index->add_option("--data", data_dir, "Split directory")->required();
  index->add_option("--work", work_dir, "Work directory")->required();
  index->add_option("--algo", algo, "hc | trie | hybrid | mlc");
  index->add_option("--M", max_leaf, "Max leaf size");
  index->add_option("--d-trie", d_trie, "Trie depth");
  index->add_option("--d-mlc", d_mlc, "Must-link depth");

  // train
  auto* train = app.add_subcommand("train", "Train node and label classifiers");
  fs::path model_dir;
  std::optional<double> reg_C, tol, threshold;
  std::optional<std::string> transform;
  train->add_option("--data", data_dir, "Split directory")->required();
  train->add_option("--work", work_dir, "Work directory")->required();
  train->add_option("--out", model_dir, "Model directory")->required();
  train->add_option("--C", reg_C, "Loss weight");
  train->add_option("--tol", tol, "Solver tolerance");
  train->add_option("--threshold", threshold, "Weight pruning threshold");
  train->add_option("--transform", transform, "cubic_hinge | sigmoid");

  // fit: all stages at once
  auto* fit = app.add_subcommand("fit", "Run fit-vectorizers, embed-labels, build-index and train in one go");
  fit->add_option("--data", data_dir, "Split directory")->required();
  fit->add_option("--out", model_dir, "Model directory")->required();
  fit->add_option("--config", config_id, "Ablation configuration 0-11")->capture_default_str();
  fit->add_option("--config-file", config_file, "Pipeline config JSON (overrides --config)");

  // evaluate
  auto* eval = app.add_subcommand("evaluate", "Score a model on a split");
  fs::path test_path;
  std::optional<fs::path> report_path;
  std::string baseline;
  uint32_t k = kEvalK, beam = 10;
  bool no_latency = false, seen_only = false;
  eval->add_option("--model", model_dir, "Model directory")->required();
  eval->add_option("--test", test_path, "Triplet JSONL")->required();
  eval->add_option("--baseline", baseline, "mfq")->check(CLI::IsMember({"mfq", "none"}));
  eval->add_option("--k", k, "Cutoff")->capture_default_str();
  eval->add_option("--beam", beam, "Beam width")->capture_default_str();
  eval->add_option("--report", report_path, "Write the full JSON report here");
  eval->add_flag("--no-latency", no_latency, "Skip timing (evaluates in parallel)");
  eval->add_flag("--seen-only", seen_only, "Only examples whose next query is a label");

  // predict
  auto* predict = app.add_subcommand("predict", "Suggest completions for one request");
  std::string prev, prefix;
  predict->add_option("--model", model_dir, "Model directory")->required();
  predict->add_option("--prev", prev, "Previous query");
  predict->add_option("--prefix", prefix, "Typed prefix")->required();
  predict->add_option("--k", k, "Suggestions")->capture_default_str();
  predict->add_option("--beam", beam, "Beam width")->capture_default_str();

  // serve
  auto* serve = app.add_subcommand("serve", "HTTP suggestion service");
  std::optional<fs::path> serve_config, demo_dir, serve_model;
  std::optional<std::string> host;
  std::optional<int> port;
  serve->add_option("--config", serve_config, "Serve config JSON");
  serve->add_option("--model", serve_model, "Model directory (else config or PREFX_MODEL_DIR)");
  serve->add_option("--host", host, "Bind address");
  serve->add_option("--port", port, "Port (0 = any free port)");
  serve->add_option("--demo-dir", demo_dir, "Static files mounted at /demo");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) {
      sp.seed = seed;
      auto records = synth_log(sp);
      write_log_tsv(synth_out, records);
      std::cout << "wrote " << records.size() << " records to " << synth_out.string() << '\n';
    } else if (*ingest) {
      require_file(log_path, "log file");
      auto records = read_log_tsv(log_path);
      auto sessions = split_sessions(records);
      auto split = temporal_split(sessions, parse_time(train_end), parse_time(dev_end), seed);
      write_split_dir(data_dir, split);
      std::cout << "sessions train/dev/test: " << split.train_sessions << '/' << split.dev_sessions << '/' << split.test_sessions
                << "\ntriplets train/dev/test: " << split.train.triplets.size() << '/' << split.dev.triplets.size() << '/'
                << split.test.triplets.size() << "\nlabels: " << split.labels.size() << "\ntest coverage: " << split.coverage << '\n';
    } else if (*fitvec || *fit) {
      PipelineConfig config = config_file ? PipelineConfig::from_json(read_json(*config_file)) : ablation_config(config_id, seed);
      if (input_mode) config.input_mode = input_mode_from_string(*input_mode);
      if (embedding) config.embedding = embedding_source_from_string(*embedding);
      if (position_weighted) config.position_weighted = *position_weighted;
      if (!config_file || seed_opt->count() > 0) config.index.seed = config.train.seed = seed;
      config.train.threads = threads;
      auto ts = load_train(data_dir);
      if (*fitvec) {
        auto vec = fit_vectorizers(ts.triplets, ts.labels, config);
        fs::create_directories(work_dir);
        vec.save(work_dir);
        write_json(work_dir / "config.json", config.to_json());
        std::cout << "input dim " << vec.encoder.dim() << '\n';
      } else {
        FitTimings t;
        auto model = QacModel::fit(ts.triplets, ts.labels, config, &t);
        model.save(model_dir);
        std::cout << "labels " << ts.labels.size() << ", nodes " << model.tree_model().tree().size() << ", depth "
                  << model.tree_model().tree().depth() << "\nseconds: vectorize " << t.vectorize_seconds << ", embed " << t.embed_seconds
                  << ", index " << t.index_seconds << ", train " << t.train_seconds << "\nproblems " << t.train.node_problems << " + "
                  << t.train.label_problems << ", example visits " << t.train.example_visits << ", epochs " << t.train.epochs << '\n';
      }
    } else if (*embed) {
      auto config = load_work_config(work_dir);
      auto ts = load_train(data_dir);
      auto vec = Vectorizers::load(work_dir);
      auto examples = encode_examples(vec.encoder, ts.triplets, ts.labels, threads);
      auto emb = embed_labels(config, vec, examples, ts.labels);
      emb.matrix.save(work_dir / "embeddings.bin");
      write_json(work_dir / "embeddings.json",
                 {{"source", std::string(to_string(emb.source))}, {"rows", emb.num_labels()}, {"dim", emb.dim()}, {"zero_rows", emb.zero_rows}});
      std::cout << emb.num_labels() << " label embeddings, " << emb.zero_rows.size() << " zero rows\n";
    } else if (*index) {
      auto config = load_work_config(work_dir);
      if (algo) config.index.algo = index_algo_from_string(*algo);
      if (max_leaf) config.index.max_leaf_size = *max_leaf;
      if (d_trie) config.index.d_trie = *d_trie;
      if (d_mlc) config.index.d_mlc = *d_mlc;
      if (seed_opt->count() > 0) config.index.seed = seed;
      config.index.threads = threads;
      require_file(data_dir / "labels.txt", "label vocabulary");
      auto labels = LabelVocab::load(data_dir / "labels.txt");
      SparseMatrix emb;
      if (config.needs_embeddings()) {
        require_file(work_dir / "embeddings.bin", "label embeddings (run embed-labels first)");
        emb = SparseMatrix::load(work_dir / "embeddings.bin");
      }
      auto tree = build_index(config.index, labels.labels(), emb);
      tree.save(work_dir / "tree.bin");
      nlohmann::json relax = nlohmann::json::array();
      for (const auto& r : tree.relaxations) relax.push_back({{"depth", r.depth}, {"left", r.left}, {"right", r.right}});
      write_json(work_dir / "index.json", {{"algo", std::string(to_string(config.index.algo))},
                                           {"max_leaf_size", config.index.max_leaf_size},
                                           {"d_trie", config.index.d_trie},
                                           {"d_mlc", config.index.d_mlc},
                                           {"seed", config.index.seed},
                                           {"nodes", tree.size()},
                                           {"depth", tree.depth()},
                                           {"max_fanout", tree.max_fanout()},
                                           {"max_leaf_labels", tree.max_leaf_labels()},
                                           {"relaxations", relax}});
      write_json(work_dir / "config.json", config.to_json());
      std::cout << tree.size() << " nodes, depth " << tree.depth() << ", " << tree.relaxations.size() << " relaxed splits\n";
    } else if (*train) {
      auto config = load_work_config(work_dir);
      if (reg_C) config.train.reg_C = *reg_C;
      if (tol) config.train.tol = *tol;
      if (threshold) config.train.weight_threshold = *threshold;
      if (transform) config.train.transform = score_transform_from_string(*transform);
      if (seed_opt->count() > 0) config.train.seed = seed;
      config.train.threads = threads;
      auto ts = load_train(data_dir);
      auto vec = Vectorizers::load(work_dir);
      require_file(work_dir / "tree.bin", "label tree (run build-index first)");
      auto tree = LabelTree::load(work_dir / "tree.bin");
      tree.params = config.index;
      auto examples = encode_examples(vec.encoder, ts.triplets, ts.labels, threads);
      TrainStats stats;
      auto tm = TreeModel::train(std::move(tree), examples.inputs, examples.label_ids, ts.labels.labels(), config.train, &stats);
      QacModel model(config, std::move(vec), std::move(tm), MfqIndex::build(ts.triplets, kEvalK));
      model.save(model_dir);
      std::cout << stats.node_problems << " node problems, " << stats.label_problems << " label problems, " << stats.seconds << " s\n";
    } else if (*eval) {
      require_file(test_path, "test split");
      auto model = QacModel::load(model_dir);
      auto test = read_triplets_jsonl(test_path);
      if (seen_only) test = seen_subset(model, test);
      EvalOptions opt;
      opt.k = k;
      opt.beam = beam;
      opt.baseline = baseline == "mfq";
      opt.latency = !no_latency;
      opt.threads = threads;
      auto report = evaluate(model, test, opt);
      report.model_hash = directory_content_hash(model_dir);
      auto j = report.to_json();
      if (report_path) write_json(*report_path, j);
      nlohmann::ordered_json summary;
      summary["examples"] = report.examples;
      summary["coverage"] = report.coverage;
      auto brief = [](const MethodMetrics& m) {
        return nlohmann::ordered_json{{"mrr", m.mrr}, {"bleu_rr", m.bleu_rr}, {"latency_p50_ms", m.latency.p50}, {"latency_p99_ms", m.latency.p99}};
      };
      summary["model"] = brief(report.model);
      if (report.baseline) summary["baseline_mfq"] = brief(*report.baseline);
      summary["model_hash"] = report.model_hash;
      std::cout << summary.dump(2) << '\n';
    } else if (*predict) {
      auto model = QacModel::load(model_dir);
      print_suggestions(model.suggest(prev, prefix, beam, k));
    } else if (*serve) {
      ServeConfig cfg = load_serve_config(serve_config);
      if (serve_model) cfg.model_dir = *serve_model;
      if (host) cfg.host = *host;
      if (port) cfg.port = *port;
      if (demo_dir) cfg.demo_dir = *demo_dir;
      SuggestService service(cfg);
      service.load();
      HttpServer server(service);
      const int bound = server.bind();
      std::cout << "listening on " << cfg.host << ':' << bound << std::endl;
      g_server = &server;
      std::signal(SIGINT, [](int) { if (g_server) g_server->stop(); });
      std::signal(SIGTERM, [](int) { if (g_server) g_server->stop(); });
      server.listen();
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
