// dmr: one subcommand per pipeline step. Every run writes a manifest next to
// its primary output with the effective configuration and content hashes.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <Eigen/Core>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>
#include <spdlog/sinks/stdout_color_sinks.h>

#include "dmr/chunk.hpp"
#include "dmr/dedup.hpp"
#include "dmr/error.hpp"
#include "dmr/eval.hpp"
#include "dmr/jsonl.hpp"
#include "dmr/parallel.hpp"
#include "dmr/pipeline.hpp"
#include "dmr/refine.hpp"
#include "dmr/synthgen.hpp"
#include "dmr/text.hpp"
#include "dmr/trainable_embedder.hpp"

#ifndef DMR_VERSION
#define DMR_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using namespace dmr;

namespace {

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::usage:
    case ErrorKind::config:
      return 1;
    case ErrorKind::backend:
    case ErrorKind::content:
      return 3;
    default:
      return 2;
  }
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string file_hash(const fs::path& p) {
  if (fs::is_directory(p)) {
    std::uint64_t h = 0;
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(p))
      // the directory's own manifest describes the previous run
      if (e.is_regular_file() && e.path() != p / "manifest.json") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) h = mix64(h ^ fnv1a64(fs::relative(f, p).string() + read_text(f)));
    return hex64(h);
  }
  return hex64(fnv1a64(read_text(p)));
}

/// Collected while a subcommand runs, written once it succeeds.
struct Run {
  std::string subcommand;
  std::string config;
  std::vector<fs::path> inputs;
  std::vector<fs::path> outputs;
  json extra = json::object();
};

fs::path manifest_path_for(const fs::path& primary) {
  if (fs::is_directory(primary)) return primary / "manifest.json";
  return fs::path(primary.string() + ".manifest.json");
}

void write_manifest(const Run& run) {
  if (run.outputs.empty()) return;
  json inputs = json::object(), outputs = json::object();
  for (const auto& p : run.inputs) inputs[p.string()] = file_hash(p);
  for (const auto& p : run.outputs) outputs[p.string()] = file_hash(p);
  json m = {{"tool", "dmr"},
            {"version", DMR_VERSION},
            {"libraries",
             {{"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                            std::to_string(EIGEN_MINOR_VERSION)},
              {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                    std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                    std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
              {"spdlog", std::to_string(SPDLOG_VER_MAJOR) + "." + std::to_string(SPDLOG_VER_MINOR) + "." +
                             std::to_string(SPDLOG_VER_PATCH)}}},
            {"subcommand", run.subcommand},
            {"config", run.config},
            {"config_hash", hex64(fnv1a64(run.config))},
            {"inputs", inputs},
            {"outputs", outputs},
            {"summary", run.extra}};
  write_text_atomic(manifest_path_for(run.outputs.front()), m.dump(2) + "\n");
}

Corpus load_corpus(const fs::path& path) { return Corpus(read_passages(path)); }

/// Passages plus every pair positive not already present (generated
/// positives are new passages the filter and miner must be able to rank).
Corpus corpus_with_positives(const fs::path& path, const std::vector<QueryPassagePair>& pairs) {
  auto passages = read_passages(path);
  std::set<std::string> ids;
  for (const auto& p : passages) ids.insert(p.id);
  for (const auto& pair : pairs)
    if (ids.insert(pair.positive.id).second) passages.push_back(pair.positive);
  return Corpus(std::move(passages));
}

std::vector<EmbedderPtr> hashing_refs(std::size_t dim, const std::vector<std::uint64_t>& seeds) {
  std::vector<EmbedderPtr> out;
  for (auto s : seeds) out.push_back(std::make_shared<HashingEmbedder>(dim, s));
  return out;
}

ValidationSet load_validation(const fs::path& queries, const fs::path& corpus, const fs::path& qrels,
                              Run& run) {
  ValidationSet v;
  v.target.queries = read_queries(queries);
  v.target.corpus = load_corpus(corpus);
  v.target.qrels = QrelSet::load_trec(qrels);
  run.inputs.insert(run.inputs.end(), {queries, corpus, qrels});
  return v;
}

/// Metric log writer shared by the training subcommands.
class MetricLog {
 public:
  explicit MetricLog(const fs::path& path) : writer_(path) {}
  MetricSink sink() {
    return [this](const MetricRecord& r) { writer_.append(to_json(r)); };
  }
  void commit() { writer_.commit(); }

 private:
  AtomicJsonlWriter writer_;
};

CurriculumStage parse_stage(const std::string& spec, int index) {
  // alpha:path[:epochs]
  const auto first = spec.find(':');
  if (first == std::string::npos) fail(ErrorKind::usage, "stage must be alpha:path[:epochs], got '" + spec + "'");
  CurriculumStage s;
  s.stage_index = index;
  try {
    s.alpha = std::stod(spec.substr(0, first));
    auto rest = spec.substr(first + 1);
    if (const auto second = rest.rfind(':'); second != std::string::npos &&
        rest.find_first_not_of("0123456789", second + 1) == std::string::npos && second + 1 < rest.size()) {
      s.epochs = std::stoul(rest.substr(second + 1));
      rest = rest.substr(0, second);
    }
    s.dataset_path = rest;
  } catch (const std::logic_error&) {
    fail(ErrorKind::usage, "bad stage '" + spec + "'");
  }
  return s;
}

/// Training flags shared by stage1 / pretrain / finetune.
struct TrainFlags {
  std::string run_config;
  double learning_rate = 1e-3;
  std::size_t batch_size = 32;
  std::size_t eval_every = 0;
  double tau = 0.01;
  std::size_t epochs = 1;
  double momentum = 0.0;
  bool no_instructions = false;
  bool inbatch = false;
  std::size_t stage1_epochs = 2;
  bool stage1_disabled = false;

  void add(CLI::App* app) {
    app->add_option("--run-config", run_config, "JSON run config (flags override its keys)");
    app->add_option("--learning-rate", learning_rate, "SGD learning rate");
    app->add_option("--batch-size", batch_size, "examples per update");
    app->add_option("--eval-every", eval_every, "validation cadence in steps (0 = each epoch end)");
    app->add_option("--tau", tau, "similarity temperature");
    app->add_option("--epochs", epochs, "training epochs");
    app->add_option("--momentum", momentum, "SGD momentum (0 = plain SGD)");
    app->add_flag("--no-instructions", no_instructions, "fine-tune without instruction prefixes");
    app->add_flag("--inbatch", inbatch, "add in-batch negatives to the hard-negative loss");
    app->add_option("--stage1-epochs", stage1_epochs, "MLM epochs in stage 1");
    app->add_flag("--stage1-disabled", stage1_disabled, "skip stage 1 even for causal models");
  }

  TrainRunConfig resolve(const CLI::App* app, std::uint64_t seed, bool seed_given, Run& run) const {
    TrainRunConfig c;
    if (!run_config.empty()) {
      run.inputs.push_back(run_config);
      try {
        c = train_config_from_json(json::parse(read_text(run_config)));
      } catch (const json::parse_error& e) {
        fail(ErrorKind::config, run_config + ": " + e.what());
      }
    }
    auto given = [&](const char* name) { return app->count(name) > 0 || run_config.empty(); };
    if (given("--learning-rate")) c.learning_rate = learning_rate;
    if (given("--batch-size")) c.batch_size = batch_size;
    if (given("--eval-every")) c.eval_every = eval_every;
    if (given("--tau")) c.tau = tau;
    if (given("--epochs")) c.epochs = epochs;
    if (given("--momentum")) c.momentum = momentum;
    if (given("--stage1-epochs")) c.stage1_epochs = stage1_epochs;
    if (no_instructions) c.use_instructions = false;
    if (inbatch) c.inbatch_with_hardneg = true;
    if (stage1_disabled) c.stage1_enabled = false;
    if (seed_given || run_config.empty()) c.seed = seed;
    c.validate();
    run.extra["run_config"] = to_json(c);
    return c;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dmr: dense-retrieval data refinement, training and evaluation"};
  app.set_config("--config", "", "TOML/INI file whose keys mirror the flags");
  app.require_subcommand(1);
  app.fallthrough();

  std::size_t threads = 1;
  std::uint64_t seed = 0;
  std::string log_level = "info";
  app.add_option("--threads", threads, "worker lanes (0 = all cores)")->capture_default_str();
  app.add_option("--seed", seed, "seed for every random choice")->capture_default_str();
  app.add_option("--log-level", log_level, "trace|debug|info|warn|error|off")->capture_default_str();

  Run run;
  std::function<void()> action;

  // ---------------------------------------------------------------- ingest
  auto* ingest = app.add_subcommand("ingest", "chunk documents into passages");
  std::string docs_path, ingest_out;
  std::size_t max_tokens = 255;
  ingest->add_option("--docs", docs_path, "documents JSONL {id, text, url?}")->required();
  ingest->add_option("--max-tokens", max_tokens, "tokens per chunk")->capture_default_str();
  ingest->add_option("--out", ingest_out, "passages JSONL")->required();
  ingest->callback([&] {
    action = [&] {
      run.inputs.push_back(docs_path);
      std::vector<Passage> out;
      std::size_t n_docs = 0;
      for (const auto& doc : read_documents(docs_path)) {
        ++n_docs;
        for (auto& p : chunk_document(doc.id, doc.text, max_tokens)) {
          p.url = doc.url;
          out.push_back(std::move(p));
        }
      }
      write_passages(ingest_out, out);
      run.outputs.push_back(ingest_out);
      run.extra = {{"documents", n_docs}, {"passages", out.size()}};
    };
  });

  // ----------------------------------------------------------------- dedup
  auto* dedup = app.add_subcommand("dedup", "remove exact and near-duplicate passages");
  std::string dedup_in, dedup_out, dedup_removals, dedup_method = "exact", dedup_key = "text_hash";
  LshConfig lsh;
  double cosine = 0.9;
  std::size_t embed_dim = 256;
  std::uint64_t embed_seed = 0;
  dedup->add_option("--passages", dedup_in, "passages JSONL")->required();
  dedup->add_option("--method", dedup_method, "exact|lsh|embedding")->capture_default_str()
      ->check(CLI::IsMember({"exact", "lsh", "embedding"}));
  dedup->add_option("--key", dedup_key, "exact key: url|text_hash")->capture_default_str();
  dedup->add_option("--jaccard", lsh.jaccard_threshold, "LSH Jaccard threshold")->capture_default_str();
  dedup->add_option("--bands", lsh.bands)->capture_default_str();
  dedup->add_option("--rows", lsh.rows)->capture_default_str();
  dedup->add_option("--shingle", lsh.shingle_size)->capture_default_str();
  dedup->add_option("--cosine", cosine, "embedding cosine threshold")->capture_default_str();
  dedup->add_option("--embed-dim", embed_dim)->capture_default_str();
  dedup->add_option("--embed-seed", embed_seed)->capture_default_str();
  dedup->add_option("--out", dedup_out, "surviving passages JSONL")->required();
  dedup->add_option("--removals", dedup_removals, "removal log JSONL");
  dedup->callback([&] {
    action = [&] {
      run.inputs.push_back(dedup_in);
      const auto corpus = load_corpus(dedup_in);
      DedupResult r;
      if (dedup_method == "exact") {
        r = dedup_exact(corpus, parse_exact_key(dedup_key));
      } else if (dedup_method == "lsh") {
        lsh.signature_length = lsh.bands * lsh.rows;
        lsh.seed = seed;
        r = dedup_near_lsh(corpus, lsh);
      } else {
        r = dedup_near_embedding(corpus, HashingEmbedder(embed_dim, embed_seed), cosine);
      }
      write_passages(dedup_out, r.corpus.passages());
      run.outputs.push_back(dedup_out);
      if (!dedup_removals.empty()) {
        std::vector<json> rows;
        for (const auto& x : r.removals) rows.push_back(to_json(x));
        write_jsonl(dedup_removals, rows);
        run.outputs.push_back(dedup_removals);
      }
      run.extra = {{"input", corpus.size()}, {"kept", r.corpus.size()}, {"removed", r.removals.size()}};
    };
  });

  // -------------------------------------------------------------- generate
  auto* generate = app.add_subcommand("generate", "two-step synthetic pair generation");
  std::string gen_in, gen_out, gen_log, gen_prompts, gen_intent;
  bool mock = false;
  int max_retries = 3;
  std::size_t in_flight = 4;
  std::size_t backoff_ms = 500;
  generate->add_option("--passages", gen_in, "seed passages JSONL")->required();
  generate->add_option("--prompts", gen_prompts, "directory of prompt templates");
  generate->add_option("--intent", gen_intent, "single intent (default: round-robin over all six)");
  generate->add_flag("--mock-generator", mock, "deterministic offline backend");
  generate->add_option("--max-retries", max_retries)->capture_default_str();
  generate->add_option("--in-flight", in_flight, "concurrent requests")->capture_default_str();
  generate->add_option("--backoff-ms", backoff_ms, "initial retry backoff")->capture_default_str();
  generate->add_option("--out", gen_out, "pairs JSONL")->required();
  generate->add_option("--log", gen_log, "request/response log JSONL");
  generate->callback([&] {
    action = [&] {
      run.inputs.push_back(gen_in);
      const auto passages = read_passages(gen_in);
      std::vector<GenerationTask> tasks;
      for (std::size_t i = 0; i < passages.size(); ++i)
        tasks.push_back({passages[i], gen_intent.empty() ? kAllIntents[i % kAllIntents.size()] : parse_intent(gen_intent)});
      const auto templates = gen_prompts.empty() ? PromptTemplates() : PromptTemplates::load(gen_prompts);
      std::function<std::unique_ptr<TextGenerator>()> factory;
      std::chrono::milliseconds backoff{backoff_ms};
      if (mock) {
        factory = [&] { return std::make_unique<MockGenerator>(seed); };
        backoff = std::chrono::milliseconds{0};
        in_flight = 1;
      } else {
        auto backend = GeneratorBackend::from_environment();
        if (backend.endpoint.empty())
          fail(ErrorKind::config, "set DMR_GENERATOR_ENDPOINT or pass --mock-generator");
        factory = [backend] { return std::make_unique<HttpGenerator>(backend); };
      }
      const auto summary = run_generation(tasks, factory, templates, max_retries, backoff, in_flight, gen_out,
                                          gen_log.empty() ? fs::path() : fs::path(gen_log));
      run.outputs.push_back(gen_out);
      if (!gen_log.empty()) run.outputs.push_back(gen_log);
      std::map<std::string, std::size_t> per_intent;
      for (const auto& j : read_jsonl(gen_out)) ++per_intent[j.at("intent").get<std::string>()];
      json failures = json::array();
      for (const auto& f : summary.failures)
        failures.push_back({{"passage_id", f.passage_id}, {"kind", f.kind}, {"message", f.message}});
      run.extra = {{"passages", passages.size()}, {"emitted", summary.emitted}, {"per_intent", per_intent},
                   {"failures", failures}};
      if (!summary.failures.empty()) spdlog::warn("{} generation failures", summary.failures.size());
    };
  });

  // ------------------------------------------------------------ heuristics
  auto* heur = app.add_subcommand("heuristics", "turn labeled general-domain records into pairs");
  std::string heur_in, heur_out;
  heur->add_option("--records", heur_in, "records JSONL {id, intent, payload}")->required();
  heur->add_option("--out", heur_out, "pairs JSONL")->required();
  heur->callback([&] {
    action = [&] {
      run.inputs.push_back(heur_in);
      std::vector<QueryPassagePair> pairs;
      for_each_jsonl(heur_in, [&](const json& j, std::size_t) {
        pairs.push_back(apply_heuristic(gd_record_from_json(j), seed));
      });
      write_pairs(heur_out, pairs);
      run.outputs.push_back(heur_out);
      run.extra = {{"pairs", pairs.size()}};
    };
  });

  // ---------------------------------------------------------------- filter
  std::size_t ref_dim = 256;
  std::vector<std::uint64_t> ref_seeds{1, 2, 3};
  std::size_t filter_n = 2;
  std::string filter_mode = "strict_set_equality";
  auto add_filter_flags = [&](CLI::App* sub) {
    sub->add_option("--n", filter_n, "agreement depth N")->capture_default_str();
    sub->add_option("--mode", filter_mode, "strict_set_equality|intersection_nonempty")->capture_default_str();
    sub->add_option("--ref-dim", ref_dim, "reference embedder dim")->capture_default_str();
    sub->add_option("--ref-seeds", ref_seeds, "three reference embedder seeds")->expected(3)->capture_default_str();
  };
  auto make_filter_cfg = [&] {
    FilterConfig f;
    f.N = filter_n;
    f.mode = parse_filter_mode(filter_mode);
    f.reference_embedders = hashing_refs(ref_dim, ref_seeds);
    return f;
  };

  auto* filter = app.add_subcommand("filter", "mutual-agreement false-positive filtering");
  std::string filter_pairs, filter_corpus, filter_out, filter_log;
  filter->add_option("--pairs", filter_pairs, "pairs JSONL")->required();
  filter->add_option("--corpus", filter_corpus, "passages JSONL")->required();
  add_filter_flags(filter);
  filter->add_option("--out", filter_out, "retained pairs JSONL")->required();
  filter->add_option("--decisions", filter_log, "per-query decision log JSONL");
  filter->callback([&] {
    action = [&] {
      run.inputs.insert(run.inputs.end(), {filter_pairs, filter_corpus});
      const auto pairs = read_pairs(filter_pairs);
      const auto corpus = corpus_with_positives(filter_corpus, pairs);
      const auto r = mutual_agreement_filter(pairs, corpus, make_filter_cfg());
      write_pairs(filter_out, r.retained);
      run.outputs.push_back(filter_out);
      if (!filter_log.empty()) {
        std::vector<json> rows;
        for (const auto& d : r.decisions) rows.push_back(to_json(d));
        write_jsonl(filter_log, rows);
        run.outputs.push_back(filter_log);
      }
      run.extra = {{"input", pairs.size()}, {"retained", r.retained.size()}};
    };
  });

  // ------------------------------------------------------------------ mine
  auto* mine = app.add_subcommand("mine", "difficulty-aware hard-negative mining into MTT-alpha");
  std::string mine_pairs, mine_corpus, mine_out_dir;
  MiningConfig mcfg;
  std::size_t miner_dim = 256;
  std::uint64_t miner_seed = 0;
  bool apply_filter = false;
  mine->add_option("--pairs", mine_pairs, "pairs JSONL")->required();
  mine->add_option("--corpus", mine_corpus, "passages JSONL")->required();
  mine->add_option("--alpha", mcfg.alpha, "difficulty level")->capture_default_str();
  mine->add_option("--k", mcfg.K, "negatives per query")->capture_default_str();
  mine->add_option("--pool", mcfg.pool_size, "retrieval pool size")->capture_default_str();
  mine->add_option("--miner-dim", miner_dim)->capture_default_str();
  mine->add_option("--miner-seed", miner_seed)->capture_default_str();
  mine->add_flag("--filter", apply_filter, "apply mutual-agreement filtering first (synthetic pairs)");
  add_filter_flags(mine);
  mine->add_option("--out-dir", mine_out_dir, "directory for mtt-<alpha>.jsonl")->required();
  mine->callback([&] {
    action = [&] {
      run.inputs.insert(run.inputs.end(), {mine_pairs, mine_corpus});
      const auto pairs = read_pairs(mine_pairs);
      const auto corpus = corpus_with_positives(mine_corpus, pairs);
      mcfg.miner = std::make_shared<HashingEmbedder>(miner_dim, miner_seed);
      const auto fcfg = make_filter_cfg();
      const auto r = emit_mtt(pairs, corpus, &fcfg, mcfg, apply_filter, mine_out_dir);
      run.outputs.push_back(r.path);
      auto manifest = r.path;
      run.outputs.push_back(manifest.replace_extension(".manifest.json"));
      // The passages every triplet id resolves against, for `finetune --corpus`.
      const auto corpus_out = fs::path(mine_out_dir) / "corpus.jsonl";
      write_passages(corpus_out, corpus.passages());
      run.outputs.push_back(corpus_out);
      run.extra = to_json(r.manifest);
    };
  });

  // ---------------------------------------------------------------- stage1
  TrainFlags train_flags;
  std::string model_in, train_out;
  std::string val_queries, val_corpus, val_qrels;
  auto add_val_flags = [&](CLI::App* sub) {
    sub->add_option("--val-queries", val_queries, "validation queries JSONL")->required();
    sub->add_option("--val-corpus", val_corpus, "validation passages JSONL")->required();
    sub->add_option("--val-qrels", val_qrels, "validation qrels (TREC)")->required();
  };

  auto* stage1 = app.add_subcommand("stage1", "bidirectional adaptation + MLM (or model init)");
  std::string texts_path;
  EncoderConfig enc;
  std::string mask_mode = "causal";
  std::size_t max_words = 20000, hash_buckets = 64;
  stage1->add_option("--model", model_in, "input checkpoint (omit to initialise a new model)");
  stage1->add_option("--texts", texts_path, "passages JSONL used for the vocabulary and MLM")->required();
  stage1->add_option("--dim", enc.dim)->capture_default_str();
  stage1->add_option("--layers", enc.n_layers)->capture_default_str();
  stage1->add_option("--heads", enc.n_heads)->capture_default_str();
  stage1->add_option("--ffn", enc.ffn_dim, "0 = 4 x dim")->capture_default_str();
  stage1->add_option("--max-seq", enc.max_seq_len)->capture_default_str();
  stage1->add_option("--mask", mask_mode, "initial mask: causal|bidirectional")->capture_default_str();
  stage1->add_option("--max-words", max_words)->capture_default_str();
  stage1->add_option("--hash-buckets", hash_buckets)->capture_default_str();
  train_flags.add(stage1);
  stage1->add_option("--out", train_out, "output checkpoint")->required();
  stage1->callback([&] {
    action = [&] {
      run.inputs.push_back(texts_path);
      const auto passages = read_passages(texts_path);
      std::vector<std::string> texts;
      for (const auto& p : passages) texts.push_back(p.text);
      Checkpoint model;
      if (model_in.empty()) {
        enc.mask_mode = parse_mask_mode(mask_mode);
        model = init_model(texts, enc, max_words, hash_buckets, seed);
      } else {
        run.inputs.push_back(model_in);
        model = load_checkpoint(model_in);
      }
      const auto cfg = train_flags.resolve(stage1, seed, app.count("--seed") > 0, run);
      const fs::path out(train_out);
      MetricLog log(fs::path(out.string() + ".metrics.jsonl"));
      Stage1Result r;
      if (!cfg.stage1_enabled) {
        spdlog::info("stage 1 disabled by config; passing the model through");
        r.checkpoint = model;
        r.skipped = true;
      } else {
        std::vector<std::vector<int>> seqs;
        for (const auto& t : texts) seqs.push_back(text_token_ids(model, t));
        r = run_stage1(model, seqs, cfg, log.sink());
      }
      log.commit();
      save_checkpoint(out, r.checkpoint);
      run.outputs.push_back(out);
      run.outputs.push_back(fs::path(out.string() + ".metrics.jsonl"));
      run.extra["skipped"] = r.skipped;
      run.extra["steps"] = r.steps;
      run.extra["initial_loss"] = r.initial_loss;
      run.extra["final_loss"] = r.final_loss;
    };
  });

  // -------------------------------------------------------------- pretrain
  auto* pretrain = app.add_subcommand("pretrain", "in-batch contrastive pre-training");
  std::string pt_pairs;
  pretrain->add_option("--model", model_in, "input checkpoint")->required();
  pretrain->add_option("--pairs", pt_pairs, "MTP pairs JSONL")->required();
  add_val_flags(pretrain);
  train_flags.add(pretrain);
  pretrain->add_option("--out", train_out, "output directory")->required();
  pretrain->callback([&] {
    action = [&] {
      run.inputs.insert(run.inputs.end(), {model_in, pt_pairs});
      const auto model = load_checkpoint(model_in);
      const auto pairs = read_pairs(pt_pairs);
      const auto val = load_validation(val_queries, val_corpus, val_qrels, run);
      const auto cfg = train_flags.resolve(pretrain, seed, app.count("--seed") > 0, run);
      const fs::path out(train_out);
      fs::create_directories(out);
      MetricLog log(out / "metrics.jsonl");
      const auto r = run_pretrain(model, pairs, cfg, val, log.sink());
      log.commit();
      save_checkpoint(out / "model-PT.ckpt", r.best);
      CheckpointRegistry reg;
      reg.record(0, {out / "model-PT.ckpt", r.best_val, r.best_step});
      reg.save(out / "registry.json");
      run.outputs.push_back(out);
      run.extra["initial_val_ndcg10"] = r.initial_val;
      run.extra["best_val_ndcg10"] = r.best_val;
      run.extra["best_step"] = r.best_step;
    };
  });

  // -------------------------------------------------------------- finetune
  auto* finetune = app.add_subcommand("finetune", "progressive hard-negative fine-tuning");
  std::vector<std::string> stage_specs;
  std::string ft_corpus;
  finetune->add_option("--model", model_in, "model-PT checkpoint")->required();
  finetune->add_option("--corpus", ft_corpus, "passages referenced by the MTT files")->required();
  finetune->add_option("--stage", stage_specs, "alpha:mtt-file[:epochs], in schedule order");
  add_val_flags(finetune);
  train_flags.add(finetune);
  finetune->add_option("--out", train_out, "output directory")->required();
  finetune->callback([&] {
    action = [&] {
      run.inputs.insert(run.inputs.end(), {model_in, ft_corpus});
      const auto model = load_checkpoint(model_in);
      const auto corpus = load_corpus(ft_corpus);
      const auto val = load_validation(val_queries, val_corpus, val_qrels, run);
      auto cfg = train_flags.resolve(finetune, seed, app.count("--seed") > 0, run);
      if (!stage_specs.empty()) {
        cfg.stages.clear();
        for (std::size_t i = 0; i < stage_specs.size(); ++i)
          cfg.stages.push_back(parse_stage(stage_specs[i], static_cast<int>(i) + 1));
      }
      if (cfg.stages.empty()) fail(ErrorKind::config, "no curriculum stages (use --stage or the run config)");
      std::vector<CurriculumData> data;
      for (const auto& s : cfg.stages) {
        CurriculumData d;
        d.stage = s;
        d.triplets = read_mtt(s.dataset_path, corpus, &d.file_alpha);
        run.inputs.push_back(s.dataset_path);
        data.push_back(std::move(d));
      }
      const fs::path out(train_out);
      fs::create_directories(out);
      MetricLog log(out / "metrics.jsonl");
      const auto r = run_finetune_curriculum(model, data, cfg, val, out, log.sink());
      log.commit();
      save_checkpoint(out / "final.ckpt", r.final_checkpoint);
      r.registry.save(out / "registry.json");
      run.outputs.push_back(out);
      run.extra["registry"] = r.registry.to_json();
    };
  });

  // ------------------------------------------------------------------ eval
  auto* eval = app.add_subcommand("eval", "NDCG@k evaluation");
  std::string ev_queries, ev_corpus, ev_qrels, ev_out, ev_run, ev_vectors;
  std::optional<std::uint64_t> ev_hash_seed;
  std::size_t ev_dim = 256;
  EvalOptions ev_opts;
  bool ev_no_instruction = false;
  eval->add_option("--queries", ev_queries)->required();
  eval->add_option("--corpus", ev_corpus)->required();
  eval->add_option("--qrels", ev_qrels)->required();
  eval->add_option("--model", model_in, "trainable checkpoint");
  eval->add_option("--hashing-seed", ev_hash_seed, "evaluate a hashing embedder instead");
  eval->add_option("--dim", ev_dim, "hashing embedder dim")->capture_default_str();
  eval->add_option("--vectors", ev_vectors, "precomputed vector store JSONL");
  eval->add_option("--k", ev_opts.k)->capture_default_str();
  eval->add_option("--tau", ev_opts.similarity.temperature)->capture_default_str();
  eval->add_flag("--no-instruction", ev_no_instruction, "embed queries without instructions");
  eval->add_option("--out", ev_out, "report JSON")->required();
  eval->add_option("--run", ev_run, "ranked run file");
  eval->callback([&] {
    action = [&] {
      const int sources = !model_in.empty() + ev_hash_seed.has_value() + !ev_vectors.empty();
      if (sources != 1) fail(ErrorKind::usage, "give exactly one of --model, --hashing-seed, --vectors");
      EvalTarget target{read_queries(ev_queries), load_corpus(ev_corpus), QrelSet::load_trec(ev_qrels)};
      run.inputs.insert(run.inputs.end(), {ev_queries, ev_corpus, ev_qrels});
      EmbedderPtr embedder;
      if (!model_in.empty()) {
        run.inputs.push_back(model_in);
        auto ckpt = load_checkpoint(model_in);
        const auto limit = static_cast<std::size_t>(ckpt.config.max_seq_len);
        embedder = std::make_shared<TrainableEmbedder>(std::move(ckpt), true, limit);
      } else if (ev_hash_seed) {
        embedder = std::make_shared<HashingEmbedder>(ev_dim, *ev_hash_seed);
      } else {
        run.inputs.push_back(ev_vectors);
        embedder = std::make_shared<PrecomputedEmbedder>(std::make_shared<VectorStore>(VectorStore::load(ev_vectors)));
      }
      ev_opts.with_instruction = !ev_no_instruction;
      RankedRun ranked;
      const auto report = evaluate_model(*embedder, target, ev_opts, &ranked);
      write_text_atomic(ev_out, to_json(report, false).dump(2) + "\n");
      run.outputs.push_back(ev_out);
      if (!ev_run.empty()) {
        save_run(ev_run, ranked);
        run.outputs.push_back(ev_run);
      }
      spdlog::info("NDCG@{} mean {:.4f}; embed {:.3f}s, search {:.3f}s", ev_opts.k, report.mean,
                   report.embed_seconds, report.search_seconds);
      run.extra = {{"ndcg_mean", report.mean}};
    };
  });

  // --------------------------------------------------------------- devlite
  auto* devlite = app.add_subcommand("devlite", "build a pooled lightweight dev set and a test split");
  std::string dl_queries, dl_corpus, dl_qrels, dl_out;
  DevLiteConfig dl_cfg;
  devlite->add_option("--queries", dl_queries)->required();
  devlite->add_option("--corpus", dl_corpus)->required();
  devlite->add_option("--qrels", dl_qrels)->required();
  devlite->add_option("--n-per-intent", dl_cfg.n_per_intent)->capture_default_str();
  devlite->add_option("--k", dl_cfg.k)->capture_default_str();
  devlite->add_option("--ref-dim", ref_dim, "reference embedder dim")->capture_default_str();
  devlite->add_option("--ref-seeds", ref_seeds, "three reference embedder seeds")->expected(3)->capture_default_str();
  devlite->add_option("--out", dl_out, "output directory")->required();
  devlite->callback([&] {
    action = [&] {
      run.inputs.insert(run.inputs.end(), {dl_queries, dl_corpus, dl_qrels});
      const auto queries = read_queries(dl_queries);
      const auto corpus = load_corpus(dl_corpus);
      const auto qrels = QrelSet::load_trec(dl_qrels);
      dl_cfg.seed = seed;
      const auto split = build_devlite(queries, corpus, qrels, hashing_refs(ref_dim, ref_seeds), dl_cfg);
      const fs::path out(dl_out);
      fs::create_directories(out / "dev");
      fs::create_directories(out / "test");
      write_queries(out / "dev" / "queries.jsonl", split.dev.queries);
      write_passages(out / "dev" / "corpus.jsonl", split.dev.corpus.passages());
      split.dev.qrels.save_trec(out / "dev" / "qrels.txt");
      write_queries(out / "test" / "queries.jsonl", split.test.queries);
      split.test.qrels.save_trec(out / "test" / "qrels.txt");
      run.outputs.push_back(out);
      run.extra = {{"dev_queries", split.dev.queries.size()},
                   {"dev_passages", split.dev.corpus.size()},
                   {"test_queries", split.test.queries.size()},
                   {"full_passages", corpus.size()}};
    };
  });

  // ------------------------------------------------------------------- tau
  auto* tau = app.add_subcommand("tau", "Kendall's tau between two checkpoint score lists");
  std::string tau_a, tau_b, tau_out;
  tau->add_option("--a", tau_a, "scores file: 'id score' per line")->required();
  tau->add_option("--b", tau_b, "scores file: 'id score' per line")->required();
  tau->add_option("--out", tau_out, "result JSON (stdout when omitted)");
  tau->callback([&] {
    action = [&] {
      auto read_scores = [](const std::string& path) {
        std::map<std::string, double> m;
        std::istringstream in(read_text(path));
        std::string id;
        double v = 0.0;
        while (in >> id >> v)
          if (!m.emplace(id, v).second) fail(ErrorKind::data, path + ": repeated id '" + id + "'");
        if (!in.eof()) fail(ErrorKind::parse, path + ": expected 'id score' lines");
        return m;
      };
      run.inputs.insert(run.inputs.end(), {tau_a, tau_b});
      const auto a = read_scores(tau_a);
      const auto b = read_scores(tau_b);
      std::vector<double> xs, ys;
      for (const auto& [id, v] : a) {
        auto it = b.find(id);
        if (it == b.end()) fail(ErrorKind::data, "'" + id + "' missing from " + tau_b);
        xs.push_back(v);
        ys.push_back(it->second);
      }
      if (a.size() != b.size()) fail(ErrorKind::data, "score files cover different ids");
      auto ranking = [](const std::map<std::string, double>& m) {
        std::vector<std::pair<std::string, double>> v(m.begin(), m.end());
        std::stable_sort(v.begin(), v.end(), [](const auto& x, const auto& y) { return x.second > y.second; });
        std::vector<std::string> ids;
        for (auto& [id, s] : v) ids.push_back(id);
        return ids;
      };
      json result = {{"n", xs.size()}, {"tau_b", kendall_tau_b(xs, ys)}};
      std::set<double> ua(xs.begin(), xs.end()), ub(ys.begin(), ys.end());
      if (ua.size() == xs.size() && ub.size() == ys.size()) result["tau"] = kendall_tau(ranking(a), ranking(b));
      const auto text = result.dump(2) + "\n";
      if (tau_out.empty()) {
        std::cout << text;
      } else {
        write_text_atomic(tau_out, text);
        run.outputs.push_back(tau_out);
      }
    };
  });

  // ---------------------------------------------------------------- contam
  auto* contam = app.add_subcommand("contam", "exact-match contamination between train and test texts");
  std::vector<std::string> contam_train, contam_test;
  std::string contam_field = "query", contam_out;
  contam->add_option("--train", contam_train, "JSONL files of training records")->required();
  contam->add_option("--test", contam_test, "JSONL files of test records")->required();
  contam->add_option("--field", contam_field, "text field to compare (falls back to 'text')")->capture_default_str();
  contam->add_option("--out", contam_out, "report JSON")->required();
  contam->callback([&] {
    action = [&] {
      auto collect = [&](const std::vector<std::string>& files) {
        std::vector<std::string> texts;
        for (const auto& f : files) {
          run.inputs.push_back(f);
          for_each_jsonl(f, [&](const json& j, std::size_t lineno) {
            const char* key = j.contains(contam_field) ? contam_field.c_str() : "text";
            if (!j.contains(key) || !j.at(key).is_string())
              fail(ErrorKind::schema, f + ":" + std::to_string(lineno) + ": no '" + contam_field + "' field");
            texts.push_back(j.at(key).get<std::string>());
          });
        }
        return texts;
      };
      const auto report = contamination_check(collect(contam_train), collect(contam_test));
      write_text_atomic(contam_out, to_json(report).dump(2) + "\n");
      run.outputs.push_back(contam_out);
      run.extra = {{"overlaps", report.overlaps.size()}};
    };
  });

  // ------------------------------------------------------------- gradcheck
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every objective");
  std::size_t gc_instances = 10;
  GradCheckOptions gc_opts;
  double gc_tol = 1e-4;
  gradcheck->add_option("--instances", gc_instances, "seeded instances per objective")->capture_default_str();
  gradcheck->add_option("--coordinates", gc_opts.coordinates)->capture_default_str();
  gradcheck->add_option("--step", gc_opts.step)->capture_default_str();
  gradcheck->add_option("--tolerance", gc_tol)->capture_default_str();
  gradcheck->callback([&] {
    action = [&] {
      bool ok = true;
      for (auto op : {GradCheckOp::inbatch, GradCheckOp::hardneg, GradCheckOp::mlm}) {
        double worst = 0.0;
        for (std::size_t i = 0; i < gc_instances; ++i)
          worst = std::max(worst, grad_check(op, mix64(seed * 1000 + i), gc_opts));
        std::printf("%-8s max_rel_err=%.3e %s\n", std::string(grad_check_name(op)).c_str(), worst,
                    worst < gc_tol ? "ok" : "FAIL");
        ok = ok && worst < gc_tol;
      }
      if (!ok) fail(ErrorKind::data, "gradient check exceeded tolerance");
    };
  });

  if (argc <= 1) {
    std::cerr << app.help();
    return 1;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  spdlog::set_default_logger(spdlog::stderr_color_mt("dmr"));
  spdlog::set_level(spdlog::level::from_str(log_level));
  set_thread_count(threads);

  for (const auto* sub : app.get_subcommands()) run.subcommand = sub->get_name();
  {
    // Keep the global keys and the active subcommand's section only.
    std::istringstream all(app.config_to_str(true, false));
    std::string line;
    while (std::getline(all, line)) {
      const auto eq = line.find('=');
      const auto key = line.substr(0, eq);
      if (key.find('.') == std::string::npos || key.rfind(run.subcommand + ".", 0) == 0) run.config += line + "\n";
    }
  }
  try {
    action();
    write_manifest(run);
  } catch (const Error& e) {
    spdlog::error("{}: {}", to_string(e.kind()), e.what());
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 2;
  }
  return 0;
}
