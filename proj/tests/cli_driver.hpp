#pragma once

// Drives the dmr binary through every subcommand on a small generated
// workspace. Used by the CLI tests and the reproducibility criterion.

#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dmr/corpus.hpp"
#include "dmr/jsonl.hpp"
#include "dmr/text.hpp"

namespace cli {

namespace fs = std::filesystem;

struct Result {
  int exit_code = -1;
  std::string out;
};

/// Runs `args` with the dmr binary in `dir`; stderr is discarded.
inline Result run(const fs::path& dir, const std::string& args) {
  const std::string cmd = "cd '" + dir.string() + "' && '" + std::string(DMR_CLI) + "' " + args + " 2>/dev/null";
  Result r;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, n);
  const int status = ::pclose(pipe);
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

inline void write_docs(const fs::path& path, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const std::vector<std::string> topics = {"flood levee failure", "wildfire evacuation route",
                                           "earthquake shelter supply", "hurricane storm surge",
                                           "drought water ration"};
  const std::vector<std::string> words = {"report", "county", "damage", "response", "team", "warning",
                                          "river", "road", "crew", "relief", "aid", "power", "school",
                                          "hospital", "map"};
  std::vector<nlohmann::json> docs;
  for (int d = 0; d < 30; ++d) {
    std::string text;
    for (int s = 0; s < 6; ++s) {
      std::vector<std::string> sentence = dmr::tokenize(topics[static_cast<std::size_t>(d % 5)]);
      for (int w = 0; w < 5; ++w) sentence.push_back(words[rng() % words.size()]);
      for (std::size_t i = sentence.size(); i > 1; --i) std::swap(sentence[i - 1], sentence[rng() % i]);
      text += dmr::join_tokens(sentence) + ". ";
    }
    // every tenth document repeats an earlier one verbatim
    if (d % 10 == 9) text = docs[static_cast<std::size_t>(d - 3)]["text"];
    docs.push_back({{"id", "doc" + std::to_string(d)}, {"text", text}, {"url", "http://x/" + std::to_string(d % 25)}});
  }
  dmr::write_jsonl(path, docs);
}

inline void write_records(const fs::path& path) {
  dmr::write_jsonl(path, {{{"id", "g1"}, {"intent", "QA"}, {"question", "where is the shelter"}, {"answer", "at the school"}},
                          {{"id", "g2"}, {"intent", "STS"}, {"sentence_a", "roads closed"}, {"sentence_b", "road closures"}},
                          {{"id", "g3"}, {"intent", "NLI"}, {"premise", "the river rose"}, {"hypothesis", "water levels increased"}}});
}

/// Validation queries and qrels drawn from the first generated pairs.
inline void write_validation(const fs::path& dir) {
  const auto pairs = dmr::read_pairs(dir / "pairs.jsonl");
  std::vector<dmr::Query> queries;
  std::ofstream qrels(dir / "valqrels.txt");
  for (std::size_t i = 0; i < std::min<std::size_t>(30, pairs.size()); ++i) {
    queries.push_back(pairs[i].query);
    qrels << pairs[i].query.id << " 0 " << pairs[i].positive.id << " 1\n";
  }
  dmr::write_queries(dir / "valq.jsonl", queries);
  std::ofstream(dir / "ta.txt") << "a 0.1\nb 0.3\nc 0.2\nd 0.5\n";
  std::ofstream(dir / "tb.txt") << "a 0.1\nb 0.2\nc 0.3\nd 0.5\n";
}

struct Step {
  std::string name;
  std::string args;
  std::string stdout_file;  // captured when non-empty
};

/// The full chain; steps after "mine-0.85" need write_validation first.
inline std::vector<Step> pipeline_steps() {
  const std::string val = " --val-queries valq.jsonl --val-corpus mtt/corpus.jsonl --val-qrels valqrels.txt";
  const std::string train = " --learning-rate 0.01 --tau 0.05 --batch-size 8";
  return {
      {"ingest", "ingest --docs docs.jsonl --max-tokens 40 --out passages.jsonl", ""},
      {"dedup-exact", "dedup --passages passages.jsonl --method exact --key text_hash --out dedup.jsonl --removals rem.jsonl", ""},
      {"dedup-lsh", "dedup --passages passages.jsonl --method lsh --out dedup-lsh.jsonl --removals rem-lsh.jsonl", ""},
      {"dedup-embedding", "dedup --passages passages.jsonl --method embedding --cosine 0.95 --out dedup-emb.jsonl", ""},
      {"generate", "generate --passages dedup.jsonl --mock-generator --out pairs.jsonl --log gen.log.jsonl", ""},
      {"heuristics", "heuristics --records records.jsonl --out gd-pairs.jsonl", ""},
      {"filter", "filter --pairs pairs.jsonl --corpus dedup.jsonl --n 3 --mode lenient --out filtered.jsonl --decisions decisions.jsonl", ""},
      {"mine-0.65", "mine --pairs pairs.jsonl --corpus dedup.jsonl --alpha 0.65 --k 3 --pool 50 --filter --n 3 --mode lenient --out-dir mtt", ""},
      {"mine-0.85", "mine --pairs pairs.jsonl --corpus dedup.jsonl --alpha 0.85 --k 3 --pool 50 --filter --n 3 --mode lenient --out-dir mtt", ""},
      {"stage1", "stage1 --texts dedup.jsonl --dim 16 --heads 2 --layers 1 --max-seq 48 --mask causal --stage1-epochs 1" + train + " --out m0.ckpt", ""},
      {"pretrain", "pretrain --model m0.ckpt --pairs pairs.jsonl" + val + train + " --out pt", ""},
      {"finetune", "finetune --model pt/model-PT.ckpt --corpus mtt/corpus.jsonl --stage 0.65:mtt/mtt-0.65.jsonl --stage 0.85:mtt/mtt-0.85.jsonl" + val + train + " --out ft", ""},
      {"eval", "eval --queries valq.jsonl --corpus mtt/corpus.jsonl --qrels valqrels.txt --model ft/final.ckpt --tau 0.05 --out rep.json --run run.txt", ""},
      {"devlite", "devlite --queries valq.jsonl --corpus mtt/corpus.jsonl --qrels valqrels.txt --n-per-intent 2 --out dl", ""},
      {"tau", "tau --a ta.txt --b tb.txt --out tau.json", ""},
      {"contam", "contam --train pairs.jsonl --test valq.jsonl --out contam.json", ""},
      {"gradcheck", "gradcheck --instances 2 --coordinates 10", "gradcheck.txt"},
  };
}

/// fnv1a64 of every regular file under `dir`, keyed by relative path.
inline std::map<std::string, std::uint64_t> hash_tree(const fs::path& dir) {
  std::map<std::string, std::uint64_t> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = dmr::fnv1a64(dmr::read_text(e.path()));
  return out;
}

inline fs::path fresh_workspace(const std::string& name) {
  const auto dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  write_docs(dir / "docs.jsonl", 1);
  write_records(dir / "records.jsonl");
  return dir;
}

}  // namespace cli
