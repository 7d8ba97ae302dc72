#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dmr/corpus.hpp"
#include "dmr/embedder.hpp"

namespace dmr {

/// Graded judgments: query id -> passage id -> relevance (>= 0).
class QrelSet {
 public:
  void add(const std::string& query_id, const std::string& passage_id, int relevance);
  int relevance(const std::string& query_id, const std::string& passage_id) const;
  const std::map<std::string, int>* judgments(const std::string& query_id) const;
  bool has_query(const std::string& query_id) const { return qrels_.count(query_id) != 0; }
  std::size_t size() const;  // number of (query, passage) entries
  const std::map<std::string, std::map<std::string, int>>& all() const noexcept { return qrels_; }

  /// Entries whose query is in `queries` and passage is in `passages`
  /// (no passage restriction when `passages` is null).
  QrelSet restrict(const std::set<std::string>& queries, const Corpus* passages) const;

  /// Classic TREC layout: `query_id 0 passage_id relevance`.
  static QrelSet load_trec(const std::filesystem::path& path);
  void save_trec(const std::filesystem::path& path) const;

  friend bool operator==(const QrelSet&, const QrelSet&) = default;

 private:
  std::map<std::string, std::map<std::string, int>> qrels_;
};

/// Query id -> ranked (passage id, score) list.
using RankedRun = std::map<std::string, std::vector<ScoredPassage>>;

/// Run file layout: `query_id passage_id rank score`.
void save_run(const std::filesystem::path& path, const RankedRun& run);
RankedRun load_run(const std::filesystem::path& path);

struct NdcgReport {
  std::map<std::string, double> per_query;  // evaluated queries only
  double mean = 0.0;
  std::size_t excluded = 0;  // known queries with zero total relevance
};

/// DCG@k = Σ rel_i / log2(i + 1) over the run's order; NDCG = DCG / IDCG.
/// Known queries are `known_queries` when given, else the qrels' queries; a
/// run entry for an unknown query is a data error. Known queries missing
/// from the run score 0.
NdcgReport ndcg_at_k(const RankedRun& run, const QrelSet& qrels, std::size_t k,
                     const std::set<std::string>* known_queries = nullptr);

/// Single-list NDCG@k from graded labels in rank order.
double ndcg_from_labels(const std::vector<int>& ranked_labels, std::vector<int> all_labels,
                        std::size_t k);

/// τ = (concordant − discordant) / (n(n−1)/2) for two orderings of one item
/// set. Throws a data error when the item sets differ or contain repeats.
double kendall_tau(const std::vector<std::string>& ranking_a,
                   const std::vector<std::string>& ranking_b);

/// Kendall's τ-b over paired scores, correcting for ties in either list.
double kendall_tau_b(const std::vector<double>& x, const std::vector<double>& y);

struct OverlapEntry {
  std::string text;  // normalized form
  std::size_t train_count = 0;
  std::size_t test_count = 0;
};

struct ContaminationReport {
  std::vector<OverlapEntry> overlaps;  // sorted by text
  std::size_t train_size = 0;
  std::size_t test_size = 0;
};

nlohmann::json to_json(const ContaminationReport& r);

/// Exact matches after lowercasing and whitespace normalization.
ContaminationReport contamination_check(const std::vector<std::string>& train_texts,
                                        const std::vector<std::string>& test_texts);

/// Queries + passages + judgments to evaluate against.
struct EvalTarget {
  std::vector<Query> queries;
  Corpus corpus;
  QrelSet qrels;
};

struct DevLiteSplit {
  EvalTarget dev;   // sampled queries, pooled corpus
  EvalTarget test;  // remaining queries, full corpus
};

struct DevLiteConfig {
  std::size_t n_per_intent = 80;
  std::size_t k = 10;
  std::uint64_t seed = 0;
  bool with_instruction = false;
  SimilarityConfig similarity{};
};

/// Per intent, samples n_per_intent dev queries (seeded, order-independent);
/// each dev query's pool is the union of every model's top-k over the full
/// corpus; the dev corpus is the union of pools, kept in corpus order.
/// Throws a config error when an intent has too few queries or models != 3.
DevLiteSplit build_devlite(const std::vector<Query>& queries, const Corpus& corpus,
                           const QrelSet& qrels, const std::vector<EmbedderPtr>& models,
                           const DevLiteConfig& cfg);

struct EvalReport {
  std::map<SearchIntent, double> per_intent;
  double mean = 0.0;  // unweighted over intents with evaluated queries
  std::map<std::string, double> per_query;
  std::size_t evaluated = 0;
  std::size_t excluded = 0;
  std::size_t n_queries = 0;
  std::size_t n_passages = 0;
  double embed_seconds = 0.0;
  double search_seconds = 0.0;
};

/// Timings are only serialized when `with_timing`; everything else is a
/// pure function of the inputs.
nlohmann::json to_json(const EvalReport& r, bool with_timing = true);

struct EvalOptions {
  std::size_t k = 10;
  bool with_instruction = true;
  SimilarityConfig similarity{};
};

EvalReport evaluate_model(const Embedder& embedder, const EvalTarget& target,
                          const EvalOptions& opts = {}, RankedRun* run_out = nullptr);

}  // namespace dmr
