#pragma once

// Labeled-data refinement: mutual-agreement false-positive filtering and
// difficulty-aware hard-negative mining, producing MTT-α triplet files.

#include <cstddef>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dmr/corpus.hpp"
#include "dmr/embedder.hpp"

namespace dmr {

enum class FilterMode { strict_set_equality, intersection_nonempty };

std::string_view filter_mode_name(FilterMode mode);
FilterMode parse_filter_mode(std::string_view name);  // also accepts strict / lenient

struct FilterConfig {
  std::size_t N = 2;
  FilterMode mode = FilterMode::strict_set_equality;
  std::vector<EmbedderPtr> reference_embedders;
  SimilarityConfig similarity{};
  bool with_instruction = false;

  void validate() const;
};

/// Per-query outcome of the filter.
struct FilterDecision {
  std::string query_id;
  bool retained = false;
  std::string original_positive_id;
  std::string positive_id;  // chosen positive when retained
  std::vector<std::vector<std::string>> top_n;  // per reference model, rank order
  std::vector<std::string> intersection;         // sorted ids
};

nlohmann::json to_json(const FilterDecision& d);

struct FilterResult {
  std::vector<QueryPassagePair> retained;
  std::vector<FilterDecision> decisions;  // input order
};

/// Reference indexes are built once; filter() is then pure per query.
class MutualAgreementFilter {
 public:
  MutualAgreementFilter(const Corpus& corpus, FilterConfig cfg);

  FilterDecision decide(const Query& query, const std::string& positive_id) const;
  FilterResult filter(const std::vector<QueryPassagePair>& pairs) const;

 private:
  const Corpus& corpus_;
  FilterConfig cfg_;
  std::vector<std::unique_ptr<SearchIndex>> indexes_;
};

FilterResult mutual_agreement_filter(const std::vector<QueryPassagePair>& pairs,
                                     const Corpus& corpus, const FilterConfig& cfg);

struct MiningConfig {
  double alpha = 0.85;
  std::size_t pool_size = 200;
  std::size_t K = 9;
  EmbedderPtr miner;
  SimilarityConfig similarity{};
  bool with_instruction = false;

  void validate() const;
};

struct TrainingTriplet {
  Query query;
  Passage positive;
  std::vector<Passage> negatives;       // descending similarity
  double positive_score = 0.0;
  std::vector<double> negative_scores;  // parallel to negatives
};

class HardNegativeMiner {
 public:
  HardNegativeMiner(const Corpus& corpus, MiningConfig cfg);

  /// Throws a data error when the positive is not in the corpus. An empty
  /// survivor set yields a triplet with no negatives.
  TrainingTriplet mine(const QueryPassagePair& pair) const;
  TrainingTriplet mine(const QueryPassagePair& pair, const DenseVector& query_vec) const;
  const MiningConfig& config() const noexcept { return cfg_; }

 private:
  const Corpus& corpus_;
  MiningConfig cfg_;
  SearchIndex index_;
};

TrainingTriplet mine_hard_negatives(const QueryPassagePair& pair, const Corpus& corpus,
                                    const MiningConfig& cfg);

/// Shortest decimal that round-trips, e.g. "0.85".
std::string alpha_label(double alpha);
std::filesystem::path mtt_path(const std::filesystem::path& dir, double alpha);

struct MttManifest {
  std::size_t input = 0;
  std::size_t after_filter = 0;
  std::size_t emitted = 0;
  std::size_t empty_negatives = 0;
};

nlohmann::json to_json(const MttManifest& m);

struct MttResult {
  std::filesystem::path path;
  MttManifest manifest;
  std::vector<FilterDecision> decisions;  // empty when filtering is off
  std::vector<std::string> empty_negative_queries;
};

/// Filters (when apply_filter) then mines; writes `mtt-<alpha>.jsonl` and
/// `mtt-<alpha>.manifest.json` under `out_dir`. Triplets with no surviving
/// negatives are reported, not emitted.
MttResult emit_mtt(const std::vector<QueryPassagePair>& pairs, const Corpus& corpus,
                   const FilterConfig* fcfg, const MiningConfig& mcfg, bool apply_filter,
                   const std::filesystem::path& out_dir);

nlohmann::json to_json(const TrainingTriplet& t, double alpha);

/// Reads an MTT file back into triplets, resolving ids against `corpus` and
/// returning the file's α. Mixed α values are a data error.
std::vector<TrainingTriplet> read_mtt(const std::filesystem::path& path, const Corpus& corpus,
                                      double* alpha_out = nullptr);

}  // namespace dmr
