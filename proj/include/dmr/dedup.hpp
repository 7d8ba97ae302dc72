#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dmr/corpus.hpp"
#include "dmr/embedder.hpp"

namespace dmr {

/// One removed passage and the earlier survivor it duplicates.
struct DedupRemoval {
  std::string removed_id;
  std::string kept_id;
  std::string reason;
};

nlohmann::json to_json(const DedupRemoval& r);

/// Survivors keep input order and text; the earlier record always wins.
struct DedupResult {
  Corpus corpus;
  std::vector<DedupRemoval> removals;
};

enum class ExactKey { url, text_hash };

ExactKey parse_exact_key(std::string_view name);

/// Passages with an empty url are never url-duplicates of each other.
DedupResult dedup_exact(const Corpus& corpus, ExactKey key);

struct LshConfig {
  double jaccard_threshold = 0.8;
  std::size_t bands = 16;
  std::size_t rows = 8;
  std::size_t signature_length = 128;  // must equal bands * rows
  std::size_t shingle_size = 3;
  std::uint64_t seed = 0;
};

/// Hashes of the k-token shingles of a text (one shingle of all tokens when
/// the text is shorter than k).
std::vector<std::uint64_t> shingle_hashes(std::string_view text, std::size_t k);

/// Exact Jaccard of two shingle sets.
double shingle_jaccard(std::string_view a, std::string_view b, std::size_t k);

std::vector<std::uint64_t> minhash_signature(const std::vector<std::uint64_t>& shingles,
                                             std::size_t length, std::uint64_t seed);

double estimated_jaccard(const std::vector<std::uint64_t>& a, const std::vector<std::uint64_t>& b);

/// MinHash/LSH near-duplicate removal. A later passage is dropped when it
/// shares a band bucket with an earlier survivor and their signature
/// agreement is >= jaccard_threshold. Throws a config error when
/// bands * rows != signature_length.
DedupResult dedup_near_lsh(const Corpus& corpus, const LshConfig& cfg);

/// Drops a passage whose cosine to some earlier survivor exceeds the
/// threshold (exact scan). Throws an embedding error on dimension mismatch.
DedupResult dedup_near_embedding(const Corpus& corpus, const Embedder& embedder,
                                 double cosine_threshold);

}  // namespace dmr
