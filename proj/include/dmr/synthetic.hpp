#pragma once

// Planted-cluster retrieval task for desk-scale training runs. Passages mix
// topic words, passage-specific words and shared fillers; each query samples
// words from exactly one passage, which is its single relevant passage.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "dmr/corpus.hpp"
#include "dmr/eval.hpp"

namespace dmr {

struct SyntheticTaskConfig {
  std::size_t topics = 20;
  std::size_t words_per_topic = 12;
  std::size_t filler_words = 40;
  std::size_t specific_pool = 3000;
  std::size_t train_pairs = 2000;
  std::size_t val_queries = 120;   // spread round-robin over the six intents
  std::size_t distractors = 0;     // passages with no query at all
  std::size_t passage_topic_words = 3;
  std::size_t passage_specific_words = 4;
  std::size_t passage_fillers = 8;
  std::size_t query_topic_words = 1;
  std::size_t query_specific_words = 2;
  std::size_t query_fillers = 3;
  std::uint64_t seed = 0;
};

struct SyntheticTask {
  Corpus corpus;                          // train positives, then val passages, then distractors
  std::vector<QueryPassagePair> train;    // pairs over the train passages
  EvalTarget val;                         // held-out queries over the full corpus
  std::vector<std::string> texts;         // every passage and query text, for the vocabulary
};

SyntheticTask make_synthetic_task(const SyntheticTaskConfig& cfg);

}  // namespace dmr
