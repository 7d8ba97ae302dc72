#include "dmr/synthetic.hpp"

#include <algorithm>
#include <random>

#include "dmr/error.hpp"

namespace dmr {

namespace {

class Sampler {
 public:
  explicit Sampler(std::uint64_t seed) : rng_(seed) {}

  std::size_t below(std::size_t n) { return static_cast<std::size_t>(rng_() % n); }

  /// k distinct values from [0, n), in draw order.
  std::vector<std::size_t> distinct(std::size_t n, std::size_t k) {
    std::vector<std::size_t> out;
    while (out.size() < std::min(k, n)) {
      const auto v = below(n);
      if (std::find(out.begin(), out.end(), v) == out.end()) out.push_back(v);
    }
    return out;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
  }

 private:
  std::mt19937_64 rng_;
};

struct PlantedPassage {
  std::size_t topic = 0;
  std::vector<std::string> topic_words;
  std::vector<std::string> specific;
};

std::string join(const std::vector<std::string>& words) {
  std::string out;
  for (const auto& w : words) {
    if (!out.empty()) out.push_back(' ');
    out += w;
  }
  return out;
}

}  // namespace

SyntheticTask make_synthetic_task(const SyntheticTaskConfig& cfg) {
  if (cfg.topics == 0 || cfg.words_per_topic == 0 || cfg.filler_words == 0 || cfg.specific_pool == 0)
    fail(ErrorKind::config, "synthetic task sizes must be positive");
  if (cfg.query_specific_words > cfg.passage_specific_words ||
      cfg.query_topic_words > cfg.passage_topic_words)
    fail(ErrorKind::config, "queries cannot use more passage words than passages have");

  Sampler rng(cfg.seed);
  auto topic_word = [](std::size_t t, std::size_t w) { return "t" + std::to_string(t) + "w" + std::to_string(w); };
  auto filler = [](std::size_t f) { return "f" + std::to_string(f); };
  auto specific = [](std::size_t s) { return "s" + std::to_string(s); };

  auto make_passage = [&] {
    PlantedPassage p;
    p.topic = rng.below(cfg.topics);
    for (auto w : rng.distinct(cfg.words_per_topic, cfg.passage_topic_words))
      p.topic_words.push_back(topic_word(p.topic, w));
    for (auto s : rng.distinct(cfg.specific_pool, cfg.passage_specific_words))
      p.specific.push_back(specific(s));
    return p;
  };
  auto passage_text = [&](const PlantedPassage& p) {
    std::vector<std::string> words = p.topic_words;
    words.insert(words.end(), p.specific.begin(), p.specific.end());
    for (std::size_t i = 0; i < cfg.passage_fillers; ++i) words.push_back(filler(rng.below(cfg.filler_words)));
    rng.shuffle(words);
    return join(words);
  };
  auto query_text = [&](const PlantedPassage& p) {
    std::vector<std::string> words;
    for (auto i : rng.distinct(p.specific.size(), cfg.query_specific_words)) words.push_back(p.specific[i]);
    for (auto i : rng.distinct(p.topic_words.size(), cfg.query_topic_words)) words.push_back(p.topic_words[i]);
    for (std::size_t i = 0; i < cfg.query_fillers; ++i) words.push_back(filler(rng.below(cfg.filler_words)));
    rng.shuffle(words);
    return join(words);
  };

  SyntheticTask task;
  std::vector<Passage> passages;
  auto add_passage = [&](const std::string& id, const PlantedPassage& p) {
    passages.push_back(Passage::make(id, passage_text(p), PassageSource::synthetic_test));
    task.texts.push_back(passages.back().text);
    return passages.back();
  };

  for (std::size_t i = 0; i < cfg.train_pairs; ++i) {
    const auto planted = make_passage();
    const auto passage = add_passage("train-" + std::to_string(i), planted);
    Query q{"tq-" + std::to_string(i), query_text(planted), kAllIntents[i % kAllIntents.size()]};
    task.texts.push_back(q.text);
    task.train.push_back({std::move(q), passage});
  }
  for (std::size_t i = 0; i < cfg.val_queries; ++i) {
    const auto planted = make_passage();
    const auto passage = add_passage("val-" + std::to_string(i), planted);
    Query q{"vq-" + std::to_string(i), query_text(planted), kAllIntents[i % kAllIntents.size()]};
    task.texts.push_back(q.text);
    task.val.qrels.add(q.id, passage.id, 1);
    task.val.queries.push_back(std::move(q));
  }
  for (std::size_t i = 0; i < cfg.distractors; ++i) add_passage("doc-" + std::to_string(i), make_passage());

  task.corpus = Corpus(std::move(passages));
  task.val.corpus = task.corpus;
  return task;
}

}  // namespace dmr
