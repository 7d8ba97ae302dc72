#include "dmr/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "dmr/error.hpp"
#include "dmr/parallel.hpp"
#include "dmr/text.hpp"

namespace dmr {

// ------------------------------------------------------------------ qrels

void QrelSet::add(const std::string& query_id, const std::string& passage_id, int relevance) {
  if (relevance < 0) fail(ErrorKind::data, "negative relevance for " + query_id + "/" + passage_id);
  qrels_[query_id][passage_id] = relevance;
}

int QrelSet::relevance(const std::string& query_id, const std::string& passage_id) const {
  auto q = qrels_.find(query_id);
  if (q == qrels_.end()) return 0;
  auto p = q->second.find(passage_id);
  return p == q->second.end() ? 0 : p->second;
}

const std::map<std::string, int>* QrelSet::judgments(const std::string& query_id) const {
  auto q = qrels_.find(query_id);
  return q == qrels_.end() ? nullptr : &q->second;
}

std::size_t QrelSet::size() const {
  std::size_t n = 0;
  for (const auto& [q, m] : qrels_) n += m.size();
  return n;
}

QrelSet QrelSet::restrict(const std::set<std::string>& queries, const Corpus* passages) const {
  QrelSet out;
  for (const auto& [q, m] : qrels_) {
    if (!queries.count(q)) continue;
    for (const auto& [p, rel] : m)
      if (!passages || passages->contains(p)) out.qrels_[q][p] = rel;
  }
  return out;
}

QrelSet QrelSet::load_trec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::data, "cannot open qrels " + path.string());
  QrelSet out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ss(line);
    std::string q, iter, p;
    int rel = 0;
    if (!(ss >> q)) continue;
    if (!(ss >> iter >> p >> rel))
      fail(ErrorKind::parse, path.string() + ":" + std::to_string(lineno) + ": expected 'qid 0 pid rel'");
    out.add(q, p, rel);
  }
  return out;
}

void QrelSet::save_trec(const std::filesystem::path& path) const {
  std::ostringstream out;
  for (const auto& [q, m] : qrels_)
    for (const auto& [p, rel] : m) out << q << " 0 " << p << ' ' << rel << '\n';
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::data, "cannot write " + path.string());
  f << out.str();
}

void save_run(const std::filesystem::path& path, const RankedRun& run) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::data, "cannot write " + path.string());
  f.precision(17);
  for (const auto& [q, list] : run)
    for (std::size_t r = 0; r < list.size(); ++r)
      f << q << ' ' << list[r].id << ' ' << (r + 1) << ' ' << list[r].score << '\n';
}

RankedRun load_run(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::data, "cannot open run " + path.string());
  RankedRun run;
  std::map<std::string, std::vector<std::pair<std::size_t, ScoredPassage>>> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ss(line);
    std::string q, p;
    std::size_t rank = 0;
    double score = 0.0;
    if (!(ss >> q)) continue;
    if (!(ss >> p >> rank >> score))
      fail(ErrorKind::parse, path.string() + ":" + std::to_string(lineno) + ": expected 'qid pid rank score'");
    rows[q].push_back({rank, ScoredPassage{p, score, 0}});
  }
  for (auto& [q, list] : rows) {
    std::stable_sort(list.begin(), list.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    auto& out = run[q];
    for (auto& [rank, sp] : list) out.push_back(std::move(sp));
  }
  return run;
}

// ------------------------------------------------------------------- ndcg

double ndcg_from_labels(const std::vector<int>& ranked_labels, std::vector<int> all_labels,
                        std::size_t k) {
  auto dcg = [k](const std::vector<int>& labels) {
    double s = 0.0;
    for (std::size_t i = 0; i < std::min(k, labels.size()); ++i)
      s += static_cast<double>(labels[i]) / std::log2(static_cast<double>(i) + 2.0);
    return s;
  };
  std::sort(all_labels.begin(), all_labels.end(), std::greater<>());
  const double ideal = dcg(all_labels);
  if (ideal <= 0.0) return 0.0;
  return dcg(ranked_labels) / ideal;
}

NdcgReport ndcg_at_k(const RankedRun& run, const QrelSet& qrels, std::size_t k,
                     const std::set<std::string>* known_queries) {
  if (k == 0) fail(ErrorKind::config, "k must be >= 1");
  std::set<std::string> known;
  if (known_queries) {
    known = *known_queries;
  } else {
    for (const auto& [q, m] : qrels.all()) known.insert(q);
  }
  for (const auto& [q, list] : run)
    if (!known.count(q)) fail(ErrorKind::data, "run references unknown query '" + q + "'");

  NdcgReport report;
  double total = 0.0;
  for (const auto& q : known) {
    std::vector<int> all;
    if (const auto* m = qrels.judgments(q))
      for (const auto& [p, rel] : *m)
        if (rel > 0) all.push_back(rel);
    if (all.empty()) {
      ++report.excluded;
      continue;
    }
    std::vector<int> ranked;
    if (auto it = run.find(q); it != run.end())
      for (std::size_t i = 0; i < std::min(k, it->second.size()); ++i)
        ranked.push_back(qrels.relevance(q, it->second[i].id));
    const double v = ndcg_from_labels(ranked, std::move(all), k);
    report.per_query[q] = v;
    total += v;
  }
  if (!report.per_query.empty()) report.mean = total / static_cast<double>(report.per_query.size());
  return report;
}

// ---------------------------------------------------------------- kendall

double kendall_tau(const std::vector<std::string>& ranking_a,
                   const std::vector<std::string>& ranking_b) {
  if (ranking_a.size() != ranking_b.size())
    fail(ErrorKind::data, "rankings cover different item sets");
  std::unordered_map<std::string, std::size_t> pos_b;
  for (std::size_t i = 0; i < ranking_b.size(); ++i)
    if (!pos_b.emplace(ranking_b[i], i).second)
      fail(ErrorKind::data, "repeated item '" + ranking_b[i] + "'");
  std::vector<std::size_t> mapped;
  std::set<std::string> seen;
  for (const auto& item : ranking_a) {
    auto it = pos_b.find(item);
    if (it == pos_b.end()) fail(ErrorKind::data, "item '" + item + "' missing from second ranking");
    if (!seen.insert(item).second) fail(ErrorKind::data, "repeated item '" + item + "'");
    mapped.push_back(it->second);
  }
  const std::size_t n = mapped.size();
  if (n < 2) fail(ErrorKind::data, "Kendall's tau needs at least two items");
  long long concordant = 0, discordant = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) (mapped[i] < mapped[j] ? concordant : discordant)++;
  return static_cast<double>(concordant - discordant) / (static_cast<double>(n) * (n - 1) / 2.0);
}

double kendall_tau_b(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) fail(ErrorKind::data, "score lists differ in length");
  const std::size_t n = x.size();
  long long concordant = 0, discordant = 0, ties_x = 0, ties_y = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double dx = x[i] - x[j];
      const double dy = y[i] - y[j];
      if (dx == 0.0 && dy == 0.0) continue;
      if (dx == 0.0) {
        ++ties_x;
      } else if (dy == 0.0) {
        ++ties_y;
      } else if ((dx > 0) == (dy > 0)) {
        ++concordant;
      } else {
        ++discordant;
      }
    }
  }
  const double denom = std::sqrt(static_cast<double>(concordant + discordant + ties_x) *
                                 static_cast<double>(concordant + discordant + ties_y));
  if (denom == 0.0) fail(ErrorKind::data, "Kendall's tau-b undefined for constant scores");
  return static_cast<double>(concordant - discordant) / denom;
}

// ---------------------------------------------------------- contamination

nlohmann::json to_json(const ContaminationReport& r) {
  nlohmann::json overlaps = nlohmann::json::array();
  for (const auto& o : r.overlaps)
    overlaps.push_back({{"text", o.text}, {"train_count", o.train_count}, {"test_count", o.test_count}});
  return {{"train_size", r.train_size},
          {"test_size", r.test_size},
          {"overlap_count", r.overlaps.size()},
          {"overlaps", overlaps}};
}

ContaminationReport contamination_check(const std::vector<std::string>& train_texts,
                                        const std::vector<std::string>& test_texts) {
  std::map<std::string, std::size_t> train_counts;
  for (const auto& t : train_texts) ++train_counts[normalize_for_match(t)];
  std::map<std::string, std::size_t> test_counts;
  for (const auto& t : test_texts) ++test_counts[normalize_for_match(t)];
  ContaminationReport r;
  r.train_size = train_texts.size();
  r.test_size = test_texts.size();
  for (const auto& [text, n] : test_counts)
    if (auto it = train_counts.find(text); it != train_counts.end())
      r.overlaps.push_back({text, it->second, n});
  return r;
}

// ---------------------------------------------------------------- devlite

namespace {

std::set<std::string> query_ids(const std::vector<Query>& qs) {
  std::set<std::string> out;
  for (const auto& q : qs) out.insert(q.id);
  return out;
}

}  // namespace

DevLiteSplit build_devlite(const std::vector<Query>& queries, const Corpus& corpus,
                           const QrelSet& qrels, const std::vector<EmbedderPtr>& models,
                           const DevLiteConfig& cfg) {
  if (models.size() != 3) fail(ErrorKind::config, "DevLite pooling needs exactly three models");
  if (cfg.n_per_intent == 0 || cfg.k == 0) fail(ErrorKind::config, "n_per_intent and k must be >= 1");

  // Step 1: seeded per-intent sample, independent of input order.
  std::set<std::string> dev_ids;
  for (auto intent : kAllIntents) {
    std::vector<std::pair<std::uint64_t, std::string>> keyed;
    for (const auto& q : queries)
      if (q.intent == intent) keyed.push_back({fnv1a64(q.id, cfg.seed), q.id});
    if (keyed.empty()) continue;
    if (keyed.size() < cfg.n_per_intent)
      fail(ErrorKind::config, "intent " + std::string(intent_name(intent)) + " has " +
                                  std::to_string(keyed.size()) + " queries, need " +
                                  std::to_string(cfg.n_per_intent));
    std::sort(keyed.begin(), keyed.end());
    for (std::size_t i = 0; i < cfg.n_per_intent; ++i) dev_ids.insert(keyed[i].second);
  }

  DevLiteSplit split;
  for (const auto& q : queries) (dev_ids.count(q.id) ? split.dev.queries : split.test.queries).push_back(q);

  // Step 2: pool = union over models of top-k from the full corpus.
  std::vector<bool> in_pool(corpus.size(), false);
  for (const auto& model : models) {
    const SearchIndex index(corpus, *model, cfg.similarity);
    const auto vecs = embed_queries(*model, split.dev.queries, cfg.with_instruction);
    std::vector<std::vector<ScoredPassage>> hits(vecs.size());
    parallel_for(vecs.size(), [&](std::size_t i) { hits[i] = index.search(vecs[i], cfg.k); });
    for (const auto& list : hits)
      for (const auto& h : list) in_pool[h.position] = true;
  }
  std::vector<Passage> pooled;
  for (std::size_t i = 0; i < corpus.size(); ++i)
    if (in_pool[i]) pooled.push_back(corpus[i]);
  split.dev.corpus = Corpus(std::move(pooled));

  // Step 3: inherit labels.
  split.dev.qrels = qrels.restrict(query_ids(split.dev.queries), &split.dev.corpus);
  split.test.corpus = corpus;
  split.test.qrels = qrels.restrict(query_ids(split.test.queries), &corpus);
  return split;
}

// --------------------------------------------------------------- evaluate

nlohmann::json to_json(const EvalReport& r, bool with_timing) {
  nlohmann::json per_intent = nlohmann::json::object();
  for (const auto& [intent, v] : r.per_intent) per_intent[std::string(intent_name(intent))] = v;
  nlohmann::json j = {{"ndcg@10_per_intent", per_intent},
                      {"ndcg@10_mean", r.mean},
                      {"evaluated_queries", r.evaluated},
                      {"excluded_queries", r.excluded},
                      {"n_queries", r.n_queries},
                      {"n_passages", r.n_passages}};
  if (with_timing) j["timing"] = {{"embed_seconds", r.embed_seconds}, {"search_seconds", r.search_seconds}};
  return j;
}

EvalReport evaluate_model(const Embedder& embedder, const EvalTarget& target,
                          const EvalOptions& opts, RankedRun* run_out) {
  using clock = std::chrono::steady_clock;
  EvalReport report;
  report.n_queries = target.queries.size();
  report.n_passages = target.corpus.size();

  const auto t0 = clock::now();
  const SearchIndex index(target.corpus, embedder, opts.similarity);
  const auto qvecs = embed_queries(embedder, target.queries, opts.with_instruction);
  const auto t1 = clock::now();

  std::vector<std::vector<ScoredPassage>> hits(qvecs.size());
  parallel_for(qvecs.size(), [&](std::size_t i) { hits[i] = index.search(qvecs[i], opts.k); });
  RankedRun run;
  for (std::size_t i = 0; i < hits.size(); ++i) run[target.queries[i].id] = std::move(hits[i]);
  const auto t2 = clock::now();
  report.embed_seconds = std::chrono::duration<double>(t1 - t0).count();
  report.search_seconds = std::chrono::duration<double>(t2 - t1).count();

  const auto known = query_ids(target.queries);
  const auto ndcg = ndcg_at_k(run, target.qrels, opts.k, &known);
  report.per_query = ndcg.per_query;
  report.evaluated = ndcg.per_query.size();
  report.excluded = ndcg.excluded;

  std::map<SearchIntent, std::pair<double, std::size_t>> sums;
  for (const auto& q : target.queries) {
    auto it = ndcg.per_query.find(q.id);
    if (it == ndcg.per_query.end()) continue;
    sums[q.intent].first += it->second;
    sums[q.intent].second += 1;
  }
  double total = 0.0;
  for (const auto& [intent, s] : sums) {
    report.per_intent[intent] = s.first / static_cast<double>(s.second);
    total += report.per_intent[intent];
  }
  if (!sums.empty()) report.mean = total / static_cast<double>(sums.size());
  if (run_out) *run_out = std::move(run);
  return report;
}

}  // namespace dmr
