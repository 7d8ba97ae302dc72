#pragma once

// Brute-force reference implementations and fixtures shared by the unit
// tests and the acceptance binary. Nothing here calls the ranking code
// under test; scores are recomputed from raw vectors.

#include <algorithm>
#include <map>
#include <memory>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "dmr/corpus.hpp"
#include "dmr/embedder.hpp"

namespace oracle {

using dmr::DenseVector;

inline DenseVector random_unit(std::mt19937_64& rng, int d) {
  std::normal_distribution<double> n(0.0, 1.0);
  DenseVector v(d);
  for (int i = 0; i < d; ++i) v[i] = n(rng);
  return v / v.norm();
}

inline double cosine(const DenseVector& a, const DenseVector& b) {
  return a.dot(b) / (a.norm() * b.norm());
}

/// Vectors looked up by id; queries ignore the instruction flag.
class TableEmbedder final : public dmr::Embedder {
 public:
  explicit TableEmbedder(int dim) : dim_(dim) {}
  std::size_t dim() const override { return static_cast<std::size_t>(dim_); }
  std::string name() const override { return "table"; }
  DenseVector embed_query(const dmr::Query& q, bool) const override { return queries.at(q.id); }
  DenseVector embed_passage(const dmr::Passage& p) const override { return passages.at(p.id); }

  std::map<std::string, DenseVector> queries, passages;

 private:
  int dim_;
};

struct Ranked {
  std::string id;
  double score;
};

/// Every passage scored by cos/τ, descending, ties by id.
inline std::vector<Ranked> rank_all(const DenseVector& q, const dmr::Corpus& corpus,
                                    const dmr::Embedder& emb, double tau) {
  std::vector<Ranked> out;
  for (const auto& p : corpus.passages()) out.push_back({p.id, cosine(q, emb.embed_passage(p)) / tau});
  std::sort(out.begin(), out.end(), [](const Ranked& a, const Ranked& b) {
    return a.score != b.score ? a.score > b.score : a.id < b.id;
  });
  return out;
}

/// Exhaustive mining: top pool, drop the positive, keep s < α·s⁺, first K.
inline std::vector<Ranked> mine(const DenseVector& q, const std::string& positive_id,
                                const dmr::Corpus& corpus, const dmr::Embedder& emb, double tau,
                                double alpha, std::size_t pool, std::size_t K) {
  const auto ranked = rank_all(q, corpus, emb, tau);
  const double pos = cosine(q, emb.embed_passage(corpus.at(positive_id))) / tau;
  std::vector<Ranked> out;
  for (std::size_t i = 0; i < std::min(pool, ranked.size()) && out.size() < K; ++i) {
    if (ranked[i].id == positive_id) continue;
    if (ranked[i].score < pos * alpha) out.push_back(ranked[i]);
  }
  return out;
}

struct FilterOutcome {
  bool retained = false;
  std::string positive;
};

/// Re-runs the three rankers and applies the agreement rule.
inline FilterOutcome filter(const dmr::Query& q, const dmr::Corpus& corpus,
                            const std::vector<const dmr::Embedder*>& models, std::size_t N,
                            bool strict) {
  std::vector<std::vector<std::string>> tops;
  for (const auto* m : models) {
    const auto ranked = rank_all(m->embed_query(q, false), corpus, *m, 1.0);
    std::vector<std::string> top;
    for (std::size_t i = 0; i < std::min(N, ranked.size()); ++i) top.push_back(ranked[i].id);
    tops.push_back(top);
  }
  auto as_set = [](const std::vector<std::string>& v) { return std::set<std::string>(v.begin(), v.end()); };
  std::vector<std::string> common;
  for (const auto& id : tops[0])
    if (as_set(tops[1]).count(id) && as_set(tops[2]).count(id)) common.push_back(id);

  FilterOutcome out;
  out.retained = strict ? as_set(tops[0]) == as_set(tops[1]) && as_set(tops[1]) == as_set(tops[2])
                        : !common.empty();
  if (!out.retained) return out;
  if (strict && tops[0][0] == tops[1][0] && tops[1][0] == tops[2][0]) {
    out.positive = tops[0][0];
    return out;
  }
  std::sort(common.begin(), common.end());
  std::size_t best = SIZE_MAX;
  for (const auto& id : common) {
    std::size_t total = 0;
    for (const auto& t : tops) total += static_cast<std::size_t>(std::find(t.begin(), t.end(), id) - t.begin());
    if (total < best) {
      best = total;
      out.positive = id;
    }
  }
  return out;
}

/// Filter fixture: `consensus` queries whose top-N agree in all three models,
/// `partial` queries sharing one passage across models but not the full set,
/// and the rest with a disjoint third model.
struct FilterFixture {
  dmr::Corpus corpus;
  std::vector<dmr::QueryPassagePair> pairs;
  std::vector<std::shared_ptr<TableEmbedder>> models;
  std::set<std::string> planted_consensus;
  std::set<std::string> planted_partial;
};

inline FilterFixture make_filter_fixture(std::uint64_t seed, std::size_t n_queries = 100,
                                         std::size_t consensus = 40, std::size_t partial = 20,
                                         std::size_t n_passages = 300) {
  std::mt19937_64 rng(seed);
  const int d = 256;
  FilterFixture f;
  std::vector<dmr::Passage> ps;
  for (std::size_t i = 0; i < n_passages; ++i) ps.push_back(dmr::Passage::make("p" + std::to_string(i), "x"));
  f.corpus = dmr::Corpus(ps);
  for (int m = 0; m < 3; ++m) {
    auto e = std::make_shared<TableEmbedder>(d);
    for (const auto& p : ps) e->passages[p.id] = random_unit(rng, d);
    f.models.push_back(e);
  }
  auto pick = [&] { return ps[rng() % ps.size()].id; };
  for (std::size_t i = 0; i < n_queries; ++i) {
    const std::string qid = "q" + std::to_string(i);
    std::string a = pick(), b = pick(), c = pick(), e = pick();
    while (b == a) b = pick();
    while (c == a || c == b) c = pick();
    while (e == a || e == b || e == c) e = pick();
    // targets per model
    std::vector<std::pair<std::string, std::string>> targets(3, {a, b});
    if (i >= consensus && i < consensus + partial) {
      targets[2] = {a, c};
      f.planted_partial.insert(qid);
    } else if (i >= consensus + partial) {
      targets[2] = {c, e};
    } else {
      f.planted_consensus.insert(qid);
    }
    for (int m = 0; m < 3; ++m) {
      auto& em = *f.models[static_cast<std::size_t>(m)];
      // first target slightly ahead so top-1 is well defined
      f.models[static_cast<std::size_t>(m)]->queries[qid] =
          1.1 * em.passages[targets[m].first] + em.passages[targets[m].second] + 0.1 * random_unit(rng, d);
    }
    f.pairs.push_back({dmr::Query{qid, "q", dmr::kAllIntents[i % 6]}, f.corpus.at(a)});
  }
  return f;
}

}  // namespace oracle
