#include <doctest.h>

#include <filesystem>

#include "dmr/error.hpp"
#include "dmr/jsonl.hpp"
#include "dmr/refine.hpp"
#include "oracles.hpp"

using namespace dmr;
namespace fs = std::filesystem;

namespace {

struct MiningFixture {
  Corpus corpus;
  std::shared_ptr<oracle::TableEmbedder> emb;
  std::vector<QueryPassagePair> pairs;
};

MiningFixture mining_fixture(std::uint64_t seed, std::size_t n_passages, std::size_t n_queries) {
  std::mt19937_64 rng(seed);
  const int d = 12;
  MiningFixture f;
  f.emb = std::make_shared<oracle::TableEmbedder>(d);
  std::vector<Passage> ps;
  for (std::size_t i = 0; i < n_passages; ++i) {
    ps.push_back(Passage::make("p" + std::to_string(i), "x"));
    f.emb->passages[ps.back().id] = i % 10 == 9 ? f.emb->passages[ps[i - 1].id] : oracle::random_unit(rng, d);
  }
  f.corpus = Corpus(ps);
  for (std::size_t i = 0; i < n_queries; ++i) {
    const auto& pos = ps[rng() % ps.size()];
    const std::string qid = "q" + std::to_string(i);
    f.emb->queries[qid] = f.emb->passages[pos.id] + 0.8 * oracle::random_unit(rng, d);
    f.pairs.push_back({Query{qid, "q", SearchIntent::QA}, pos});
  }
  return f;
}

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / "dmr_test_refine" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("mining equals the exhaustive-scan oracle") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto f = mining_fixture(seed, 300, 20);
    for (double alpha : {0.65, 0.85, 0.95}) {
      MiningConfig cfg;
      cfg.alpha = alpha;
      cfg.pool_size = 50;
      cfg.K = 9;
      cfg.miner = f.emb;
      HardNegativeMiner miner(f.corpus, cfg);
      for (const auto& pair : f.pairs) {
        const auto t = miner.mine(pair);
        const auto want = oracle::mine(f.emb->queries[pair.query.id], pair.positive.id, f.corpus, *f.emb,
                                       cfg.similarity.temperature, alpha, 50, 9);
        REQUIRE(t.negatives.size() == want.size());
        for (std::size_t i = 0; i < want.size(); ++i) {
          CHECK(t.negatives[i].id == want[i].id);
          CHECK(t.negative_scores[i] == doctest::Approx(want[i].score).epsilon(1e-12));
          CHECK(t.negatives[i].id != pair.positive.id);
        }
      }
    }
  }
}

TEST_CASE("survivor sets nest as alpha grows") {
  auto f = mining_fixture(7, 200, 30);
  auto survivors = [&](double alpha) {
    MiningConfig cfg;
    cfg.alpha = alpha;
    cfg.pool_size = 200;
    cfg.K = 200;
    cfg.miner = f.emb;
    HardNegativeMiner miner(f.corpus, cfg);
    std::vector<std::set<std::string>> out;
    for (const auto& p : f.pairs) {
      std::set<std::string> s;
      for (const auto& n : miner.mine(p).negatives) s.insert(n.id);
      out.push_back(s);
    }
    return out;
  };
  const auto lo = survivors(0.65), hi = survivors(0.85);
  for (std::size_t i = 0; i < lo.size(); ++i)
    CHECK(std::includes(hi[i].begin(), hi[i].end(), lo[i].begin(), lo[i].end()));
}

TEST_CASE("threshold example: 0.77 excluded, 0.75 included at alpha 0.95") {
  // cosines chosen directly: q = e0, p⁺ at cos 0.8, candidates at 0.77, 0.75, 0.10
  auto emb = std::make_shared<oracle::TableEmbedder>(2);
  auto at = [](double c) {
    DenseVector v(2);
    v << c, std::sqrt(1 - c * c);
    return v;
  };
  emb->queries["q"] = at(1.0);
  emb->passages["pos"] = at(0.8);
  emb->passages["a"] = at(0.77);
  emb->passages["b"] = at(0.75);
  emb->passages["c"] = at(0.10);
  Corpus corpus({Passage::make("pos", "x"), Passage::make("a", "x"), Passage::make("b", "x"), Passage::make("c", "x")});
  MiningConfig cfg;
  cfg.alpha = 0.95;
  cfg.K = 9;
  cfg.miner = emb;
  const auto t = mine_hard_negatives({Query{"q", "q", SearchIntent::QA}, corpus.at("pos")}, corpus, cfg);
  REQUIRE(t.negatives.size() == 2);
  CHECK(t.negatives[0].id == "b");
  CHECK(t.negatives[1].id == "c");

  cfg.alpha = 0.05;
  CHECK(mine_hard_negatives({Query{"q", "q", SearchIntent::QA}, corpus.at("pos")}, corpus, cfg).negatives.empty());
}

TEST_CASE("mining config and missing positives are rejected") {
  auto f = mining_fixture(1, 20, 1);
  MiningConfig cfg;
  cfg.miner = f.emb;
  cfg.K = 10;
  cfg.pool_size = 5;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg.pool_size = 10;
  HardNegativeMiner miner(f.corpus, cfg);
  try {
    miner.mine({f.pairs[0].query, Passage::make("ghost", "x")});
    FAIL("no throw");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::data);
  }
}

TEST_CASE("filter matches the brute-force oracle and retains the planted sets") {
  const auto f = oracle::make_filter_fixture(3);
  std::vector<const Embedder*> models;
  FilterConfig cfg;
  for (const auto& m : f.models) {
    models.push_back(m.get());
    cfg.reference_embedders.push_back(m);
  }
  for (bool strict : {true, false}) {
    cfg.mode = strict ? FilterMode::strict_set_equality : FilterMode::intersection_nonempty;
    const auto r = mutual_agreement_filter(f.pairs, f.corpus, cfg);
    std::set<std::string> kept;
    for (std::size_t i = 0; i < f.pairs.size(); ++i) {
      const auto want = oracle::filter(f.pairs[i].query, f.corpus, models, cfg.N, strict);
      CHECK(r.decisions[i].retained == want.retained);
      if (want.retained) {
        CHECK(r.decisions[i].positive_id == want.positive);
        kept.insert(f.pairs[i].query.id);
      }
    }
    auto planted = f.planted_consensus;
    if (!strict) planted.insert(f.planted_partial.begin(), f.planted_partial.end());
    CHECK(kept == planted);
    CHECK(r.retained.size() == kept.size());
  }
}

TEST_CASE("identical reference models retain every query with its own top-1") {
  const auto f = oracle::make_filter_fixture(4, 30);
  FilterConfig cfg;
  cfg.reference_embedders = {f.models[0], f.models[0], f.models[0]};
  const auto r = mutual_agreement_filter(f.pairs, f.corpus, cfg);
  CHECK(r.retained.size() == f.pairs.size());
  for (const auto& d : r.decisions) CHECK(d.positive_id == d.top_n[0][0]);
}

TEST_CASE("filter needs exactly three reference models") {
  const auto f = oracle::make_filter_fixture(5, 5);
  FilterConfig cfg;
  cfg.reference_embedders = {f.models[0], f.models[1]};
  try {
    mutual_agreement_filter(f.pairs, f.corpus, cfg);
    FAIL("no throw");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::config);
  }
}

TEST_CASE("filter output follows input order") {
  const auto f = oracle::make_filter_fixture(6, 40);
  FilterConfig cfg;
  cfg.reference_embedders = {f.models[0], f.models[1], f.models[2]};
  cfg.mode = FilterMode::intersection_nonempty;
  auto reversed = f.pairs;
  std::reverse(reversed.begin(), reversed.end());
  auto a = mutual_agreement_filter(f.pairs, f.corpus, cfg).retained;
  auto b = mutual_agreement_filter(reversed, f.corpus, cfg).retained;
  std::reverse(b.begin(), b.end());
  CHECK(a == b);
}

TEST_CASE("emit_mtt writes alpha-named files with stage counts and reads back") {
  auto f = mining_fixture(8, 150, 25);
  MiningConfig cfg;
  cfg.miner = f.emb;
  cfg.pool_size = 40;
  const auto dir = scratch("emit");
  std::map<double, std::vector<TrainingTriplet>> by_alpha;
  for (double alpha : {0.65, 0.75, 0.85}) {
    cfg.alpha = alpha;
    const auto r = emit_mtt(f.pairs, f.corpus, nullptr, cfg, false, dir);
    CHECK(r.path == mtt_path(dir, alpha));
    CHECK(r.manifest.input == f.pairs.size());
    CHECK(r.manifest.after_filter == f.pairs.size());
    CHECK(r.manifest.emitted + r.manifest.empty_negatives == f.pairs.size());
    double file_alpha = 0;
    by_alpha[alpha] = read_mtt(r.path, f.corpus, &file_alpha);
    CHECK(file_alpha == alpha);
    CHECK(by_alpha[alpha].size() == r.manifest.emitted);
  }
  CHECK(fs::exists(dir / "mtt-0.75.jsonl"));
  CHECK(fs::exists(dir / "mtt-0.75.manifest.json"));
  // recompute scores from the emitted ids: hardest negative nests with alpha
  for (const auto& lo : by_alpha[0.65]) {
    for (const auto& hi : by_alpha[0.85]) {
      if (hi.query.id != lo.query.id) continue;
      const auto& q = f.emb->queries[lo.query.id];
      auto max_sim = [&](const TrainingTriplet& t) {
        double m = -2;
        for (const auto& n : t.negatives) m = std::max(m, oracle::cosine(q, f.emb->passages[n.id]));
        return m;
      };
      CHECK(max_sim(lo) <= max_sim(hi) + 1e-12);
    }
  }
}

TEST_CASE("alpha labels are the shortest round-trip decimal") {
  CHECK(alpha_label(0.85) == "0.85");
  CHECK(alpha_label(1.0) == "1");
  CHECK(parse_filter_mode("lenient") == FilterMode::intersection_nonempty);
  CHECK(parse_filter_mode("strict_set_equality") == FilterMode::strict_set_equality);
}
