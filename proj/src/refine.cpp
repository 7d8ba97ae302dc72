#include "dmr/refine.hpp"

#include <algorithm>
#include <charconv>
#include <map>
#include <set>

#include <spdlog/spdlog.h>

#include "dmr/error.hpp"
#include "dmr/jsonl.hpp"
#include "dmr/parallel.hpp"

namespace dmr {

std::string_view filter_mode_name(FilterMode mode) {
  return mode == FilterMode::strict_set_equality ? "strict_set_equality" : "intersection_nonempty";
}

FilterMode parse_filter_mode(std::string_view name) {
  if (name == "strict_set_equality" || name == "strict") return FilterMode::strict_set_equality;
  if (name == "intersection_nonempty" || name == "lenient") return FilterMode::intersection_nonempty;
  fail(ErrorKind::config, "unknown filter mode '" + std::string(name) + "'");
}

void FilterConfig::validate() const {
  if (reference_embedders.size() != 3)
    fail(ErrorKind::config, "mutual-agreement filtering needs exactly three reference embedders");
  for (const auto& e : reference_embedders)
    if (!e) fail(ErrorKind::config, "null reference embedder");
  if (N == 0) fail(ErrorKind::config, "N must be >= 1");
  similarity.validate();
}

nlohmann::json to_json(const FilterDecision& d) {
  return {{"query_id", d.query_id},
          {"retained", d.retained},
          {"original_positive_id", d.original_positive_id},
          {"positive_id", d.positive_id},
          {"top_n", d.top_n},
          {"intersection", d.intersection}};
}

MutualAgreementFilter::MutualAgreementFilter(const Corpus& corpus, FilterConfig cfg)
    : corpus_(corpus), cfg_(std::move(cfg)) {
  cfg_.validate();
  if (corpus_.empty()) fail(ErrorKind::empty_input, "filtering against an empty corpus");
  for (const auto& e : cfg_.reference_embedders)
    indexes_.push_back(std::make_unique<SearchIndex>(corpus_, *e, cfg_.similarity));
}

FilterDecision MutualAgreementFilter::decide(const Query& query, const std::string& positive_id) const {
  FilterDecision d;
  d.query_id = query.id;
  d.original_positive_id = positive_id;

  std::vector<std::set<std::string>> sets;
  for (std::size_t m = 0; m < indexes_.size(); ++m) {
    const auto qv = cfg_.reference_embedders[m]->embed_query(query, cfg_.with_instruction);
    std::vector<std::string> ids;
    for (auto& h : indexes_[m]->search(qv, cfg_.N)) ids.push_back(std::move(h.id));
    sets.emplace_back(ids.begin(), ids.end());
    d.top_n.push_back(std::move(ids));
  }

  std::set<std::string> common = sets[0];
  for (std::size_t m = 1; m < sets.size(); ++m) {
    std::set<std::string> next;
    std::set_intersection(common.begin(), common.end(), sets[m].begin(), sets[m].end(),
                          std::inserter(next, next.end()));
    common = std::move(next);
  }
  d.intersection.assign(common.begin(), common.end());

  if (cfg_.mode == FilterMode::strict_set_equality) {
    d.retained = sets[0] == sets[1] && sets[1] == sets[2];
  } else {
    d.retained = !common.empty();
  }
  if (!d.retained) return d;

  if (cfg_.mode == FilterMode::strict_set_equality && d.top_n[0][0] == d.top_n[1][0] &&
      d.top_n[1][0] == d.top_n[2][0]) {
    d.positive_id = d.top_n[0][0];
    return d;
  }
  // Best mean rank over the three lists (every member appears in each), ties by id.
  double best = 0.0;
  for (const auto& id : d.intersection) {
    double total = 0.0;
    for (const auto& list : d.top_n)
      total += static_cast<double>(std::find(list.begin(), list.end(), id) - list.begin());
    if (d.positive_id.empty() || total < best) {
      best = total;
      d.positive_id = id;
    }
  }
  return d;
}

FilterResult MutualAgreementFilter::filter(const std::vector<QueryPassagePair>& pairs) const {
  FilterResult out;
  out.decisions.resize(pairs.size());
  parallel_for(pairs.size(), [&](std::size_t i) {
    out.decisions[i] = decide(pairs[i].query, pairs[i].positive.id);
  });
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (!out.decisions[i].retained) continue;
    out.retained.push_back({pairs[i].query, corpus_.at(out.decisions[i].positive_id)});
  }
  return out;
}

FilterResult mutual_agreement_filter(const std::vector<QueryPassagePair>& pairs,
                                     const Corpus& corpus, const FilterConfig& cfg) {
  return MutualAgreementFilter(corpus, cfg).filter(pairs);
}

// ------------------------------------------------------------------ mining

void MiningConfig::validate() const {
  if (!(alpha > 0.0 && alpha <= 1.0)) fail(ErrorKind::config, "alpha must be in (0, 1]");
  if (K == 0 || pool_size == 0) fail(ErrorKind::config, "K and pool_size must be >= 1");
  if (K > pool_size) fail(ErrorKind::config, "K must not exceed pool_size");
  if (!miner) fail(ErrorKind::config, "no miner embedder");
  similarity.validate();
}

HardNegativeMiner::HardNegativeMiner(const Corpus& corpus, MiningConfig cfg)
    : corpus_(corpus), cfg_((cfg.validate(), std::move(cfg))), index_(corpus, *cfg_.miner, cfg_.similarity) {}

TrainingTriplet HardNegativeMiner::mine(const QueryPassagePair& pair) const {
  return mine(pair, cfg_.miner->embed_query(pair.query, cfg_.with_instruction));
}

TrainingTriplet HardNegativeMiner::mine(const QueryPassagePair& pair, const DenseVector& query_vec) const {
  const auto pos = corpus_.find(pair.positive.id);
  if (!pos) fail(ErrorKind::data, "positive '" + pair.positive.id + "' is not in the corpus");

  TrainingTriplet t;
  t.query = pair.query;
  t.positive = corpus_[*pos];
  t.positive_score = index_.score(query_vec, *pos);
  const double threshold = t.positive_score * cfg_.alpha;
  for (auto& c : index_.search(query_vec, cfg_.pool_size)) {
    if (c.position == *pos) continue;
    if (!(c.score < threshold)) continue;
    t.negatives.push_back(corpus_[c.position]);
    t.negative_scores.push_back(c.score);
    if (t.negatives.size() == cfg_.K) break;
  }
  return t;
}

TrainingTriplet mine_hard_negatives(const QueryPassagePair& pair, const Corpus& corpus,
                                    const MiningConfig& cfg) {
  const auto t = HardNegativeMiner(corpus, cfg).mine(pair);
  if (t.negatives.empty())
    spdlog::warn("query '{}': no candidate below alpha={} threshold", pair.query.id, cfg.alpha);
  return t;
}

// ---------------------------------------------------------------- emission

std::string alpha_label(double alpha) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, alpha);
  if (ec != std::errc()) fail(ErrorKind::config, "cannot format alpha");
  return std::string(buf, end);
}

std::filesystem::path mtt_path(const std::filesystem::path& dir, double alpha) {
  return dir / ("mtt-" + alpha_label(alpha) + ".jsonl");
}

nlohmann::json to_json(const MttManifest& m) {
  return {{"input", m.input},
          {"after_filter", m.after_filter},
          {"emitted", m.emitted},
          {"empty_negatives", m.empty_negatives}};
}

nlohmann::json to_json(const TrainingTriplet& t, double alpha) {
  nlohmann::json negs = nlohmann::json::array();
  for (const auto& n : t.negatives) negs.push_back(n.id);
  return {{"query_id", t.query.id},
          {"query", t.query.text},
          {"intent", std::string(intent_name(t.query.intent))},
          {"positive_id", t.positive.id},
          {"negative_ids", negs},
          {"alpha", alpha}};
}

MttResult emit_mtt(const std::vector<QueryPassagePair>& pairs, const Corpus& corpus,
                   const FilterConfig* fcfg, const MiningConfig& mcfg, bool apply_filter,
                   const std::filesystem::path& out_dir) {
  MttResult result;
  result.manifest.input = pairs.size();

  std::vector<QueryPassagePair> kept;
  if (apply_filter) {
    if (!fcfg) fail(ErrorKind::config, "filtering requested without a filter config");
    auto filtered = mutual_agreement_filter(pairs, corpus, *fcfg);
    kept = std::move(filtered.retained);
    result.decisions = std::move(filtered.decisions);
  } else {
    kept = pairs;
  }
  result.manifest.after_filter = kept.size();

  const HardNegativeMiner miner(corpus, mcfg);
  std::vector<TrainingTriplet> triplets(kept.size());
  parallel_for(kept.size(), [&](std::size_t i) { triplets[i] = miner.mine(kept[i]); });

  result.path = mtt_path(out_dir, mcfg.alpha);
  std::filesystem::create_directories(out_dir);
  AtomicJsonlWriter writer(result.path);
  for (const auto& t : triplets) {
    if (t.negatives.empty()) {
      spdlog::warn("query '{}': no hard negatives at alpha={}", t.query.id, mcfg.alpha);
      result.empty_negative_queries.push_back(t.query.id);
      continue;
    }
    writer.append(to_json(t, mcfg.alpha));
  }
  writer.commit();
  result.manifest.emitted = triplets.size() - result.empty_negative_queries.size();
  result.manifest.empty_negatives = result.empty_negative_queries.size();

  auto manifest = to_json(result.manifest);
  manifest["alpha"] = mcfg.alpha;
  manifest["filtered"] = apply_filter;
  auto manifest_path = result.path;
  manifest_path.replace_extension(".manifest.json");
  write_text_atomic(manifest_path, manifest.dump(2) + "\n");
  return result;
}

std::vector<TrainingTriplet> read_mtt(const std::filesystem::path& path, const Corpus& corpus,
                                      double* alpha_out) {
  std::vector<TrainingTriplet> out;
  std::optional<double> alpha;
  for_each_jsonl(path, [&](const nlohmann::json& j, std::size_t lineno) {
    try {
      TrainingTriplet t;
      t.query.id = j.at("query_id").get<std::string>();
      t.query.text = j.at("query").get<std::string>();
      t.query.intent = parse_intent(j.at("intent").get<std::string>());
      t.positive = corpus.at(j.at("positive_id").get<std::string>());
      for (const auto& n : j.at("negative_ids")) t.negatives.push_back(corpus.at(n.get<std::string>()));
      const double a = j.at("alpha").get<double>();
      if (alpha && *alpha != a)
        fail(ErrorKind::data, path.string() + " mixes alpha values");
      alpha = a;
      out.push_back(std::move(t));
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::schema, path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  });
  if (alpha_out) *alpha_out = alpha.value_or(0.0);
  return out;
}

}  // namespace dmr
