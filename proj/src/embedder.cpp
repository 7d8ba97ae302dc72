#include "dmr/embedder.hpp"

#include <algorithm>
#include <atomic>
#include <numeric>

#include <spdlog/spdlog.h>

#include "dmr/error.hpp"
#include "dmr/jsonl.hpp"
#include "dmr/parallel.hpp"
#include "dmr/text.hpp"

namespace dmr {

namespace {

std::atomic<bool> g_truncation_logged{false};

void log_truncation_once(std::size_t length, std::size_t limit) {
  if (!g_truncation_logged.exchange(true))
    spdlog::info("truncating input of {} tokens to {} (reported once per run)", length, limit);
}

}  // namespace

// -------------------------------------------------------------- TextEmbedder

TextEmbedder::TextEmbedder(std::size_t max_tokens, bool normalize, InstructionTable instructions)
    : max_tokens_(max_tokens), normalize_(normalize), instructions_(std::move(instructions)) {
  if (max_tokens_ == 0) fail(ErrorKind::config, "max_tokens must be positive");
}

std::vector<std::string> TextEmbedder::query_tokens(const Query& q, bool with_instruction) const {
  std::vector<std::string> tokens;
  if (with_instruction) tokens = tokenize(instructions_.get(q.intent));
  auto body = tokenize(q.text);
  tokens.insert(tokens.end(), std::make_move_iterator(body.begin()), std::make_move_iterator(body.end()));
  return tokens;
}

DenseVector TextEmbedder::finish(std::vector<std::string> tokens) const {
  if (tokens.size() > max_tokens_) {
    log_truncation_once(tokens.size(), max_tokens_);
    tokens.resize(max_tokens_);
  }
  DenseVector v = encode(tokens);
  require_finite(v, name() + " output");
  if (normalize_) {
    const double n = v.norm();
    if (n > 0.0) v /= n;
  }
  return v;
}

DenseVector TextEmbedder::embed_query(const Query& q, bool with_instruction) const {
  if (q.text.empty()) fail(ErrorKind::input, "query '" + q.id + "' has empty text");
  return finish(query_tokens(q, with_instruction));
}

DenseVector TextEmbedder::embed_passage(const Passage& p) const { return finish(tokenize(p.text)); }

DenseVector TextEmbedder::embed_text(std::string_view text) const { return finish(tokenize(text)); }

// ----------------------------------------------------------- HashingEmbedder

HashingEmbedder::HashingEmbedder(std::size_t dim, std::uint64_t seed, bool normalize,
                                 std::size_t max_tokens, InstructionTable instructions)
    : TextEmbedder(max_tokens, normalize, std::move(instructions)), dim_(dim), seed_(seed) {
  if (dim_ == 0) fail(ErrorKind::config, "embedding dim must be positive");
}

std::string HashingEmbedder::name() const { return "hashing-" + std::to_string(seed_); }

std::pair<std::size_t, double> HashingEmbedder::bucket(std::string_view feature) const {
  const std::uint64_t h = fnv1a64(feature, seed_);
  return {static_cast<std::size_t>(h % dim_), (h >> 63) ? -1.0 : 1.0};
}

DenseVector HashingEmbedder::encode(std::span<const std::string> tokens) const {
  DenseVector v = DenseVector::Zero(static_cast<Eigen::Index>(dim_));
  auto add = [&](std::string_view feature) {
    auto [b, sign] = bucket(feature);
    v[static_cast<Eigen::Index>(b)] += sign;
  };
  std::string bigram;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    add(tokens[i]);
    if (i + 1 < tokens.size()) {
      bigram.assign(tokens[i]);
      bigram.push_back(' ');
      bigram += tokens[i + 1];
      add(bigram);
    }
  }
  return v;
}

// --------------------------------------------------------------- VectorStore

void VectorStore::put(const std::string& id, DenseVector v) {
  if (dim_ == 0) dim_ = static_cast<std::size_t>(v.size());
  if (static_cast<std::size_t>(v.size()) != dim_)
    fail(ErrorKind::embedding, "vector for '" + id + "' has dim " + std::to_string(v.size()) +
                                   ", store dim is " + std::to_string(dim_));
  require_finite(v, "vector '" + id + "'");
  if (auto it = index_.find(id); it != index_.end()) {
    vectors_[it->second] = std::move(v);
    return;
  }
  index_.emplace(id, ids_.size());
  ids_.push_back(id);
  vectors_.push_back(std::move(v));
}

const DenseVector* VectorStore::find(std::string_view id) const {
  auto it = index_.find(std::string(id));
  return it == index_.end() ? nullptr : &vectors_[it->second];
}

const DenseVector& VectorStore::at(std::string_view id) const {
  if (const auto* v = find(id)) return *v;
  fail(ErrorKind::missing_vector, "no vector for id '" + std::string(id) + "'");
}

void VectorStore::save(const std::filesystem::path& path) const {
  AtomicJsonlWriter writer(path);
  writer.append({{"dim", dim_}});
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    const auto& v = vectors_[i];
    writer.append({{"id", ids_[i]}, {"vector", std::vector<double>(v.data(), v.data() + v.size())}});
  }
  writer.commit();
}

VectorStore VectorStore::load(const std::filesystem::path& path) {
  VectorStore store;
  bool header = false;
  for_each_jsonl(path, [&](const nlohmann::json& j, std::size_t lineno) {
    if (!header) {
      if (!j.contains("dim")) fail(ErrorKind::schema, path.string() + ": missing dim header record");
      store.dim_ = j.at("dim").get<std::size_t>();
      header = true;
      return;
    }
    if (!j.contains("id") || !j.contains("vector"))
      fail(ErrorKind::schema, path.string() + ":" + std::to_string(lineno) + ": expected {id, vector}");
    const auto values = j.at("vector").get<std::vector<double>>();
    store.put(j.at("id").get<std::string>(),
              Eigen::Map<const DenseVector>(values.data(), static_cast<Eigen::Index>(values.size())));
  });
  if (!header) fail(ErrorKind::schema, path.string() + ": empty vector store");
  return store;
}

// ------------------------------------------------------- PrecomputedEmbedder

PrecomputedEmbedder::PrecomputedEmbedder(std::shared_ptr<const VectorStore> store)
    : store_(std::move(store)) {
  if (!store_) fail(ErrorKind::config, "precomputed embedder needs a store");
}

DenseVector PrecomputedEmbedder::embed_query(const Query& q, bool) const { return store_->at(q.id); }

DenseVector PrecomputedEmbedder::embed_passage(const Passage& p) const { return store_->at(p.id); }

// ------------------------------------------------------------------- helpers

VectorStore embed_corpus(const Embedder& embedder, const Corpus& corpus) {
  std::vector<DenseVector> vecs(corpus.size());
  parallel_for(corpus.size(), [&](std::size_t i) { vecs[i] = embedder.embed_passage(corpus[i]); });
  VectorStore store(embedder.dim());
  for (std::size_t i = 0; i < corpus.size(); ++i) store.put(corpus[i].id, std::move(vecs[i]));
  return store;
}

std::vector<DenseVector> embed_queries(const Embedder& embedder, std::span<const Query> queries,
                                       bool with_instruction) {
  std::vector<DenseVector> out(queries.size());
  parallel_for(queries.size(),
               [&](std::size_t i) { out[i] = embedder.embed_query(queries[i], with_instruction); });
  return out;
}

bool ranks_before(const ScoredPassage& a, const ScoredPassage& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.id < b.id;
}

SearchIndex::SearchIndex(const Corpus& corpus, const VectorStore& store, SimilarityConfig cfg)
    : cfg_(cfg) {
  cfg_.validate();
  build(corpus, store);
}

SearchIndex::SearchIndex(const Corpus& corpus, const Embedder& embedder, SimilarityConfig cfg)
    : cfg_(cfg) {
  cfg_.validate();
  build(corpus, embed_corpus(embedder, corpus));
}

void SearchIndex::build(const Corpus& corpus, const VectorStore& store) {
  rows_.resize(static_cast<Eigen::Index>(corpus.size()), static_cast<Eigen::Index>(store.dim()));
  ids_.reserve(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& id = corpus[i].id;
    const DenseVector& v = store.at(id);
    const double n = v.norm();
    if (n == 0.0) fail(ErrorKind::degenerate, "zero vector for passage '" + id + "'");
    rows_.row(static_cast<Eigen::Index>(i)) = (v / n).transpose();
    ids_.push_back(id);
  }
}

Eigen::VectorXd SearchIndex::scores(const DenseVector& query) const {
  if (static_cast<std::size_t>(query.size()) != dim())
    fail(ErrorKind::embedding, "query dim " + std::to_string(query.size()) + " vs index dim " +
                                   std::to_string(dim()));
  const double n = query.norm();
  if (n == 0.0) fail(ErrorKind::degenerate, "zero query vector");
  return (rows_ * (query / n)) / cfg_.temperature;
}

double SearchIndex::score(const DenseVector& query, std::size_t position) const {
  const double n = query.norm();
  if (n == 0.0) fail(ErrorKind::degenerate, "zero query vector");
  return rows_.row(static_cast<Eigen::Index>(position)).dot(query / n) / cfg_.temperature;
}

std::vector<ScoredPassage> SearchIndex::search(const DenseVector& query, std::size_t k) const {
  const Eigen::VectorXd s = scores(query);
  std::vector<std::size_t> order(ids_.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t n = std::min(k, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n), order.end(),
                    [&](std::size_t a, std::size_t b) {
                      const double sa = s[static_cast<Eigen::Index>(a)];
                      const double sb = s[static_cast<Eigen::Index>(b)];
                      if (sa != sb) return sa > sb;
                      return ids_[a] < ids_[b];
                    });
  std::vector<ScoredPassage> out;
  out.reserve(n);
  for (std::size_t r = 0; r < n; ++r)
    out.push_back({ids_[order[r]], s[static_cast<Eigen::Index>(order[r])], order[r]});
  return out;
}

std::vector<ScoredPassage> top_k(const DenseVector& query_vec, const Corpus& corpus,
                                 const VectorStore& store, std::size_t k, SimilarityConfig cfg) {
  if (k == 0) fail(ErrorKind::config, "k must be positive");
  return SearchIndex(corpus, store, cfg).search(query_vec, k);
}

}  // namespace dmr
