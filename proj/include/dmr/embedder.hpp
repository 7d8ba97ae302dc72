#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "dmr/corpus.hpp"
#include "dmr/objective.hpp"
#include "dmr/vector.hpp"

namespace dmr {

enum class EmbedderKind { hashing, trainable, precomputed };

struct EmbedderSpec {
  EmbedderKind kind = EmbedderKind::hashing;
  std::size_t dim = 256;
  bool normalize = true;
  std::size_t max_tokens = 512;
  std::uint64_t seed = 0;  // hashing only
};

/// Uniform embedding interface. Implementations are immutable after
/// construction, so concurrent calls are safe.
class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual std::size_t dim() const = 0;
  virtual std::string name() const = 0;
  /// e_q = E(I_q ⊕ q) when `with_instruction`, else E(q).
  virtual DenseVector embed_query(const Query& q, bool with_instruction) const = 0;
  virtual DenseVector embed_passage(const Passage& p) const = 0;
};

using EmbedderPtr = std::shared_ptr<const Embedder>;

/// Base for embedders that work from token sequences: handles instruction
/// prefixing, truncation to `max_tokens`, and optional L2 normalization.
class TextEmbedder : public Embedder {
 public:
  TextEmbedder(std::size_t max_tokens, bool normalize, InstructionTable instructions);

  DenseVector embed_query(const Query& q, bool with_instruction) const final;
  DenseVector embed_passage(const Passage& p) const final;
  DenseVector embed_text(std::string_view text) const;

  /// The token sequence actually encoded for a query.
  std::vector<std::string> query_tokens(const Query& q, bool with_instruction) const;
  std::size_t max_tokens() const noexcept { return max_tokens_; }
  const InstructionTable& instructions() const noexcept { return instructions_; }

 protected:
  virtual DenseVector encode(std::span<const std::string> tokens) const = 0;

 private:
  DenseVector finish(std::vector<std::string> tokens) const;

  std::size_t max_tokens_;
  bool normalize_;
  InstructionTable instructions_;
};

/// Signed feature hashing of token unigrams and bigrams into `dim` buckets.
/// Distinct seeds give distinct, independent "reference models".
class HashingEmbedder final : public TextEmbedder {
 public:
  explicit HashingEmbedder(std::size_t dim, std::uint64_t seed = 0, bool normalize = true,
                           std::size_t max_tokens = 512,
                           InstructionTable instructions = InstructionTable());

  std::size_t dim() const override { return dim_; }
  std::string name() const override;
  std::uint64_t seed() const noexcept { return seed_; }

  /// Bucket and sign a feature string lands on (exposed for collision checks).
  std::pair<std::size_t, double> bucket(std::string_view feature) const;

 protected:
  DenseVector encode(std::span<const std::string> tokens) const override;

 private:
  std::size_t dim_;
  std::uint64_t seed_;
};

/// id → vector map sharing one dimension.
class VectorStore {
 public:
  explicit VectorStore(std::size_t dim = 0) : dim_(dim) {}

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return ids_.size(); }
  /// Replaces an existing entry. Throws on dimension mismatch or non-finite values.
  void put(const std::string& id, DenseVector v);
  const DenseVector* find(std::string_view id) const;
  /// Throws a missing-vector error naming the id.
  const DenseVector& at(std::string_view id) const;
  const std::vector<std::string>& ids() const noexcept { return ids_; }

  /// JSON-lines: header `{"dim": D}` then `{"id", "vector"}` per line.
  void save(const std::filesystem::path& path) const;
  static VectorStore load(const std::filesystem::path& path);

 private:
  std::size_t dim_;
  std::vector<std::string> ids_;
  std::vector<DenseVector> vectors_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Serves vectors from a VectorStore by query/passage id.
class PrecomputedEmbedder final : public Embedder {
 public:
  explicit PrecomputedEmbedder(std::shared_ptr<const VectorStore> store);

  std::size_t dim() const override { return store_->dim(); }
  std::string name() const override { return "precomputed"; }
  DenseVector embed_query(const Query& q, bool with_instruction) const override;
  DenseVector embed_passage(const Passage& p) const override;

 private:
  std::shared_ptr<const VectorStore> store_;
};

VectorStore embed_corpus(const Embedder& embedder, const Corpus& corpus);
std::vector<DenseVector> embed_queries(const Embedder& embedder, std::span<const Query> queries,
                                       bool with_instruction);

struct ScoredPassage {
  std::string id;
  double score = 0.0;
  std::size_t position = 0;  // index in the corpus
};

/// Exact-scan retrieval over a corpus. Rows are unit-normalized once so each
/// score is cos/τ. Ranking is descending score with ascending-id tie-break.
class SearchIndex {
 public:
  SearchIndex(const Corpus& corpus, const VectorStore& store, SimilarityConfig cfg = {});
  SearchIndex(const Corpus& corpus, const Embedder& embedder, SimilarityConfig cfg = {});

  std::vector<ScoredPassage> search(const DenseVector& query, std::size_t k) const;
  /// All similarities, in corpus order.
  Eigen::VectorXd scores(const DenseVector& query) const;
  double score(const DenseVector& query, std::size_t position) const;

  std::size_t size() const noexcept { return ids_.size(); }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(rows_.cols()); }
  const SimilarityConfig& similarity() const noexcept { return cfg_; }

 private:
  void build(const Corpus& corpus, const VectorStore& store);

  SimilarityConfig cfg_;
  std::vector<std::string> ids_;
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rows_;
};

/// Ranked (id, similarity) list of length min(k, |corpus|).
std::vector<ScoredPassage> top_k(const DenseVector& query_vec, const Corpus& corpus,
                                 const VectorStore& store, std::size_t k,
                                 SimilarityConfig cfg = {});

/// Order used by every ranking: higher score first, then smaller id.
bool ranks_before(const ScoredPassage& a, const ScoredPassage& b);

}  // namespace dmr
