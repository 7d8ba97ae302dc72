#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

namespace dmr {

enum class SearchIntent { QA, QAdoc, Twitter, FactCheck, NLI, STS };

inline constexpr std::array<SearchIntent, 6> kAllIntents = {
    SearchIntent::QA,        SearchIntent::QAdoc, SearchIntent::Twitter,
    SearchIntent::FactCheck, SearchIntent::NLI,   SearchIntent::STS};

std::string_view intent_name(SearchIntent intent);
SearchIntent parse_intent(std::string_view name);  // throws schema error
std::size_t intent_index(SearchIntent intent);

/// The query-side instruction prefixed to each intent.
std::string_view default_instruction(SearchIntent intent);

/// Instruction text per intent; defaults to the standard set and can be
/// overridden (an empty override disables prefixing for that intent).
class InstructionTable {
 public:
  InstructionTable();
  static InstructionTable empty();

  const std::string& get(SearchIntent intent) const { return text_[intent_index(intent)]; }
  void set(SearchIntent intent, std::string text) { text_[intent_index(intent)] = std::move(text); }

 private:
  std::array<std::string, 6> text_;
};

enum class PassageSource { pdf_chunk, llm_generated, gd_dataset, synthetic_test };

std::string_view source_name(PassageSource source);
PassageSource parse_source(std::string_view name);

struct Passage {
  std::string id;
  std::string text;
  std::size_t token_count = 0;
  PassageSource source = PassageSource::pdf_chunk;
  std::string url;  // documents only; empty for chunks

  static Passage make(std::string id, std::string text,
                      PassageSource source = PassageSource::pdf_chunk,
                      std::string url = {});

  friend bool operator==(const Passage&, const Passage&) = default;
};

struct Query {
  std::string id;
  std::string text;
  SearchIntent intent = SearchIntent::QA;

  friend bool operator==(const Query&, const Query&) = default;
};

struct QueryPassagePair {
  Query query;
  Passage positive;

  friend bool operator==(const QueryPassagePair&, const QueryPassagePair&) = default;
};

/// Immutable ordered passage collection with an id index.
class Corpus {
 public:
  Corpus() = default;
  /// Throws a data error on duplicate ids.
  explicit Corpus(std::vector<Passage> passages);

  std::size_t size() const noexcept { return passages_.size(); }
  bool empty() const noexcept { return passages_.empty(); }
  const std::vector<Passage>& passages() const noexcept { return passages_; }
  const Passage& operator[](std::size_t i) const { return passages_[i]; }

  std::optional<std::size_t> find(std::string_view id) const;
  bool contains(std::string_view id) const { return find(id).has_value(); }
  /// Throws a data error naming the id when absent.
  const Passage& at(std::string_view id) const;

 private:
  std::vector<Passage> passages_;
  std::unordered_map<std::string, std::size_t> index_by_id_;
};

// JSON-lines schemas.
nlohmann::json to_json(const Passage& p);
Passage passage_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Query& q);
Query query_from_json(const nlohmann::json& j);
/// Documents are `{id, text, url?}` and load as pdf_chunk passages carrying the url.
Passage document_from_json(const nlohmann::json& j);
nlohmann::json to_json(const QueryPassagePair& pair);
QueryPassagePair pair_from_json(const nlohmann::json& j);

std::vector<Passage> read_passages(const std::filesystem::path& path);
std::vector<Passage> read_documents(const std::filesystem::path& path);
std::vector<Query> read_queries(const std::filesystem::path& path);
std::vector<QueryPassagePair> read_pairs(const std::filesystem::path& path);
void write_passages(const std::filesystem::path& path, const std::vector<Passage>& passages);
void write_queries(const std::filesystem::path& path, const std::vector<Query>& queries);
void write_pairs(const std::filesystem::path& path, const std::vector<QueryPassagePair>& pairs);

}  // namespace dmr
