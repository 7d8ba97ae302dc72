#include "dmr/corpus.hpp"

#include "dmr/error.hpp"
#include "dmr/jsonl.hpp"
#include "dmr/text.hpp"

namespace dmr {

namespace {

constexpr std::array<std::string_view, 6> kIntentNames = {"QA",        "QAdoc", "Twitter",
                                                          "FactCheck", "NLI",   "STS"};

constexpr std::array<std::string_view, 6> kInstructions = {
    "Given the question, retrieve most relevant passage that best answers the question",
    "Given the question, retrieve most relevant document that answers the question",
    "Given the user query, retrieve the most relevant Twitter text that meets the request",
    "Given the claim, retrieve most relevant document that supports or refutes the claim",
    "Given the premise, retrieve most relevant hypothesis that is entailed by the premise",
    "Given the sentence, retrieve the sentence with the same meaning",
};

constexpr std::array<std::string_view, 4> kSourceNames = {"pdf_chunk", "llm_generated",
                                                          "gd_dataset", "synthetic_test"};

std::string require_string(const nlohmann::json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || !it->is_string())
    fail(ErrorKind::schema, std::string("record missing string field '") + key + "'");
  return it->get<std::string>();
}

}  // namespace

std::string_view intent_name(SearchIntent intent) { return kIntentNames[intent_index(intent)]; }

std::size_t intent_index(SearchIntent intent) { return static_cast<std::size_t>(intent); }

SearchIntent parse_intent(std::string_view name) {
  for (std::size_t i = 0; i < kIntentNames.size(); ++i)
    if (kIntentNames[i] == name) return kAllIntents[i];
  // Common short forms.
  if (name == "TW") return SearchIntent::Twitter;
  if (name == "FC") return SearchIntent::FactCheck;
  fail(ErrorKind::schema, "unknown search intent '" + std::string(name) + "'");
}

std::string_view default_instruction(SearchIntent intent) {
  return kInstructions[intent_index(intent)];
}

InstructionTable::InstructionTable() {
  for (auto intent : kAllIntents) text_[intent_index(intent)] = std::string(default_instruction(intent));
}

InstructionTable InstructionTable::empty() {
  InstructionTable table;
  for (auto& t : table.text_) t.clear();
  return table;
}

std::string_view source_name(PassageSource source) {
  return kSourceNames[static_cast<std::size_t>(source)];
}

PassageSource parse_source(std::string_view name) {
  for (std::size_t i = 0; i < kSourceNames.size(); ++i)
    if (kSourceNames[i] == name) return static_cast<PassageSource>(i);
  fail(ErrorKind::schema, "unknown passage source '" + std::string(name) + "'");
}

Passage Passage::make(std::string id, std::string text, PassageSource source, std::string url) {
  Passage p;
  p.id = std::move(id);
  p.token_count = count_tokens(text);
  p.text = std::move(text);
  p.source = source;
  p.url = std::move(url);
  return p;
}

Corpus::Corpus(std::vector<Passage> passages) : passages_(std::move(passages)) {
  index_by_id_.reserve(passages_.size());
  for (std::size_t i = 0; i < passages_.size(); ++i) {
    auto [it, inserted] = index_by_id_.emplace(passages_[i].id, i);
    if (!inserted) fail(ErrorKind::data, "duplicate passage id '" + passages_[i].id + "'");
  }
}

std::optional<std::size_t> Corpus::find(std::string_view id) const {
  auto it = index_by_id_.find(std::string(id));
  if (it == index_by_id_.end()) return std::nullopt;
  return it->second;
}

const Passage& Corpus::at(std::string_view id) const {
  auto pos = find(id);
  if (!pos) fail(ErrorKind::data, "passage '" + std::string(id) + "' not in corpus");
  return passages_[*pos];
}

nlohmann::json to_json(const Passage& p) {
  nlohmann::json j = {{"id", p.id}, {"text", p.text}, {"source", source_name(p.source)}};
  if (!p.url.empty()) j["url"] = p.url;
  return j;
}

Passage passage_from_json(const nlohmann::json& j) {
  auto source = PassageSource::pdf_chunk;
  if (auto it = j.find("source"); it != j.end()) source = parse_source(it->get<std::string>());
  std::string url;
  if (auto it = j.find("url"); it != j.end() && it->is_string()) url = it->get<std::string>();
  return Passage::make(require_string(j, "id"), require_string(j, "text"), source, std::move(url));
}

Passage document_from_json(const nlohmann::json& j) {
  std::string url;
  if (auto it = j.find("url"); it != j.end() && it->is_string()) url = it->get<std::string>();
  return Passage::make(require_string(j, "id"), require_string(j, "text"), PassageSource::pdf_chunk,
                       std::move(url));
}

nlohmann::json to_json(const Query& q) {
  return {{"id", q.id}, {"text", q.text}, {"intent", intent_name(q.intent)}};
}

Query query_from_json(const nlohmann::json& j) {
  return Query{require_string(j, "id"), require_string(j, "text"),
               parse_intent(require_string(j, "intent"))};
}

nlohmann::json to_json(const QueryPassagePair& pair) {
  nlohmann::json j = {{"query_id", pair.query.id},
                      {"query", pair.query.text},
                      {"intent", intent_name(pair.query.intent)},
                      {"positive_id", pair.positive.id},
                      {"positive", pair.positive.text},
                      {"source", source_name(pair.positive.source)}};
  if (!pair.positive.url.empty()) j["positive_url"] = pair.positive.url;
  return j;
}

QueryPassagePair pair_from_json(const nlohmann::json& j) {
  QueryPassagePair pair;
  pair.query = Query{require_string(j, "query_id"), require_string(j, "query"),
                     parse_intent(require_string(j, "intent"))};
  auto source = PassageSource::llm_generated;
  if (auto it = j.find("source"); it != j.end()) source = parse_source(it->get<std::string>());
  std::string url;
  if (auto it = j.find("positive_url"); it != j.end() && it->is_string()) url = it->get<std::string>();
  pair.positive =
      Passage::make(require_string(j, "positive_id"), require_string(j, "positive"), source, std::move(url));
  return pair;
}

namespace {

template <typename T, typename F>
std::vector<T> read_records(const std::filesystem::path& path, F&& from_json) {
  std::vector<T> out;
  for_each_jsonl(path, [&](const nlohmann::json& j, std::size_t lineno) {
    try {
      out.push_back(from_json(j));
    } catch (const Error& e) {
      throw Error(e.kind(), path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  });
  return out;
}

template <typename T>
void write_records(const std::filesystem::path& path, const std::vector<T>& records) {
  AtomicJsonlWriter writer(path);
  for (const auto& r : records) writer.append(to_json(r));
  writer.commit();
}

}  // namespace

std::vector<Passage> read_passages(const std::filesystem::path& path) {
  return read_records<Passage>(path, passage_from_json);
}

std::vector<Passage> read_documents(const std::filesystem::path& path) {
  return read_records<Passage>(path, document_from_json);
}

std::vector<Query> read_queries(const std::filesystem::path& path) {
  return read_records<Query>(path, query_from_json);
}

std::vector<QueryPassagePair> read_pairs(const std::filesystem::path& path) {
  return read_records<QueryPassagePair>(path, pair_from_json);
}

void write_passages(const std::filesystem::path& path, const std::vector<Passage>& passages) {
  write_records(path, passages);
}

void write_queries(const std::filesystem::path& path, const std::vector<Query>& queries) {
  write_records(path, queries);
}

void write_pairs(const std::filesystem::path& path, const std::vector<QueryPassagePair>& pairs) {
  write_records(path, pairs);
}

}  // namespace dmr
