#pragma once

// Synthetic pair generation: the two-step LLM pipeline (information need,
// then query + positive passage) behind a pluggable text-generation backend,
// and the per-intent heuristics that turn labeled general-domain records
// into query/positive pairs.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dmr/corpus.hpp"

namespace dmr {

enum class GenerationStage { information_need, query_and_positive };

std::string_view stage_name(GenerationStage stage);

struct GenerationRequest {
  Passage passage;
  SearchIntent intent = SearchIntent::QA;
  GenerationStage stage = GenerationStage::information_need;
  std::string prompt_template_id;
  std::string examples_id;
  std::string statement;  // required for query_and_positive
};

/// Connection settings for a remote backend.
struct GeneratorBackend {
  std::string endpoint;  // full URL of an OpenAI-compatible chat-completions route
  std::string api_key;
  std::string model_name = "gpt-4o-mini";
  std::chrono::milliseconds timeout{30000};
  int max_retries = 3;
  std::chrono::milliseconds backoff{500};  // doubled after every failed attempt

  /// Reads DMR_GENERATOR_ENDPOINT / DMR_GENERATOR_KEY.
  static GeneratorBackend from_environment();
};

/// Single-turn text-in/text-out generator. Transport failures throw an
/// Error of kind backend; the caller handles retries.
class TextGenerator {
 public:
  virtual ~TextGenerator() = default;
  virtual std::string complete(const GenerationRequest& request, const std::string& prompt) = 0;
};

/// Deterministic offline generator.
///   information_need   -> "NEED[<intent>]:<passage text>"
///   query_and_positive -> {"query": "Q[<intent>]:<passage text>",
///                          "passage": "P[<intent>]:<statement>"}
/// Fault injection is keyed by (seed, passage id, stage, attempt), so a fixed
/// seed always fails the same calls.
class MockGenerator final : public TextGenerator {
 public:
  struct Faults {
    double transient_failure_rate = 0.0;  // backend error on an attempt
    bool empty_response = false;
    bool malformed_pair = false;
  };

  explicit MockGenerator(std::uint64_t seed = 0) : seed_(seed) {}
  MockGenerator(std::uint64_t seed, Faults faults) : seed_(seed), faults_(faults) {}

  std::string complete(const GenerationRequest& request, const std::string& prompt) override;
  std::size_t calls() const noexcept { return calls_; }

 private:
  std::uint64_t seed_;
  Faults faults_;
  std::size_t calls_ = 0;
  std::map<std::string, int> attempts_;
};

/// POSTs `{"model", "messages": [{"role": "user", "content": prompt}]}` and
/// returns choices[0].message.content.
class HttpGenerator final : public TextGenerator {
 public:
  explicit HttpGenerator(GeneratorBackend backend);
  std::string complete(const GenerationRequest& request, const std::string& prompt) override;

 private:
  GeneratorBackend backend_;
};

/// Prompt templates keyed `<intent>.<stage>`, with `{{passage}}`,
/// `{{intent_definition}}`, `{{statement}}` and `{{examples}}` placeholders.
class PromptTemplates {
 public:
  /// Built-in minimal templates (structure only; real prompts are user-supplied).
  PromptTemplates();
  /// Loads every `*.txt` file in `dir`, keyed by file stem, over the built-ins.
  /// `intent_definitions.json` (intent name -> text), when present, replaces
  /// the default definitions.
  static PromptTemplates load(const std::filesystem::path& dir);

  static std::string template_id(SearchIntent intent, GenerationStage stage);
  static std::string examples_id(SearchIntent intent, GenerationStage stage);

  std::string render(const GenerationRequest& request) const;
  void set(const std::string& id, std::string text) { templates_[id] = std::move(text); }
  void set_definition(SearchIntent intent, std::string text);
  const std::string& definition(SearchIntent intent) const;

 private:
  std::map<std::string, std::string> templates_;
  std::map<SearchIntent, std::string> definitions_;
};

std::string substitute(std::string text, const std::map<std::string, std::string>& values);

/// Request/response log line for one generation call.
using GenerationLogger = std::function<void(const nlohmann::json&)>;

struct GenerationContext {
  TextGenerator* generator = nullptr;
  const PromptTemplates* templates = nullptr;
  int max_retries = 3;
  std::chrono::milliseconds backoff{0};
  GenerationLogger log;
};

/// Calls `fn`, retrying backend errors up to max_retries times with
/// exponential backoff. Exhaustion becomes a GenerationError for `passage_id`.
std::string with_retries(const GenerationContext& ctx, const std::string& passage_id,
                         const std::function<std::string()>& fn);

/// Throws GenerationError (backend) after retries, (content) on an empty reply.
std::string generate_information_need(const Passage& passage, SearchIntent intent,
                                      const GenerationContext& ctx);

/// Throws GenerationError (parse) when the reply lacks `query` or `passage`.
QueryPassagePair generate_pair(const std::string& statement, const Passage& passage,
                               SearchIntent intent, const GenerationContext& ctx);

struct GenerationTask {
  Passage passage;
  SearchIntent intent = SearchIntent::QA;
};

struct GenerationFailure {
  std::string passage_id;
  std::string kind;
  std::string message;
};

struct GenerationSummary {
  std::size_t emitted = 0;
  std::vector<GenerationFailure> failures;
};

/// Runs both steps for every task with up to `in_flight` concurrent requests
/// and writes pairs in task order through one atomic writer. The generator
/// factory is called once per lane.
GenerationSummary run_generation(const std::vector<GenerationTask>& tasks,
                                 const std::function<std::unique_ptr<TextGenerator>()>& make_generator,
                                 const PromptTemplates& templates, int max_retries,
                                 std::chrono::milliseconds backoff, std::size_t in_flight,
                                 const std::filesystem::path& out_path,
                                 const std::filesystem::path& log_path);

/// A labeled general-domain record; payload keys depend on the intent:
/// QA/QAdoc/Twitter question+answer, FactCheck claim+evidence,
/// NLI premise+hypothesis, STS sentence_a+sentence_b.
struct GDRecord {
  std::string id;
  SearchIntent intent = SearchIntent::QA;
  std::map<std::string, std::string> payload;
};

GDRecord gd_record_from_json(const nlohmann::json& j);

/// Throws a schema error when a required payload field is missing. The STS
/// side is a per-record hash of (seed, id), not global randomness.
QueryPassagePair apply_heuristic(const GDRecord& record, std::uint64_t seed = 0);

}  // namespace dmr
