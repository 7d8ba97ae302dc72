#include "dmr/synthgen.hpp"

#include <atomic>
#include <cstdlib>
#include <mutex>
#include <regex>
#include <thread>

#include <spdlog/spdlog.h>

#include "dmr/error.hpp"
#include "dmr/jsonl.hpp"
#include "dmr/text.hpp"

namespace dmr {

std::string_view stage_name(GenerationStage stage) {
  return stage == GenerationStage::information_need ? "information_need" : "query_and_positive";
}

GeneratorBackend GeneratorBackend::from_environment() {
  GeneratorBackend b;
  if (const char* e = std::getenv("DMR_GENERATOR_ENDPOINT")) b.endpoint = e;
  if (const char* k = std::getenv("DMR_GENERATOR_KEY")) b.api_key = k;
  return b;
}

// ------------------------------------------------------------------- mock

std::string MockGenerator::complete(const GenerationRequest& request, const std::string&) {
  ++calls_;
  const std::string key = request.passage.id + "|" + std::string(stage_name(request.stage));
  const int attempt = attempts_[key]++;
  if (faults_.transient_failure_rate > 0.0) {
    const std::uint64_t h = fnv1a64(key + "|" + std::to_string(attempt), seed_);
    const double u = static_cast<double>(h >> 11) * 0x1.0p-53;
    if (u < faults_.transient_failure_rate) fail(ErrorKind::backend, "mock transient failure");
  }
  if (faults_.empty_response) return {};
  const std::string tag = "[" + std::string(intent_name(request.intent)) + "]:";
  if (request.stage == GenerationStage::information_need) return "NEED" + tag + request.passage.text;
  if (faults_.malformed_pair) return R"({"query": "only a query"})";
  return nlohmann::json{{"query", "Q" + tag + request.passage.text},
                        {"passage", "P" + tag + request.statement}}
      .dump();
}

// ------------------------------------------------------------------- http

HttpGenerator::HttpGenerator(GeneratorBackend backend) : backend_(std::move(backend)) {
  if (backend_.endpoint.empty())
    fail(ErrorKind::config, "generator endpoint not set (DMR_GENERATOR_ENDPOINT)");
}

}  // namespace dmr

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

namespace dmr {

std::string HttpGenerator::complete(const GenerationRequest&, const std::string& prompt) {
  static const std::regex url_re(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(backend_.endpoint, m, url_re))
    fail(ErrorKind::config, "malformed generator endpoint '" + backend_.endpoint + "'");
  const std::string base = m[1].str();
  const std::string path = m[2].matched ? m[2].str() : "/";

  httplib::Client client(base);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(backend_.timeout);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(backend_.timeout - secs);
  client.set_connection_timeout(secs.count(), usecs.count());
  client.set_read_timeout(secs.count(), usecs.count());
  httplib::Headers headers;
  if (!backend_.api_key.empty()) headers.emplace("Authorization", "Bearer " + backend_.api_key);

  const nlohmann::json body = {
      {"model", backend_.model_name},
      {"messages", nlohmann::json::array({{{"role", "user"}, {"content", prompt}}})}};
  auto res = client.Post(path, headers, body.dump(), "application/json");
  if (!res) fail(ErrorKind::backend, "request failed: " + httplib::to_string(res.error()));
  if (res->status != 200)
    fail(ErrorKind::backend, "HTTP " + std::to_string(res->status) + " from generator");

  nlohmann::json reply;
  try {
    reply = nlohmann::json::parse(res->body);
    return reply.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::backend, std::string("unexpected generator response: ") + e.what());
  }
}

// -------------------------------------------------------------- templates

namespace {

const char* kDefaultNeedTemplate =
    "Search intent: {{intent_definition}}\n{{examples}}\n"
    "Passage:\n{{passage}}\n\n"
    "Write one information-need statement that a user with this search intent "
    "could satisfy with the passage.";

const char* kDefaultPairTemplate =
    "Search intent: {{intent_definition}}\n{{examples}}\n"
    "Passage:\n{{passage}}\n\nInformation need:\n{{statement}}\n\n"
    "Return JSON {\"query\": ..., \"passage\": ...} with a user query for this need "
    "and a new passage that directly answers it.";

}  // namespace

PromptTemplates::PromptTemplates() {
  for (auto intent : kAllIntents) {
    templates_[template_id(intent, GenerationStage::information_need)] = kDefaultNeedTemplate;
    templates_[template_id(intent, GenerationStage::query_and_positive)] = kDefaultPairTemplate;
    definitions_[intent] = std::string(default_instruction(intent));
  }
}

PromptTemplates PromptTemplates::load(const std::filesystem::path& dir) {
  PromptTemplates t;
  if (!std::filesystem::is_directory(dir))
    fail(ErrorKind::config, "template directory " + dir.string() + " not found");
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".txt") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) t.templates_[f.stem().string()] = read_text(f);
  const auto defs = dir / "intent_definitions.json";
  if (std::filesystem::exists(defs)) {
    const auto j = nlohmann::json::parse(read_text(defs));
    for (auto it = j.begin(); it != j.end(); ++it)
      t.set_definition(parse_intent(it.key()), it.value().get<std::string>());
  }
  return t;
}

std::string PromptTemplates::template_id(SearchIntent intent, GenerationStage stage) {
  return std::string(intent_name(intent)) + "." + std::string(stage_name(stage));
}

std::string PromptTemplates::examples_id(SearchIntent intent, GenerationStage stage) {
  return template_id(intent, stage) + ".examples";
}

void PromptTemplates::set_definition(SearchIntent intent, std::string text) {
  definitions_[intent] = std::move(text);
}

const std::string& PromptTemplates::definition(SearchIntent intent) const {
  return definitions_.at(intent);
}

std::string substitute(std::string text, const std::map<std::string, std::string>& values) {
  for (const auto& [key, value] : values) {
    const std::string needle = "{{" + key + "}}";
    std::size_t pos = 0;
    while ((pos = text.find(needle, pos)) != std::string::npos) {
      text.replace(pos, needle.size(), value);
      pos += value.size();
    }
  }
  return text;
}

std::string PromptTemplates::render(const GenerationRequest& request) const {
  auto it = templates_.find(request.prompt_template_id);
  if (it == templates_.end())
    fail(ErrorKind::config, "no prompt template '" + request.prompt_template_id + "'");
  std::string examples;
  if (auto ex = templates_.find(request.examples_id); ex != templates_.end()) examples = ex->second;
  return substitute(it->second, {{"passage", request.passage.text},
                                 {"intent_definition", definition(request.intent)},
                                 {"statement", request.statement},
                                 {"examples", examples}});
}

// ------------------------------------------------------------- generation

std::string with_retries(const GenerationContext& ctx, const std::string& passage_id,
                         const std::function<std::string()>& fn) {
  auto delay = ctx.backoff;
  for (int attempt = 0;; ++attempt) {
    try {
      return fn();
    } catch (const GenerationError&) {
      throw;
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::backend) throw;
      if (attempt >= ctx.max_retries)
        throw GenerationError(ErrorKind::backend, passage_id,
                              "generation failed for passage '" + passage_id + "' after " +
                                  std::to_string(attempt + 1) + " attempts: " + e.what());
      spdlog::debug("retrying passage {} after backend error: {}", passage_id, e.what());
      if (delay.count() > 0) std::this_thread::sleep_for(delay);
      delay *= 2;
    }
  }
}

namespace {

std::string call(const GenerationContext& ctx, const GenerationRequest& req) {
  if (!ctx.generator || !ctx.templates) fail(ErrorKind::config, "generation context incomplete");
  const std::string prompt = ctx.templates->render(req);
  std::string response;
  try {
    response = with_retries(ctx, req.passage.id, [&] { return ctx.generator->complete(req, prompt); });
  } catch (const GenerationError& e) {
    if (ctx.log)
      ctx.log({{"passage_id", req.passage.id}, {"intent", intent_name(req.intent)},
               {"stage", stage_name(req.stage)}, {"prompt", prompt}, {"error", e.what()}});
    throw;
  }
  if (ctx.log)
    ctx.log({{"passage_id", req.passage.id}, {"intent", intent_name(req.intent)},
             {"stage", stage_name(req.stage)}, {"prompt", prompt}, {"response", response}});
  return response;
}

}  // namespace

std::string generate_information_need(const Passage& passage, SearchIntent intent,
                                      const GenerationContext& ctx) {
  if (passage.text.empty())
    throw GenerationError(ErrorKind::input, passage.id, "passage '" + passage.id + "' is empty");
  GenerationRequest req;
  req.passage = passage;
  req.intent = intent;
  req.stage = GenerationStage::information_need;
  req.prompt_template_id = PromptTemplates::template_id(intent, req.stage);
  req.examples_id = PromptTemplates::examples_id(intent, req.stage);
  std::string statement = call(ctx, req);
  if (statement.find_first_not_of(" \t\r\n") == std::string::npos)
    throw GenerationError(ErrorKind::content, passage.id,
                          "empty information-need statement for passage '" + passage.id + "'");
  return statement;
}

QueryPassagePair generate_pair(const std::string& statement, const Passage& passage,
                               SearchIntent intent, const GenerationContext& ctx) {
  if (statement.empty())
    throw GenerationError(ErrorKind::input, passage.id, "query_and_positive needs a statement");
  GenerationRequest req;
  req.passage = passage;
  req.intent = intent;
  req.stage = GenerationStage::query_and_positive;
  req.prompt_template_id = PromptTemplates::template_id(intent, req.stage);
  req.examples_id = PromptTemplates::examples_id(intent, req.stage);
  req.statement = statement;
  const std::string reply = call(ctx, req);

  std::string query, positive;
  try {
    const auto j = nlohmann::json::parse(reply);
    query = j.at("query").get<std::string>();
    positive = j.at("passage").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw GenerationError(ErrorKind::parse, passage.id,
                          "malformed generator output for passage '" + passage.id + "': " + e.what());
  }
  if (query.empty() || positive.empty())
    throw GenerationError(ErrorKind::content, passage.id, "generator returned an empty field");

  const std::string base = passage.id + ":" + std::string(intent_name(intent));
  QueryPassagePair pair;
  pair.query = Query{base + ":q", std::move(query), intent};
  pair.positive = Passage::make(base + ":p", std::move(positive), PassageSource::llm_generated);
  return pair;
}

GenerationSummary run_generation(const std::vector<GenerationTask>& tasks,
                                 const std::function<std::unique_ptr<TextGenerator>()>& make_generator,
                                 const PromptTemplates& templates, int max_retries,
                                 std::chrono::milliseconds backoff, std::size_t in_flight,
                                 const std::filesystem::path& out_path,
                                 const std::filesystem::path& log_path) {
  struct Outcome {
    std::optional<QueryPassagePair> pair;
    std::optional<GenerationFailure> failure;
    std::vector<nlohmann::json> log;
  };
  std::vector<Outcome> outcomes(tasks.size());
  std::atomic<std::size_t> next{0};
  auto lane = [&] {
    auto generator = make_generator();
    for (std::size_t i = next++; i < tasks.size(); i = next++) {
      auto& out = outcomes[i];
      GenerationContext ctx{generator.get(), &templates, max_retries, backoff,
                            [&out](const nlohmann::json& j) { out.log.push_back(j); }};
      const auto& task = tasks[i];
      try {
        const auto statement = generate_information_need(task.passage, task.intent, ctx);
        out.pair = generate_pair(statement, task.passage, task.intent, ctx);
      } catch (const GenerationError& e) {
        out.failure = GenerationFailure{e.passage_id(), to_string(e.kind()), e.what()};
      }
    }
  };
  const std::size_t lanes = std::max<std::size_t>(1, std::min(in_flight, tasks.size()));
  if (lanes == 1) {
    lane();
  } else {
    std::vector<std::thread> workers;
    for (std::size_t t = 0; t < lanes; ++t) workers.emplace_back(lane);
    for (auto& w : workers) w.join();
  }

  GenerationSummary summary;
  AtomicJsonlWriter writer(out_path);
  std::unique_ptr<AtomicJsonlWriter> log_writer;
  if (!log_path.empty()) log_writer = std::make_unique<AtomicJsonlWriter>(log_path);
  for (auto& out : outcomes) {
    if (log_writer)
      for (const auto& j : out.log) log_writer->append(j);
    if (out.pair) {
      const auto& p = *out.pair;
      writer.append({{"query_id", p.query.id},
                     {"query", p.query.text},
                     {"intent", intent_name(p.query.intent)},
                     {"positive_id", p.positive.id},
                     {"positive", p.positive.text}});
      ++summary.emitted;
    } else if (out.failure) {
      summary.failures.push_back(*out.failure);
    }
  }
  writer.commit();
  if (log_writer) log_writer->commit();
  return summary;
}

// -------------------------------------------------------------- heuristics

GDRecord gd_record_from_json(const nlohmann::json& j) {
  GDRecord r;
  if (!j.contains("id") || !j.contains("intent"))
    fail(ErrorKind::schema, "GD record needs 'id' and 'intent'");
  r.id = j.at("id").get<std::string>();
  r.intent = parse_intent(j.at("intent").get<std::string>());
  const nlohmann::json& payload = j.contains("payload") ? j.at("payload") : j;
  for (auto it = payload.begin(); it != payload.end(); ++it)
    if (it.value().is_string() && it.key() != "id" && it.key() != "intent")
      r.payload[it.key()] = it.value().get<std::string>();
  return r;
}

QueryPassagePair apply_heuristic(const GDRecord& record, std::uint64_t seed) {
  auto field = [&](const char* key) -> const std::string& {
    auto it = record.payload.find(key);
    if (it == record.payload.end() || it->second.empty())
      fail(ErrorKind::schema, "GD record '" + record.id + "' (" +
                                  std::string(intent_name(record.intent)) + ") missing '" + key + "'");
    return it->second;
  };

  std::string query, positive;
  switch (record.intent) {
    case SearchIntent::QA:
    case SearchIntent::QAdoc:
    case SearchIntent::Twitter:
      query = field("question");
      positive = field("answer");
      break;
    case SearchIntent::FactCheck:
      query = field("claim");
      positive = field("evidence");
      break;
    case SearchIntent::NLI:
      query = field("premise");
      positive = field("hypothesis");
      break;
    case SearchIntent::STS: {
      const auto& a = field("sentence_a");
      const auto& b = field("sentence_b");
      const bool flip = (fnv1a64(record.id, seed) & 1U) != 0;
      query = flip ? b : a;
      positive = flip ? a : b;
      break;
    }
  }
  QueryPassagePair pair;
  pair.query = Query{record.id + ":q", std::move(query), record.intent};
  pair.positive = Passage::make(record.id + ":p", std::move(positive), PassageSource::gd_dataset);
  return pair;
}

}  // namespace dmr
