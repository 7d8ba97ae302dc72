#include <doctest.h>

#include <filesystem>

#include "dmr/corpus.hpp"
#include "dmr/error.hpp"
#include "dmr/jsonl.hpp"
#include "dmr/synthgen.hpp"

using namespace dmr;
namespace fs = std::filesystem;

namespace {

// Fails the first `failures` calls with a backend error, then answers.
class FlakyGenerator final : public TextGenerator {
 public:
  explicit FlakyGenerator(int failures) : failures_(failures) {}
  std::string complete(const GenerationRequest& req, const std::string& prompt) override {
    ++calls;
    if (calls <= failures_) fail(ErrorKind::backend, "boom");
    return inner_.complete(req, prompt);
  }
  int calls = 0;

 private:
  int failures_;
  MockGenerator inner_;
};

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / "dmr_test_synthgen";
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("two-step mock generation chains the statement into the pair") {
  MockGenerator gen;
  PromptTemplates templates;
  GenerationContext ctx{&gen, &templates, 0, {}, {}};
  const auto p = Passage::make("doc1#0", "Roads flooded near the bridge.");
  const auto need = generate_information_need(p, SearchIntent::FactCheck, ctx);
  CHECK(need == "NEED[FactCheck]:Roads flooded near the bridge.");
  const auto pair = generate_pair(need, p, SearchIntent::FactCheck, ctx);
  CHECK(pair.query.text == "Q[FactCheck]:Roads flooded near the bridge.");
  CHECK(pair.positive.text == "P[FactCheck]:" + need);
  CHECK(pair.query.id == "doc1#0:FactCheck:q");
  CHECK(pair.positive.source == PassageSource::llm_generated);
  CHECK(gen.calls() == 2);
}

TEST_CASE("backend errors are retried up to the limit") {
  PromptTemplates templates;
  const auto p = Passage::make("d", "text");
  {
    FlakyGenerator gen(2);
    GenerationContext ctx{&gen, &templates, 2, {}, {}};
    CHECK_NOTHROW(generate_information_need(p, SearchIntent::QA, ctx));
    CHECK(gen.calls == 3);
  }
  {
    FlakyGenerator gen(3);
    GenerationContext ctx{&gen, &templates, 2, {}, {}};
    try {
      generate_information_need(p, SearchIntent::QA, ctx);
      FAIL("no throw");
    } catch (const GenerationError& e) {
      CHECK(e.kind() == ErrorKind::backend);
      CHECK(e.passage_id() == "d");
    }
    CHECK(gen.calls == 3);
  }
}

TEST_CASE("empty and malformed replies are typed failures") {
  PromptTemplates templates;
  const auto p = Passage::make("d", "text");
  MockGenerator empty(0, {0.0, true, false});
  GenerationContext ctx{&empty, &templates, 0, {}, {}};
  try {
    generate_information_need(p, SearchIntent::QA, ctx);
    FAIL("no throw");
  } catch (const GenerationError& e) {
    CHECK(e.kind() == ErrorKind::content);
  }
  MockGenerator malformed(0, {0.0, false, true});
  ctx.generator = &malformed;
  try {
    generate_pair("need", p, SearchIntent::QA, ctx);
    FAIL("no throw");
  } catch (const GenerationError& e) {
    CHECK(e.kind() == ErrorKind::parse);
  }
}

TEST_CASE("templates substitute every placeholder") {
  PromptTemplates t;
  t.set("QA.information_need", "[{{intent_definition}}] {{passage}} {{examples}}");
  t.set("QA.information_need.examples", "EX");
  t.set_definition(SearchIntent::QA, "DEF");
  GenerationRequest req;
  req.passage = Passage::make("p", "PASSAGE");
  req.prompt_template_id = PromptTemplates::template_id(SearchIntent::QA, GenerationStage::information_need);
  req.examples_id = PromptTemplates::examples_id(SearchIntent::QA, GenerationStage::information_need);
  CHECK(req.examples_id == "QA.information_need.examples");
  CHECK(t.render(req) == "[DEF] PASSAGE EX");
  CHECK(substitute("{{a}}{{a}}-{{b}}", {{"a", "x"}, {"b", "{{a}}"}}) == "xx-{{a}}");
}

TEST_CASE("run_generation output is identical for any lane count") {
  std::vector<GenerationTask> tasks;
  for (int i = 0; i < 40; ++i)
    tasks.push_back({Passage::make("p" + std::to_string(i), "passage " + std::to_string(i)), kAllIntents[i % 6]});
  PromptTemplates templates;
  auto factory = [] { return std::make_unique<MockGenerator>(3, MockGenerator::Faults{0.3, false, false}); };
  const auto a = run_generation(tasks, factory, templates, 1, {}, 1, scratch("a.jsonl"), scratch("a.log"));
  const auto b = run_generation(tasks, factory, templates, 1, {}, 4, scratch("b.jsonl"), scratch("b.log"));
  CHECK(read_text(scratch("a.jsonl")) == read_text(scratch("b.jsonl")));
  CHECK(a.emitted == b.emitted);
  CHECK(a.failures.size() == b.failures.size());
  CHECK(a.emitted + a.failures.size() == tasks.size());
  CHECK(!a.failures.empty());
  CHECK(read_pairs(scratch("a.jsonl")).size() == a.emitted);
}

TEST_CASE("heuristics map each intent's fields to query and positive") {
  GDRecord qa{"r1", SearchIntent::QA, {{"question", "Q?"}, {"answer", "A."}}};
  auto pair = apply_heuristic(qa);
  CHECK(pair.query.text == "Q?");
  CHECK(pair.positive.text == "A.");
  CHECK(pair.positive.source == PassageSource::gd_dataset);

  GDRecord fc{"r2", SearchIntent::FactCheck, {{"claim", "C"}, {"evidence", "E"}}};
  CHECK(apply_heuristic(fc).positive.text == "E");
  GDRecord nli{"r3", SearchIntent::NLI, {{"premise", "P"}, {"hypothesis", "H"}}};
  CHECK(apply_heuristic(nli).query.text == "P");

  GDRecord sts{"r4", SearchIntent::STS, {{"sentence_a", "X"}, {"sentence_b", "Y"}}};
  const auto s = apply_heuristic(sts, 5);
  CHECK(((s.query.text == "X" && s.positive.text == "Y") || (s.query.text == "Y" && s.positive.text == "X")));
  CHECK(apply_heuristic(sts, 5) == s);

  GDRecord broken{"r5", SearchIntent::NLI, {{"premise", "P"}}};
  try {
    apply_heuristic(broken);
    FAIL("no throw");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::schema);
  }
}

TEST_CASE("STS orientation varies across records") {
  int flipped = 0;
  for (int i = 0; i < 64; ++i) {
    GDRecord r{"s" + std::to_string(i), SearchIntent::STS, {{"sentence_a", "X"}, {"sentence_b", "Y"}}};
    flipped += apply_heuristic(r).query.text == "Y";
  }
  CHECK(flipped > 10);
  CHECK(flipped < 54);
}
