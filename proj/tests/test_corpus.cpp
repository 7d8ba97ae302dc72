#include <doctest.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <mutex>

#include "dmr/corpus.hpp"
#include "dmr/error.hpp"
#include "dmr/jsonl.hpp"
#include "dmr/parallel.hpp"

using namespace dmr;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / "dmr_test_corpus";
  fs::create_directories(dir);
  return dir / name;
}

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an Error");
  return ErrorKind::usage;
}

}  // namespace

TEST_CASE("corpus indexes by id and rejects duplicates") {
  Corpus c({Passage::make("a", "one two"), Passage::make("b", "three")});
  CHECK(c.size() == 2);
  CHECK(*c.find("b") == 1);
  CHECK(c.at("a").token_count == 2);
  CHECK(!c.contains("z"));
  CHECK(kind_of([&] { c.at("z"); }) == ErrorKind::data);
  CHECK(kind_of([] { Corpus({Passage::make("a", "x"), Passage::make("a", "y")}); }) == ErrorKind::data);
}

TEST_CASE("intent names round trip and unknown names are schema errors") {
  for (auto intent : kAllIntents) CHECK(parse_intent(intent_name(intent)) == intent);
  CHECK(kind_of([] { parse_intent("Poetry"); }) == ErrorKind::schema);
}

TEST_CASE("instruction table overrides and empty table") {
  InstructionTable t;
  CHECK(t.get(SearchIntent::QA) == default_instruction(SearchIntent::QA));
  t.set(SearchIntent::QA, "");
  CHECK(t.get(SearchIntent::QA).empty());
  for (auto intent : kAllIntents) CHECK(InstructionTable::empty().get(intent).empty());
}

TEST_CASE("passages, queries and pairs survive a JSONL round trip") {
  std::vector<Passage> ps = {Passage::make("p1", "Levee breach near the river.", PassageSource::llm_generated),
                             Passage::make("p2", "Shelter list", PassageSource::pdf_chunk, "http://x/y")};
  write_passages(scratch("p.jsonl"), ps);
  CHECK(read_passages(scratch("p.jsonl")) == ps);

  std::vector<Query> qs = {{"q1", "where is the levee", SearchIntent::QAdoc}, {"q2", "is it safe", SearchIntent::FactCheck}};
  write_queries(scratch("q.jsonl"), qs);
  CHECK(read_queries(scratch("q.jsonl")) == qs);

  std::vector<QueryPassagePair> pairs = {{qs[0], ps[0]}, {qs[1], ps[1]}};
  write_pairs(scratch("pairs.jsonl"), pairs);
  CHECK(read_pairs(scratch("pairs.jsonl")) == pairs);
}

TEST_CASE("malformed JSONL reports a parse error and missing fields a schema error") {
  {
    std::ofstream out(scratch("bad.jsonl"));
    out << "{\"id\": \"a\", \"text\": \"x\"}\n{not json\n";
  }
  CHECK(kind_of([] { read_passages(scratch("bad.jsonl")); }) == ErrorKind::parse);
  {
    std::ofstream out(scratch("missing.jsonl"));
    out << "{\"id\": \"a\"}\n";
  }
  CHECK(kind_of([] { read_passages(scratch("missing.jsonl")); }) == ErrorKind::schema);
}

TEST_CASE("atomic writer only publishes on commit") {
  const auto path = scratch("atomic.jsonl");
  fs::remove(path);
  {
    AtomicJsonlWriter w(path);
    w.append({{"n", 1}});
    w.append({{"n", 2}});
    CHECK(!fs::exists(path));
    w.commit();
  }
  const auto recs = read_jsonl(path);
  REQUIRE(recs.size() == 2);
  CHECK(recs[1]["n"] == 2);
}

TEST_CASE("parallel_chunks partition is independent of the lane count") {
  auto partition = [](std::size_t lanes) {
    set_thread_count(lanes);
    std::vector<std::pair<std::size_t, std::size_t>> ranges(7);
    parallel_chunks(103, 7, [&](std::size_t c, std::size_t b, std::size_t e) { ranges[c] = {b, e}; });
    return ranges;
  };
  const auto one = partition(1);
  CHECK(one == partition(4));
  CHECK(one.front().first == 0);
  CHECK(one.back().second == 103);
  for (std::size_t i = 1; i < one.size(); ++i) CHECK(one[i].first == one[i - 1].second);
  set_thread_count(1);
}

TEST_CASE("parallel_for visits every index exactly once") {
  set_thread_count(3);
  std::vector<std::atomic<int>> hits(250);
  parallel_for(hits.size(), [&](std::size_t i) { hits[i]++; });
  for (auto& h : hits) CHECK(h.load() == 1);
  set_thread_count(1);
}
