#include <doctest.h>

#include <random>
#include <string>

#include "dmr/chunk.hpp"
#include "dmr/error.hpp"
#include "dmr/text.hpp"

using namespace dmr;

TEST_CASE("tokenizer splits words and punctuation, lowercasing ASCII") {
  const auto toks = tokenize("Flood-Warning issued: EVACUATE now!");
  const std::vector<std::string> want = {"flood", "-", "warning", "issued", ":", "evacuate", "now", "!"};
  CHECK(toks == want);
  CHECK(count_tokens("Flood-Warning issued: EVACUATE now!") == want.size());
}

TEST_CASE("UTF-8 sequences stay inside one token") {
  const auto toks = tokenize("caf\xc3\xa9 d\xc3\xa9j\xc3\xa0 vu");
  REQUIRE(toks.size() == 3);
  CHECK(toks[0] == "caf\xc3\xa9");
}

TEST_CASE("token spans point back into the source") {
  const std::string text = "  Storm surge.  Stay\tindoors ";
  for (const auto& s : tokenize_spans(text)) {
    std::string slice = text.substr(s.begin, s.end - s.begin);
    for (auto& c : slice) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    CHECK(slice == s.text);
  }
}

TEST_CASE("count_tokens agrees with tokenize on random byte strings") {
  std::mt19937_64 rng(7);
  const std::string alphabet = "ab Z9_.,!? \t\n\xc3\xa9-";
  for (int t = 0; t < 500; ++t) {
    std::string s;
    const auto len = rng() % 40;
    for (std::size_t i = 0; i < len; ++i) s.push_back(alphabet[rng() % alphabet.size()]);
    CHECK(count_tokens(s) == tokenize(s).size());
  }
}

TEST_CASE("normalize_for_match lowercases and collapses whitespace") {
  CHECK(normalize_for_match("  Where IS\t\tthe   shelter? \n") == "where is the shelter?");
  CHECK(normalize_for_match("") == "");
}

TEST_CASE("fnv1a64 is stable and seed-sensitive") {
  CHECK(fnv1a64("abc") == fnv1a64("abc"));
  CHECK(fnv1a64("abc", 1) != fnv1a64("abc", 2));
  CHECK(fnv1a64("abc") != fnv1a64("abd"));
}

TEST_CASE("chunks cut at the last sentence end inside the window") {
  const auto toks = tokenize("a b . c d e . f g");
  // window of 6 tokens: a b . c d e -> last '.' at index 2 -> first chunk [0,3)
  const auto b = chunk_boundaries(toks, 6);
  REQUIRE(b.size() == 2);
  CHECK(b[0] == std::pair<std::size_t, std::size_t>{0, 3});
  CHECK(b[1] == std::pair<std::size_t, std::size_t>{3, 9});
}

TEST_CASE("chunks without a sentence end are hard cut at max_tokens") {
  const auto b = chunk_boundaries(tokenize("a b c d e f g"), 3);
  REQUIRE(b.size() == 3);
  CHECK(b[0].second == 3);
  CHECK(b[1].second == 6);
  CHECK(b[2].second == 7);
}

TEST_CASE("chunked passages reproduce the document token stream") {
  std::mt19937_64 rng(3);
  const std::vector<std::string> words = {"water", "levels", "rose", ".", "!", "roads", "closed", ",", "?"};
  for (int t = 0; t < 50; ++t) {
    std::string doc;
    const auto n = 1 + rng() % 300;
    for (std::size_t i = 0; i < n; ++i) doc += words[rng() % words.size()] + (rng() % 3 ? " " : "\n");
    const std::size_t max_tokens = 1 + rng() % 40;
    std::vector<std::string> joined;
    std::size_t idx = 0;
    for (const auto& p : chunk_document("d", doc, max_tokens)) {
      CHECK(p.id == "d#" + std::to_string(idx++));
      CHECK(p.token_count <= max_tokens);
      CHECK(p.token_count == count_tokens(p.text));
      const auto pt = tokenize(p.text);
      joined.insert(joined.end(), pt.begin(), pt.end());
    }
    CHECK(joined == tokenize(doc));
  }
}

TEST_CASE("empty documents and a zero budget are rejected") {
  CHECK_THROWS_AS(chunk_document("d", "   ", 10), Error);
  CHECK_THROWS_AS(chunk_document("d", "text", 0), Error);
}
