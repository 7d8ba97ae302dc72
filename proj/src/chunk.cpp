#include "dmr/chunk.hpp"

#include <string>

#include "dmr/error.hpp"
#include "dmr/text.hpp"

namespace dmr {

std::vector<std::pair<std::size_t, std::size_t>> chunk_boundaries(
    const std::vector<std::string>& tokens, std::size_t max_tokens) {
  if (max_tokens == 0) fail(ErrorKind::config, "max_tokens must be >= 1");
  std::vector<std::pair<std::size_t, std::size_t>> out;
  const std::size_t n = tokens.size();
  std::size_t start = 0;
  while (start < n) {
    const std::size_t window_end = std::min(n, start + max_tokens);
    std::size_t cut = window_end;
    if (window_end < n) {
      for (std::size_t b = window_end; b > start; --b) {
        if (is_sentence_end(tokens[b - 1])) {
          cut = b;
          break;
        }
      }
    }
    out.emplace_back(start, cut);
    start = cut;
  }
  return out;
}

std::vector<Passage> chunk_document(std::string_view doc_id, std::string_view doc,
                                    std::size_t max_tokens) {
  if (max_tokens == 0) fail(ErrorKind::config, "max_tokens must be >= 1");
  const auto spans = tokenize_spans(doc);
  if (spans.empty()) fail(ErrorKind::empty_input, "document '" + std::string(doc_id) + "' is empty");

  std::vector<std::string> tokens;
  tokens.reserve(spans.size());
  for (const auto& s : spans) tokens.push_back(s.text);

  std::vector<Passage> out;
  std::size_t n = 0;
  for (auto [b, e] : chunk_boundaries(tokens, max_tokens)) {
    const std::size_t from = spans[b].begin;
    const std::size_t to = spans[e - 1].end;
    Passage p;
    p.id = std::string(doc_id) + "#" + std::to_string(n++);
    p.text = std::string(doc.substr(from, to - from));
    p.token_count = e - b;
    p.source = PassageSource::pdf_chunk;
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace dmr
