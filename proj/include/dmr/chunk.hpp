#pragma once

#include <cstddef>
#include <string_view>
#include <vector>

#include "dmr/corpus.hpp"

namespace dmr {

/// Token offsets [begin, end) of each chunk. Greedy: each chunk takes the
/// longest prefix of at most `max_tokens` tokens that ends on a sentence
/// boundary, or exactly `max_tokens` tokens when the window has none.
std::vector<std::pair<std::size_t, std::size_t>> chunk_boundaries(
    const std::vector<std::string>& tokens, std::size_t max_tokens);

/// Splits a document into passages of at most `max_tokens` tokens. Passage
/// text is the original document slice, so tokenizing the chunks in order
/// reproduces the document's token stream exactly. Ids are `<doc_id>#<n>`.
std::vector<Passage> chunk_document(std::string_view doc_id, std::string_view doc,
                                    std::size_t max_tokens);

}  // namespace dmr
