#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace dmr {

/// A token together with its byte span in the source text.
struct TokenSpan {
  std::string text;  // lowercased
  std::size_t begin = 0;
  std::size_t end = 0;
};

// Tokenization: maximal runs of word bytes (ASCII alphanumerics, '_' and any
// byte >= 0x80 so UTF-8 sequences stay whole) form one token; every other
// non-space byte is a single-character token. ASCII letters are lowercased.
std::vector<TokenSpan> tokenize_spans(std::string_view text);
std::vector<std::string> tokenize(std::string_view text);
std::size_t count_tokens(std::string_view text);

bool is_sentence_end(std::string_view token);

// Stable 64-bit hashes; std::hash is not stable across standard libraries.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0);
std::uint64_t mix64(std::uint64_t x);

/// Lowercase, collapse whitespace runs to one space, trim.
std::string normalize_for_match(std::string_view text);

std::string join_tokens(const std::vector<std::string>& tokens);

}  // namespace dmr
