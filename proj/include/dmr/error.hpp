#pragma once

#include <stdexcept>
#include <string>

namespace dmr {

enum class ErrorKind {
  usage,
  config,
  empty_input,
  data,
  schema,
  parse,
  input,
  embedding,
  degenerate,
  missing_vector,
  backend,
  content,
};

const char* to_string(ErrorKind kind);

/// Single exception type for the library; `kind()` drives CLI exit codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Generation failure that remembers which passage triggered it.
class GenerationError : public Error {
 public:
  GenerationError(ErrorKind kind, std::string passage_id, const std::string& what)
      : Error(kind, what), passage_id_(std::move(passage_id)) {}

  const std::string& passage_id() const noexcept { return passage_id_; }

 private:
  std::string passage_id_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

}  // namespace dmr
