#pragma once

#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace dmr {

/// Calls `fn(record, line_number)` for every non-blank line. Malformed JSON
/// raises a parse error carrying the file and line.
void for_each_jsonl(const std::filesystem::path& path,
                    const std::function<void(const nlohmann::json&, std::size_t)>& fn);

std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path);

/// Writes records to `<path>.partial`, one complete line per append, and
/// renames onto `path` on commit(). A crash leaves only whole records in the
/// partial file and never a truncated final file.
class AtomicJsonlWriter {
 public:
  explicit AtomicJsonlWriter(std::filesystem::path path);
  ~AtomicJsonlWriter();
  AtomicJsonlWriter(const AtomicJsonlWriter&) = delete;
  AtomicJsonlWriter& operator=(const AtomicJsonlWriter&) = delete;

  void append(const nlohmann::json& record);
  void commit();
  std::size_t count() const noexcept { return count_; }

 private:
  std::filesystem::path path_;
  std::filesystem::path partial_;
  std::FILE* file_ = nullptr;
  std::size_t count_ = 0;
};

void write_jsonl(const std::filesystem::path& path, const std::vector<nlohmann::json>& records);

/// Whole-file write through a temporary + rename.
void write_text_atomic(const std::filesystem::path& path, const std::string& content);
std::string read_text(const std::filesystem::path& path);

}  // namespace dmr
