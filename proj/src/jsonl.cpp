#include "dmr/jsonl.hpp"

#include <fstream>
#include <sstream>

#include "dmr/error.hpp"

namespace dmr {

namespace fs = std::filesystem;

void for_each_jsonl(const fs::path& path,
                    const std::function<void(const nlohmann::json&, std::size_t)>& fn) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::data, "cannot open " + path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json record;
    try {
      record = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      fail(ErrorKind::parse, path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    fn(record, lineno);
  }
}

std::vector<nlohmann::json> read_jsonl(const fs::path& path) {
  std::vector<nlohmann::json> out;
  for_each_jsonl(path, [&](const nlohmann::json& j, std::size_t) { out.push_back(j); });
  return out;
}

AtomicJsonlWriter::AtomicJsonlWriter(fs::path path)
    : path_(std::move(path)), partial_(path_.string() + ".partial") {
  if (path_.has_parent_path()) fs::create_directories(path_.parent_path());
  file_ = std::fopen(partial_.c_str(), "wb");
  if (!file_) fail(ErrorKind::data, "cannot write " + partial_.string());
}

AtomicJsonlWriter::~AtomicJsonlWriter() {
  if (file_) std::fclose(file_);
}

void AtomicJsonlWriter::append(const nlohmann::json& record) {
  std::string line = record.dump();
  line.push_back('\n');
  if (std::fwrite(line.data(), 1, line.size(), file_) != line.size() || std::fflush(file_) != 0)
    fail(ErrorKind::data, "write failed: " + partial_.string());
  ++count_;
}

void AtomicJsonlWriter::commit() {
  if (!file_) return;
  std::fclose(file_);
  file_ = nullptr;
  fs::rename(partial_, path_);
}

void write_jsonl(const fs::path& path, const std::vector<nlohmann::json>& records) {
  AtomicJsonlWriter writer(path);
  for (const auto& r : records) writer.append(r);
  writer.commit();
}

void write_text_atomic(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) fail(ErrorKind::data, "cannot write " + tmp.string());
    out << content;
    if (!out) fail(ErrorKind::data, "write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::data, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace dmr
