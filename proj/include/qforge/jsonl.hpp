#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <string>

#include "json.hpp"

#include "qforge/error.hpp"

namespace qforge {

using json = nlohmann::json;

// Calls fn(line_number, record) for every non-empty line; line numbers are
// 1-based. Malformed JSON raises ParseError naming the offending line.
inline void for_each_jsonl(
    const std::filesystem::path& path,
    const std::function<void(std::size_t, const json&)>& fn) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object())
      throw ParseError(path.string() + ":" + std::to_string(line_no) +
                           ": malformed record",
                       line_no);
    fn(line_no, j);
  }
}

inline const json& require_field(const json& j, const char* key,
                                 std::size_t line) {
  auto it = j.find(key);
  if (it == j.end())
    throw ParseError("line " + std::to_string(line) + ": missing field '" +
                         key + "'",
                     line);
  return *it;
}

// One record per line, compact dump, trailing newline per record.
class JsonlWriter {
 public:
  explicit JsonlWriter(const std::filesystem::path& path, bool append = false)
      : out_(path, append ? std::ios::app : std::ios::trunc) {
    if (!out_) throw IoError("cannot open " + path.string() + " for writing");
  }

  void write(const json& j) { out_ << j.dump() << '\n'; }
  void flush() { out_.flush(); }

 private:
  std::ofstream out_;
};

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in),
                     std::istreambuf_iterator<char>());
}

inline void write_text_file(const std::filesystem::path& path,
                            std::string_view text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
}

}  // namespace qforge
