#pragma once

#include <fstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "pter/errors.hpp"

namespace pter {

inline std::vector<std::string> split_tsv_line(std::string_view line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    std::size_t tab = line.find('\t', start);
    if (tab == std::string_view::npos) {
      fields.emplace_back(line.substr(start));
      break;
    }
    fields.emplace_back(line.substr(start, tab - start));
    start = tab + 1;
  }
  if (!fields.empty() && !fields.back().empty() && fields.back().back() == '\r')
    fields.back().pop_back();
  return fields;
}

// Header-indexed TSV reader. Lines are '\n'-terminated; fields must not
// contain tabs or newlines (writers sanitise them).
class TsvReader {
public:
  explicit TsvReader(const std::string& path) : path_(path), in_(path) {
    if (!in_) throw ConfigError("cannot open TSV file: " + path);
    std::string header;
    if (!std::getline(in_, header)) throw DataError("empty TSV file: " + path);
    columns_ = split_tsv_line(header);
    for (std::size_t i = 0; i < columns_.size(); ++i) index_[columns_[i]] = i;
  }

  bool has_column(const std::string& name) const { return index_.count(name) > 0; }

  std::size_t column(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end())
      throw DataError("TSV file " + path_ + " is missing required column '" + name + "'");
    return it->second;
  }

  const std::vector<std::string>& columns() const { return columns_; }

  // Reads the next data row; throws on a field-count mismatch, naming the
  // 1-based row number (header is row 1).
  bool next(std::vector<std::string>& fields) {
    std::string line;
    if (!std::getline(in_, line)) return false;
    ++row_;
    fields = split_tsv_line(line);
    if (fields.size() != columns_.size())
      throw DataError("malformed row " + std::to_string(row_) + " in " + path_ + ": expected " +
                      std::to_string(columns_.size()) + " fields, got " +
                      std::to_string(fields.size()));
    return true;
  }

  std::size_t row_number() const { return row_; }

private:
  std::string path_;
  std::ifstream in_;
  std::vector<std::string> columns_;
  std::unordered_map<std::string, std::size_t> index_;
  std::size_t row_ = 1;
};

// Replaces tabs and newlines so a free-text field stays a single TSV cell.
inline std::string sanitize_tsv_field(std::string_view s) {
  std::string out(s);
  for (char& c : out)
    if (c == '\t' || c == '\n' || c == '\r') c = ' ';
  return out;
}

}  // namespace pter
