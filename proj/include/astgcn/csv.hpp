#pragma once

#include <cstddef>
#include <istream>
#include <optional>
#include <string>
#include <vector>

namespace astgcn::csv {

// Splits one CSV record; handles double-quoted fields with embedded commas.
std::vector<std::string> split_line(const std::string& line);

struct Row {
  std::size_t line = 0;  // 1-based line number in the source
  std::vector<std::string> fields;
};

struct Table {
  std::vector<std::string> header;
  std::vector<Row> rows;

  // Index of a header column, matched case-insensitively after trimming.
  std::optional<std::size_t> column(const std::string& name) const;
  std::size_t require_column(const std::string& name, const std::string& source) const;
};

// Reads a header line followed by records; blank lines are skipped.
Table read(std::istream& in);
Table read_file(const std::string& path);

double parse_double(const std::string& field, const std::string& what, std::size_t line);

}  // namespace astgcn::csv
