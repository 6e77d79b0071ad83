#include "astgcn/csv.hpp"

#include <boost/algorithm/string.hpp>
#include <boost/tokenizer.hpp>

#include <cmath>
#include <fstream>
#include <stdexcept>

namespace astgcn::csv {

std::vector<std::string> split_line(const std::string& line) {
  using Sep = boost::escaped_list_separator<char>;
  boost::tokenizer<Sep> tok(line, Sep('\\', ',', '"'));
  std::vector<std::string> out;
  for (const auto& field : tok) out.push_back(boost::algorithm::trim_copy(field));
  return out;
}

std::optional<std::size_t> Table::column(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (boost::algorithm::iequals(header[i], boost::algorithm::trim_copy(name))) return i;
  }
  return std::nullopt;
}

std::size_t Table::require_column(const std::string& name, const std::string& source) const {
  auto idx = column(name);
  if (!idx) throw std::runtime_error(source + ": missing required column '" + name + "'");
  return *idx;
}

Table read(std::istream& in) {
  Table t;
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (boost::algorithm::trim_copy(line).empty()) continue;
    if (!have_header) {
      if (lineno == 1 && line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
      t.header = split_line(line);
      have_header = true;
      continue;
    }
    try {
      t.rows.push_back({lineno, split_line(line)});
    } catch (const boost::escaped_list_error& e) {
      throw std::runtime_error("line " + std::to_string(lineno) + ": malformed CSV record (" +
                               e.what() + ")");
    }
  }
  if (!have_header) throw std::runtime_error("CSV input has no header row");
  return t;
}

Table read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  try {
    return read(in);
  } catch (const std::runtime_error& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
}

double parse_double(const std::string& field, const std::string& what, std::size_t line) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(field, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != field.size() || !std::isfinite(v)) {
    throw std::runtime_error("line " + std::to_string(line) + ": invalid " + what + " '" +
                             field + "'");
  }
  return v;
}

}  // namespace astgcn::csv
