#pragma once

#include <charconv>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "ctx3d/errors.hpp"

namespace ctx3d::csv {

/// Header-indexed table of string cells. No quoting: cells never contain commas.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  // Column index by name; throws DataError if absent.
  std::size_t column(std::string_view name) const;
  bool has_column(std::string_view name) const;
};

Table parse(std::string_view text, const std::string& what);
Table read(const std::filesystem::path& path);
// Throws DataError unless every name in `required` is a column.
void require_columns(const Table& t, const std::vector<std::string>& required, const std::string& what);

double to_double(std::string_view s, const std::string& what);
long long to_int(std::string_view s, const std::string& what);

// Shortest round-trip decimal for a double.
std::string fmt(double v);
// Fixed-point with the given number of decimals.
std::string fixed(double v, int decimals);

}  // namespace ctx3d::csv
