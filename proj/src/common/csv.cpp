#include "ctx3d/csv.hpp"

#include <cmath>
#include <cstdio>

#include "ctx3d/binary_io.hpp"

namespace ctx3d::csv {
namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string> split(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    out.emplace_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

}  // namespace

std::size_t Table::column(std::string_view name) const {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return i;
  }
  throw DataError("csv: missing column '" + std::string(name) + "'");
}

bool Table::has_column(std::string_view name) const {
  for (const auto& h : header) {
    if (h == name) return true;
  }
  return false;
}

Table parse(std::string_view text, const std::string& what) {
  Table t;
  std::size_t start = 0, line_no = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = trim(text.substr(start, end - start));
    start = end + 1;
    ++line_no;
    if (line.empty()) {
      if (end == text.size()) break;
      continue;
    }
    auto cells = split(line);
    if (t.header.empty()) {
      t.header = std::move(cells);
    } else {
      if (cells.size() != t.header.size()) {
        throw DataError(what + ": line " + std::to_string(line_no) + " has " + std::to_string(cells.size()) +
                        " cells, expected " + std::to_string(t.header.size()));
      }
      t.rows.push_back(std::move(cells));
    }
    if (end == text.size()) break;
  }
  if (t.header.empty()) throw DataError(what + ": empty file");
  return t;
}

Table read(const std::filesystem::path& path) { return parse(io::read_file(path), path.string()); }

void require_columns(const Table& t, const std::vector<std::string>& required, const std::string& what) {
  for (const auto& name : required) {
    if (!t.has_column(name)) throw DataError(what + ": missing column '" + name + "'");
  }
}

double to_double(std::string_view s, const std::string& what) {
  double v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) {
    throw DataError(what + ": not a number: '" + std::string(s) + "'");
  }
  return v;
}

long long to_int(std::string_view s, const std::string& what) {
  long long v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw DataError(what + ": not an integer: '" + std::string(s) + "'");
  }
  return v;
}

std::string fmt(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

std::string fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
  return buf;
}

}  // namespace ctx3d::csv
