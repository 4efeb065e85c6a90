#include "tbss/io.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "tbss/error.hpp"

namespace tbss {

namespace {

std::vector<std::string> split_row(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      cells.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  cells.push_back(cur);
  return cells;
}

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t");
  return s.substr(a, b - a + 1);
}

bool parse_number(const std::string& cell, double& out) {
  const std::string s = trim(cell);
  if (s.empty()) return false;
  const char* first = s.data();
  if (*first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

}  // namespace

CsvTable parse_csv(std::istream& in) {
  CsvTable out;
  std::vector<std::vector<double>> rows;
  std::string line;
  long row = 0;
  size_t width = 0;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty() || line == "\r") continue;
    const auto cells = split_row(line);
    std::vector<double> vals(cells.size());
    bool numeric = true;
    for (size_t j = 0; j < cells.size() && numeric; ++j) numeric = parse_number(cells[j], vals[j]);
    if (rows.empty() && out.names.empty() && !numeric) {
      for (const auto& c : cells) out.names.push_back(trim(c));
      width = cells.size();
      continue;
    }
    if (width == 0) width = cells.size();
    if (cells.size() != width)
      throw ParseError("row " + std::to_string(row) + " has " + std::to_string(cells.size()) +
                           " cells, expected " + std::to_string(width),
                       row, static_cast<long>(std::min(cells.size(), width)) + 1);
    for (size_t j = 0; j < cells.size(); ++j) {
      if (!parse_number(cells[j], vals[j]))
        throw ParseError("non-numeric cell '" + trim(cells[j]) + "' at row " + std::to_string(row) +
                             ", column " + std::to_string(j + 1),
                         row, static_cast<long>(j) + 1);
      if (!std::isfinite(vals[j]))
        throw ParseError("non-finite value at row " + std::to_string(row) + ", column " + std::to_string(j + 1),
                         row, static_cast<long>(j) + 1);
    }
    rows.push_back(std::move(vals));
  }
  if (rows.empty()) throw ParseError("no numeric rows", row, 0);
  Matrix m(static_cast<long>(rows.size()), static_cast<long>(width));
  for (size_t i = 0; i < rows.size(); ++i)
    for (size_t j = 0; j < width; ++j) m(static_cast<long>(i), static_cast<long>(j)) = rows[i][j];
  out.data = std::move(m);
  return out;
}

CsvTable ingest_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path + "'", 0, 0);
  return parse_csv(in);
}

std::string format_csv(const TimeSeriesMatrix& ts, const std::vector<std::string>& names) {
  std::string out;
  char buf[32];
  if (!names.empty()) {
    for (size_t j = 0; j < names.size(); ++j) out += (j ? "," : "") + names[j];
    out += '\n';
  }
  for (long t = 0; t < ts.T(); ++t) {
    for (long j = 0; j < ts.p(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", ts.data(t, j));
      if (j) out += ',';
      out += buf;
    }
    out += '\n';
  }
  return out;
}

void write_file_atomic(const std::string& path, const std::string& content) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  const fs::path tmp = target.parent_path() / ("." + target.filename().string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write '" + tmp.string() + "'");
    out << content;
    out.flush();
    if (!out) throw std::runtime_error("write to '" + tmp.string() + "' failed");
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) {
    fs::remove(tmp);
    throw std::runtime_error("cannot rename onto '" + path + "': " + ec.message());
  }
}

}  // namespace tbss
