#pragma once

#include <istream>
#include <string>
#include <vector>

#include "tbss/model.hpp"

namespace tbss {

struct CsvTable {
  Matrix data;                     // rows = time; a single row is kept as read
  std::vector<std::string> names;  // empty when the file has no header row

  TimeSeriesMatrix series() const { return TimeSeriesMatrix(data); }
};

// Comma separated, rows = time. A first row with any non-numeric cell is a header.
// Errors carry 1-based row and column.
CsvTable parse_csv(std::istream& in);
CsvTable ingest_csv(const std::string& path);

// Values are written with 17 significant digits so a read-back is exact.
std::string format_csv(const TimeSeriesMatrix& ts, const std::vector<std::string>& names = {});

// Writes to a sibling temporary file and renames it over `path`.
void write_file_atomic(const std::string& path, const std::string& content);

}  // namespace tbss
