#pragma once

#include <string>
#include <vector>

namespace conforma {

/// Minimal CSV table used by the experiment harness: one header row plus
/// string cells. Numeric cells are written with enough digits to round-trip
/// exactly representable doubles.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  void add_row(std::vector<std::string> cells);
  void write(const std::string& path) const;
  std::string to_string() const;
};

CsvTable read_csv_table(const std::string& path);

/// Shortest text that parses back to exactly this double.
std::string format_double(double v);

double parse_double(const std::string& cell, const std::string& context);

std::vector<std::string> split_csv_line(const std::string& line);

}  // namespace conforma
