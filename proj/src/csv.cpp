#include "conforma/csv.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "conforma/dataset.hpp"
#include "conforma/errors.hpp"

namespace conforma {

std::string format_double(double v) {
  // Try increasing precision until the value round-trips.
  for (int prec = 1; prec <= 17; ++prec) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
    double back = 0.0;
    auto [ptr, ec] = std::from_chars(buf, buf + std::char_traits<char>::length(buf), back);
    (void)ptr;
    if (ec == std::errc() && back == v) return buf;
  }
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double parse_double(const std::string& cell, const std::string& context) {
  double v = 0.0;
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || cell.empty()) {
    throw ConfigError("csv: non-numeric cell '" + cell + "' in " + context);
  }
  return v;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      cells.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  cells.push_back(cur);
  return cells;
}

void CsvTable::add_row(std::vector<std::string> cells) { rows.push_back(std::move(cells)); }

std::string CsvTable::to_string() const {
  std::ostringstream out;
  auto emit = [&out](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out << ',';
      out << cells[i];
    }
    out << '\n';
  };
  emit(header);
  for (const auto& r : rows) emit(r);
  return out.str();
}

void CsvTable::write(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw ConfigError("csv: cannot open for writing: " + path);
  out << to_string();
}

CsvTable read_csv_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("csv: cannot open: " + path);
  CsvTable table;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    if (first) {
      table.header = std::move(cells);
      first = false;
    } else {
      table.add_row(std::move(cells));
    }
  }
  if (first) throw ConfigError("csv: missing header row in " + path);
  return table;
}

Dataset load_csv(const std::string& path) {
  const CsvTable table = read_csv_table(path);
  if (table.header.size() < 2 || table.header.back() != "y") {
    throw ConfigError("csv: expected header x1,...,xd,y in " + path);
  }
  const std::size_t width = table.header.size();
  Dataset data;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& cells = table.rows[r];
    const std::string where = path + " row " + std::to_string(r + 2);
    if (cells.size() != width) throw ConfigError("csv: ragged row in " + where);
    LabeledSample s;
    s.features.reserve(width - 1);
    for (std::size_t c = 0; c + 1 < width; ++c) {
      s.features.push_back(parse_double(cells[c], where));
    }
    const double label = parse_double(cells.back(), where);
    if (label != 0.0 && label != 1.0) {
      throw ConfigError("csv: label outside {0,1} in " + where);
    }
    s.label = static_cast<int>(label);
    data.push(s);
  }
  return data;
}

void save_csv(const Dataset& data, const std::string& path) {
  CsvTable table;
  for (int j = 1; j <= data.dim(); ++j) table.header.push_back("x" + std::to_string(j));
  table.header.push_back("y");
  for (int i = 0; i < data.size(); ++i) {
    std::vector<std::string> cells;
    cells.reserve(static_cast<std::size_t>(data.dim()) + 1);
    for (double v : data.features_of(i)) cells.push_back(format_double(v));
    cells.push_back(std::to_string(data.label_of(i)));
    table.add_row(std::move(cells));
  }
  table.write(path);
}

}  // namespace conforma
