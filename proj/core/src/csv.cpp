#include "cdlm/csv.hpp"

#include "cdlm/errors.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace cdlm {

std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), x);
  if (ec != std::errc()) throw NumericalError("cannot format number");
  return std::string(buf, ptr);
}

void CsvTable::add_row(std::vector<std::string> cells) {
  if (cells.size() != header_.size()) throw ShapeError("CSV row width differs from header");
  rows_.push_back(std::move(cells));
}

std::string CsvTable::str() const {
  std::ostringstream out;
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out << (i ? "," : "") << cells[i];
    out << '\n';
  };
  line(header_);
  for (const auto& r : rows_) line(r);
  return out.str();
}

void CsvTable::write(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out << str();
  if (!out) throw FormatError("failed writing " + path.string());
}

CsvTable parse_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  auto split = [](const std::string& l) {
    std::vector<std::string> cells;
    std::string cell;
    for (char ch : l) {
      if (ch == ',') {
        cells.push_back(cell);
        cell.clear();
      } else if (ch != '\r') {
        cell.push_back(ch);
      }
    }
    cells.push_back(cell);
    return cells;
  };
  if (!std::getline(in, line)) throw FormatError("empty CSV");
  CsvTable table(split(line));
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    table.add_row(split(line));
  }
  return table;
}

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_csv(buf.str());
}

}  // namespace cdlm
