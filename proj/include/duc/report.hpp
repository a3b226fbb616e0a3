#pragma once

#include <json.hpp>

#include <string>
#include <vector>

namespace duc {

// RFC-4180 CSV: fields containing a comma, quote, CR or LF are quoted with
// inner quotes doubled; records end in CRLF.
std::string csv_field(const std::string& s);

class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header);

  void add(std::vector<std::string> row);  // must match the header width
  std::string str() const;
  std::size_t rows() const { return rows_.size(); }

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

// Parses RFC-4180 text back into records (header included).
std::vector<std::vector<std::string>> parse_csv(const std::string& text);

// Shortest round-trip decimal form; identical input gives identical text.
std::string fmt(double v);

// Plot data: a flat list of {"series", "x", "y"} points.
struct PlotPoint {
  std::string series;
  nlohmann::json x;
  double y = 0;
};

nlohmann::json plot_json(const std::vector<PlotPoint>& points);

}  // namespace duc
