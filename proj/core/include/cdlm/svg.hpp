#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace cdlm {

struct SvgSeries {
  std::string label;
  bool dashed = false;
  std::vector<std::pair<double, double>> points;
};

/// Minimal line chart: axes, min/max tick labels, one polyline per series
/// and a legend.
std::string line_chart_svg(const std::string& title, const std::string& x_label,
                           const std::string& y_label, const std::vector<SvgSeries>& series);

void write_line_chart(const std::filesystem::path& path, const std::string& title,
                      const std::string& x_label, const std::string& y_label,
                      const std::vector<SvgSeries>& series);

}  // namespace cdlm
