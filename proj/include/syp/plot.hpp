#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace syp::plot {

struct Series {
  std::string label;
  std::vector<double> x, y;
};

// Minimal deterministic SVG emitters: axes, grid, labels, nothing else.
void write_line_chart(const std::filesystem::path& path, const std::string& title,
                      const std::string& x_label, const std::string& y_label,
                      const std::vector<Series>& series);

void write_heatmap(const std::filesystem::path& path, const std::string& title,
                   const std::string& x_label, const std::string& y_label,
                   const std::vector<std::string>& col_labels,
                   const std::vector<std::string>& row_labels,
                   const std::vector<std::vector<double>>& values);

}  // namespace syp::plot
