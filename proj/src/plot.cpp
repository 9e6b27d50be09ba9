#include "syp/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "syp/util.hpp"

namespace syp::plot {

namespace {

const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                          "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      default: out += c;
    }
  }
  return out;
}

void atomic_write(const std::filesystem::path& path, const std::string& body) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError(str("plot: cannot open ", tmp.string()));
    out << body;
  }
  std::filesystem::rename(tmp, path);
}

struct Range {
  double lo = 0.0, hi = 1.0;
  void widen(double v) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
};

Range data_range(const std::vector<Series>& series, bool use_x) {
  bool any = false;
  Range r;
  for (const auto& s : series) {
    const auto& vals = use_x ? s.x : s.y;
    for (double v : vals) {
      if (!any) {
        r.lo = r.hi = v;
        any = true;
      } else {
        r.widen(v);
      }
    }
  }
  if (!any) return {0.0, 1.0};
  if (r.hi == r.lo) {
    r.lo -= 0.5;
    r.hi += 0.5;
  }
  double pad = 0.05 * (r.hi - r.lo);
  return {r.lo - pad, r.hi + pad};
}

}  // namespace

void write_line_chart(const std::filesystem::path& path, const std::string& title,
                      const std::string& x_label, const std::string& y_label,
                      const std::vector<Series>& series) {
  const double width = 760, height = 480;
  const double ml = 70, mr = 170, mt = 44, mb = 56;
  const double pw = width - ml - mr, ph = height - mt - mb;
  Range xr = data_range(series, true);
  Range yr = data_range(series, false);
  auto sx = [&](double v) { return ml + (v - xr.lo) / (xr.hi - xr.lo) * pw; };
  auto sy = [&](double v) { return mt + ph - (v - yr.lo) / (yr.hi - yr.lo) * ph; };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" font-family=\"sans-serif\">\n";
  svg << "<rect width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";
  svg << "<text x=\"" << ml + pw / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">"
      << escape(title) << "</text>\n";

  const int ticks = 5;
  for (int i = 0; i <= ticks; ++i) {
    double fx = xr.lo + (xr.hi - xr.lo) * i / ticks;
    double fy = yr.lo + (yr.hi - yr.lo) * i / ticks;
    double px = sx(fx), py = sy(fy);
    svg << "<line x1=\"" << num(px) << "\" y1=\"" << mt << "\" x2=\"" << num(px) << "\" y2=\""
        << mt + ph << "\" stroke=\"#dddddd\"/>\n";
    svg << "<line x1=\"" << ml << "\" y1=\"" << num(py) << "\" x2=\"" << ml + pw << "\" y2=\""
        << num(py) << "\" stroke=\"#dddddd\"/>\n";
    svg << "<text x=\"" << num(px) << "\" y=\"" << mt + ph + 18
        << "\" text-anchor=\"middle\" font-size=\"11\">" << num(fx) << "</text>\n";
    svg << "<text x=\"" << ml - 8 << "\" y=\"" << num(py + 4)
        << "\" text-anchor=\"end\" font-size=\"11\">" << num(fy) << "</text>\n";
  }
  svg << "<rect x=\"" << ml << "\" y=\"" << mt << "\" width=\"" << pw << "\" height=\"" << ph
      << "\" fill=\"none\" stroke=\"#333333\"/>\n";
  svg << "<text x=\"" << ml + pw / 2 << "\" y=\"" << height - 14
      << "\" text-anchor=\"middle\" font-size=\"13\">" << escape(x_label) << "</text>\n";
  svg << "<text x=\"18\" y=\"" << mt + ph / 2 << "\" text-anchor=\"middle\" font-size=\"13\" "
      << "transform=\"rotate(-90 18 " << mt + ph / 2 << ")\">" << escape(y_label) << "</text>\n";

  for (size_t s = 0; s < series.size(); ++s) {
    const char* color = kPalette[s % (sizeof(kPalette) / sizeof(kPalette[0]))];
    svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (size_t i = 0; i < series[s].x.size(); ++i) {
      if (i) svg << ' ';
      svg << num(sx(series[s].x[i])) << ',' << num(sy(series[s].y[i]));
    }
    svg << "\"/>\n";
    for (size_t i = 0; i < series[s].x.size(); ++i)
      svg << "<circle cx=\"" << num(sx(series[s].x[i])) << "\" cy=\"" << num(sy(series[s].y[i]))
          << "\" r=\"3\" fill=\"" << color << "\"/>\n";
    double ly = mt + 16 + 18 * static_cast<double>(s);
    svg << "<line x1=\"" << ml + pw + 12 << "\" y1=\"" << num(ly - 4) << "\" x2=\"" << ml + pw + 34
        << "\" y2=\"" << num(ly - 4) << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    svg << "<text x=\"" << ml + pw + 40 << "\" y=\"" << num(ly) << "\" font-size=\"12\">"
        << escape(series[s].label) << "</text>\n";
  }
  svg << "</svg>\n";
  atomic_write(path, svg.str());
}

void write_heatmap(const std::filesystem::path& path, const std::string& title,
                   const std::string& x_label, const std::string& y_label,
                   const std::vector<std::string>& col_labels,
                   const std::vector<std::string>& row_labels,
                   const std::vector<std::vector<double>>& values) {
  if (values.empty() || values.size() != row_labels.size())
    throw ContractError("write_heatmap: rows do not match labels");
  for (const auto& row : values)
    if (row.size() != col_labels.size()) throw ContractError("write_heatmap: ragged rows");

  double lo = values[0][0], hi = values[0][0];
  for (const auto& row : values)
    for (double v : row) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  if (hi == lo) hi = lo + 1.0;

  const double cell = 62, ml = 110, mt = 56, mb = 60;
  double width = ml + cell * static_cast<double>(col_labels.size()) + 40;
  double height = mt + cell * static_cast<double>(row_labels.size()) + mb;

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" font-family=\"sans-serif\">\n";
  svg << "<rect width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";
  svg << "<text x=\"" << width / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">"
      << escape(title) << "</text>\n";

  for (size_t i = 0; i < values.size(); ++i) {
    for (size_t j = 0; j < values[i].size(); ++j) {
      double t = (values[i][j] - lo) / (hi - lo);
      // light -> dark blue
      int r = static_cast<int>(std::lround(247 + t * (8 - 247)));
      int g = static_cast<int>(std::lround(251 + t * (48 - 251)));
      int b = static_cast<int>(std::lround(255 + t * (107 - 255)));
      double x = ml + cell * static_cast<double>(j);
      double y = mt + cell * static_cast<double>(i);
      char color[16];
      std::snprintf(color, sizeof color, "#%02x%02x%02x", r, g, b);
      svg << "<rect x=\"" << num(x) << "\" y=\"" << num(y) << "\" width=\"" << cell
          << "\" height=\"" << cell << "\" fill=\"" << color << "\" stroke=\"#ffffff\"/>\n";
      svg << "<text x=\"" << num(x + cell / 2) << "\" y=\"" << num(y + cell / 2 + 4)
          << "\" text-anchor=\"middle\" font-size=\"12\" fill=\"" << (t > 0.55 ? "#ffffff" : "#111111")
          << "\">" << num(values[i][j]) << "</text>\n";
    }
  }
  for (size_t j = 0; j < col_labels.size(); ++j)
    svg << "<text x=\"" << num(ml + cell * (static_cast<double>(j) + 0.5)) << "\" y=\"" << mt - 10
        << "\" text-anchor=\"middle\" font-size=\"12\">" << escape(col_labels[j]) << "</text>\n";
  for (size_t i = 0; i < row_labels.size(); ++i)
    svg << "<text x=\"" << ml - 10 << "\" y=\"" << num(mt + cell * (static_cast<double>(i) + 0.5) + 4)
        << "\" text-anchor=\"end\" font-size=\"12\">" << escape(row_labels[i]) << "</text>\n";
  svg << "<text x=\"" << ml + cell * static_cast<double>(col_labels.size()) / 2 << "\" y=\""
      << height - 18 << "\" text-anchor=\"middle\" font-size=\"13\">" << escape(x_label)
      << "</text>\n";
  svg << "<text x=\"24\" y=\"" << mt + cell * static_cast<double>(row_labels.size()) / 2
      << "\" text-anchor=\"middle\" font-size=\"13\" transform=\"rotate(-90 24 "
      << mt + cell * static_cast<double>(row_labels.size()) / 2 << ")\">" << escape(y_label)
      << "</text>\n";
  svg << "</svg>\n";
  atomic_write(path, svg.str());
}

}  // namespace syp::plot
