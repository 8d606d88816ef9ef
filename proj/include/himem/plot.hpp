#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

#include "himem/errors.hpp"

namespace himem {

struct PlotSeries {
  std::string name;
  std::vector<double> x, y;
};

namespace plot_detail {

inline std::string num(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

inline const char* color(std::size_t i) {
  static const char* palette[] = {"#2266cc", "#cc4422", "#22aa55",
                                  "#8844cc", "#bb8800", "#117788"};
  return palette[i % 6];
}

}  // namespace plot_detail

// Standalone SVG line chart, no external assets. Axis ranges snap to the
// data with a small pad so flat curves stay visible.
inline std::string svg_line_chart(const std::vector<PlotSeries>& series,
                                  const std::string& title,
                                  const std::string& x_label,
                                  const std::string& y_label) {
  if (series.empty()) throw ValidationError("plot needs at least one series");
  double x_lo = 0, x_hi = 0, y_lo = 0, y_hi = 0;
  bool first = true;
  for (const auto& s : series) {
    if (s.x.size() != s.y.size() || s.x.empty()) {
      throw ValidationError("series '" + s.name + "' malformed");
    }
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (first) {
        x_lo = x_hi = s.x[i];
        y_lo = y_hi = s.y[i];
        first = false;
      }
      x_lo = std::min(x_lo, s.x[i]);
      x_hi = std::max(x_hi, s.x[i]);
      y_lo = std::min(y_lo, s.y[i]);
      y_hi = std::max(y_hi, s.y[i]);
    }
  }
  if (x_hi == x_lo) x_hi = x_lo + 1.0;
  const double y_pad = (y_hi == y_lo) ? std::max(1.0, std::abs(y_hi)) * 0.1
                                      : (y_hi - y_lo) * 0.05;
  y_lo -= y_pad;
  y_hi += y_pad;

  const double w = 640, h = 400, ml = 70, mr = 20, mt = 40, mb = 50;
  auto px = [&](double x) {
    return ml + (x - x_lo) / (x_hi - x_lo) * (w - ml - mr);
  };
  auto py = [&](double y) {
    return h - mb - (y - y_lo) / (y_hi - y_lo) * (h - mt - mb);
  };

  using plot_detail::num;
  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w
      << "\" height=\"" << h << "\" viewBox=\"0 0 " << w << ' ' << h
      << "\">\n";
  out << "<rect width=\"" << w << "\" height=\"" << h
      << "\" fill=\"white\"/>\n";
  out << "<text x=\"" << w / 2 << "\" y=\"24\" text-anchor=\"middle\" "
         "font-family=\"sans-serif\" font-size=\"15\">"
      << title << "</text>\n";
  out << "<line x1=\"" << ml << "\" y1=\"" << h - mb << "\" x2=\"" << w - mr
      << "\" y2=\"" << h - mb << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml
      << "\" y2=\"" << h - mb << "\" stroke=\"black\"/>\n";

  for (int i = 0; i <= 4; ++i) {
    const double fx = x_lo + (x_hi - x_lo) * i / 4.0;
    const double fy = y_lo + (y_hi - y_lo) * i / 4.0;
    out << "<text x=\"" << px(fx) << "\" y=\"" << h - mb + 18
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
           "font-size=\"11\">"
        << num(fx) << "</text>\n";
    out << "<text x=\"" << ml - 8 << "\" y=\"" << py(fy) + 4
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" "
           "font-size=\"11\">"
        << num(fy) << "</text>\n";
    out << "<line x1=\"" << ml << "\" y1=\"" << py(fy) << "\" x2=\""
        << w - mr << "\" y2=\"" << py(fy)
        << "\" stroke=\"#dddddd\" stroke-width=\"0.5\"/>\n";
  }
  out << "<text x=\"" << (ml + w - mr) / 2 << "\" y=\"" << h - 12
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"12\">"
      << x_label << "</text>\n";
  out << "<text x=\"16\" y=\"" << (mt + h - mb) / 2
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"12\" transform=\"rotate(-90 16 "
      << (mt + h - mb) / 2 << ")\">" << y_label << "</text>\n";

  for (std::size_t s = 0; s < series.size(); ++s) {
    out << "<polyline fill=\"none\" stroke=\"" << plot_detail::color(s)
        << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < series[s].x.size(); ++i) {
      out << num(px(series[s].x[i])) << ',' << num(py(series[s].y[i])) << ' ';
    }
    out << "\"/>\n";
    out << "<text x=\"" << w - mr - 6 << "\" y=\"" << mt + 16 * (s + 1)
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" "
           "font-size=\"12\" fill=\""
        << plot_detail::color(s) << "\">" << series[s].name << "</text>\n";
  }
  out << "</svg>\n";
  return out.str();
}

}  // namespace himem
