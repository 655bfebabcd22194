// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

namespace tdae {

/// Minimal line-chart writer producing standalone SVG. Output depends only
/// on the added data, so identical inputs give identical files.
class SvgPlot {
 public:
  SvgPlot(std::string title, std::string x_label, std::string y_label, int width = 720, int height = 440);

  void line(const std::vector<double>& x, const std::vector<double>& y, const std::string& color,
            double stroke_width = 2.0, double opacity = 1.0);
  /// Filled region between lo and hi.
  void band(const std::vector<double>& x, const std::vector<double>& lo, const std::vector<double>& hi,
            const std::string& color, double opacity = 0.25);
  void hline(double y, const std::string& color, bool dashed = true);
  void legend(const std::string& label, const std::string& color);

  std::string render() const;

  /// Distinct colors for series index i.
  static std::string color(std::size_t i);

 private:
  struct Series {
    std::vector<double> x, y, y2;
    std::string color;
    double width = 0.0, opacity = 1.0;
    enum Kind { kLine, kBand, kHLine } kind = kLine;
  };
  std::string title_, x_label_, y_label_;
  int width_, height_;
  std::vector<Series> series_;
  std::vector<std::pair<std::string, std::string>> legend_;
};

/// Escapes &, <, > and quotes for SVG text.
std::string svg_escape(const std::string& s);

}  // namespace tdae
