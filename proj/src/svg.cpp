// SPDX-License-Identifier: Apache-2.0
#include "tdae/svg.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "tdae/errors.hpp"

namespace tdae {

namespace {

constexpr int kLeft = 70, kRight = 190, kTop = 40, kBottom = 50;

std::string num(double v, const char* fmt = "%.2f") {
  char buf[48];
  std::snprintf(buf, sizeof(buf), fmt, v);
  return buf;
}

/// Round step so that about `count` ticks span [lo, hi].
double tick_step(double lo, double hi, int count) {
  const double raw = (hi - lo) / count;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  for (double m : {1.0, 2.0, 5.0, 10.0}) {
    if (raw <= m * mag) return m * mag;
  }
  return 10.0 * mag;
}

}  // namespace

std::string svg_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

SvgPlot::SvgPlot(std::string title, std::string x_label, std::string y_label, int width, int height)
    : title_(std::move(title)), x_label_(std::move(x_label)), y_label_(std::move(y_label)), width_(width),
      height_(height) {}

void SvgPlot::line(const std::vector<double>& x, const std::vector<double>& y, const std::string& color,
                   double stroke_width, double opacity) {
  if (x.size() != y.size()) throw DimensionError("line: x and y lengths differ");
  series_.push_back({x, y, {}, color, stroke_width, opacity, Series::kLine});
}

void SvgPlot::band(const std::vector<double>& x, const std::vector<double>& lo, const std::vector<double>& hi,
                   const std::string& color, double opacity) {
  if (x.size() != lo.size() || x.size() != hi.size()) throw DimensionError("band: lengths differ");
  series_.push_back({x, lo, hi, color, 0.0, opacity, Series::kBand});
}

void SvgPlot::hline(double y, const std::string& color, bool dashed) {
  series_.push_back({{}, {y}, {}, color, dashed ? 1.0 : 0.0, 1.0, Series::kHLine});
}

void SvgPlot::legend(const std::string& label, const std::string& color) { legend_.emplace_back(label, color); }

std::string SvgPlot::color(std::size_t i) {
  static const std::array<const char*, 10> kColors{"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                                   "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  return kColors[i % kColors.size()];
}

std::string SvgPlot::render() const {
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  auto take_y = [&](double v) {
    if (std::isfinite(v)) y0 = std::min(y0, v), y1 = std::max(y1, v);
  };
  for (const auto& s : series_) {
    for (double v : s.x) {
      if (std::isfinite(v)) x0 = std::min(x0, v), x1 = std::max(x1, v);
    }
    for (double v : s.y) take_y(v);
    for (double v : s.y2) take_y(v);
  }
  if (!std::isfinite(x0)) x0 = 0.0, x1 = 1.0;
  if (!std::isfinite(y0)) y0 = 0.0, y1 = 1.0;
  if (x1 <= x0) x1 = x0 + 1.0;
  if (y1 <= y0) y0 -= 0.5, y1 += 0.5;
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad;
  y1 += pad;

  const double pw = width_ - kLeft - kRight, ph = height_ - kTop - kBottom;
  auto px = [&](double x) { return kLeft + (x - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return kTop + (y1 - y) / (y1 - y0) * ph; };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width_ << "\" height=\"" << height_
     << "\" viewBox=\"0 0 " << width_ << ' ' << height_ << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << width_ / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << svg_escape(title_)
     << "</text>\n";

  const double xs = tick_step(x0, x1, 6), ys = tick_step(y0, y1, 6);
  for (double t = std::ceil(x0 / xs) * xs; t <= x1 + 1e-9 * xs; t += xs) {
    os << "<line x1=\"" << num(px(t)) << "\" y1=\"" << kTop << "\" x2=\"" << num(px(t)) << "\" y2=\""
       << kTop + ph << "\" stroke=\"#eeeeee\"/>\n";
    os << "<text x=\"" << num(px(t)) << "\" y=\"" << kTop + ph + 16 << "\" text-anchor=\"middle\">"
       << num(t, "%.4g") << "</text>\n";
  }
  for (double t = std::ceil(y0 / ys) * ys; t <= y1 + 1e-9 * ys; t += ys) {
    os << "<line x1=\"" << kLeft << "\" y1=\"" << num(py(t)) << "\" x2=\"" << kLeft + pw << "\" y2=\""
       << num(py(t)) << "\" stroke=\"#eeeeee\"/>\n";
    os << "<text x=\"" << kLeft - 6 << "\" y=\"" << num(py(t) + 4) << "\" text-anchor=\"end\">"
       << num(std::abs(t) < 1e-12 * ys ? 0.0 : t, "%.4g") << "</text>\n";
  }
  os << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << pw << "\" height=\"" << ph
     << "\" fill=\"none\" stroke=\"black\"/>\n";
  os << "<text x=\"" << kLeft + pw / 2 << "\" y=\"" << height_ - 12 << "\" text-anchor=\"middle\">"
     << svg_escape(x_label_) << "</text>\n";
  os << "<text transform=\"translate(16," << kTop + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
     << svg_escape(y_label_) << "</text>\n";

  for (const auto& s : series_) {
    switch (s.kind) {
      case Series::kBand: {
        if (s.x.empty()) break;
        os << "<polygon class=\"band\" fill=\"" << s.color << "\" fill-opacity=\"" << num(s.opacity)
           << "\" stroke=\"none\" points=\"";
        for (std::size_t i = 0; i < s.x.size(); ++i) os << num(px(s.x[i])) << ',' << num(py(s.y2[i])) << ' ';
        for (std::size_t i = s.x.size(); i-- > 0;) os << num(px(s.x[i])) << ',' << num(py(s.y[i])) << ' ';
        os << "\"/>\n";
        break;
      }
      case Series::kLine: {
        if (s.x.empty()) break;
        os << "<polyline class=\"line\" fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"" << num(s.width)
           << "\" stroke-opacity=\"" << num(s.opacity) << "\" points=\"";
        for (std::size_t i = 0; i < s.x.size(); ++i) os << num(px(s.x[i])) << ',' << num(py(s.y[i])) << ' ';
        os << "\"/>\n";
        break;
      }
      case Series::kHLine:
        os << "<line class=\"hline\" x1=\"" << kLeft << "\" y1=\"" << num(py(s.y[0])) << "\" x2=\"" << kLeft + pw
           << "\" y2=\"" << num(py(s.y[0])) << "\" stroke=\"" << s.color << "\""
           << (s.width > 0 ? " stroke-dasharray=\"6,4\"" : "") << "/>\n";
        break;
    }
  }

  double ly = kTop + 10;
  for (const auto& [label, color] : legend_) {
    os << "<rect x=\"" << kLeft + pw + 12 << "\" y=\"" << num(ly - 9) << "\" width=\"14\" height=\"10\" fill=\""
       << color << "\"/>\n";
    os << "<text x=\"" << kLeft + pw + 32 << "\" y=\"" << num(ly) << "\">" << svg_escape(label) << "</text>\n";
    ly += 18;
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace tdae
