#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "pfs/csv.hpp"
#include "pfs/weighted_stats.hpp"

// Minimal SVG charts. Every plotted datum carries data-* attributes holding
// the exact CSV text of the value it draws.
namespace pfs::svg {

inline std::string escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&apos;"; break;
      default: out += c;
    }
  }
  return out;
}

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline const std::vector<std::string>& palette() {
  static const std::vector<std::string> p = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
                                             "#e377c2", "#7f7f7f"};
  return p;
}

struct Frame {
  double width = 720, height = 420;
  double left = 70, right = 170, top = 40, bottom = 60;
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;

  double px(double x) const { return left + (x - x0) / (x1 - x0) * (width - left - right); }
  double py(double y) const { return height - bottom - (y - y0) / (y1 - y0) * (height - top - bottom); }
  double plot_width() const { return width - left - right; }
};

class Document {
 public:
  explicit Document(const Frame& f, std::string_view title) : f_(f) {
    out_ << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    out_ << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(f.width) << "\" height=\"" << num(f.height)
         << "\" viewBox=\"0 0 " << num(f.width) << ' ' << num(f.height) << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    out_ << "<title>" << escape(title) << "</title>\n";
    out_ << "<rect x=\"0\" y=\"0\" width=\"" << num(f.width) << "\" height=\"" << num(f.height) << "\" fill=\"white\"/>\n";
    text(f.width / 2, 22, title, "middle", 14);
  }

  void text(double x, double y, std::string_view s, const char* anchor = "start", int size = 11) {
    out_ << "<text x=\"" << num(x) << "\" y=\"" << num(y) << "\" text-anchor=\"" << anchor << "\" font-size=\"" << size
         << "\">" << escape(s) << "</text>\n";
  }

  void line(double x1, double y1, double x2, double y2, std::string_view stroke = "black", double width = 1) {
    out_ << "<line x1=\"" << num(x1) << "\" y1=\"" << num(y1) << "\" x2=\"" << num(x2) << "\" y2=\"" << num(y2)
         << "\" stroke=\"" << stroke << "\" stroke-width=\"" << num(width) << "\"/>\n";
  }

  void raw(std::string_view s) { out_ << s; }

  void axes(std::string_view xlabel, std::string_view ylabel, int y_ticks = 5) {
    const auto& f = f_;
    line(f.left, f.py(f.y0), f.left + f.plot_width(), f.py(f.y0));
    line(f.left, f.py(f.y0), f.left, f.py(f.y1));
    for (int k = 0; k <= y_ticks; ++k) {
      const double v = f.y0 + (f.y1 - f.y0) * k / y_ticks;
      line(f.left - 4, f.py(v), f.left, f.py(v));
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.3g", v);
      text(f.left - 6, f.py(v) + 4, buf, "end");
    }
    text(f.left + f.plot_width() / 2, f.height - 15, xlabel, "middle");
    out_ << "<text x=\"15\" y=\"" << num(f.top + (f.height - f.top - f.bottom) / 2) << "\" text-anchor=\"middle\" transform=\"rotate(-90 15 "
         << num(f.top + (f.height - f.top - f.bottom) / 2) << ")\">" << escape(ylabel) << "</text>\n";
  }

  void legend(const std::vector<std::string>& names, const std::vector<std::string>& colors) {
    const double x = f_.width - f_.right + 15;
    for (std::size_t i = 0; i < names.size(); ++i) {
      const double y = f_.top + 10 + 18 * static_cast<double>(i);
      out_ << "<rect x=\"" << num(x) << "\" y=\"" << num(y - 9) << "\" width=\"10\" height=\"10\" fill=\"" << colors[i]
           << "\"/>\n";
      text(x + 15, y, names[i]);
    }
  }

  std::string str() const { return out_.str() + "</svg>\n"; }

  const Frame& frame() const { return f_; }

 private:
  Frame f_;
  std::ostringstream out_;
};

namespace detail {

inline void expand(double& lo, double& hi) {
  if (!(hi > lo)) {
    lo -= 0.5;
    hi += 0.5;
  }
}

}  // namespace detail

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;  // NaN breaks the line
};

/// Lines with point markers. `x_labels` are drawn for every x value.
inline std::string line_chart(std::string_view title, std::string_view xlabel, std::string_view ylabel,
                              const std::vector<Series>& series, std::optional<std::pair<double, double>> y_range = {}) {
  Frame f;
  double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin, ymin = xmin, ymax = -xmin;
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      if (std::isnan(s.y[i])) continue;
      ymin = std::min(ymin, s.y[i]);
      ymax = std::max(ymax, s.y[i]);
    }
  if (!std::isfinite(xmin)) xmin = 0, xmax = 1;
  if (!std::isfinite(ymin)) ymin = 0, ymax = 1;
  if (y_range) ymin = y_range->first, ymax = y_range->second;
  detail::expand(xmin, xmax);
  detail::expand(ymin, ymax);
  f.x0 = xmin;
  f.x1 = xmax;
  f.y0 = ymin;
  f.y1 = ymax;
  Document doc(f, title);
  doc.axes(xlabel, ylabel);
  std::vector<std::string> names, colors;
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const std::string& color = palette()[k % palette().size()];
    names.push_back(s.name);
    colors.push_back(color);
    std::ostringstream g;
    g << "<g class=\"series\" data-name=\"" << escape(s.name) << "\">\n";
    std::string path;
    bool pen = false;
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (std::isnan(s.y[i])) {
        pen = false;
        continue;
      }
      path += (pen ? " L " : " M ") + num(f.px(s.x[i])) + " " + num(f.py(s.y[i]));
      pen = true;
    }
    if (!path.empty()) g << "<path d=\"" << path.substr(1) << "\" fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\"/>\n";
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (std::isnan(s.y[i])) continue;
      g << "<circle cx=\"" << num(f.px(s.x[i])) << "\" cy=\"" << num(f.py(s.y[i])) << "\" r=\"2.5\" fill=\"" << color
        << "\" data-x=\"" << csv::format(s.x[i]) << "\" data-y=\"" << csv::format(s.y[i]) << "\"/>\n";
    }
    g << "</g>\n";
    doc.raw(g.str());
  }
  for (double x : series.empty() ? std::vector<double>{} : series.front().x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", x);
    doc.text(f.px(x), f.py(f.y0) + 14, buf, "middle", 8);
  }
  doc.legend(names, colors);
  return doc.str();
}

/// Vertical bars, one per category.
inline std::string bar_chart(std::string_view title, std::string_view xlabel, std::string_view ylabel,
                             const std::vector<std::string>& categories, const std::vector<double>& values) {
  Frame f;
  f.right = 40;
  f.x0 = 0;
  f.x1 = std::max<double>(1.0, static_cast<double>(categories.size()));
  f.y0 = 0;
  f.y1 = 0;
  for (double v : values) f.y1 = std::max(f.y1, v);
  if (!(f.y1 > 0)) f.y1 = 1;
  Document doc(f, title);
  doc.axes(xlabel, ylabel);
  const double slot = f.plot_width() / f.x1;
  std::ostringstream g;
  g << "<g class=\"bars\">\n";
  for (std::size_t i = 0; i < categories.size(); ++i) {
    const double x = f.px(static_cast<double>(i)) + slot * 0.1;
    const double top = f.py(values[i]);
    g << "<rect x=\"" << num(x) << "\" y=\"" << num(top) << "\" width=\"" << num(slot * 0.8) << "\" height=\""
      << num(f.py(0) - top) << "\" fill=\"" << palette()[0] << "\" data-category=\"" << escape(categories[i])
      << "\" data-value=\"" << csv::format(values[i]) << "\"/>\n";
  }
  g << "</g>\n";
  doc.raw(g.str());
  for (std::size_t i = 0; i < categories.size(); ++i)
    doc.text(f.px(static_cast<double>(i)) + slot / 2, f.py(0) + 14, categories[i], "middle", 8);
  return doc.str();
}

/// Stacked vertical bars: `stacks[k].second[i]` is layer k of category i.
inline std::string stacked_bars(std::string_view title, std::string_view xlabel, std::string_view ylabel,
                                const std::vector<std::string>& categories,
                                const std::vector<std::pair<std::string, std::vector<double>>>& stacks) {
  Frame f;
  f.x0 = 0;
  f.x1 = std::max<double>(1.0, static_cast<double>(categories.size()));
  f.y0 = 0;
  f.y1 = 0;
  for (std::size_t i = 0; i < categories.size(); ++i) {
    double total = 0;
    for (const auto& s : stacks) total += std::isnan(s.second[i]) ? 0.0 : s.second[i];
    f.y1 = std::max(f.y1, total);
  }
  if (!(f.y1 > 0)) f.y1 = 1;
  Document doc(f, title);
  doc.axes(xlabel, ylabel);
  const double slot = f.plot_width() / f.x1;
  std::vector<std::string> names, colors;
  for (std::size_t k = 0; k < stacks.size(); ++k) {
    names.push_back(stacks[k].first);
    colors.push_back(palette()[k % palette().size()]);
  }
  std::ostringstream g;
  for (std::size_t i = 0; i < categories.size(); ++i) {
    double base = 0;
    g << "<g class=\"stack\" data-category=\"" << escape(categories[i]) << "\">\n";
    for (std::size_t k = 0; k < stacks.size(); ++k) {
      const double v = stacks[k].second[i];
      const double h = std::isnan(v) ? 0.0 : v;
      const double y_top = f.py(base + h);
      g << "<rect x=\"" << num(f.px(static_cast<double>(i)) + slot * 0.1) << "\" y=\"" << num(y_top) << "\" width=\""
        << num(slot * 0.8) << "\" height=\"" << num(f.py(base) - y_top) << "\" fill=\"" << colors[k]
        << "\" data-layer=\"" << escape(stacks[k].first) << "\" data-value=\"" << csv::format(v) << "\"/>\n";
      base += h;
    }
    g << "</g>\n";
  }
  doc.raw(g.str());
  for (std::size_t i = 0; i < categories.size(); ++i)
    doc.text(f.px(static_cast<double>(i)) + slot / 2, f.py(0) + 14, categories[i], "middle", 8);
  doc.legend(names, colors);
  return doc.str();
}

/// Box plots with 1.5 IQR whiskers.
inline std::string box_plot(std::string_view title, std::string_view ylabel,
                            const std::vector<std::pair<std::string, stats::BoxStats>>& groups) {
  Frame f;
  f.right = 30;
  f.bottom = 110;
  f.x0 = 0;
  f.x1 = std::max<double>(1.0, static_cast<double>(groups.size()));
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& [g, b] : groups) {
    if (b.n == 0 || std::isnan(b.median)) continue;
    lo = std::min(lo, b.lower_whisker);
    hi = std::max(hi, b.upper_whisker);
  }
  if (!std::isfinite(lo)) lo = 0, hi = 1;
  detail::expand(lo, hi);
  f.y0 = lo;
  f.y1 = hi;
  Document doc(f, title);
  doc.axes("", ylabel);
  const double slot = f.plot_width() / f.x1;
  std::ostringstream g;
  for (std::size_t i = 0; i < groups.size(); ++i) {
    const auto& [label, b] = groups[i];
    const double cx = f.px(static_cast<double>(i)) + slot / 2;
    const double half = slot * 0.3;
    g << "<g class=\"box\" data-group=\"" << escape(label) << "\" data-n=\"" << b.n << "\" data-q1=\"" << csv::format(b.q1)
      << "\" data-median=\"" << csv::format(b.median) << "\" data-q3=\"" << csv::format(b.q3) << "\" data-lower=\""
      << csv::format(b.lower_whisker) << "\" data-upper=\"" << csv::format(b.upper_whisker) << "\">\n";
    if (b.n > 0 && !std::isnan(b.median)) {
      g << "<line x1=\"" << num(cx) << "\" y1=\"" << num(f.py(b.lower_whisker)) << "\" x2=\"" << num(cx) << "\" y2=\""
        << num(f.py(b.upper_whisker)) << "\" stroke=\"black\"/>\n";
      g << "<rect x=\"" << num(cx - half) << "\" y=\"" << num(f.py(b.q3)) << "\" width=\"" << num(2 * half)
        << "\" height=\"" << num(f.py(b.q1) - f.py(b.q3)) << "\" fill=\"" << palette()[0]
        << "\" fill-opacity=\"0.5\" stroke=\"black\"/>\n";
      g << "<line x1=\"" << num(cx - half) << "\" y1=\"" << num(f.py(b.median)) << "\" x2=\"" << num(cx + half)
        << "\" y2=\"" << num(f.py(b.median)) << "\" stroke=\"black\" stroke-width=\"2\"/>\n";
    }
    g << "</g>\n";
    g << "<text x=\"" << num(cx) << "\" y=\"" << num(f.py(f.y0) + 10) << "\" font-size=\"8\" text-anchor=\"end\" transform=\"rotate(-60 "
      << num(cx) << ' ' << num(f.py(f.y0) + 10) << ")\">" << escape(label) << "</text>\n";
  }
  doc.raw(g.str());
  return doc.str();
}

}  // namespace pfs::svg
