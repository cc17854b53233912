#pragma once

// Minimal static SVG line charts: stacked panels sharing an x axis.

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace drcc::svg {

struct Series {
  std::string label;
  std::vector<double> x, y;
  std::string color = "#1f77b4";
  bool dashed = false;
  bool markers = true;
  bool line = true;  // false draws markers only
};

struct Panel {
  std::string y_label;
  std::vector<Series> series;
};

namespace detail {

inline std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      default: out += c;
    }
  }
  return out;
}

inline std::pair<double, double> padded_range(double lo, double hi) {
  if (!std::isfinite(lo) || !std::isfinite(hi)) return {0, 1};
  if (hi - lo < 1e-12) {
    double pad = std::max(1e-3, std::abs(lo) * 0.05);
    return {lo - pad, hi + pad};
  }
  double pad = 0.06 * (hi - lo);
  return {lo - pad, hi + pad};
}

}  // namespace detail

inline std::string render(const std::vector<Panel>& panels, const std::string& x_label, const std::string& title) {
  const double width = 640, panel_h = 200, left = 80, right = 170, top = 40, gap = 40, bottom = 50;
  const double plot_w = width - left - right;
  const double height = top + panels.size() * (panel_h + gap) - gap + bottom;

  double xmin = INFINITY, xmax = -INFINITY;
  for (const auto& p : panels)
    for (const auto& s : p.series)
      for (double v : s.x)
        if (std::isfinite(v)) {
          xmin = std::min(xmin, v);
          xmax = std::max(xmax, v);
        }
  auto [x0, x1] = detail::padded_range(xmin, xmax);

  std::string out = fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{:.0f}\" height=\"{:.0f}\" font-family=\"sans-serif\" "
      "font-size=\"11\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      "<text x=\"{:.1f}\" y=\"20\" font-size=\"14\" text-anchor=\"middle\">{}</text>\n",
      width, height, left + plot_w / 2, detail::escape(title));

  for (std::size_t pi = 0; pi < panels.size(); ++pi) {
    const auto& panel = panels[pi];
    const double y_top = top + pi * (panel_h + gap);
    double ymin = INFINITY, ymax = -INFINITY;
    for (const auto& s : panel.series)
      for (double v : s.y)
        if (std::isfinite(v)) {
          ymin = std::min(ymin, v);
          ymax = std::max(ymax, v);
        }
    auto [y0, y1] = detail::padded_range(ymin, ymax);
    auto px = [&](double x) { return left + (x - x0) / (x1 - x0) * plot_w; };
    auto py = [&](double y) { return y_top + panel_h - (y - y0) / (y1 - y0) * panel_h; };

    out += fmt::format("<rect x=\"{:.1f}\" y=\"{:.1f}\" width=\"{:.1f}\" height=\"{:.1f}\" fill=\"none\" "
                       "stroke=\"#444\"/>\n",
                       left, y_top, plot_w, panel_h);
    for (int t = 0; t <= 4; ++t) {
      double yv = y0 + (y1 - y0) * t / 4, xv = x0 + (x1 - x0) * t / 4;
      out += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" text-anchor=\"end\">{:.4g}</text>\n", left - 6,
                         py(yv) + 4, yv);
      out += fmt::format("<line x1=\"{0:.1f}\" x2=\"{0:.1f}\" y1=\"{1:.1f}\" y2=\"{2:.1f}\" stroke=\"#ddd\"/>\n",
                         px(xv), y_top, y_top + panel_h);
      if (pi + 1 == panels.size())
        out += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" text-anchor=\"middle\">{:.4g}</text>\n", px(xv),
                           y_top + panel_h + 16, xv);
    }
    out += fmt::format("<text transform=\"translate({:.1f},{:.1f}) rotate(-90)\" text-anchor=\"middle\">{}</text>\n",
                       left - 55, y_top + panel_h / 2, detail::escape(panel.y_label));

    for (std::size_t si = 0; si < panel.series.size(); ++si) {
      const auto& s = panel.series[si];
      std::string pts;
      for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i)
        if (std::isfinite(s.x[i]) && std::isfinite(s.y[i])) pts += fmt::format("{:.2f},{:.2f} ", px(s.x[i]), py(s.y[i]));
      if (s.line)
        out += fmt::format("<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.6\"{} points=\"{}\"/>\n", s.color,
                           s.dashed ? " stroke-dasharray=\"5,4\"" : "", pts);
      if (s.markers)
        for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i)
          if (std::isfinite(s.x[i]) && std::isfinite(s.y[i]))
            out += fmt::format("<circle cx=\"{:.2f}\" cy=\"{:.2f}\" r=\"2.5\" fill=\"{}\"/>\n", px(s.x[i]),
                               py(s.y[i]), s.color);
      double ly = y_top + 14 + 16 * si;
      out += fmt::format("<line x1=\"{0:.1f}\" x2=\"{1:.1f}\" y1=\"{2:.1f}\" y2=\"{2:.1f}\" stroke=\"{3}\" "
                         "stroke-width=\"2\"{4}/>\n",
                         left + plot_w + 10, left + plot_w + 30, ly, s.color,
                         s.dashed ? " stroke-dasharray=\"5,4\"" : "");
      out += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\">{}</text>\n", left + plot_w + 34, ly + 4,
                         detail::escape(s.label));
    }
  }
  out += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" text-anchor=\"middle\">{}</text>\n", left + plot_w / 2,
                     height - 12, detail::escape(x_label));
  out += "</svg>\n";
  return out;
}

}  // namespace drcc::svg
