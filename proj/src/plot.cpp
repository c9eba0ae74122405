#include "bihand/plot.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace bihand {

namespace {

constexpr double kWidth = 720.0;
constexpr double kPanelHeight = 160.0;
constexpr double kMargin = 48.0;
constexpr double kTitleHeight = 32.0;
constexpr double kLegendRow = 16.0;

const char* color(std::size_t i) {
  static const char* palette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                  "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  return palette[i % (sizeof(palette) / sizeof(palette[0]))];
}

std::string escape(const std::string& s) {
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

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

}  // namespace

void write_svg_plot(const std::filesystem::path& path, const std::string& title,
                    const std::vector<PlotPanel>& panels, const std::vector<std::string>& legend) {
  const double legend_height = kLegendRow * static_cast<double>(legend.size());
  const double height = kTitleHeight + static_cast<double>(panels.size()) * (kPanelHeight + kMargin) +
                        legend_height + kMargin / 2;
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << fmt(height)
      << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"" << kWidth / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">"
      << escape(title) << "</text>\n";

  const double plot_w = kWidth - 2 * kMargin;
  for (std::size_t p = 0; p < panels.size(); ++p) {
    const PlotPanel& panel = panels[p];
    const double top = kTitleHeight + static_cast<double>(p) * (kPanelHeight + kMargin) + kMargin / 2;
    double lo = 0.0, hi = 0.0;
    std::size_t len = 0;
    bool first = true;
    for (const auto& s : panel.series) {
      len = std::max(len, s.size());
      for (double v : s) {
        lo = first ? v : std::min(lo, v);
        hi = first ? v : std::max(hi, v);
        first = false;
      }
    }
    if (hi - lo < 1e-12) {
      lo -= 0.5;
      hi += 0.5;
    }
    svg << "<text x=\"" << kMargin << "\" y=\"" << fmt(top - 6) << "\">" << escape(panel.title)
        << "</text>\n";
    svg << "<rect x=\"" << kMargin << "\" y=\"" << fmt(top) << "\" width=\"" << plot_w
        << "\" height=\"" << kPanelHeight << "\" fill=\"none\" stroke=\"#999\"/>\n";
    svg << "<text x=\"" << kMargin - 4 << "\" y=\"" << fmt(top + 10) << "\" text-anchor=\"end\">"
        << fmt(hi) << "</text>\n";
    svg << "<text x=\"" << kMargin - 4 << "\" y=\"" << fmt(top + kPanelHeight)
        << "\" text-anchor=\"end\">" << fmt(lo) << "</text>\n";
    const double dx = len > 1 ? plot_w / static_cast<double>(len - 1) : 0.0;
    for (std::size_t s = 0; s < panel.series.size(); ++s) {
      svg << "<polyline fill=\"none\" stroke-width=\"1.2\" stroke=\"" << color(s) << "\" points=\"";
      for (std::size_t t = 0; t < panel.series[s].size(); ++t) {
        const double x = kMargin + dx * static_cast<double>(t);
        const double y = top + kPanelHeight * (hi - panel.series[s][t]) / (hi - lo);
        svg << fmt(x) << "," << fmt(y) << " ";
      }
      svg << "\"/>\n";
    }
  }

  const double legend_top = kTitleHeight + static_cast<double>(panels.size()) * (kPanelHeight + kMargin);
  for (std::size_t i = 0; i < legend.size(); ++i) {
    const double y = legend_top + kLegendRow * static_cast<double>(i);
    svg << "<line x1=\"" << kMargin << "\" y1=\"" << fmt(y) << "\" x2=\"" << kMargin + 20 << "\" y2=\""
        << fmt(y) << "\" stroke=\"" << color(i) << "\" stroke-width=\"2\"/>\n";
    svg << "<text x=\"" << kMargin + 26 << "\" y=\"" << fmt(y + 4) << "\">" << escape(legend[i])
        << "</text>\n";
  }
  svg << "</svg>\n";

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write plot '" + path.string() + "'");
  out << svg.str();
}

}  // namespace bihand
