#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace bihand {

struct PlotPanel {
  std::string title;
  std::vector<std::vector<double>> series;  // one polyline per entry
};

// Stacked time-series panels sharing one legend, written as standalone SVG.
void write_svg_plot(const std::filesystem::path& path, const std::string& title,
                    const std::vector<PlotPanel>& panels, const std::vector<std::string>& legend);

}  // namespace bihand
