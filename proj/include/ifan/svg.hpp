#pragma once

// Minimal deterministic SVG line plots (no raster dependencies, diffable).

#include <string>
#include <vector>

namespace ifan {

struct PlotSeries {
    std::string label;
    std::vector<std::pair<double, double>> points;
};

std::string svg_line_plot(const std::string& title, const std::string& x_label, const std::string& y_label,
                          const std::vector<PlotSeries>& series);

} // namespace ifan
