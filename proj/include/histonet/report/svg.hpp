#pragma once

#include <span>
#include <string>
#include <vector>

namespace histonet::report {

/// Grouped bar chart: target and predicted counts per bin, side by side,
/// with bin-edge labels on the x axis. Output depends only on the inputs.
std::string histogram_svg(const std::string& title, std::span<const double> target,
                          std::span<const double> prediction, std::span<const double> edges);

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

/// Line plot with point markers, one colour per series and a legend.
std::string line_plot_svg(const std::string& title, const std::string& x_label,
                          const std::string& y_label, std::span<const Series> series);

/// Escapes &, <, >, " and ' for XML text and attributes.
std::string xml_escape(const std::string& text);

}  // namespace histonet::report
