#pragma once

#include <string>
#include <utility>
#include <vector>

namespace stancelab {

// Minimal self-contained SVG bar chart (one bar per label, value printed
// above the bar). Values are expected to be non-negative.
std::string render_bar_chart_svg(const std::string& title,
                                 const std::vector<std::pair<std::string, double>>& bars);

void write_bar_chart_svg(const std::string& path, const std::string& title,
                         const std::vector<std::pair<std::string, double>>& bars);

}  // namespace stancelab
