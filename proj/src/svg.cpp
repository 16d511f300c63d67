#include "stancelab/svg.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "stancelab/io_util.hpp"

namespace stancelab {

namespace {

std::string xml_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out.push_back(c);
        }
    }
    return out;
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4g", v);
    return buf;
}

}  // namespace

std::string render_bar_chart_svg(const std::string& title,
                                 const std::vector<std::pair<std::string, double>>& bars) {
    const int width = 640, height = 400;
    const int margin_left = 50, margin_right = 20, margin_top = 50, margin_bottom = 60;
    const int plot_w = width - margin_left - margin_right;
    const int plot_h = height - margin_top - margin_bottom;

    double max_value = 0.0;
    for (const auto& [label, value] : bars) max_value = std::max(max_value, value);
    if (max_value <= 0.0) max_value = 1.0;

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
        << "\" height=\"" << height << "\">\n";
    svg << "<rect width=\"" << width << "\" height=\"" << height
        << "\" fill=\"white\"/>\n";
    svg << "<text x=\"" << width / 2 << "\" y=\"24\" text-anchor=\"middle\" "
        << "font-family=\"sans-serif\" font-size=\"16\">" << xml_escape(title)
        << "</text>\n";
    // axes
    svg << "<line x1=\"" << margin_left << "\" y1=\"" << margin_top << "\" x2=\""
        << margin_left << "\" y2=\"" << margin_top + plot_h
        << "\" stroke=\"black\"/>\n";
    svg << "<line x1=\"" << margin_left << "\" y1=\"" << margin_top + plot_h
        << "\" x2=\"" << margin_left + plot_w << "\" y2=\"" << margin_top + plot_h
        << "\" stroke=\"black\"/>\n";
    svg << "<text x=\"" << margin_left - 8 << "\" y=\"" << margin_top + 4
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">"
        << fmt(max_value) << "</text>\n";
    svg << "<text x=\"" << margin_left - 8 << "\" y=\"" << margin_top + plot_h + 4
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">0"
        << "</text>\n";

    if (!bars.empty()) {
        const double slot = static_cast<double>(plot_w) / static_cast<double>(bars.size());
        const double bar_w = slot * 0.6;
        for (std::size_t i = 0; i < bars.size(); ++i) {
            const auto& [label, value] = bars[i];
            const double h = plot_h * (value / max_value);
            const double x = margin_left + slot * static_cast<double>(i) + (slot - bar_w) / 2;
            const double y = margin_top + plot_h - h;
            svg << "<rect x=\"" << fmt(x) << "\" y=\"" << fmt(y) << "\" width=\""
                << fmt(bar_w) << "\" height=\"" << fmt(h)
                << "\" fill=\"#4878a8\"/>\n";
            svg << "<text x=\"" << fmt(x + bar_w / 2) << "\" y=\"" << fmt(y - 5)
                << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
                << "font-size=\"11\">" << fmt(value) << "</text>\n";
            svg << "<text x=\"" << fmt(x + bar_w / 2) << "\" y=\""
                << margin_top + plot_h + 18
                << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
                << "font-size=\"12\">" << xml_escape(label) << "</text>\n";
        }
    }
    svg << "</svg>\n";
    return svg.str();
}

void write_bar_chart_svg(const std::string& path, const std::string& title,
                         const std::vector<std::pair<std::string, double>>& bars) {
    write_file(path, render_bar_chart_svg(title, bars));
}

}  // namespace stancelab
