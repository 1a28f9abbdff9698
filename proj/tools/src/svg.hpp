#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace deepdgl::cli {

struct Line {
    std::string label;
    std::string color;
    std::vector<double> x;
    std::vector<double> y;
    bool dashed = false;
};

// Static line chart with axes, a legend and an optional vertical marker.
void write_line_chart(const std::filesystem::path& path, const std::string& title, const std::vector<Line>& lines,
                      double marker_x = -1.0);

}  // namespace deepdgl::cli
