#include "svg.hpp"

#include "deepdgl/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

namespace deepdgl::cli {

namespace {

constexpr double kWidth = 800, kHeight = 400;
constexpr double kLeft = 60, kRight = 20, kTop = 40, kBottom = 40;

std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '&': out += "&amp;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

}  // namespace

void write_line_chart(const std::filesystem::path& path, const std::string& title, const std::vector<Line>& lines,
                      double marker_x) {
    double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
    for (const auto& l : lines) {
        for (double v : l.x) x0 = std::min(x0, v), x1 = std::max(x1, v);
        for (double v : l.y) y0 = std::min(y0, v), y1 = std::max(y1, v);
    }
    if (!(x1 > x0)) x0 -= 1, x1 += 1;
    if (!(y1 > y0)) y0 -= 1, y1 += 1;
    const double pad = 0.05 * (y1 - y0);
    y0 -= pad, y1 += pad;
    const auto px = [&](double x) { return kLeft + (x - x0) / (x1 - x0) * (kWidth - kLeft - kRight); };
    const auto py = [&](double y) { return kHeight - kBottom - (y - y0) / (y1 - y0) * (kHeight - kTop - kBottom); };

    std::ostringstream s;
    s << std::fixed << std::setprecision(2);
    s << R"(<svg xmlns="http://www.w3.org/2000/svg" width=")" << kWidth << R"(" height=")" << kHeight << R"(">)" << '\n';
    s << R"(<rect width="100%" height="100%" fill="white"/>)" << '\n';
    s << R"(<text x=")" << kWidth / 2 << R"(" y="22" text-anchor="middle" font-family="sans-serif" font-size="15">)"
      << escape(title) << "</text>\n";
    s << R"(<g stroke="#444" stroke-width="1">)"
      << R"(<line x1=")" << kLeft << R"(" y1=")" << kHeight - kBottom << R"(" x2=")" << kWidth - kRight << R"(" y2=")"
      << kHeight - kBottom << R"("/>)"
      << R"(<line x1=")" << kLeft << R"(" y1=")" << kTop << R"(" x2=")" << kLeft << R"(" y2=")" << kHeight - kBottom
      << R"("/></g>)" << '\n';
    const auto label = [](double v, int digits) {
        std::ostringstream t;
        t << std::setprecision(digits) << v;
        return t.str();
    };
    for (int i = 0; i <= 4; ++i) {
        const double yv = y0 + (y1 - y0) * i / 4.0, xv = x0 + (x1 - x0) * i / 4.0;
        s << R"(<text x=")" << kLeft - 6 << R"(" y=")" << py(yv) + 4
          << R"(" text-anchor="end" font-family="sans-serif" font-size="11">)" << label(yv, 4) << "</text>\n";
        s << R"(<text x=")" << px(xv) << R"(" y=")" << kHeight - kBottom + 16
          << R"(" text-anchor="middle" font-family="sans-serif" font-size="11">)" << label(std::round(xv), 8)
          << "</text>\n";
    }
    if (marker_x >= x0 && marker_x <= x1) {
        s << R"(<line x1=")" << px(marker_x) << R"(" y1=")" << kTop << R"(" x2=")" << px(marker_x) << R"(" y2=")"
          << kHeight - kBottom << R"(" stroke="#999" stroke-dasharray="2,3"/>)" << '\n';
    }
    for (std::size_t k = 0; k < lines.size(); ++k) {
        const Line& l = lines[k];
        s << R"(<polyline fill="none" stroke=")" << l.color << R"(" stroke-width="1.5")"
          << (l.dashed ? R"( stroke-dasharray="5,3")" : "") << R"( points=")";
        for (std::size_t i = 0; i < std::min(l.x.size(), l.y.size()); ++i) s << px(l.x[i]) << ',' << py(l.y[i]) << ' ';
        s << R"("/>)" << '\n';
        const double ly = kTop + 4 + 16.0 * static_cast<double>(k);
        s << R"(<line x1=")" << kWidth - 150 << R"(" y1=")" << ly << R"(" x2=")" << kWidth - 125 << R"(" y2=")" << ly
          << R"(" stroke=")" << l.color << R"(" stroke-width="2"/>)";
        s << R"(<text x=")" << kWidth - 120 << R"(" y=")" << ly + 4 << R"(" font-family="sans-serif" font-size="12">)"
          << escape(l.label) << "</text>\n";
    }
    s << "</svg>\n";

    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << s.str();
}

}  // namespace deepdgl::cli
