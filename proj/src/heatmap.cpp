#include "ctree/heatmap.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include <json.hpp>

namespace ctree {

std::string consistency_matrix_json(const ConsistencyMatrix& m) {
    nlohmann::json rows = nlohmann::json::array();
    const std::size_t n = m.labels.size();
    for (std::size_t i = 0; i < n; ++i) {
        rows.push_back(std::vector<double>(m.scores.begin() + static_cast<std::ptrdiff_t>(i * n),
                                           m.scores.begin() + static_cast<std::ptrdiff_t>((i + 1) * n)));
    }
    return nlohmann::json{{"labels", m.labels}, {"scores", rows}}.dump(2);
}

namespace {

std::string escape(const std::string& s) {
    std::string out;
    for (const char c : s) {
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

// white at 0, deep red at 1, blue below 0
std::string colour(double v) {
    v = std::clamp(v, -1.0, 1.0);
    int r = 255;
    int g = 255;
    int b = 255;
    if (v >= 0) {
        g = b = static_cast<int>(std::lround(255 * (1.0 - v)));
        r = static_cast<int>(std::lround(255 - 75 * v));
    } else {
        r = g = static_cast<int>(std::lround(255 * (1.0 + v)));
    }
    char buf[8];
    std::snprintf(buf, sizeof buf, "#%02x%02x%02x", r, g, b);
    return buf;
}

}  // namespace

std::string render_heatmap_svg(const ConsistencyMatrix& m) {
    const std::size_t n = m.labels.size();
    const int cell = 56;
    const int margin = 110;
    const int size = margin + static_cast<int>(n) * cell + 10;
    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size << "\" height=\"" << size
       << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    for (std::size_t i = 0; i < n; ++i) {
        const int pos = margin + static_cast<int>(i) * cell + cell / 2;
        os << "  <text x=\"" << margin - 6 << "\" y=\"" << pos + 4 << "\" text-anchor=\"end\">"
           << escape(m.labels[i]) << "</text>\n";
        os << "  <text x=\"" << pos << "\" y=\"" << margin - 6 << "\" text-anchor=\"middle\">"
           << escape(m.labels[i]) << "</text>\n";
    }
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            const double v = m.at(i, j);
            const int x = margin + static_cast<int>(j) * cell;
            const int y = margin + static_cast<int>(i) * cell;
            char label[16];
            std::snprintf(label, sizeof label, "%.2f", v);
            os << "  <rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << cell << "\" height=\"" << cell
               << "\" fill=\"" << colour(v) << "\" stroke=\"#888\"/>\n";
            os << "  <text x=\"" << x + cell / 2 << "\" y=\"" << y + cell / 2 + 4
               << "\" text-anchor=\"middle\"" << (v > 0.6 ? " fill=\"#fff\"" : "") << ">" << label
               << "</text>\n";
        }
    }
    os << "</svg>\n";
    return os.str();
}

}  // namespace ctree
