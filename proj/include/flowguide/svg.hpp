#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "flowguide/config.hpp"
#include "flowguide/io.hpp"
#include "flowguide/tensor.hpp"

namespace flowguide {

namespace detail {

inline const std::vector<std::string>& svg_palette() {
    static const std::vector<std::string> colors = {
        "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
        "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
    return colors;
}

inline std::string svg_color(long long label) {
    const auto& p = svg_palette();
    const long long n = static_cast<long long>(p.size());
    return p[static_cast<std::size_t>(((label % n) + n) % n)];
}

struct SvgFrame {
    double x_min, x_max, y_min, y_max;
    static constexpr double width = 640.0, height = 480.0, margin = 40.0;

    double px(double x) const {
        return margin + (x - x_min) / (x_max - x_min) * (width - 2 * margin);
    }
    double py(double y) const {
        return height - margin - (y - y_min) / (y_max - y_min) * (height - 2 * margin);
    }
};

inline SvgFrame fit_frame(const std::vector<double>& xs, const std::vector<double>& ys) {
    SvgFrame f{-1.0, 1.0, -1.0, 1.0};
    if (!xs.empty()) {
        f.x_min = *std::min_element(xs.begin(), xs.end());
        f.x_max = *std::max_element(xs.begin(), xs.end());
        f.y_min = *std::min_element(ys.begin(), ys.end());
        f.y_max = *std::max_element(ys.begin(), ys.end());
        const double px = std::max(1e-9, (f.x_max - f.x_min) * 0.05 + 1e-12);
        const double py = std::max(1e-9, (f.y_max - f.y_min) * 0.05 + 1e-12);
        f.x_min -= px;
        f.x_max += px;
        f.y_min -= py;
        f.y_max += py;
    }
    return f;
}

inline void svg_header(std::ostringstream& os) {
    os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
       << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"480\" "
          "viewBox=\"0 0 640 480\">\n"
       << "<rect x=\"0\" y=\"0\" width=\"640\" height=\"480\" fill=\"white\"/>\n";
}

inline void svg_axes(std::ostringstream& os, const SvgFrame& f) {
    os << "<rect x=\"" << SvgFrame::margin << "\" y=\"" << SvgFrame::margin << "\" width=\""
       << SvgFrame::width - 2 * SvgFrame::margin << "\" height=\""
       << SvgFrame::height - 2 * SvgFrame::margin
       << "\" fill=\"none\" stroke=\"#444444\" stroke-width=\"1\"/>\n";
    os << "<text x=\"" << SvgFrame::margin << "\" y=\"" << SvgFrame::height - 12
       << "\" font-size=\"11\" fill=\"#444444\">" << format_double(f.x_min) << " .. "
       << format_double(f.x_max) << "</text>\n";
    os << "<text x=\"8\" y=\"" << SvgFrame::margin - 8 << "\" font-size=\"11\" fill=\"#444444\">"
       << format_double(f.y_min) << " .. " << format_double(f.y_max) << "</text>\n";
}

inline void write_svg(const std::string& path, const std::string& body) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write svg file: " + path);
    out << body;
    if (!out) throw std::runtime_error("failed writing svg file: " + path);
}

}  // namespace detail

// Scatter plot colored deterministically by label. An empty point set yields
// a valid chart with axes only.
inline void emit_scatter_svg(const std::string& path,
                             const std::vector<std::array<double, 2>>& points,
                             const std::vector<long long>& labels) {
    if (labels.size() != points.size())
        throw std::runtime_error("emit_scatter_svg: label count mismatch");
    std::vector<double> xs, ys;
    for (const auto& p : points) {
        if (!std::isfinite(p[0]) || !std::isfinite(p[1]))
            throw std::runtime_error("emit_scatter_svg: non-finite coordinates");
        xs.push_back(p[0]);
        ys.push_back(p[1]);
    }
    detail::SvgFrame f = detail::fit_frame(xs, ys);
    std::ostringstream os;
    detail::svg_header(os);
    detail::svg_axes(os, f);
    for (std::size_t i = 0; i < points.size(); ++i)
        os << "<circle cx=\"" << format_double(f.px(xs[i])) << "\" cy=\""
           << format_double(f.py(ys[i])) << "\" r=\"2.5\" fill=\"" << detail::svg_color(labels[i])
           << "\" fill-opacity=\"0.8\"/>\n";
    os << "</svg>\n";
    detail::write_svg(path, os.str());
}

inline void emit_scatter_svg(const std::string& path, const Tensor& points,
                             const std::vector<long long>& labels) {
    if (points.rank() != 2 || points.shape()[1] != 2)
        throw std::runtime_error("emit_scatter_svg: need [Nx2] points");
    std::vector<std::array<double, 2>> pts;
    for (std::size_t i = 0; i < points.shape()[0]; ++i)
        pts.push_back({points(i, 0), points(i, 1)});
    emit_scatter_svg(path, pts, labels);
}

// Line chart of selected metric columns against the first column (iteration).
inline void emit_line_chart_svg(const std::string& path, const CsvTable& table,
                                const std::vector<std::string>& columns) {
    if (columns.empty()) throw std::runtime_error("emit_line_chart_svg: no columns selected");
    const std::size_t xcol = 0;
    std::vector<std::size_t> cols;
    for (const auto& name : columns) cols.push_back(table.column(name));

    std::vector<double> xs, ys;
    for (const auto& row : table.rows) {
        xs.push_back(row[xcol]);
        for (std::size_t c : cols)
            if (std::isfinite(row[c])) ys.push_back(row[c]);
    }
    detail::SvgFrame f = detail::fit_frame(xs, ys.empty() ? xs : ys);
    if (!xs.empty()) {
        f.x_min = *std::min_element(xs.begin(), xs.end());
        f.x_max = *std::max_element(xs.begin(), xs.end());
        if (f.x_max == f.x_min) f.x_max = f.x_min + 1.0;
    }

    std::ostringstream os;
    detail::svg_header(os);
    detail::svg_axes(os, f);
    for (std::size_t s = 0; s < cols.size(); ++s) {
        os << "<polyline fill=\"none\" stroke=\"" << detail::svg_color(static_cast<long long>(s))
           << "\" stroke-width=\"1.5\" points=\"";
        for (const auto& row : table.rows) {
            if (!std::isfinite(row[cols[s]])) continue;
            os << format_double(f.px(row[xcol])) << "," << format_double(f.py(row[cols[s]])) << " ";
        }
        os << "\"/>\n";
        os << "<text x=\"" << detail::SvgFrame::width - detail::SvgFrame::margin - 110 << "\" y=\""
           << detail::SvgFrame::margin + 16 + 14 * static_cast<double>(s)
           << "\" font-size=\"11\" fill=\"" << detail::svg_color(static_cast<long long>(s)) << "\">"
           << columns[s] << "</text>\n";
    }
    os << "</svg>\n";
    detail::write_svg(path, os.str());
}

}  // namespace flowguide
