#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "avflow/errors.hpp"
#include "avflow/tensor.hpp"

namespace avflow::svg {

// Hand-emitted SVG with fixed formatting and no timestamps, so figures are
// byte-stable across runs.

namespace detail {

inline std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return std::string(buf);
}

inline std::string heat_color(double t) {
    // dark blue -> yellow
    t = std::min(1.0, std::max(0.0, t));
    const int r = static_cast<int>(20 + 235 * t);
    const int g = static_cast<int>(20 + 215 * t);
    const int b = static_cast<int>(80 + 40 * (1.0 - t));
    char buf[16];
    std::snprintf(buf, sizeof(buf), "#%02x%02x%02x", r, g, b);
    return std::string(buf);
}

}  // namespace detail

struct PointSet {
    std::string label;
    std::string color;
    const std::vector<Tensor>* points;  // 2-D tensors
};

// Scatter plot of 2-D point sets on a fixed viewport.
inline void write_scatter(const std::vector<PointSet>& sets, const std::filesystem::path& path, double extent = 3.2) {
    std::ofstream out(path);
    if (!out) throw IoError("svg: cannot open " + path.string());
    const double size = 512.0;
    auto sx = [&](double x) { return (x + extent) / (2.0 * extent) * size; };
    auto sy = [&](double y) { return size - (y + extent) / (2.0 * extent) * size; };
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"512\" height=\"540\" viewBox=\"0 0 512 540\">\n";
    out << "<rect width=\"512\" height=\"540\" fill=\"white\"/>\n";
    double legend_x = 8.0;
    for (const auto& set : sets) {
        for (const auto& p : *set.points) {
            if (p.numel() != 2) throw ContractViolation("svg scatter: points must be 2-D");
            out << "<circle cx=\"" << detail::fmt(sx(p[0])) << "\" cy=\"" << detail::fmt(sy(p[1]))
                << "\" r=\"2\" fill=\"" << set.color << "\" fill-opacity=\"0.6\"/>\n";
        }
        out << "<circle cx=\"" << detail::fmt(legend_x) << "\" cy=\"524\" r=\"4\" fill=\"" << set.color << "\"/>\n";
        out << "<text x=\"" << detail::fmt(legend_x + 8.0) << "\" y=\"528\" font-size=\"12\" font-family=\"monospace\">"
            << set.label << "</text>\n";
        legend_x += 14.0 + 7.2 * static_cast<double>(set.label.size());
    }
    out << "</svg>\n";
    if (!out) throw IoError("svg: write failed");
}

struct HeatPanel {
    std::string label;
    Tensor grid;  // flattened rows x cols
};

// Side-by-side heatmaps sharing one color scale.
inline void write_heatmap_row(const std::vector<HeatPanel>& panels, std::size_t rows, std::size_t cols,
                              const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("svg: cannot open " + path.string());
    double lo = 0.0, hi = 1e-12;
    for (const auto& p : panels) {
        if (p.grid.numel() != rows * cols) throw ContractViolation("svg heatmap: grid size mismatch");
        for (std::size_t i = 0; i < p.grid.numel(); ++i) {
            lo = std::min(lo, p.grid[i]);
            hi = std::max(hi, p.grid[i]);
        }
    }
    const double cell = 12.0;
    const double panel_w = cell * static_cast<double>(cols);
    const double gap = 24.0;
    const double width = (panel_w + gap) * static_cast<double>(panels.size());
    const double height = cell * static_cast<double>(rows) + 36.0;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << detail::fmt(width) << "\" height=\""
        << detail::fmt(height) << "\" viewBox=\"0 0 " << detail::fmt(width) << " " << detail::fmt(height) << "\">\n";
    out << "<rect width=\"" << detail::fmt(width) << "\" height=\"" << detail::fmt(height) << "\" fill=\"white\"/>\n";
    double x0 = 0.0;
    for (const auto& p : panels) {
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) {
                const double v = p.grid[r * cols + c];
                const double t = (v - lo) / (hi - lo);
                out << "<rect x=\"" << detail::fmt(x0 + cell * static_cast<double>(c)) << "\" y=\""
                    << detail::fmt(cell * static_cast<double>(rows - 1 - r)) << "\" width=\"12\" height=\"12\" fill=\""
                    << detail::heat_color(t) << "\"/>\n";
            }
        out << "<text x=\"" << detail::fmt(x0) << "\" y=\"" << detail::fmt(cell * static_cast<double>(rows) + 20.0)
            << "\" font-size=\"13\" font-family=\"monospace\">" << p.label << "</text>\n";
        x0 += panel_w + gap;
    }
    out << "</svg>\n";
    if (!out) throw IoError("svg: write failed");
}

}  // namespace avflow::svg
