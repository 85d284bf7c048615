#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "drop/tensor.hpp"

namespace drop {

// ---------------------------------------------------------------------------
// Binary PPM (color, [3,H,W] in [0,1]) and PGM (label masks, [H,W]) files.
// ---------------------------------------------------------------------------

namespace detail {
inline int read_pnm_token(std::istream& in) {
    // skip whitespace and '#' comments, then parse one integer
    int c = in.get();
    while (c != EOF) {
        if (c == '#') {
            while (c != EOF && c != '\n') c = in.get();
        } else if (!std::isspace(c)) {
            break;
        }
        c = in.get();
    }
    check_io(c != EOF, "pnm: truncated header");
    int value = 0;
    bool any = false;
    while (c != EOF && std::isdigit(c)) {
        value = value * 10 + (c - '0');
        any = true;
        c = in.get();
    }
    check_io(any, "pnm: expected integer in header");
    return value;
}
}  // namespace detail

inline void write_ppm(const std::string& path, const Tensor& image) {
    check_config(image.ndim() == 3 && image.dim(0) == 3, "ppm: image must be [3,H,W]");
    const int H = image.dim(1), W = image.dim(2);
    std::ofstream out(path, std::ios::binary);
    check_io(out.good(), "ppm: cannot open for writing: " + path);
    out << "P6\n" << W << " " << H << "\n255\n";
    std::vector<unsigned char> row((size_t)W * 3);
    for (int h = 0; h < H; ++h) {
        for (int w = 0; w < W; ++w)
            for (int c = 0; c < 3; ++c) {
                double v = std::clamp(image.at(c, h, w), 0.0, 1.0);
                row[(size_t)w * 3 + (size_t)c] = (unsigned char)std::lround(v * 255.0);
            }
        out.write(reinterpret_cast<const char*>(row.data()), (std::streamsize)row.size());
    }
    check_io(out.good(), "ppm: write failed: " + path);
}

inline Tensor read_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    check_io(in.good(), "ppm: cannot open: " + path);
    char m0 = (char)in.get(), m1 = (char)in.get();
    check_io(m0 == 'P' && m1 == '6', "ppm: not a P6 file: " + path);
    const int W = detail::read_pnm_token(in);
    const int H = detail::read_pnm_token(in);
    const int maxval = detail::read_pnm_token(in);
    check_io(maxval == 255, "ppm: unsupported maxval");
    Tensor image({3, H, W});
    std::vector<unsigned char> row((size_t)W * 3);
    for (int h = 0; h < H; ++h) {
        in.read(reinterpret_cast<char*>(row.data()), (std::streamsize)row.size());
        check_io(in.gcount() == (std::streamsize)row.size(), "ppm: truncated pixel data");
        for (int w = 0; w < W; ++w)
            for (int c = 0; c < 3; ++c)
                image.at(c, h, w) = row[(size_t)w * 3 + (size_t)c] / 255.0;
    }
    return image;
}

inline void write_pgm(const std::string& path, const Tensor& mask) {
    check_config(mask.ndim() == 2, "pgm: mask must be [H,W]");
    const int H = mask.dim(0), W = mask.dim(1);
    std::ofstream out(path, std::ios::binary);
    check_io(out.good(), "pgm: cannot open for writing: " + path);
    out << "P5\n" << W << " " << H << "\n255\n";
    std::vector<unsigned char> row((size_t)W);
    for (int h = 0; h < H; ++h) {
        for (int w = 0; w < W; ++w) {
            const double v = mask.at(h, w);
            const int label = (int)v;
            check_config(v == (double)label && label >= 0 && label <= 255,
                         "pgm: labels must be integers in [0,255]");
            row[(size_t)w] = (unsigned char)label;
        }
        out.write(reinterpret_cast<const char*>(row.data()), (std::streamsize)row.size());
    }
    check_io(out.good(), "pgm: write failed: " + path);
}

inline Tensor read_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    check_io(in.good(), "pgm: cannot open: " + path);
    char m0 = (char)in.get(), m1 = (char)in.get();
    check_io(m0 == 'P' && m1 == '5', "pgm: not a P5 file: " + path);
    const int W = detail::read_pnm_token(in);
    const int H = detail::read_pnm_token(in);
    const int maxval = detail::read_pnm_token(in);
    check_io(maxval == 255, "pgm: unsupported maxval");
    Tensor mask({H, W});
    std::vector<unsigned char> row((size_t)W);
    for (int h = 0; h < H; ++h) {
        in.read(reinterpret_cast<char*>(row.data()), (std::streamsize)row.size());
        check_io(in.gcount() == (std::streamsize)row.size(), "pgm: truncated pixel data");
        for (int w = 0; w < W; ++w) mask.at(h, w) = (double)row[(size_t)w];
    }
    return mask;
}

// ---------------------------------------------------------------------------
// Minimal SVG line charts for metric curves.
// ---------------------------------------------------------------------------
struct ChartSeries {
    std::string name;
    std::vector<double> x, y;
};

inline void write_line_chart(const std::string& path, const std::string& title,
                             const std::string& x_label, const std::string& y_label,
                             const std::vector<ChartSeries>& series) {
    check_config(!series.empty(), "chart: no series");
    const int W = 640, H = 420, ml = 60, mr = 20, mt = 40, mb = 50;
    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    for (const auto& s : series) {
        check_config(s.x.size() == s.y.size() && !s.x.empty(), "chart: bad series: " + s.name);
        for (double v : s.x) xmin = std::min(xmin, v), xmax = std::max(xmax, v);
        for (double v : s.y) ymin = std::min(ymin, v), ymax = std::max(ymax, v);
    }
    if (xmax == xmin) xmax = xmin + 1.0;
    if (ymax == ymin) ymax = ymin + 1.0;
    const double ypad = 0.05 * (ymax - ymin);
    ymin -= ypad;
    ymax += ypad;
    auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * (W - ml - mr); };
    auto py = [&](double y) { return H - mb - (y - ymin) / (ymax - ymin) * (H - mt - mb); };
    static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                    "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};

    std::ostringstream svg;
    svg << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W << "' height='" << H
        << "' viewBox='0 0 " << W << " " << H << "'>\n"
        << "<rect width='100%' height='100%' fill='white'/>\n"
        << "<text x='" << W / 2 << "' y='24' text-anchor='middle' font-size='16'>" << title
        << "</text>\n";
    // axes
    svg << "<line x1='" << ml << "' y1='" << H - mb << "' x2='" << W - mr << "' y2='" << H - mb
        << "' stroke='black'/>\n"
        << "<line x1='" << ml << "' y1='" << mt << "' x2='" << ml << "' y2='" << H - mb
        << "' stroke='black'/>\n";
    for (int i = 0; i <= 4; ++i) {
        double xv = xmin + (xmax - xmin) * i / 4.0;
        double yv = ymin + (ymax - ymin) * i / 4.0;
        svg << "<text x='" << px(xv) << "' y='" << H - mb + 18
            << "' text-anchor='middle' font-size='11'>" << std::round(xv * 100) / 100
            << "</text>\n"
            << "<text x='" << ml - 8 << "' y='" << py(yv) + 4
            << "' text-anchor='end' font-size='11'>" << std::round(yv * 1000) / 1000
            << "</text>\n";
    }
    svg << "<text x='" << (ml + W - mr) / 2 << "' y='" << H - 12
        << "' text-anchor='middle' font-size='13'>" << x_label << "</text>\n"
        << "<text x='16' y='" << (mt + H - mb) / 2
        << "' text-anchor='middle' font-size='13' transform='rotate(-90 16 "
        << (mt + H - mb) / 2 << ")'>" << y_label << "</text>\n";
    for (size_t si = 0; si < series.size(); ++si) {
        const auto& s = series[si];
        const char* color = palette[si % 8];
        svg << "<polyline fill='none' stroke='" << color << "' stroke-width='2' points='";
        for (size_t i = 0; i < s.x.size(); ++i)
            svg << px(s.x[i]) << "," << py(s.y[i]) << " ";
        svg << "'/>\n";
        svg << "<rect x='" << W - mr - 150 << "' y='" << mt + 18 * (int)si << "' width='12'"
            << " height='12' fill='" << color << "'/>\n"
            << "<text x='" << W - mr - 132 << "' y='" << mt + 18 * (int)si + 10
            << "' font-size='12'>" << s.name << "</text>\n";
    }
    svg << "</svg>\n";
    std::ofstream out(path);
    check_io(out.good(), "chart: cannot open for writing: " + path);
    out << svg.str();
    check_io(out.good(), "chart: write failed: " + path);
}

// ---------------------------------------------------------------------------
// Qualitative ranking strips: query tile followed by ranked gallery tiles,
// each framed green (same identity) or red (other identity); the query gets
// a neutral blue frame.
// ---------------------------------------------------------------------------
inline Tensor compose_ranking_strip(const Tensor& query,
                                    const std::vector<Tensor>& ranked,
                                    const std::vector<bool>& correct) {
    check_config(query.ndim() == 3 && query.dim(0) == 3, "strip: query must be [3,H,W]");
    check_config(ranked.size() == correct.size(), "strip: flag count mismatch");
    const int H = query.dim(1), W = query.dim(2);
    const int border = 2, gap = 4;
    const int tile_w = W + 2 * border, tile_h = H + 2 * border;
    const int n = 1 + (int)ranked.size();
    Tensor strip = Tensor::full({3, tile_h, n * tile_w + (n - 1) * gap}, 1.0);

    auto blit = [&](const Tensor& img, int slot, double br, double bg, double bb) {
        check_config(img.same_shape(query), "strip: tile size mismatch");
        const int x0 = slot * (tile_w + gap);
        for (int h = 0; h < tile_h; ++h)
            for (int w = 0; w < tile_w; ++w) {
                const bool edge = h < border || h >= tile_h - border || w < border ||
                                  w >= tile_w - border;
                if (edge) {
                    strip.at(0, h, x0 + w) = br;
                    strip.at(1, h, x0 + w) = bg;
                    strip.at(2, h, x0 + w) = bb;
                } else {
                    for (int c = 0; c < 3; ++c)
                        strip.at(c, h, x0 + w) = img.at(c, h - border, w - border);
                }
            }
    };
    blit(query, 0, 0.2, 0.4, 0.9);
    for (size_t i = 0; i < ranked.size(); ++i) {
        if (correct[i])
            blit(ranked[i], (int)i + 1, 0.1, 0.8, 0.1);
        else
            blit(ranked[i], (int)i + 1, 0.9, 0.1, 0.1);
    }
    return strip;
}

}  // namespace drop
