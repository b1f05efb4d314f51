#include "ranklsd/gtmaps.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ranklsd {

namespace {

void splat(double* m, int res, double x, double y) {
    const int x0 = static_cast<int>(std::floor(x));
    const int y0 = static_cast<int>(std::floor(y));
    const double fx = x - x0;
    const double fy = y - y0;
    const auto add = [&](int yy, int xx, double w) {
        if (yy >= 0 && yy < res && xx >= 0 && xx < res) {
            m[static_cast<std::ptrdiff_t>(yy) * res + xx] += w;
        }
    };
    add(y0, x0, (1.0 - fy) * (1.0 - fx));
    add(y0, x0 + 1, (1.0 - fy) * fx);
    add(y0 + 1, x0, fy * (1.0 - fx));
    add(y0 + 1, x0 + 1, fy * fx);
}

}  // namespace

Tensor rasterize_edge_map(const std::vector<LineSegment>& gts, int resolution) {
    if (resolution < 2) throw std::runtime_error("rasterize_edge_map: resolution must be >= 2");
    Tensor out({resolution, resolution});
    std::vector<double> trace(static_cast<std::size_t>(resolution) * resolution);
    for (const LineSegment& raw : gts) {
        // canonical endpoint order keeps the sample walk (and its rounding)
        // independent of how the segment happens to be stored
        const LineSegment s = raw.canonicalized();
        std::fill(trace.begin(), trace.end(), 0.0);
        const double x1 = s.e1.x * resolution - 0.5, y1 = s.e1.y * resolution - 0.5;
        const double x2 = s.e2.x * resolution - 0.5, y2 = s.e2.y * resolution - 0.5;
        const double len = std::hypot(x2 - x1, y2 - y1);
        const int n = std::max(2, static_cast<int>(std::ceil(2.0 * len)) + 1);
        for (int k = 0; k < n; ++k) {
            const double t = static_cast<double>(k) / (n - 1);
            splat(trace.data(), resolution, x1 + t * (x2 - x1), y1 + t * (y2 - y1));
        }
        double* o = out.data();
        for (std::size_t i = 0; i < trace.size(); ++i) {
            o[i] = std::max(o[i], std::min(trace[i], 1.0));
        }
    }
    return out;
}

Tensor rasterize_endpoint_map(const std::vector<LineSegment>& gts, int resolution,
                              double sigma_px) {
    if (sigma_px <= 0.0) throw std::runtime_error("rasterize_endpoint_map: sigma must be > 0");
    Tensor out({resolution, resolution});
    double* o = out.data();
    const double inv = 1.0 / (2.0 * sigma_px * sigma_px);
    const int reach = static_cast<int>(std::ceil(6.0 * sigma_px)) + 1;
    const auto stamp = [&](const Point& p) {
        const double px = p.x * resolution - 0.5, py = p.y * resolution - 0.5;
        const int xa = std::max(0, static_cast<int>(std::floor(px)) - reach);
        const int xb = std::min(resolution - 1, static_cast<int>(std::ceil(px)) + reach);
        const int ya = std::max(0, static_cast<int>(std::floor(py)) - reach);
        const int yb = std::min(resolution - 1, static_cast<int>(std::ceil(py)) + reach);
        for (int iy = ya; iy <= yb; ++iy) {
            for (int ix = xa; ix <= xb; ++ix) {
                const double d2 = (ix - px) * (ix - px) + (iy - py) * (iy - py);
                double& cell = o[static_cast<std::ptrdiff_t>(iy) * resolution + ix];
                cell = std::max(cell, std::exp(-d2 * inv));
            }
        }
    };
    for (const LineSegment& s : gts) {
        stamp(s.e1);
        stamp(s.e2);
    }
    return out;
}

GeoMaps rasterize_geo_maps(const std::vector<LineSegment>& gts,
                           const std::vector<int>& resolutions, double sigma_px) {
    GeoMaps maps;
    int prev = 0;
    for (std::size_t i = 0; i < resolutions.size(); ++i) {
        const int r = resolutions[i];
        if (i > 0 && r >= prev) {
            throw std::runtime_error("rasterize_geo_maps: resolutions must strictly decrease");
        }
        prev = r;
        maps.edge.push_back(rasterize_edge_map(gts, r));
        maps.endpoint.push_back(rasterize_endpoint_map(gts, r, sigma_px));
        maps.resolution.push_back(r);
    }
    return maps;
}

}  // namespace ranklsd
