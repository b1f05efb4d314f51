#pragma once

// Ground-truth rasterizers: anti-aliased edge maps and Gaussian endpoint
// maps at each pyramid resolution.  These are the supervision targets for
// the map heads and the inputs of the oracle re-ranking experiment.

#include <vector>

#include "ranklsd/geometry.hpp"
#include "ranklsd/tensor.hpp"

namespace ranklsd {

// Each segment is traced with unit-weight bilinear splats at <= 0.5 px arc
// spacing (endpoints included), per-pixel sums clamped to 1; segments are
// combined by max.  A sample landing exactly on a pixel center therefore
// leaves value 1.0 there.
Tensor rasterize_edge_map(const std::vector<LineSegment>& gts, int resolution);

// Unnormalized Gaussian exp(-d^2 / (2 sigma^2)) per endpoint, max-combined;
// sigma in pixels at this resolution.
Tensor rasterize_endpoint_map(const std::vector<LineSegment>& gts, int resolution,
                              double sigma_px);

struct GeoMaps {
    std::vector<Tensor> edge;      // per level, [r,r]
    std::vector<Tensor> endpoint;  // per level, [r,r]
    std::vector<int> resolution;   // strictly decreasing
};

GeoMaps rasterize_geo_maps(const std::vector<LineSegment>& gts,
                           const std::vector<int>& resolutions, double sigma_px);

}  // namespace ranklsd
