#pragma once

// Synthetic wireframe scenes: dark anti-aliased strokes on a light
// background with exact segment annotations.  generate() is a pure function
// of (spec.seed, index).

#include <cstdint>
#include <vector>

#include "ranklsd/geometry.hpp"
#include "ranklsd/rerank.hpp"
#include "ranklsd/tensor.hpp"

namespace ranklsd {

struct SceneSpec {
    std::uint64_t seed = 7;
    int image_size = 64;
    int min_segments = 1;
    int max_segments = 6;
    // scene grammar mixture: axis-aligned boxes ("rooms"), convex polygons,
    // free segments biased toward axis-aligned and diagonal directions
    double weight_box = 0.40;
    double weight_polygon = 0.35;
    double weight_free = 0.25;
    double noise_sigma = 0.02;     // additive pixel noise
    int blur_passes = 0;           // 3x3 box blur repetitions
    double background_lo = 0.85;   // background gradient range
    double background_hi = 1.00;
    double stroke_level = 0.15;    // stroke intensity (dark)
    double min_length_px = 4.0;
};

struct Sample {
    Tensor image;  // [1,H,W] grayscale in [0,1]
    std::vector<LineSegment> gts;
};

Sample generate(const SceneSpec& spec, int index);

// Candidate pool for the oracle experiment: per gt one near-copy (noise up
// to 1 px) plus dup_factor-1 decoys (noise up to noise_px), all with
// uniform-random confidences.  Noise is measured in pixels at the metric
// normalization scale (128).
std::vector<ScoredSegment> perturb_candidates(const std::vector<LineSegment>& gts,
                                              std::uint64_t seed, int dup_factor,
                                              double noise_px);

}  // namespace ranklsd
