#pragma once

// Grid outputs -> final detections: confidence-floor decoding, geometric
// re-scoring against the model's own predicted maps, greedy duplicate
// suppression, and a fixed-size cap.

#include <vector>

#include "ranklsd/model.hpp"
#include "ranklsd/rerank.hpp"

namespace ranklsd {

struct DetectionConfig {
    int top_k = 500;
    double confidence_floor = 0.01;
    double nms_threshold_px = 2.0;  // at the finest level's pixel scale
};

// one candidate per cell whose confidence clears the floor, in cell order;
// locations are clamped into the unit square and canonicalized, and the
// fused score starts out as the raw confidence
std::vector<ScoredSegment> decode(const ModelOutput& out, double confidence_floor);

// greedy: walk in fused-score order (ties by canonical segment order) and
// drop anything within threshold_px of an already-kept segment
std::vector<ScoredSegment> nms(std::vector<ScoredSegment> dets, double threshold_px,
                               double scale);

std::vector<ScoredSegment> top_k(std::vector<ScoredSegment> dets, int k);

// forward pass (tape-free) -> decode -> rerank against the predicted finest
// maps -> nms -> cap
std::vector<ScoredSegment> detect(const Model& model, const Tensor& image,
                                  const RerankWeights& rw, const DetectionConfig& dc);

// ablation probe: run the heads on one chosen pyramid level and decode at
// its resolution; level 0 is the normal pipeline
std::vector<ScoredSegment> detect_at_level(const Model& model, const Tensor& image,
                                           const RerankWeights& rw, const DetectionConfig& dc,
                                           int level);

}  // namespace ranklsd
