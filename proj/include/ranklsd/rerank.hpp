#pragma once

// Posterior re-scoring of candidate segments: endpoint evidence, edge
// evidence, a length prior, and a linear fusion with the raw confidence.
// Works on detached values only; nothing here touches the tape.

#include <vector>

#include "ranklsd/geometry.hpp"
#include "ranklsd/gtmaps.hpp"
#include "ranklsd/tensor.hpp"

namespace ranklsd {

struct RerankWeights {
    double delta_e = 0.5;
    double delta_d = 0.5;
    double delta_l = 0.5;
    int samples = 32;  // m, the edge-score sample count
};

struct ScoredSegment {
    LineSegment seg;
    double c = 0.0;    // raw confidence
    double s_e = 0.0;  // endpoint score
    double s_d = 0.0;  // edge score
    double s_l = 0.0;  // length score
    double s = 0.0;    // fused score
};

// mean of the bilinear samples at the two endpoints
double endpoint_score(const LineSegment& seg, const Tensor& endpoint_map);

// (1/m) Σ_{k=1..m} sample at (k/m) e1 + ((m-k)/m) e2 — the sample set
// includes e1 (k=m) but not e2
double edge_score(const LineSegment& seg, const Tensor& edge_map, int m);

// ln(pixel length + 1)
double length_score(const LineSegment& seg, double scale);

// s = δ_e s_e + δ_d s_d + δ_l s_l + c
ScoredSegment fuse(const LineSegment& seg, double s_e, double s_d, double s_l, double c,
                   const RerankWeights& w);

// Scores every candidate against the finest level of `maps` and returns
// them sorted by fused score descending, ties broken by canonical segment
// order.  Geometry is never altered.
std::vector<ScoredSegment> rerank(std::vector<ScoredSegment> candidates, const GeoMaps& maps,
                                  const RerankWeights& w);

}  // namespace ranklsd
