#include "ranklsd/rerank.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "ranklsd/kernels.hpp"

namespace ranklsd {

namespace {

double sample_map(const Tensor& map, double x_norm, double y_norm) {
    const int h = map.dim(0), w = map.dim(1);
    const double pt[2] = {x_norm * w - 0.5, y_norm * h - 0.5};
    double out;
    kernels::bilinear_forward(map.data(), 1, h, w, pt, 1, &out);
    return out;
}

}  // namespace

double endpoint_score(const LineSegment& seg, const Tensor& endpoint_map) {
    if (endpoint_map.rank() != 2) throw std::runtime_error("endpoint_score: map must be [H,W]");
    return (sample_map(endpoint_map, seg.e1.x, seg.e1.y) +
            sample_map(endpoint_map, seg.e2.x, seg.e2.y)) /
           2.0;
}

double edge_score(const LineSegment& seg, const Tensor& edge_map, int m) {
    if (edge_map.rank() != 2) throw std::runtime_error("edge_score: map must be [H,W]");
    if (m < 1) throw std::runtime_error("edge_score: sample count must be >= 1");
    double acc = 0.0;
    for (int k = 1; k <= m; ++k) {
        const double a = static_cast<double>(k) / m;
        acc += sample_map(edge_map, a * seg.e1.x + (1.0 - a) * seg.e2.x,
                          a * seg.e1.y + (1.0 - a) * seg.e2.y);
    }
    return acc / m;
}

double length_score(const LineSegment& seg, double scale) {
    if (scale <= 0.0) throw std::runtime_error("length_score: scale must be > 0");
    return std::log(length(seg) * scale + 1.0);
}

ScoredSegment fuse(const LineSegment& seg, double s_e, double s_d, double s_l, double c,
                   const RerankWeights& w) {
    ScoredSegment out;
    out.seg = seg;
    out.c = c;
    out.s_e = s_e;
    out.s_d = s_d;
    out.s_l = s_l;
    out.s = w.delta_e * s_e + w.delta_d * s_d + w.delta_l * s_l + c;
    return out;
}

std::vector<ScoredSegment> rerank(std::vector<ScoredSegment> candidates, const GeoMaps& maps,
                                  const RerankWeights& w) {
    if (maps.resolution.empty()) throw std::runtime_error("rerank: no map levels");
    const Tensor& m_e = maps.endpoint.front();  // finest level
    const Tensor& m_d = maps.edge.front();
    const double scale = static_cast<double>(maps.resolution.front());
    for (ScoredSegment& cand : candidates) {
        cand = fuse(cand.seg, endpoint_score(cand.seg, m_e),
                    edge_score(cand.seg, m_d, w.samples), length_score(cand.seg, scale),
                    cand.c, w);
    }
    std::sort(candidates.begin(), candidates.end(),
              [](const ScoredSegment& a, const ScoredSegment& b) {
                  if (a.s != b.s) return a.s > b.s;
                  return seg_less(a.seg, b.seg);
              });
    return candidates;
}

}  // namespace ranklsd
