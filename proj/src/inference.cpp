#include "ranklsd/inference.hpp"

#include <algorithm>

namespace ranklsd {

std::vector<ScoredSegment> decode(const ModelOutput& out, double confidence_floor) {
    if (!out.score.defined() || out.score.rank() != 2 || !out.loc.defined() ||
        out.loc.rank() != 3 || out.loc.dim(2) != 4 || out.loc.dim(0) != out.score.dim(0) ||
        out.loc.dim(1) != out.score.dim(1))
        throw TensorError("decode: malformed model output");
    const int g = out.score.dim(0);
    const double* sc = out.score.data();
    const double* lc = out.loc.data();
    std::vector<ScoredSegment> dets;
    for (int i = 0; i < g * g; ++i) {
        const double c = sc[i];
        if (c < confidence_floor) continue;
        const double* l = lc + static_cast<std::int64_t>(i) * 4;
        ScoredSegment d;
        d.seg = LineSegment(l[0], l[1], l[2], l[3]).canonicalized();
        d.c = c;
        d.s = c;
        dets.push_back(d);
    }
    return dets;
}

namespace {

bool score_order(const ScoredSegment& a, const ScoredSegment& b) {
    if (a.s != b.s) return a.s > b.s;
    return seg_less(a.seg, b.seg);
}

}  // namespace

std::vector<ScoredSegment> nms(std::vector<ScoredSegment> dets, double threshold_px,
                               double scale) {
    std::sort(dets.begin(), dets.end(), score_order);
    std::vector<ScoredSegment> kept;
    for (const auto& d : dets) {
        bool dup = false;
        for (const auto& k : kept)
            if (segment_distance(d.seg, k.seg, scale) <= threshold_px) {
                dup = true;
                break;
            }
        if (!dup) kept.push_back(d);
    }
    return kept;
}

std::vector<ScoredSegment> top_k(std::vector<ScoredSegment> dets, int k) {
    std::sort(dets.begin(), dets.end(), score_order);
    if (static_cast<int>(dets.size()) > k) dets.resize(static_cast<std::size_t>(k));
    return dets;
}

std::vector<ScoredSegment> detect_at_level(const Model& model, const Tensor& image,
                                           const RerankWeights& rw, const DetectionConfig& dc,
                                           int level) {
    std::vector<Tensor> features = model.encode(model.merged_backbone(image));
    if (level < 0 || level >= static_cast<int>(features.size()))
        throw TensorError("detect: no such pyramid level");
    ModelOutput out = model.heads_forward({features[static_cast<std::size_t>(level)]});
    const int res = out.score.dim(0);

    std::vector<ScoredSegment> dets = decode(out, dc.confidence_floor);

    // rescore against the model's own beliefs about junctions and edges
    GeoMaps maps;
    maps.edge.push_back(out.edge.front().detach());
    maps.endpoint.push_back(out.junction.front().detach());
    maps.resolution.push_back(res);
    dets = rerank(std::move(dets), maps, rw);

    dets = nms(std::move(dets), dc.nms_threshold_px, res);
    return top_k(std::move(dets), dc.top_k);
}

std::vector<ScoredSegment> detect(const Model& model, const Tensor& image,
                                  const RerankWeights& rw, const DetectionConfig& dc) {
    return detect_at_level(model, image, rw, dc, 0);
}

}  // namespace ranklsd
