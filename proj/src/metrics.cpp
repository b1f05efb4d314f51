#include "ranklsd/metrics.hpp"

#include <algorithm>
#include <stdexcept>

#include "ranklsd/gtmaps.hpp"

namespace ranklsd {

std::vector<int> match_ranked(const std::vector<ScoredSegment>& preds,
                              const std::vector<LineSegment>& gts, double theta,
                              double scale) {
    for (std::size_t i = 1; i < preds.size(); ++i) {
        if (preds[i - 1].s < preds[i].s) {
            throw std::runtime_error("match_ranked: predictions not sorted by score");
        }
    }
    std::vector<int> tp(preds.size(), 0);
    std::vector<char> taken(gts.size(), 0);
    for (std::size_t i = 0; i < preds.size(); ++i) {
        int best = -1;
        double best_d = theta;
        for (std::size_t j = 0; j < gts.size(); ++j) {
            if (taken[j]) continue;
            const double d = segment_sqdist(preds[i].seg, gts[j], scale);
            if (d <= best_d) {  // <= so a hit exactly at theta counts
                best_d = d;
                best = static_cast<int>(j);
            }
        }
        if (best >= 0) {
            taken[static_cast<std::size_t>(best)] = 1;
            tp[i] = 1;
        }
    }
    return tp;
}

namespace {

struct RankedEntry {
    double score;
    int tp;
};

// Matches per image, then pools everything into one global ranking.
// Returns the pooled sweep (sorted by score descending, ties kept in
// image/rank order) plus the total gt count.
std::pair<std::vector<RankedEntry>, std::int64_t> pooled_sweep(
    const std::vector<std::vector<ScoredSegment>>& preds,
    const std::vector<std::vector<LineSegment>>& gts, double theta, double scale) {
    if (preds.size() != gts.size()) {
        throw std::runtime_error("metrics: prediction/gt image counts differ");
    }
    std::int64_t gt_total = 0;
    for (const auto& g : gts) gt_total += static_cast<std::int64_t>(g.size());
    if (gt_total == 0) throw std::runtime_error("metrics: no ground truth in the set");

    std::vector<RankedEntry> pool;
    for (std::size_t img = 0; img < preds.size(); ++img) {
        std::vector<ScoredSegment> ranked = preds[img];
        std::sort(ranked.begin(), ranked.end(),
                  [](const ScoredSegment& a, const ScoredSegment& b) {
                      if (a.s != b.s) return a.s > b.s;
                      return seg_less(a.seg, b.seg);
                  });
        const std::vector<int> tp = match_ranked(ranked, gts[img], theta, scale);
        for (std::size_t i = 0; i < ranked.size(); ++i) {
            pool.push_back({ranked[i].s, tp[i]});
        }
    }
    std::stable_sort(pool.begin(), pool.end(),
                     [](const RankedEntry& a, const RankedEntry& b) { return a.score > b.score; });
    return {std::move(pool), gt_total};
}

}  // namespace

double sap(const std::vector<std::vector<ScoredSegment>>& preds,
           const std::vector<std::vector<LineSegment>>& gts, double theta, double scale,
           std::vector<PRPoint>* curve) {
    auto [pool, gt_total] = pooled_sweep(preds, gts, theta, scale);
    if (curve) curve->clear();
    if (pool.empty()) return 0.0;

    const std::size_t n = pool.size();
    std::vector<double> precision(n);
    std::int64_t cum_tp = 0;
    for (std::size_t k = 0; k < n; ++k) {
        cum_tp += pool[k].tp;
        precision[k] = static_cast<double>(cum_tp) / static_cast<double>(k + 1);
    }
    // continuous interpolation: precision at recall r is the max precision
    // at any rank from that recall onward
    std::vector<double> interp(n);
    double running = 0.0;
    for (std::size_t k = n; k-- > 0;) {
        running = std::max(running, precision[k]);
        interp[k] = running;
    }
    double ap = 0.0;
    cum_tp = 0;
    for (std::size_t k = 0; k < n; ++k) {
        if (!pool[k].tp) continue;
        ++cum_tp;
        ap += interp[k] / static_cast<double>(gt_total);
        if (curve) {
            curve->push_back({pool[k].score, precision[k],
                              static_cast<double>(cum_tp) / static_cast<double>(gt_total)});
        }
    }
    return ap;
}

double sf(const std::vector<std::vector<ScoredSegment>>& preds,
          const std::vector<std::vector<LineSegment>>& gts, double theta, double scale) {
    auto [pool, gt_total] = pooled_sweep(preds, gts, theta, scale);
    double best = 0.0;
    std::int64_t cum_tp = 0;
    for (std::size_t k = 0; k < pool.size(); ++k) {
        cum_tp += pool[k].tp;
        if (cum_tp == 0) continue;
        const double p = static_cast<double>(cum_tp) / static_cast<double>(k + 1);
        const double r = static_cast<double>(cum_tp) / static_cast<double>(gt_total);
        best = std::max(best, 2.0 * p * r / (p + r));
    }
    return best;
}

std::pair<double, double> oracle_rerank_experiment(
    const std::vector<std::vector<ScoredSegment>>& pools,
    const std::vector<std::vector<LineSegment>>& gts, const RerankWeights& w,
    int map_resolution, double sigma_px, double theta) {
    std::vector<std::vector<ScoredSegment>> by_conf(pools.size());
    std::vector<std::vector<ScoredSegment>> by_rerank(pools.size());
    for (std::size_t img = 0; img < pools.size(); ++img) {
        by_conf[img] = pools[img];
        for (ScoredSegment& cand : by_conf[img]) cand.s = cand.c;
        const GeoMaps maps = rasterize_geo_maps(gts[img], {map_resolution}, sigma_px);
        by_rerank[img] = rerank(pools[img], maps, w);
    }
    return {sap(by_conf, gts, theta), sap(by_rerank, gts, theta)};
}

}  // namespace ranklsd
