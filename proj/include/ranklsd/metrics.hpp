#pragma once

// Evaluation protocol: structural AP and F-score under greedy one-to-one
// matching by summed squared endpoint distance at 128-pixel normalization,
// ranked globally across the evaluation set.

#include <utility>
#include <vector>

#include "ranklsd/geometry.hpp"
#include "ranklsd/rerank.hpp"

namespace ranklsd {

inline constexpr double kMetricScale = 128.0;

// Greedy in rank order: a prediction is a true positive when its
// segment_sqdist to some still-unmatched gt is <= theta.  Returns one 0/1
// flag per prediction.  Errors if preds are not sorted by s descending.
std::vector<int> match_ranked(const std::vector<ScoredSegment>& preds,
                              const std::vector<LineSegment>& gts, double theta,
                              double scale = kMetricScale);

struct PRPoint {
    double cutoff = 0.0;
    double precision = 0.0;
    double recall = 0.0;
};

// Area under the continuously interpolated precision-recall curve, with all
// images' predictions ranked together by score.  Errors when the gt set is
// empty.  When `curve` is given it receives one point per recall step.
double sap(const std::vector<std::vector<ScoredSegment>>& preds,
           const std::vector<std::vector<LineSegment>>& gts, double theta,
           double scale = kMetricScale, std::vector<PRPoint>* curve = nullptr);

// max over score cutoffs of the harmonic precision/recall mean
double sf(const std::vector<std::vector<ScoredSegment>>& preds,
          const std::vector<std::vector<LineSegment>>& gts, double theta,
          double scale = kMetricScale);

// Same candidates scored two ways: (before) ordered by raw confidence,
// (after) re-ranked against maps rasterized from the ground truth.
std::pair<double, double> oracle_rerank_experiment(
    const std::vector<std::vector<ScoredSegment>>& pools,
    const std::vector<std::vector<LineSegment>>& gts, const RerankWeights& w,
    int map_resolution, double sigma_px, double theta);

}  // namespace ranklsd
