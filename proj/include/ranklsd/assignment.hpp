#pragma once

// Ground-truth-to-grid assignment: each segment is owned by the feature cell
// containing its centroid, which replaces online bipartite matching.  Cells
// are indexed (ix, iy) with flat index iy*G + ix (row-major like the maps).

#include <cstdint>
#include <vector>

#include "ranklsd/geometry.hpp"

namespace ranklsd {

struct GridAssignment {
    int grid_size = 0;
    std::vector<int> cell_to_gt;          // flat cell -> gt index, -1 when free
    std::vector<int> positives;           // flat cell indices, ascending
    std::vector<int> selected_negatives;  // flat cell indices, ascending
    int collisions = 0;
    int gt_count = 0;
};

// Deterministic and order-independent: on a cell collision the longer
// segment wins, exact length ties go to the canonically smaller segment.
GridAssignment assign_targets(const std::vector<LineSegment>& gts, int grid_size);

// Uniform random subset of the non-positive cells, size
// min(round(ratio * positives), available), but at least one negative
// whenever any cell is free and there is at least one positive.
GridAssignment sample_negatives(GridAssignment a, double ratio, std::uint64_t seed);

struct GatheredTargets {
    std::vector<int> cells;            // ascending flat indices, N± entries
    std::vector<int> labels;           // 1 positive / 0 negative
    std::vector<LineSegment> targets;  // aligned; meaningful only where label==1
    std::vector<int> gt_index;         // aligned; -1 for negatives
};

GatheredTargets gather_targets(const GridAssignment& a, const std::vector<LineSegment>& gts);

}  // namespace ranklsd
