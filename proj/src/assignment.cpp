#include "ranklsd/assignment.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "ranklsd/rng.hpp"

namespace ranklsd {

namespace {

int cell_of(double coord, int g) {
    int c = static_cast<int>(std::floor(coord * g));
    if (c < 0) c = 0;
    if (c >= g) c = g - 1;
    return c;
}

// collision winner: longer segment, then canonical order
bool beats(const LineSegment& challenger, const LineSegment& holder) {
    const double lc = length(challenger), lh = length(holder);
    if (lc != lh) return lc > lh;
    return seg_less(challenger, holder);
}

}  // namespace

GridAssignment assign_targets(const std::vector<LineSegment>& gts, int grid_size) {
    if (grid_size < 1) throw std::runtime_error("assign_targets: grid size must be >= 1");
    GridAssignment a;
    a.grid_size = grid_size;
    a.gt_count = static_cast<int>(gts.size());
    a.cell_to_gt.assign(static_cast<std::size_t>(grid_size) * grid_size, -1);
    for (int gi = 0; gi < static_cast<int>(gts.size()); ++gi) {
        const Point c = centroid(gts[static_cast<std::size_t>(gi)]);
        const int ix = cell_of(c.x, grid_size);
        const int iy = cell_of(c.y, grid_size);
        const int flat = iy * grid_size + ix;
        int& slot = a.cell_to_gt[static_cast<std::size_t>(flat)];
        if (slot < 0) {
            slot = gi;
        } else {
            ++a.collisions;
            if (beats(gts[static_cast<std::size_t>(gi)], gts[static_cast<std::size_t>(slot)])) {
                slot = gi;
            }
        }
    }
    for (int flat = 0; flat < grid_size * grid_size; ++flat) {
        if (a.cell_to_gt[static_cast<std::size_t>(flat)] >= 0) a.positives.push_back(flat);
    }
    return a;
}

GridAssignment sample_negatives(GridAssignment a, double ratio, std::uint64_t seed) {
    if (ratio < 0.0) throw std::runtime_error("sample_negatives: ratio must be >= 0");
    a.selected_negatives.clear();
    const int npos = static_cast<int>(a.positives.size());
    std::vector<int> free_cells;
    for (int flat = 0; flat < a.grid_size * a.grid_size; ++flat) {
        if (a.cell_to_gt[static_cast<std::size_t>(flat)] < 0) free_cells.push_back(flat);
    }
    if (npos == 0 || free_cells.empty()) return a;
    std::int64_t want = std::llround(ratio * npos);
    if (want < 1) want = 1;
    if (want > static_cast<std::int64_t>(free_cells.size())) {
        want = static_cast<std::int64_t>(free_cells.size());
    }
    Rng rng(seed);
    // partial Fisher-Yates: the first `want` entries become the sample
    for (std::int64_t i = 0; i < want; ++i) {
        const std::int64_t j =
            i + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(
                    static_cast<std::int64_t>(free_cells.size()) - i)));
        std::swap(free_cells[static_cast<std::size_t>(i)],
                  free_cells[static_cast<std::size_t>(j)]);
    }
    a.selected_negatives.assign(free_cells.begin(), free_cells.begin() + want);
    std::sort(a.selected_negatives.begin(), a.selected_negatives.end());
    return a;
}

GatheredTargets gather_targets(const GridAssignment& a, const std::vector<LineSegment>& gts) {
    if (a.gt_count != static_cast<int>(gts.size())) {
        throw std::runtime_error("gather_targets: assignment built from a different gt list");
    }
    GatheredTargets g;
    std::size_t pi = 0, ni = 0;
    while (pi < a.positives.size() || ni < a.selected_negatives.size()) {
        const bool take_pos =
            ni >= a.selected_negatives.size() ||
            (pi < a.positives.size() && a.positives[pi] < a.selected_negatives[ni]);
        if (take_pos) {
            const int cell = a.positives[pi++];
            const int gi = a.cell_to_gt[static_cast<std::size_t>(cell)];
            g.cells.push_back(cell);
            g.labels.push_back(1);
            g.targets.push_back(gts[static_cast<std::size_t>(gi)].canonicalized());
            g.gt_index.push_back(gi);
        } else {
            g.cells.push_back(a.selected_negatives[ni++]);
            g.labels.push_back(0);
            g.targets.emplace_back();
            g.gt_index.push_back(-1);
        }
    }
    return g;
}

}  // namespace ranklsd
