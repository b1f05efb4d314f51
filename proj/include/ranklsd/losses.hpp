#pragma once

// The five training losses over gathered predictions and targets.  All of
// them return scalar tensors that participate in the active tape.

#include <vector>

#include "ranklsd/geometry.hpp"
#include "ranklsd/tensor.hpp"

namespace ranklsd {

struct LossWeights {
    double rank = 1.0;
    double conf = 1.0;
    double pos = 10.0;
    double junc = 1.0;
    double edge = 1.0;
};

// Gathered per-cell predictions with their assignment-derived targets.
// quality holds d_i = ||l_i - l_hat_i||_2 over the positive rows, computed
// from current values (the ranking loss treats it as constant unless
// grad_through_quality is requested).
struct GatheredBatch {
    Tensor conf;                // [N±] confidences in (0,1)
    std::vector<int> labels;    // N± entries of {0,1}
    std::vector<int> pos_rows;  // indices of the positive rows within conf
    Tensor pred;                // [N₊,4], undefined when there are no positives
    Tensor target;              // [N₊,4] constant
    std::vector<double> quality;
};

GatheredBatch make_gathered_batch(Tensor conf, std::vector<int> labels, Tensor pred,
                                  Tensor target);

// mean binary cross-entropy with confidences clamped to [1e-7, 1-1e-7];
// errors on an empty batch
Tensor confidence_loss(const GatheredBatch& b);

// sum (not mean) of per-positive L1 gaps; optionally normalized by N₊
Tensor position_loss(const GatheredBatch& b, bool normalize = false);

// -(1/N₊²) ΣΣ σ(c_j - c_i)(d_i - d_j); zero when N₊ <= 1.  By default the
// quality term is a constant (stop-gradient); grad_through_quality routes
// gradients into the predicted coordinates as well.
Tensor ranking_loss(const GatheredBatch& b, bool grad_through_quality = false);

// sum over levels of ||pred - gt||_2 (the norm, not its square)
Tensor junction_map_loss(const std::vector<Tensor>& pred, const std::vector<Tensor>& gt);
Tensor edge_map_loss(const std::vector<Tensor>& pred, const std::vector<Tensor>& gt);

struct LossParts {
    Tensor rank, conf, pos, junc, edge;
};

Tensor total_loss(const LossParts& parts, const LossWeights& w);

}  // namespace ranklsd
