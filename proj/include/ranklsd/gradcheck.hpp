#pragma once

// Central-difference verification of the tape gradients: per-op cases, the
// loss stack, and a probed end-to-end training objective on a tiny model.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ranklsd/tensor.hpp"

namespace ranklsd {

struct GradCheckResult {
    std::string name;
    double max_rel_err = 0.0;
    double max_abs_err = 0.0;
    int checked = 0;
    bool pass = false;
};

// Compares the taped gradient of scalar_fn(inputs) against central
// differences with step h on every entry of every input.  Relative error is
// measured against max(|analytic|, |fd|, denom_floor).
GradCheckResult check_gradients(const std::string& name,
                                const std::function<Tensor(const std::vector<Tensor>&)>& fn,
                                std::vector<Tensor> inputs, double h = 1e-5, double tol = 1e-4,
                                double denom_floor = 1e-6);

// every differentiable op plus the loss stack, with inputs kept away from
// kinks and clamps; all cases use tol 1e-4
std::vector<GradCheckResult> op_gradcheck_suite(std::uint64_t seed);

// total training loss of a tiny end-to-end model, probed at `probes`
// randomly chosen parameter entries (kink-suspect probes are resampled)
GradCheckResult end_to_end_gradcheck(std::uint64_t seed, int probes = 32, double h = 1e-4,
                                     double tol = 1e-3);

}  // namespace ranklsd
