#include "ranklsd/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "ranklsd/losses.hpp"
#include "ranklsd/model.hpp"
#include "ranklsd/rng.hpp"
#include "ranklsd/synthdata.hpp"

namespace ranklsd {

namespace {

Tensor rand_t(Rng& rng, std::vector<int> shape, double lo, double hi) {
    Tensor t(std::move(shape));
    for (std::int64_t i = 0; i < t.numel(); ++i) t.data()[i] = rng.uniform(lo, hi);
    return t;
}

// values in ±[margin, 1], i.e. kept away from zero (relu / |.| kinks)
Tensor rand_signed(Rng& rng, std::vector<int> shape, double margin) {
    Tensor t(std::move(shape));
    for (std::int64_t i = 0; i < t.numel(); ++i) {
        double mag = rng.uniform(margin, 1.0);
        t.data()[i] = rng.below(2) ? mag : -mag;
    }
    return t;
}

}  // namespace

GradCheckResult check_gradients(const std::string& name,
                                const std::function<Tensor(const std::vector<Tensor>&)>& fn,
                                std::vector<Tensor> inputs, double h, double tol,
                                double denom_floor) {
    GradCheckResult r;
    r.name = name;

    std::vector<std::vector<double>> analytic;
    {
        Tape tape;
        TapeScope scope(tape);
        for (auto& in : inputs) in.set_requires_grad(true);
        Tensor loss = fn(inputs);
        tape.backward(loss);
        for (auto& in : inputs) {
            std::vector<double> g(static_cast<std::size_t>(in.numel()), 0.0);
            if (in.grad()) std::copy(in.grad(), in.grad() + in.numel(), g.begin());
            analytic.push_back(std::move(g));
            in.zero_grad();
        }
    }

    for (std::size_t i = 0; i < inputs.size(); ++i) {
        double* p = inputs[i].data();
        for (std::int64_t j = 0; j < inputs[i].numel(); ++j) {
            const double keep = p[j];
            p[j] = keep + h;
            const double fp = fn(inputs).item();  // no tape active: forward only
            p[j] = keep - h;
            const double fm = fn(inputs).item();
            p[j] = keep;
            const double fd = (fp - fm) / (2.0 * h);
            const double a = analytic[i][static_cast<std::size_t>(j)];
            const double abs_err = std::fabs(a - fd);
            const double rel =
                abs_err / std::max({std::fabs(a), std::fabs(fd), denom_floor});
            r.max_abs_err = std::max(r.max_abs_err, abs_err);
            r.max_rel_err = std::max(r.max_rel_err, rel);
            ++r.checked;
        }
    }
    r.pass = r.checked > 0 && r.max_rel_err <= tol;
    return r;
}

std::vector<GradCheckResult> op_gradcheck_suite(std::uint64_t seed) {
    std::vector<GradCheckResult> out;
    std::uint64_t case_id = 0;
    auto next_rng = [&] { return Rng(derive_seed(seed, case_id++)); };
    using In = const std::vector<Tensor>&;

    {
        Rng rng = next_rng();
        Tensor a = rand_t(rng, {3, 4}, -1, 1), b = rand_t(rng, {3, 4}, -1, 1);
        Tensor w = rand_t(rng, {3, 4}, -1, 1);
        out.push_back(check_gradients(
            "add", [w](In in) { return sum(mul(add(in[0], in[1]), w)); }, {a, b}));
    }
    {
        Rng rng = next_rng();
        Tensor a = rand_t(rng, {2, 5}, -1, 1), b = rand_t(rng, {2, 5}, -1, 1);
        Tensor w = rand_t(rng, {2, 5}, -1, 1);
        out.push_back(check_gradients(
            "sub", [w](In in) { return sum(mul(sub(in[0], in[1]), w)); }, {a, b}));
    }
    {
        Rng rng = next_rng();
        Tensor a = rand_t(rng, {4, 3}, -1, 1), b = rand_t(rng, {4, 3}, -1, 1);
        Tensor w = rand_t(rng, {4, 3}, -1, 1);
        out.push_back(check_gradients(
            "mul", [w](In in) { return sum(mul(mul(in[0], in[1]), w)); }, {a, b}));
    }
    {
        Rng rng = next_rng();
        Tensor w = rand_t(rng, {3, 3}, -1, 1);
        out.push_back(check_gradients(
            "scalar_affine", [w](In in) { return sum(mul(add(mul(in[0], 1.7), 0.3), w)); },
            {rand_t(rng, {3, 3}, -1, 1)}));
    }
    {
        Rng rng = next_rng();
        // keep the two branches separated so the max has no ties
        Tensor a = rand_t(rng, {4, 4}, -1, 1);
        Tensor b(a.shape());
        for (std::int64_t i = 0; i < a.numel(); ++i) {
            double off = rng.uniform(0.3, 0.8);
            b.data()[i] = a.data()[i] + (rng.below(2) ? off : -off);
        }
        Tensor w = rand_t(rng, {4, 4}, -1, 1);
        out.push_back(check_gradients(
            "emax", [w](In in) { return sum(mul(emax(in[0], in[1]), w)); }, {a, b}));
    }
    {
        Rng rng = next_rng();
        Tensor x = rand_signed(rng, {3, 5}, 0.2);
        Tensor w = rand_t(rng, {3, 5}, -1, 1);
        out.push_back(
            check_gradients("relu", [w](In in) { return sum(mul(relu(in[0]), w)); }, {x}));
    }
    {
        Rng rng = next_rng();
        Tensor w = rand_t(rng, {4, 4}, -1, 1);
        out.push_back(check_gradients(
            "sigmoid", [w](In in) { return sum(mul(sigmoid(in[0]), w)); },
            {rand_t(rng, {4, 4}, -2, 2)}));
    }
    {
        Rng rng = next_rng();
        Tensor a = rand_t(rng, {3, 4}, -1, 1), b = rand_t(rng, {4, 2}, -1, 1);
        Tensor w = rand_t(rng, {3, 2}, -1, 1);
        out.push_back(check_gradients(
            "matmul", [w](In in) { return sum(mul(matmul(in[0], in[1]), w)); }, {a, b}));
    }
    {
        Rng rng = next_rng();
        Tensor x = rand_t(rng, {4, 5}, -1, 1), b = rand_t(rng, {5}, -1, 1);
        Tensor w = rand_t(rng, {4, 5}, -1, 1);
        out.push_back(check_gradients(
            "add_rowvec", [w](In in) { return sum(mul(add_rowvec(in[0], in[1]), w)); },
            {x, b}));
    }
    {
        Rng rng = next_rng();
        Tensor x = rand_t(rng, {3, 5}, -1, 1);
        Tensor w = rand_t(rng, {5, 3}, -1, 1);
        out.push_back(check_gradients(
            "transpose2d", [w](In in) { return sum(mul(transpose2d(in[0]), w)); }, {x}));
    }
    {
        Rng rng = next_rng();
        Tensor x = rand_t(rng, {2, 6}, -1, 1);
        Tensor w = rand_t(rng, {3, 4}, -1, 1);
        out.push_back(check_gradients(
            "reshape", [w](In in) { return sum(mul(reshape(in[0], {3, 4}), w)); }, {x}));
    }
    {
        Rng rng = next_rng();
        Tensor x = rand_t(rng, {5, 3}, -1, 1);
        Tensor w = rand_t(rng, {5, 3}, -1, 1);
        std::vector<int> idx = {0, 2, 1, 2, 4};  // repeats must accumulate
        out.push_back(check_gradients(
            "gather_rows", [w, idx](In in) { return sum(mul(gather_rows(in[0], idx), w)); },
            {x}));
    }
    {
        Rng rng = next_rng();
        Tensor x = rand_t(rng, {6}, -1, 1);
        Tensor w = rand_t(rng, {4}, -1, 1);
        std::vector<int> idx = {0, 5, 5, 2};
        out.push_back(check_gradients(
            "gather_rows_vec",
            [w, idx](In in) { return sum(mul(gather_rows(in[0], idx), w)); }, {x}));
    }
    {
        Rng rng = next_rng();
        Tensor x = rand_t(rng, {3, 6}, -2, 2);
        Tensor w = rand_t(rng, {3, 6}, -1, 1);
        out.push_back(check_gradients(
            "softmax_rows", [w](In in) { return sum(mul(softmax(in[0], 1), w)); }, {x}));
    }
    {
        Rng rng = next_rng();
        Tensor x = rand_t(rng, {4, 3}, -2, 2);
        Tensor w = rand_t(rng, {4, 3}, -1, 1);
        out.push_back(check_gradients(
            "softmax_cols", [w](In in) { return sum(mul(softmax(in[0], 0), w)); }, {x}));
    }
    {
        Rng rng = next_rng();
        Tensor x = rand_t(rng, {5}, -2, 2);
        Tensor w = rand_t(rng, {5}, -1, 1);
        out.push_back(check_gradients(
            "softmax_vec", [w](In in) { return sum(mul(softmax(in[0]), w)); }, {x}));
    }
    {
        Rng rng = next_rng();
        Tensor x = rand_t(rng, {4, 8}, -1, 1);
        Tensor gamma = rand_t(rng, {8}, 0.5, 1.5), beta = rand_t(rng, {8}, -0.5, 0.5);
        Tensor w = rand_t(rng, {4, 8}, -1, 1);
        out.push_back(check_gradients(
            "layer_norm",
            [w](In in) { return sum(mul(layer_norm(in[0], in[1], in[2]), w)); },
            {x, gamma, beta}));
    }
    {
        Rng rng = next_rng();
        Tensor x = rand_t(rng, {2, 5, 5}, -1, 1);
        Tensor wt = rand_t(rng, {3, 2, 3, 3}, -0.5, 0.5), b = rand_t(rng, {3}, -0.5, 0.5);
        Tensor w = rand_t(rng, {3, 5, 5}, -1, 1);
        out.push_back(check_gradients(
            "conv2d_zero",
            [w](In in) { return sum(mul(conv2d(in[0], in[1], in[2], 1, 1), w)); },
            {x, wt, b}));
    }
    {
        Rng rng = next_rng();
        Tensor x = rand_t(rng, {2, 6, 6}, -1, 1);
        Tensor wt = rand_t(rng, {2, 2, 3, 3}, -0.5, 0.5), b = rand_t(rng, {2}, -0.5, 0.5);
        Tensor w = rand_t(rng, {2, 3, 3}, -1, 1);
        out.push_back(check_gradients(
            "conv2d_replicate_s2",
            [w](In in) {
                return sum(mul(
                    conv2d(in[0], in[1], in[2], 2, 1, kernels::PadMode::Replicate), w));
            },
            {x, wt, b}));
    }
    {
        Rng rng = next_rng();
        Tensor x = rand_t(rng, {3, 4, 4}, -1, 1);
        Tensor wt = rand_t(rng, {2, 3, 1, 1}, -0.5, 0.5);
        Tensor w = rand_t(rng, {2, 4, 4}, -1, 1);
        out.push_back(check_gradients(
            "conv2d_1x1_nobias",
            [w](In in) { return sum(mul(conv2d(in[0], in[1], Tensor(), 1, 0), w)); },
            {x, wt}));
    }
    {
        Rng rng = next_rng();
        Tensor x = rand_t(rng, {2, 3, 3}, -1, 1);
        Tensor w = rand_t(rng, {2, 6, 6}, -1, 1);
        out.push_back(check_gradients(
            "upsample2x", [w](In in) { return sum(mul(upsample2x(in[0]), w)); }, {x}));
    }
    {
        Rng rng = next_rng();
        Tensor x = rand_t(rng, {3, 4, 4}, -1, 1);
        Tensor w = rand_t(rng, {3, 4, 4}, -1, 1);
        out.push_back(check_gradients(
            "rot90_map", [w](In in) { return sum(mul(rot90_map(in[0], 1), w)); }, {x}));
    }
    {
        Rng rng = next_rng();
        Tensor x = rand_t(rng, {7}, -1, 1);
        Tensor w = rand_t(rng, {7}, -1, 1);
        out.push_back(
            check_gradients("mean", [w](In in) { return mean(mul(in[0], w)); }, {x}));
    }
    {
        Rng rng = next_rng();
        Tensor x = rand_signed(rng, {3, 4}, 0.2);
        out.push_back(check_gradients("l1_norm", [](In in) { return l1_norm(in[0]); }, {x}));
    }
    {
        Rng rng = next_rng();
        Tensor x = rand_signed(rng, {3, 4}, 0.3);
        out.push_back(check_gradients("l2_norm", [](In in) { return l2_norm(in[0]); }, {x}));
    }
    {
        Rng rng = next_rng();
        Tensor map = rand_t(rng, {2, 6, 6}, -1, 1);
        Tensor pts({5, 2});
        for (int i = 0; i < 5; ++i) {  // interior, fractions away from the lattice
            pts.data()[2 * i + 0] = rng.below(5) + rng.uniform(0.2, 0.8);
            pts.data()[2 * i + 1] = rng.below(5) + rng.uniform(0.2, 0.8);
        }
        Tensor w = rand_t(rng, {5, 2}, -1, 1);
        out.push_back(check_gradients(
            "bilinear_chw",
            [w](In in) { return sum(mul(bilinear_sample(in[0], in[1]), w)); }, {map, pts}));
    }
    {
        Rng rng = next_rng();
        Tensor map = rand_t(rng, {6, 6}, -1, 1);
        Tensor pts({4, 2});
        for (int i = 0; i < 4; ++i) {
            pts.data()[2 * i + 0] = rng.below(5) + rng.uniform(0.2, 0.8);
            pts.data()[2 * i + 1] = rng.below(5) + rng.uniform(0.2, 0.8);
        }
        Tensor w = rand_t(rng, {4}, -1, 1);
        out.push_back(check_gradients(
            "bilinear_hw", [w](In in) { return sum(mul(bilinear_sample(in[0], in[1]), w)); },
            {map, pts}));
    }
    {
        Rng rng = next_rng();
        const int T = 3, H = 2, K = 2, L = 2, P = H * L * K;
        Tensor v0 = rand_t(rng, {4, 6, 6}, -1, 1), v1 = rand_t(rng, {4, 3, 3}, -1, 1);
        Tensor pts({T, P, 2});
        for (int t = 0; t < T; ++t)
            for (int p = 0; p < P; ++p) {
                const int wl = ((p / K) % L) == 0 ? 6 : 3;
                double px = rng.below(static_cast<std::uint64_t>(wl - 1)) + rng.uniform(0.2, 0.8);
                double py = rng.below(static_cast<std::uint64_t>(wl - 1)) + rng.uniform(0.2, 0.8);
                pts.data()[(t * P + p) * 2 + 0] = (px + 0.5) / wl;
                pts.data()[(t * P + p) * 2 + 1] = (py + 0.5) / wl;
            }
        Tensor wts = rand_t(rng, {T, P}, 0.1, 1.0);
        Tensor w = rand_t(rng, {T, 4}, -1, 1);
        out.push_back(check_gradients(
            "deform_attn",
            [w](In in) {
                return sum(mul(deform_attn({in[0], in[1]}, in[2], in[3], 2), w));
            },
            {v0, v1, pts, wts}));
    }

    // ---- loss stack
    const std::vector<int> labels = {1, 0, 1, 0, 0, 1};
    {
        Rng rng = next_rng();
        Tensor conf = rand_t(rng, {6}, 0.15, 0.85);
        Tensor pred = rand_t(rng, {3, 4}, 0.3, 0.9);
        Tensor targ = rand_t(rng, {3, 4}, 0.0, 0.15);
        out.push_back(check_gradients(
            "confidence_loss",
            [labels, pred, targ](In in) {
                return confidence_loss(make_gathered_batch(in[0], labels, pred, targ));
            },
            {conf}));
    }
    {
        Rng rng = next_rng();
        Tensor conf = rand_t(rng, {6}, 0.15, 0.85);
        Tensor pred = rand_t(rng, {3, 4}, 0.3, 0.9);
        Tensor targ = rand_t(rng, {3, 4}, 0.0, 0.15);
        out.push_back(check_gradients(
            "position_loss",
            [labels, conf, targ](In in) {
                return position_loss(make_gathered_batch(conf, labels, in[0], targ));
            },
            {pred}));
    }
    {
        Rng rng = next_rng();
        Tensor conf = rand_t(rng, {6}, 0.15, 0.85);
        Tensor pred = rand_t(rng, {3, 4}, 0.3, 0.9);
        Tensor targ = rand_t(rng, {3, 4}, 0.0, 0.15);
        out.push_back(check_gradients(
            "ranking_loss",
            [labels, pred, targ](In in) {
                return ranking_loss(make_gathered_batch(in[0], labels, pred, targ));
            },
            {conf}));
    }
    {
        Rng rng = next_rng();
        Tensor conf = rand_t(rng, {6}, 0.15, 0.85);
        Tensor pred = rand_t(rng, {3, 4}, 0.3, 0.9);
        Tensor targ = rand_t(rng, {3, 4}, 0.0, 0.15);
        out.push_back(check_gradients(
            "ranking_loss_through_quality",
            [labels, targ](In in) {
                return ranking_loss(make_gathered_batch(in[0], labels, in[1], targ), true);
            },
            {conf, pred}));
    }
    {
        Rng rng = next_rng();
        Tensor p0 = rand_t(rng, {5, 5}, 0.0, 1.0), p1 = rand_t(rng, {3, 3}, 0.0, 1.0);
        Tensor g0 = rand_t(rng, {5, 5}, 0.0, 1.0), g1 = rand_t(rng, {3, 3}, 0.0, 1.0);
        out.push_back(check_gradients(
            "map_loss",
            [g0, g1](In in) { return junction_map_loss({in[0], in[1]}, {g0, g1}); },
            {p0, p1}));
    }
    return out;
}

GradCheckResult end_to_end_gradcheck(std::uint64_t seed, int probes, double h, double tol) {
    ModelConfig mc;
    mc.input_size = 16;
    mc.levels = {16, 8};
    mc.hidden_dim = 16;
    mc.encoder_layers = 1;
    mc.heads = 2;
    mc.referring_points = 2;

    SceneSpec sc;
    sc.seed = derive_seed(seed, 1);
    sc.image_size = 16;
    sc.max_segments = 3;

    Sample sample = generate(sc, 0);
    Model model(mc, derive_seed(seed, 2));
    TrainSettings ts;
    ts.rank_grad_through_quality = true;  // exercise the optional path too
    const std::uint64_t neg_seed = derive_seed(seed, 3);

    auto& params = model.params();
    std::vector<std::vector<double>> analytic(params.size());
    {
        Tape tape;
        TapeScope scope(tape);
        Tensor total = training_objective(model, sample, ts, neg_seed);
        tape.backward(total);
        for (std::size_t i = 0; i < params.size(); ++i) {
            analytic[i].assign(static_cast<std::size_t>(params[i].t.numel()), 0.0);
            if (params[i].t.grad())
                std::copy(params[i].t.grad(), params[i].t.grad() + params[i].t.numel(),
                          analytic[i].begin());
            params[i].t.zero_grad();
        }
    }

    auto eval = [&] { return training_objective(model, sample, ts, neg_seed).item(); };

    GradCheckResult r;
    r.name = "end_to_end";
    Rng rng(derive_seed(seed, 4));
    int attempts = 0;
    while (r.checked < probes && attempts < probes * 4) {
        ++attempts;
        const auto pi = static_cast<std::size_t>(rng.below(params.size()));
        Tensor t = params[pi].t;
        const auto ei = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(t.numel())));
        const double keep = t.data()[ei];
        auto fd_at = [&](double hh) {
            t.data()[ei] = keep + hh;
            const double fp = eval();
            t.data()[ei] = keep - hh;
            const double fm = eval();
            t.data()[ei] = keep;
            return (fp - fm) / (2.0 * hh);
        };
        const double fd = fd_at(h);
        const double fd2 = fd_at(h / 2.0);
        const double a = analytic[pi][static_cast<std::size_t>(ei)];
        const double denom = std::max({std::fabs(a), std::fabs(fd2), 1e-6});
        // the two step sizes disagreeing flags a kink under the probe;
        // resample rather than measure garbage
        if (std::fabs(fd - fd2) / denom > 0.5 * tol) continue;
        const double abs_err = std::fabs(a - fd2);
        r.max_abs_err = std::max(r.max_abs_err, abs_err);
        r.max_rel_err = std::max(r.max_rel_err, abs_err / denom);
        ++r.checked;
    }
    r.pass = r.checked == probes && r.max_rel_err <= tol;
    return r;
}

}  // namespace ranklsd
