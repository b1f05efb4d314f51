#include "ranklsd/losses.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace ranklsd {

namespace {

constexpr double kConfEps = 1e-7;

double clamp_conf(double c) {
    return c < kConfEps ? kConfEps : (c > 1.0 - kConfEps ? 1.0 - kConfEps : c);
}

double sigmoid_v(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

GatheredBatch make_gathered_batch(Tensor conf, std::vector<int> labels, Tensor pred,
                                  Tensor target) {
    GatheredBatch b;
    if (conf.rank() != 1 || static_cast<int>(labels.size()) != conf.dim(0)) {
        throw std::runtime_error("make_gathered_batch: labels do not match confidences");
    }
    b.conf = conf;
    b.labels = std::move(labels);
    for (int i = 0; i < static_cast<int>(b.labels.size()); ++i) {
        if (b.labels[static_cast<std::size_t>(i)] == 1) b.pos_rows.push_back(i);
    }
    const int npos = static_cast<int>(b.pos_rows.size());
    if (npos > 0) {
        if (!pred.defined() || pred.rank() != 2 || pred.dim(0) != npos || pred.dim(1) != 4) {
            throw std::runtime_error("make_gathered_batch: pred must be [N+,4]");
        }
        if (!target.defined() || target.shape() != pred.shape()) {
            throw std::runtime_error("make_gathered_batch: target must match pred shape");
        }
        b.pred = pred;
        b.target = target;
        b.quality.resize(static_cast<std::size_t>(npos));
        for (int i = 0; i < npos; ++i) {
            double s = 0.0;
            for (int j = 0; j < 4; ++j) {
                const double d = pred.data()[4 * i + j] - target.data()[4 * i + j];
                s += d * d;
            }
            b.quality[static_cast<std::size_t>(i)] = std::sqrt(s);
        }
    }
    return b;
}

Tensor confidence_loss(const GatheredBatch& b) {
    const int n = b.conf.defined() ? b.conf.dim(0) : 0;
    if (n == 0) throw std::runtime_error("confidence_loss: empty batch");
    const Tensor& c = b.conf;
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
        const double ci = clamp_conf(c.data()[i]);
        acc += b.labels[static_cast<std::size_t>(i)] == 1 ? std::log(ci) : std::log(1.0 - ci);
    }
    Tensor out = Tensor::scalar(-acc / n);
    if (grad_wanted({&c})) {
        out.set_requires_grad(true);
        const std::vector<int> labels = b.labels;
        Tape::active()->record([c, out, labels, n] {
            const double* g = out.grad();
            if (!g || !c.requires_grad()) return;
            double* gc = c.grad_buffer().data();
            const double invn = 1.0 / n;
            for (int i = 0; i < n; ++i) {
                const double raw = c.data()[i];
                if (raw < kConfEps || raw > 1.0 - kConfEps) continue;  // clamp is flat
                const double d = labels[static_cast<std::size_t>(i)] == 1
                                     ? -1.0 / raw
                                     : 1.0 / (1.0 - raw);
                gc[i] += g[0] * d * invn;
            }
        });
    }
    return out;
}

Tensor position_loss(const GatheredBatch& b, bool normalize) {
    const int npos = static_cast<int>(b.pos_rows.size());
    if (npos == 0) return Tensor::scalar(0.0);
    Tensor gap = l1_norm(sub(b.pred, b.target));
    return normalize ? mul(gap, 1.0 / npos) : gap;
}

Tensor ranking_loss(const GatheredBatch& b, bool grad_through_quality) {
    const int n = static_cast<int>(b.pos_rows.size());
    if (n <= 1) return Tensor::scalar(0.0);
    Tensor c = gather_rows(b.conf, b.pos_rows);
    const std::vector<double> d = b.quality;
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            acc += sigmoid_v(c.data()[j] - c.data()[i]) *
                   (d[static_cast<std::size_t>(i)] - d[static_cast<std::size_t>(j)]);
        }
    }
    const double invn2 = 1.0 / (static_cast<double>(n) * n);
    Tensor out = Tensor::scalar(-acc * invn2);
    const bool through_d = grad_through_quality && b.pred.defined() && b.pred.requires_grad();
    if (grad_wanted({&c}) || (through_d && Tape::active())) {
        out.set_requires_grad(true);
        const Tensor pred = b.pred;
        const Tensor target = b.target;
        Tape::active()->record([c, out, d, n, invn2, through_d, pred, target] {
            const double* g = out.grad();
            if (!g) return;
            if (c.requires_grad()) {
                double* gc = c.grad_buffer().data();
                for (int k = 0; k < n; ++k) {
                    double s = 0.0;
                    for (int i = 0; i < n; ++i) {
                        const double sig = sigmoid_v(c.data()[k] - c.data()[i]);
                        s += sig * (1.0 - sig) *
                             (d[static_cast<std::size_t>(i)] - d[static_cast<std::size_t>(k)]);
                    }
                    gc[k] += g[0] * (-2.0 * invn2) * s;
                }
            }
            if (through_d) {
                // dL/dd_k = -(1/n²) (Σ_j σ(c_j-c_k) - Σ_i σ(c_k-c_i)),
                // then chain through d_k = ||pred_k - target_k||
                double* gp = pred.grad_buffer().data();
                for (int k = 0; k < n; ++k) {
                    const double dk = d[static_cast<std::size_t>(k)];
                    if (dk == 0.0) continue;
                    double s = 0.0;
                    for (int i = 0; i < n; ++i) {
                        s += sigmoid_v(c.data()[i] - c.data()[k]) -
                             sigmoid_v(c.data()[k] - c.data()[i]);
                    }
                    const double dd = g[0] * (-invn2) * s / dk;
                    for (int j = 0; j < 4; ++j) {
                        gp[4 * k + j] +=
                            dd * (pred.data()[4 * k + j] - target.data()[4 * k + j]);
                    }
                }
            }
        });
    }
    return out;
}

namespace {

Tensor map_loss(const char* name, const std::vector<Tensor>& pred,
                const std::vector<Tensor>& gt) {
    if (pred.size() != gt.size()) {
        throw std::runtime_error(std::string(name) + ": level count mismatch");
    }
    Tensor total = Tensor::scalar(0.0);
    for (std::size_t l = 0; l < pred.size(); ++l) {
        if (pred[l].shape() != gt[l].shape()) {
            throw std::runtime_error(std::string(name) + ": level " + std::to_string(l) +
                                     " shape mismatch");
        }
        total = add(total, l2_norm(sub(pred[l], gt[l])));
    }
    return total;
}

}  // namespace

Tensor junction_map_loss(const std::vector<Tensor>& pred, const std::vector<Tensor>& gt) {
    return map_loss("junction_map_loss", pred, gt);
}

Tensor edge_map_loss(const std::vector<Tensor>& pred, const std::vector<Tensor>& gt) {
    return map_loss("edge_map_loss", pred, gt);
}

Tensor total_loss(const LossParts& parts, const LossWeights& w) {
    Tensor t = mul(parts.rank, w.rank);
    t = add(t, mul(parts.conf, w.conf));
    t = add(t, mul(parts.pos, w.pos));
    t = add(t, mul(parts.junc, w.junc));
    t = add(t, mul(parts.edge, w.edge));
    return t;
}

}  // namespace ranklsd
