#include "ranklsd/model.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <utility>

#include "ranklsd/assignment.hpp"
#include "ranklsd/gtmaps.hpp"
#include "ranklsd/rng.hpp"

namespace ranklsd {

namespace {

constexpr double kPi = 3.14159265358979323846;

[[noreturn]] void fail(const std::string& msg) { throw TensorError("model: " + msg); }

bool is_pow2(int v) { return v > 0 && (v & (v - 1)) == 0; }

// uniform(-limit, limit) fill
Tensor uniform_init(Rng& rng, std::vector<int> shape, double limit) {
    Tensor t(std::move(shape));
    double* p = t.data();
    for (std::int64_t i = 0; i < t.numel(); ++i) p[i] = rng.uniform(-limit, limit);
    return t;
}

Tensor conv_weight(Rng& rng, int out_c, int in_c, int k) {
    double limit = std::sqrt(6.0 / (in_c * k * k));  // He-style fan-in bound
    return uniform_init(rng, {out_c, in_c, k, k}, limit);
}

Tensor linear_weight(Rng& rng, int in_dim, int out_dim) {
    double limit = std::sqrt(6.0 / (in_dim + out_dim));
    return uniform_init(rng, {in_dim, out_dim}, limit);
}

}  // namespace

void ModelConfig::validate() const {
    if (levels.empty()) fail("config: levels must be non-empty");
    for (std::size_t l = 0; l < levels.size(); ++l) {
        if (levels[l] < 4) fail("config: level resolutions must be >= 4");
        if (l + 1 < levels.size() && levels[l + 1] * 2 != levels[l])
            fail("config: level resolutions must halve, finest first");
    }
    if (input_size < levels[0] || input_size % levels[0] != 0 ||
        !is_pow2(input_size / levels[0]))
        fail("config: input_size must be levels[0] times a power of two");
    if (input_size / levels[0] > 8) fail("config: input_size / levels[0] must be <= 8");
    if (hidden_dim < 4 || hidden_dim % 4 != 0) fail("config: hidden_dim must be a multiple of 4");
    if (encoder_layers < 1) fail("config: encoder_layers must be >= 1");
    if (heads < 1) fail("config: heads must be >= 1");
    if (referring_points < 1) fail("config: referring_points must be >= 1");
    if (rotation_merge != "average" && rotation_merge != "max")
        fail("config: rotation_merge must be 'average' or 'max'");
    if (!(endpoint_sigma_px > 0)) fail("config: endpoint_sigma_px must be positive");
}

Tensor Model::add_param(const std::string& name, Tensor t) {
    t.set_requires_grad(true);
    params_.push_back({name, t});
    return t;
}

Tensor Model::param(const std::string& name) const {
    for (const auto& p : params_)
        if (p.name == name) return p.t;
    fail("unknown parameter '" + name + "'");
}

Model::Model(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng(derive_seed(seed, 0x6d6f64656cULL));  // independent of data streams

    const int L = static_cast<int>(cfg_.levels.size());
    const int D = cfg_.hidden_dim;
    const int H = cfg_.heads;
    const int K = cfg_.referring_points;

    // ---- backbone: optional stride-2 pre-reduction down to the finest level
    int in_ch = 1;
    int res = cfg_.input_size;
    int pre = 0;
    while (res > cfg_.levels[0]) {
        char name[32];
        std::snprintf(name, sizeof name, "backbone.pre%d", pre++);
        add_param(std::string(name) + ".w", conv_weight(rng, 16, in_ch, 3));
        add_param(std::string(name) + ".b", Tensor({16}));
        in_ch = 16;
        res /= 2;
    }
    // raw pyramid channels grow with depth but never past hidden_dim
    std::vector<int> raw(L);
    for (int l = 0; l < L; ++l) raw[l] = std::min(D, 24 + 12 * l);
    add_param("backbone.stem.w", conv_weight(rng, raw[0], in_ch, 3));
    add_param("backbone.stem.b", Tensor({raw[0]}));
    for (int l = 1; l < L; ++l) {
        char name[32];
        std::snprintf(name, sizeof name, "backbone.down%d", l);
        add_param(std::string(name) + ".w", conv_weight(rng, raw[l], raw[l - 1], 3));
        add_param(std::string(name) + ".b", Tensor({raw[l]}));
    }
    for (int l = 0; l < L; ++l) {
        char name[32];
        std::snprintf(name, sizeof name, "backbone.lat%d", l);
        add_param(std::string(name) + ".w", conv_weight(rng, D, raw[l], 1));
        add_param(std::string(name) + ".b", Tensor({D}));
    }

    // ---- encoder
    add_param("encoder.level_embed", uniform_init(rng, {L, D}, 0.02));
    const int P = H * L * K;
    for (int i = 0; i < cfg_.encoder_layers; ++i) {
        char pre_buf[32];
        std::snprintf(pre_buf, sizeof pre_buf, "encoder.l%d.", i);
        std::string base(pre_buf);
        add_param(base + "value.w", linear_weight(rng, D, D));
        add_param(base + "value.b", Tensor({D}));
        // offsets start at a deterministic ring of sample points around each
        // token (radius grows with k), attention starts uniform: both linears
        // have zero weights so early training is stable.  The half-slot angle
        // shift and the 0.45-cell radius keep every initial sample off the
        // bilinear lattice, where the gradient would sit on a kink.
        add_param(base + "offset.w", Tensor({D, P * 2}));
        Tensor off_b({P * 2});
        for (int h = 0; h < H; ++h)
            for (int l = 0; l < L; ++l)
                for (int k = 0; k < K; ++k) {
                    int p = (h * L + l) * K + k;
                    double ang = 2.0 * kPi * (h * K + k + 0.5) / (H * K);
                    double rad = 0.45 * (k + 1);  // in target-level cells
                    off_b.data()[2 * p + 0] = rad * std::cos(ang);
                    off_b.data()[2 * p + 1] = rad * std::sin(ang);
                }
        add_param(base + "offset.b", off_b);
        add_param(base + "attw.w", Tensor({D, P}));
        add_param(base + "attw.b", Tensor({P}));
        add_param(base + "out.w", linear_weight(rng, D, D));
        add_param(base + "out.b", Tensor({D}));
        add_param(base + "norm1.g", Tensor({D}, 1.0));
        add_param(base + "norm1.b", Tensor({D}));
        add_param(base + "ffn1.w", linear_weight(rng, D, D));
        add_param(base + "ffn1.b", Tensor({D}));
        add_param(base + "ffn2.w", linear_weight(rng, D, D));
        add_param(base + "ffn2.b", Tensor({D}));
        add_param(base + "norm2.g", Tensor({D}, 1.0));
        add_param(base + "norm2.b", Tensor({D}));
    }

    // ---- heads; confidence starts pessimistic, locations at the cell center
    add_param("head.score.reduce.w", conv_weight(rng, 32, D, 1));
    add_param("head.score.reduce.b", Tensor({32}));
    add_param("head.score.out.w", conv_weight(rng, 1, 32, 3));
    add_param("head.score.out.b", Tensor({1}, -2.0));
    add_param("head.loc.reduce.w", conv_weight(rng, 32, D, 1));
    add_param("head.loc.reduce.b", Tensor({32}));
    add_param("head.loc.out.w", conv_weight(rng, 4, 32, 3));
    add_param("head.loc.out.b", Tensor({4}));
    for (const char* hn : {"junction", "edge"}) {
        std::string base = std::string("head.") + hn + ".";
        add_param(base + "reduce.w", conv_weight(rng, 16, D, 1));
        add_param(base + "reduce.b", Tensor({16}));
        add_param(base + "out.w", conv_weight(rng, 1, 16, 3));
        add_param(base + "out.b", Tensor({1}));
    }

    build_constants();
}

void Model::build_constants() {
    const int L = static_cast<int>(cfg_.levels.size());
    const int D = cfg_.hidden_dim;
    const int P = cfg_.heads * L * cfg_.referring_points;
    const int K = cfg_.referring_points;
    const int nf = D / 4;

    for (int l = 0; l < L; ++l) {
        const int r = cfg_.levels[l];
        const int T = r * r;
        Tensor pos({T, D}), ref({T, P * 2}), scale({T, P * 2});
        for (int iy = 0; iy < r; ++iy)
            for (int ix = 0; ix < r; ++ix) {
                const int t = iy * r + ix;
                const double u = (ix + 0.5) / r, v = (iy + 0.5) / r;
                double* pr = pos.data() + static_cast<std::int64_t>(t) * D;
                for (int j = 0; j < nf; ++j) {
                    // wavelengths from the whole image down to ~1/50 of it
                    double f = 2.0 * kPi * std::pow(50.0, nf == 1 ? 0.0 : j / (nf - 1.0));
                    pr[2 * j + 0] = std::sin(f * u);
                    pr[2 * j + 1] = std::cos(f * u);
                    pr[D / 2 + 2 * j + 0] = std::sin(f * v);
                    pr[D / 2 + 2 * j + 1] = std::cos(f * v);
                }
                double* rr = ref.data() + static_cast<std::int64_t>(t) * P * 2;
                double* sr = scale.data() + static_cast<std::int64_t>(t) * P * 2;
                for (int p = 0; p < P; ++p) {
                    rr[2 * p + 0] = u;
                    rr[2 * p + 1] = v;
                    const int target = (p / K) % L;  // p = (h*L + level)*K + k
                    sr[2 * p + 0] = 1.0 / cfg_.levels[target];
                    sr[2 * p + 1] = 1.0 / cfg_.levels[target];
                }
            }
        pos_.push_back(pos);
        ref_.push_back(ref);
        off_scale_.push_back(scale);
    }
}

std::vector<Tensor> Model::backbone_forward(const Tensor& image) const {
    if (!image.defined() || image.rank() != 3 || image.dim(0) != 1)
        fail("backbone: expected a [1,H,W] image");
    if (image.dim(1) != image.dim(2)) fail("backbone: image must be square");
    if (image.dim(1) != cfg_.input_size)
        fail("backbone: image size " + std::to_string(image.dim(1)) +
             " does not match configured input_size " + std::to_string(cfg_.input_size));

    const auto rep = kernels::PadMode::Replicate;
    Tensor x = image;
    int res = cfg_.input_size;
    int pre = 0;
    while (res > cfg_.levels[0]) {
        char name[32];
        std::snprintf(name, sizeof name, "backbone.pre%d", pre++);
        x = relu(conv2d(x, param(std::string(name) + ".w"), param(std::string(name) + ".b"),
                        2, 1, rep));
        res /= 2;
    }
    const int L = static_cast<int>(cfg_.levels.size());
    std::vector<Tensor> c(static_cast<std::size_t>(L));
    c[0] = relu(conv2d(x, param("backbone.stem.w"), param("backbone.stem.b"), 1, 1, rep));
    for (int l = 1; l < L; ++l) {
        char name[32];
        std::snprintf(name, sizeof name, "backbone.down%d", l);
        c[l] = relu(conv2d(c[l - 1], param(std::string(name) + ".w"),
                           param(std::string(name) + ".b"), 2, 1, rep));
    }
    // top-down: coarsest lateral, then upsample-and-add
    std::vector<Tensor> out(static_cast<std::size_t>(L));
    for (int l = L - 1; l >= 0; --l) {
        char name[32];
        std::snprintf(name, sizeof name, "backbone.lat%d", l);
        Tensor lat = conv2d(c[l], param(std::string(name) + ".w"),
                            param(std::string(name) + ".b"), 1, 0, rep);
        out[l] = (l == L - 1) ? lat : add(lat, upsample2x(out[l + 1]));
        if (out[l].dim(1) != cfg_.levels[l])
            fail("backbone: internal resolution mismatch");
    }
    return out;
}

std::vector<Tensor> Model::merged_backbone(const Tensor& image) const {
    if (!cfg_.rotation_augment) return backbone_forward(image);
    auto f0 = backbone_forward(image);
    auto fp = backbone_forward(rot90_map(image, +1));
    auto fm = backbone_forward(rot90_map(image, -1));
    std::vector<Tensor> out;
    for (std::size_t l = 0; l < f0.size(); ++l) {
        Tensor a = rot90_map(fp[l], -1);  // undo the input rotation
        Tensor b = rot90_map(fm[l], +1);
        if (cfg_.rotation_merge == "max")
            out.push_back(emax(emax(f0[l], a), b));
        else
            out.push_back(mul(add(add(f0[l], a), b), 1.0 / 3.0));
    }
    return out;
}

std::vector<Tensor> Model::encode(std::vector<Tensor> features) const {
    const int L = static_cast<int>(cfg_.levels.size());
    const int D = cfg_.hidden_dim;
    const int H = cfg_.heads;
    const int K = cfg_.referring_points;
    if (static_cast<int>(features.size()) != L) fail("encode: wrong number of levels");

    std::vector<Tensor> toks(static_cast<std::size_t>(L));
    for (int l = 0; l < L; ++l) {
        const int r = cfg_.levels[l];
        if (features[l].rank() != 3 || features[l].dim(0) != D || features[l].dim(1) != r ||
            features[l].dim(2) != r)
            fail("encode: feature level has unexpected shape");
        toks[l] = transpose2d(reshape(features[l], {D, r * r}));  // [T,D]
    }

    Tensor level_embed = param("encoder.level_embed");
    std::vector<Tensor> embed_row(static_cast<std::size_t>(L));
    for (int l = 0; l < L; ++l) embed_row[l] = reshape(gather_rows(level_embed, {l}), {D});

    for (int i = 0; i < cfg_.encoder_layers; ++i) {
        char pre_buf[32];
        std::snprintf(pre_buf, sizeof pre_buf, "encoder.l%d.", i);
        std::string base(pre_buf);
        Tensor wv = param(base + "value.w"), bv = param(base + "value.b");
        Tensor wo = param(base + "offset.w"), bo = param(base + "offset.b");
        Tensor wa = param(base + "attw.w"), ba = param(base + "attw.b");
        Tensor wout = param(base + "out.w"), bout = param(base + "out.b");
        Tensor g1 = param(base + "norm1.g"), be1 = param(base + "norm1.b");
        Tensor w1 = param(base + "ffn1.w"), b1 = param(base + "ffn1.b");
        Tensor w2 = param(base + "ffn2.w"), b2 = param(base + "ffn2.b");
        Tensor g2 = param(base + "norm2.g"), be2 = param(base + "norm2.b");

        // all levels' value maps are built from the incoming tokens so
        // every level attends into the same snapshot
        std::vector<Tensor> vmaps;
        for (int l = 0; l < L; ++l) {
            const int r = cfg_.levels[l];
            Tensor v = add_rowvec(matmul(toks[l], wv), bv);
            vmaps.push_back(reshape(transpose2d(v), {D, r, r}));
        }

        std::vector<Tensor> next(static_cast<std::size_t>(L));
        for (int l = 0; l < L; ++l) {
            const int T = cfg_.levels[l] * cfg_.levels[l];
            const int P = H * L * K;
            Tensor q = add_rowvec(add(toks[l], pos_[l]), embed_row[l]);
            Tensor off = add_rowvec(matmul(q, wo), bo);  // [T,P*2] in target-level cells
            Tensor pts = reshape(add(mul(off, off_scale_[l]), ref_[l]), {T, P, 2});
            Tensor logits = add_rowvec(matmul(q, wa), ba);
            // normalize across the K*L samples of each head
            Tensor wts = reshape(softmax(reshape(logits, {T * H, L * K}), 1), {T, P});
            Tensor att = deform_attn(vmaps, pts, wts, H);
            att = add_rowvec(matmul(att, wout), bout);
            Tensor x = layer_norm(add(toks[l], att), g1, be1);
            Tensor f = add_rowvec(matmul(relu(add_rowvec(matmul(x, w1), b1)), w2), b2);
            next[l] = layer_norm(add(x, f), g2, be2);
        }
        toks = std::move(next);
    }

    std::vector<Tensor> out(static_cast<std::size_t>(L));
    for (int l = 0; l < L; ++l) {
        const int r = cfg_.levels[l];
        out[l] = reshape(transpose2d(toks[l]), {D, r, r});
    }
    return out;
}

ModelOutput Model::heads_forward(const std::vector<Tensor>& features) const {
    // shape-driven so the heads can be probed on any single pyramid level
    const auto rep = kernels::PadMode::Replicate;
    const Tensor& finest = features.front();
    const int G = finest.dim(1);

    ModelOutput out;
    Tensor sh = relu(conv2d(finest, param("head.score.reduce.w"),
                            param("head.score.reduce.b"), 1, 0, rep));
    Tensor slog = conv2d(sh, param("head.score.out.w"), param("head.score.out.b"), 1, 1, rep);
    out.score = sigmoid(reshape(slog, {G, G}));

    Tensor lh = relu(conv2d(finest, param("head.loc.reduce.w"),
                            param("head.loc.reduce.b"), 1, 0, rep));
    Tensor loc4 = conv2d(lh, param("head.loc.out.w"), param("head.loc.out.b"), 1, 1, rep);
    // the conv output is an offset from the cell centre; anchoring the
    // regression locally conditions it far better than absolute coordinates
    std::vector<double> anchor(static_cast<std::size_t>(G) * G * 4);
    for (int iy = 0; iy < G; ++iy)
        for (int ix = 0; ix < G; ++ix) {
            const double cx = (ix + 0.5) / G, cy = (iy + 0.5) / G;
            double* a = anchor.data() + (static_cast<std::size_t>(iy) * G + ix) * 4;
            a[0] = cx; a[1] = cy; a[2] = cx; a[3] = cy;
        }
    out.loc = add(reshape(transpose2d(reshape(loc4, {4, G * G})), {G, G, 4}),
                  Tensor({G, G, 4}, anchor));

    for (const char* hn : {"junction", "edge"}) {
        std::string base = std::string("head.") + hn + ".";
        Tensor rw = param(base + "reduce.w"), rb = param(base + "reduce.b");
        Tensor ow = param(base + "out.w"), ob = param(base + "out.b");
        for (std::size_t l = 0; l < features.size(); ++l) {
            const int r = features[l].dim(1);
            Tensor h = relu(conv2d(features[l], rw, rb, 1, 0, rep));
            Tensor m = sigmoid(reshape(conv2d(h, ow, ob, 1, 1, rep), {r, r}));
            (hn[0] == 'j' ? out.junction : out.edge).push_back(m);
        }
    }
    return out;
}

ModelOutput Model::forward(const Tensor& image) const {
    return heads_forward(encode(merged_backbone(image)));
}

// ------------------------------------------------------------------ AdamW ---

AdamW::AdamW(double lr_, double weight_decay_, double beta1_, double beta2_, double eps_)
    : lr(lr_), weight_decay(weight_decay_), beta1(beta1_), beta2(beta2_), eps(eps_) {}

void AdamW::step(std::vector<Model::Param>& params, double lr_scale) {
    if (m.empty()) {
        m.resize(params.size());
        v.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            m[i].assign(static_cast<std::size_t>(params[i].t.numel()), 0.0);
            v[i].assign(static_cast<std::size_t>(params[i].t.numel()), 0.0);
        }
    }
    if (m.size() != params.size()) throw TensorError("adamw: parameter count changed");
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    const double a = lr * lr_scale;
    for (std::size_t i = 0; i < params.size(); ++i) {
        double* p = params[i].t.data();
        const double* g = params[i].t.grad();  // null when nothing reached it
        auto& mi = m[i];
        auto& vi = v[i];
        if (mi.size() != static_cast<std::size_t>(params[i].t.numel()))
            throw TensorError("adamw: parameter shape changed");
        for (std::size_t j = 0; j < mi.size(); ++j) {
            const double gj = g ? g[j] : 0.0;
            mi[j] = beta1 * mi[j] + (1.0 - beta1) * gj;
            vi[j] = beta2 * vi[j] + (1.0 - beta2) * gj * gj;
            const double mh = mi[j] / bc1, vh = vi[j] / bc2;
            p[j] -= a * (mh / (std::sqrt(vh) + eps) + weight_decay * p[j]);
        }
    }
}

// ------------------------------------------------------------- train step ---

Tensor training_objective(const Model& model, const Sample& sample, const TrainSettings& ts,
                          std::uint64_t sampling_seed, TrainStepStats* stats) {
    const ModelConfig& cfg = model.config();
    const int G = cfg.levels[0];

    ModelOutput out = model.forward(sample.image);

    GridAssignment asg =
        sample_negatives(assign_targets(sample.gts, G), ts.negative_ratio, sampling_seed);
    GatheredTargets rows = gather_targets(asg, sample.gts);

    std::vector<int> pos_cells;
    std::vector<double> target_vals;
    for (std::size_t i = 0; i < rows.cells.size(); ++i)
        if (rows.labels[i] == 1) {
            pos_cells.push_back(rows.cells[i]);
            const LineSegment& tg = rows.targets[i];
            target_vals.push_back(tg.e1.x);
            target_vals.push_back(tg.e1.y);
            target_vals.push_back(tg.e2.x);
            target_vals.push_back(tg.e2.y);
        }
    const int npos = static_cast<int>(pos_cells.size());

    Tensor conf = gather_rows(reshape(out.score, {G * G}), rows.cells);
    Tensor pred, target;
    if (npos > 0) {
        pred = gather_rows(reshape(out.loc, {G * G, 4}), pos_cells);
        target = Tensor({npos, 4}, target_vals);
    }

    GatheredBatch batch = make_gathered_batch(conf, rows.labels, pred, target);
    LossParts parts;
    parts.rank = ranking_loss(batch, ts.rank_grad_through_quality);
    parts.conf = confidence_loss(batch);
    parts.pos = position_loss(batch, ts.position_loss_normalized);

    GeoMaps gtm = rasterize_geo_maps(sample.gts, cfg.levels, cfg.endpoint_sigma_px);
    parts.junc = junction_map_loss(out.junction, gtm.endpoint);
    parts.edge = edge_map_loss(out.edge, gtm.edge);

    Tensor total = total_loss(parts, ts.weights);
    if (!std::isfinite(total.item())) {
        char msg[160];
        std::snprintf(msg, sizeof msg,
                      "train step produced a non-finite loss (sampling_seed=%llu, "
                      "rank=%g conf=%g pos=%g junc=%g edge=%g)",
                      static_cast<unsigned long long>(sampling_seed), parts.rank.item(),
                      parts.conf.item(), parts.pos.item(), parts.junc.item(),
                      parts.edge.item());
        throw TensorError(msg);
    }

    if (stats) {
        stats->rank = parts.rank.item();
        stats->conf = parts.conf.item();
        stats->pos = parts.pos.item();
        stats->junc = parts.junc.item();
        stats->edge = parts.edge.item();
        stats->total = total.item();
        stats->positives = npos;
        stats->negatives = static_cast<int>(rows.cells.size()) - npos;
    }
    return total;
}

TrainStepStats train_step(Model& model, const Sample& sample, const TrainSettings& ts,
                          AdamW& opt, double lr_scale, std::uint64_t step_seed) {
    Tape tape;
    TapeScope scope(tape);

    TrainStepStats st;
    Tensor total = training_objective(model, sample, ts, step_seed, &st);

    tape.backward(total);
    opt.step(model.params(), lr_scale);
    for (auto& p : model.params()) p.t.zero_grad();
    return st;
}

}  // namespace ranklsd
