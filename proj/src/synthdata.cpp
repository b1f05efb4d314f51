#include "ranklsd/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "ranklsd/gtmaps.hpp"
#include "ranklsd/metrics.hpp"
#include "ranklsd/rng.hpp"

namespace ranklsd {

namespace {

constexpr double kMargin = 0.06;
constexpr double kPi = 3.14159265358979323846;

bool usable(const LineSegment& cand, const std::vector<LineSegment>& have, double min_len,
            int image_size) {
    if (length(cand) < min_len) return false;
    for (const LineSegment& s : have) {
        // reject near-duplicates so centroids stay distinct
        if (segment_distance(cand, s, image_size) < 3.0) return false;
    }
    return true;
}

void add_box(Rng& rng, std::vector<LineSegment>& gts, std::size_t want, double min_len,
             int image_size) {
    const double x0 = rng.uniform(kMargin, 0.55);
    const double y0 = rng.uniform(kMargin, 0.55);
    const double w = rng.uniform(0.18, std::min(0.38, 1.0 - kMargin - x0));
    const double h = rng.uniform(0.18, std::min(0.38, 1.0 - kMargin - y0));
    const LineSegment edges[4] = {
        {x0, y0, x0 + w, y0},
        {x0 + w, y0, x0 + w, y0 + h},
        {x0, y0 + h, x0 + w, y0 + h},
        {x0, y0, x0, y0 + h},
    };
    for (const LineSegment& e : edges) {
        if (gts.size() >= want) return;
        if (usable(e, gts, min_len, image_size)) gts.push_back(e.canonicalized());
    }
}

void add_polygon(Rng& rng, std::vector<LineSegment>& gts, std::size_t want, double min_len,
                 int image_size) {
    const int corners = rng.range(3, 5);
    const double cx = rng.uniform(0.3, 0.7);
    const double cy = rng.uniform(0.3, 0.7);
    const double radius = rng.uniform(0.12, 0.24);
    const double phase = rng.uniform(0.0, 2.0 * kPi);
    std::vector<Point> pts;
    for (int i = 0; i < corners; ++i) {
        const double ang = phase + 2.0 * kPi * i / corners;
        const double r = radius * rng.uniform(0.75, 1.0);
        pts.push_back({cx + r * std::cos(ang), cy + r * std::sin(ang)});
    }
    for (int i = 0; i < corners; ++i) {
        if (gts.size() >= want) return;
        const LineSegment e(pts[static_cast<std::size_t>(i)],
                            pts[static_cast<std::size_t>((i + 1) % corners)]);
        if (usable(e, gts, min_len, image_size)) gts.push_back(e.canonicalized());
    }
}

void add_free(Rng& rng, std::vector<LineSegment>& gts, std::size_t want, double min_len,
              int image_size) {
    if (gts.size() >= want) return;
    const double ax = rng.uniform(kMargin, 1.0 - kMargin);
    const double ay = rng.uniform(kMargin, 1.0 - kMargin);
    // man-made scenes skew axis-aligned and diagonal
    const int mode = static_cast<int>(rng.below(5));
    double ang;
    switch (mode) {
        case 0: ang = 0.0; break;
        case 1: ang = kPi / 2.0; break;
        case 2: ang = kPi / 4.0; break;
        case 3: ang = 3.0 * kPi / 4.0; break;
        default: ang = rng.uniform(0.0, kPi); break;
    }
    if (mode < 4) ang += rng.uniform(-0.08, 0.08);
    const double len = rng.uniform(0.15, 0.55);
    const double bx = std::clamp(ax + len * std::cos(ang), kMargin, 1.0 - kMargin);
    const double by = std::clamp(ay + len * std::sin(ang), kMargin, 1.0 - kMargin);
    const LineSegment e(ax, ay, bx, by);
    if (usable(e, gts, min_len, image_size)) gts.push_back(e.canonicalized());
}

void box_blur3(std::vector<double>& img, int h, int w) {
    std::vector<double> src = img;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int dy = -1; dy <= 1; ++dy) {
                const int yy = std::clamp(y + dy, 0, h - 1);
                for (int dx = -1; dx <= 1; ++dx) {
                    const int xx = std::clamp(x + dx, 0, w - 1);
                    acc += src[static_cast<std::size_t>(yy) * w + xx];
                }
            }
            img[static_cast<std::size_t>(y) * w + x] = acc / 9.0;
        }
    }
}

}  // namespace

Sample generate(const SceneSpec& spec, int index) {
    if (spec.image_size < 8) throw std::runtime_error("generate: image size too small");
    if (spec.min_segments < 1 || spec.max_segments < spec.min_segments) {
        throw std::runtime_error("generate: bad segment count range");
    }
    Rng rng(derive_seed(spec.seed, static_cast<std::uint64_t>(index)));
    const int h = spec.image_size;
    const std::size_t want =
        static_cast<std::size_t>(rng.range(spec.min_segments, spec.max_segments));
    const double min_len = spec.min_length_px / h;

    Sample out;
    const double wsum = spec.weight_box + spec.weight_polygon + spec.weight_free;
    int guard = 0;
    while (out.gts.size() < want && ++guard < 200) {
        const double pick = rng.uniform(0.0, wsum);
        if (pick < spec.weight_box) {
            add_box(rng, out.gts, want, min_len, h);
        } else if (pick < spec.weight_box + spec.weight_polygon) {
            add_polygon(rng, out.gts, want, min_len, h);
        } else {
            add_free(rng, out.gts, want, min_len, h);
        }
    }

    // light gradient background, dark strokes from the shared rasterizer
    const Tensor trace = rasterize_edge_map(out.gts, h);
    out.image = Tensor({1, h, h});
    const double gx = std::cos(rng.uniform(0.0, 2.0 * kPi));
    const double gy = std::sin(rng.uniform(0.0, 2.0 * kPi));
    double* img = out.image.data();
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < h; ++x) {
            const double t = (gx * x / (h - 1) + gy * y / (h - 1) + 1.0) / 2.0;
            const double bg = spec.background_lo + (spec.background_hi - spec.background_lo) * t;
            const double cover = trace.data()[static_cast<std::size_t>(y) * h + x];
            // diagonal gradients can push bg slightly past 1; keep the
            // documented [0,1] range regardless of the noise setting
            img[static_cast<std::size_t>(y) * h + x] =
                std::clamp(bg * (1.0 - cover) + spec.stroke_level * cover, 0.0, 1.0);
        }
    }
    if (spec.noise_sigma > 0.0) {
        for (std::int64_t i = 0; i < static_cast<std::int64_t>(h) * h; ++i) {
            img[i] = std::clamp(img[i] + spec.noise_sigma * rng.normal(), 0.0, 1.0);
        }
    }
    std::vector<double> plane(img, img + static_cast<std::size_t>(h) * h);
    for (int pass = 0; pass < spec.blur_passes; ++pass) box_blur3(plane, h, h);
    std::copy(plane.begin(), plane.end(), img);
    return out;
}

std::vector<ScoredSegment> perturb_candidates(const std::vector<LineSegment>& gts,
                                              std::uint64_t seed, int dup_factor,
                                              double noise_px) {
    if (dup_factor < 1) throw std::runtime_error("perturb_candidates: dup_factor must be >= 1");
    Rng rng(seed);
    std::vector<ScoredSegment> pool;
    const double scale = kMetricScale;
    const auto jitter = [&](const LineSegment& s, double px) {
        const double a = px / scale / std::sqrt(2.0);
        return LineSegment(s.e1.x + rng.uniform(-a, a), s.e1.y + rng.uniform(-a, a),
                           s.e2.x + rng.uniform(-a, a), s.e2.y + rng.uniform(-a, a))
            .canonicalized();
    };
    for (const LineSegment& gt : gts) {
        for (int d = 0; d < dup_factor; ++d) {
            ScoredSegment cand;
            cand.seg = jitter(gt, d == 0 ? std::min(1.0, noise_px) : noise_px);
            cand.c = rng.uniform();
            cand.s = cand.c;
            pool.push_back(cand);
        }
    }
    return pool;
}

}  // namespace ranklsd
