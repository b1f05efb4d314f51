#include "ranklsd/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace ranklsd::kernels {

namespace {

inline int clampi(int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); }

struct Corner {
    int x0, x1, y0, y1;
    double w00, w01, w10, w11;
};

// Shared by the parallel and reference paths so interpolation is bitwise
// identical between them.
inline Corner corner_weights(double px, double py, int w, int h) {
    const double xc = std::min(std::max(px, 0.0), static_cast<double>(w - 1));
    const double yc = std::min(std::max(py, 0.0), static_cast<double>(h - 1));
    Corner c;
    c.x0 = static_cast<int>(std::floor(xc));
    c.y0 = static_cast<int>(std::floor(yc));
    c.x1 = std::min(c.x0 + 1, w - 1);
    c.y1 = std::min(c.y0 + 1, h - 1);
    const double fx = xc - c.x0;
    const double fy = yc - c.y0;
    c.w00 = (1.0 - fy) * (1.0 - fx);
    c.w01 = (1.0 - fy) * fx;
    c.w10 = fy * (1.0 - fx);
    c.w11 = fy * fx;
    return c;
}

inline double corner_sample(const double* plane, int w, const Corner& c) {
    const double m00 = plane[c.y0 * w + c.x0];
    const double m01 = plane[c.y0 * w + c.x1];
    const double m10 = plane[c.y1 * w + c.x0];
    const double m11 = plane[c.y1 * w + c.x1];
    return ((m00 * c.w00 + m01 * c.w01) + m10 * c.w10) + m11 * c.w11;
}

inline bool in_range(int v, int n) { return v >= 0 && v < n; }

}  // namespace

// ---------------------------------------------------------------- matmul ---

void matmul_nn(const double* a, const double* b, double* c, int m, int k, int n,
               bool accumulate) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
        double* crow = c + static_cast<std::int64_t>(i) * n;
        if (!accumulate) std::fill(crow, crow + n, 0.0);
        const double* arow = a + static_cast<std::int64_t>(i) * k;
        for (int kk = 0; kk < k; ++kk) {
            const double av = arow[kk];
            const double* brow = b + static_cast<std::int64_t>(kk) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void matmul_nt(const double* a, const double* b, double* c, int m, int n, int k,
               bool accumulate) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
        const double* arow = a + static_cast<std::int64_t>(i) * n;
        double* crow = c + static_cast<std::int64_t>(i) * k;
        for (int kk = 0; kk < k; ++kk) {
            const double* brow = b + static_cast<std::int64_t>(kk) * n;
            double s = accumulate ? crow[kk] : 0.0;
            for (int j = 0; j < n; ++j) s += arow[j] * brow[j];
            crow[kk] = s;
        }
    }
}

void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n,
               bool accumulate) {
#pragma omp parallel for schedule(static)
    for (int kk = 0; kk < k; ++kk) {
        double* crow = c + static_cast<std::int64_t>(kk) * n;
        if (!accumulate) std::fill(crow, crow + n, 0.0);
        for (int i = 0; i < m; ++i) {
            const double av = a[static_cast<std::int64_t>(i) * k + kk];
            const double* brow = b + static_cast<std::int64_t>(i) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// ---------------------------------------------------------------- conv2d ---

void conv2d_forward(const double* in, const double* w, const double* b, double* out,
                    int c, int h, int wd, int f, int kh, int kw, int stride, int pad,
                    PadMode mode) {
    const int oh = (h + 2 * pad - kh) / stride + 1;
    const int ow = (wd + 2 * pad - kw) / stride + 1;
#pragma omp parallel for schedule(static)
    for (int fo = 0; fo < f; ++fo) {
        double* oplane = out + static_cast<std::int64_t>(fo) * oh * ow;
        std::fill(oplane, oplane + static_cast<std::int64_t>(oh) * ow, b ? b[fo] : 0.0);
        for (int ci = 0; ci < c; ++ci) {
            const double* iplane = in + static_cast<std::int64_t>(ci) * h * wd;
            const double* wbase =
                w + ((static_cast<std::int64_t>(fo) * c + ci) * kh) * kw;
            for (int ky = 0; ky < kh; ++ky) {
                for (int kx = 0; kx < kw; ++kx) {
                    const double wv = wbase[ky * kw + kx];
                    for (int oy = 0; oy < oh; ++oy) {
                        int iy = oy * stride - pad + ky;
                        if (mode == PadMode::Zero && !in_range(iy, h)) continue;
                        iy = clampi(iy, 0, h - 1);
                        const double* irow = iplane + static_cast<std::int64_t>(iy) * wd;
                        double* orow = oplane + static_cast<std::int64_t>(oy) * ow;
                        const int ix0 = -pad + kx;
                        if (mode == PadMode::Zero) {
                            for (int ox = 0; ox < ow; ++ox) {
                                const int ix = ox * stride + ix0;
                                if (!in_range(ix, wd)) continue;
                                orow[ox] += wv * irow[ix];
                            }
                        } else {
                            for (int ox = 0; ox < ow; ++ox) {
                                const int ix = clampi(ox * stride + ix0, 0, wd - 1);
                                orow[ox] += wv * irow[ix];
                            }
                        }
                    }
                }
            }
        }
    }
}

void conv2d_backward_input(const double* dout, const double* w, double* din, int c, int h,
                           int wd, int f, int kh, int kw, int stride, int pad, PadMode mode) {
    const int oh = (h + 2 * pad - kh) / stride + 1;
    const int ow = (wd + 2 * pad - kw) / stride + 1;
    // scatter, parallel across disjoint input channels
#pragma omp parallel for schedule(static)
    for (int ci = 0; ci < c; ++ci) {
        double* dplane = din + static_cast<std::int64_t>(ci) * h * wd;
        for (int fo = 0; fo < f; ++fo) {
            const double* oplane = dout + static_cast<std::int64_t>(fo) * oh * ow;
            const double* wbase =
                w + ((static_cast<std::int64_t>(fo) * c + ci) * kh) * kw;
            for (int ky = 0; ky < kh; ++ky) {
                for (int kx = 0; kx < kw; ++kx) {
                    const double wv = wbase[ky * kw + kx];
                    for (int oy = 0; oy < oh; ++oy) {
                        int iy = oy * stride - pad + ky;
                        if (mode == PadMode::Zero && !in_range(iy, h)) continue;
                        iy = clampi(iy, 0, h - 1);
                        double* drow = dplane + static_cast<std::int64_t>(iy) * wd;
                        const double* orow = oplane + static_cast<std::int64_t>(oy) * ow;
                        const int ix0 = -pad + kx;
                        for (int ox = 0; ox < ow; ++ox) {
                            int ix = ox * stride + ix0;
                            if (mode == PadMode::Zero && !in_range(ix, wd)) continue;
                            ix = clampi(ix, 0, wd - 1);
                            drow[ix] += wv * orow[ox];
                        }
                    }
                }
            }
        }
    }
}

void conv2d_backward_weight(const double* dout, const double* in, double* dw, int c, int h,
                            int wd, int f, int kh, int kw, int stride, int pad, PadMode mode) {
    const int oh = (h + 2 * pad - kh) / stride + 1;
    const int ow = (wd + 2 * pad - kw) / stride + 1;
    const std::int64_t wcount = static_cast<std::int64_t>(f) * c * kh * kw;
#pragma omp parallel for schedule(static)
    for (std::int64_t widx = 0; widx < wcount; ++widx) {
        const int kx = static_cast<int>(widx % kw);
        const int ky = static_cast<int>((widx / kw) % kh);
        const int ci = static_cast<int>((widx / (kw * kh)) % c);
        const int fo = static_cast<int>(widx / (static_cast<std::int64_t>(kw) * kh * c));
        const double* oplane = dout + static_cast<std::int64_t>(fo) * oh * ow;
        const double* iplane = in + static_cast<std::int64_t>(ci) * h * wd;
        double s = 0.0;
        for (int oy = 0; oy < oh; ++oy) {
            int iy = oy * stride - pad + ky;
            if (mode == PadMode::Zero && !in_range(iy, h)) continue;
            iy = clampi(iy, 0, h - 1);
            const double* orow = oplane + static_cast<std::int64_t>(oy) * ow;
            const double* irow = iplane + static_cast<std::int64_t>(iy) * wd;
            const int ix0 = -pad + kx;
            for (int ox = 0; ox < ow; ++ox) {
                int ix = ox * stride + ix0;
                if (mode == PadMode::Zero && !in_range(ix, wd)) continue;
                ix = clampi(ix, 0, wd - 1);
                s += orow[ox] * irow[ix];
            }
        }
        dw[widx] += s;
    }
}

void conv2d_backward_bias(const double* dout, double* db, int f, int oh, int ow) {
#pragma omp parallel for schedule(static)
    for (int fo = 0; fo < f; ++fo) {
        const double* oplane = dout + static_cast<std::int64_t>(fo) * oh * ow;
        double s = 0.0;
        for (std::int64_t i = 0; i < static_cast<std::int64_t>(oh) * ow; ++i) s += oplane[i];
        db[fo] += s;
    }
}

// -------------------------------------------------------------- bilinear ---

void bilinear_forward(const double* map, int c, int h, int w, const double* pts, int n,
                      double* out) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i) {
        const Corner cr = corner_weights(pts[2 * i], pts[2 * i + 1], w, h);
        for (int ch = 0; ch < c; ++ch) {
            out[static_cast<std::int64_t>(i) * c + ch] =
                corner_sample(map + static_cast<std::int64_t>(ch) * h * w, w, cr);
        }
    }
}

void bilinear_backward_map(const double* dout, int c, int h, int w, const double* pts, int n,
                           double* dmap) {
    // scatter, parallel across disjoint channels
#pragma omp parallel for schedule(static)
    for (int ch = 0; ch < c; ++ch) {
        double* plane = dmap + static_cast<std::int64_t>(ch) * h * w;
        for (int i = 0; i < n; ++i) {
            const Corner cr = corner_weights(pts[2 * i], pts[2 * i + 1], w, h);
            const double g = dout[static_cast<std::int64_t>(i) * c + ch];
            plane[cr.y0 * w + cr.x0] += g * cr.w00;
            plane[cr.y0 * w + cr.x1] += g * cr.w01;
            plane[cr.y1 * w + cr.x0] += g * cr.w10;
            plane[cr.y1 * w + cr.x1] += g * cr.w11;
        }
    }
}

void bilinear_backward_points(const double* dout, const double* map, int c, int h, int w,
                              const double* pts, int n, double* dpts) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i) {
        const double px = pts[2 * i], py = pts[2 * i + 1];
        // clamped region is flat
        const bool inx = px > 0.0 && px < static_cast<double>(w - 1);
        const bool iny = py > 0.0 && py < static_cast<double>(h - 1);
        const Corner cr = corner_weights(px, py, w, h);
        const double fx = (px - static_cast<double>(cr.x0));
        const double fy = (py - static_cast<double>(cr.y0));
        double gx = 0.0, gy = 0.0;
        for (int ch = 0; ch < c; ++ch) {
            const double* plane = map + static_cast<std::int64_t>(ch) * h * w;
            const double m00 = plane[cr.y0 * w + cr.x0];
            const double m01 = plane[cr.y0 * w + cr.x1];
            const double m10 = plane[cr.y1 * w + cr.x0];
            const double m11 = plane[cr.y1 * w + cr.x1];
            const double g = dout[static_cast<std::int64_t>(i) * c + ch];
            gx += g * ((m01 - m00) * (1.0 - fy) + (m11 - m10) * fy);
            gy += g * ((m10 - m00) * (1.0 - fx) + (m11 - m01) * fx);
        }
        dpts[2 * i] += inx ? gx : 0.0;
        dpts[2 * i + 1] += iny ? gy : 0.0;
    }
}

// ----------------------------------------------------- deformable attention ---

void deform_attn_forward(const DeformLevels& lv, int d, int heads, const double* pts,
                         const double* wts, int t, int p, double* out) {
    const int dh = d / heads;
    const int per_head = p / heads;           // levels * K
    const int k = per_head / lv.count;
#pragma omp parallel for schedule(static)
    for (int ti = 0; ti < t; ++ti) {
        double* orow = out + static_cast<std::int64_t>(ti) * d;
        std::fill(orow, orow + d, 0.0);
        for (int hd = 0; hd < heads; ++hd) {
            for (int l = 0; l < lv.count; ++l) {
                const int hl = lv.heights[l], wl = lv.widths[l];
                const double* vmap = lv.value_maps[l];
                for (int kk = 0; kk < k; ++kk) {
                    const int pi = (hd * lv.count + l) * k + kk;
                    const std::int64_t off = (static_cast<std::int64_t>(ti) * p + pi);
                    const double px = pts[2 * off] * wl - 0.5;
                    const double py = pts[2 * off + 1] * hl - 0.5;
                    const Corner cr = corner_weights(px, py, wl, hl);
                    const double wv = wts[off];
                    for (int ch = hd * dh; ch < (hd + 1) * dh; ++ch) {
                        orow[ch] += wv * corner_sample(
                            vmap + static_cast<std::int64_t>(ch) * hl * wl, wl, cr);
                    }
                }
            }
        }
    }
}

void deform_attn_backward(const DeformLevels& lv, int d, int heads, const double* pts,
                          const double* wts, int t, int p, const double* dout,
                          double* const* dvalue_maps, double* dpts, double* dwts) {
    const int dh = d / heads;
    const int per_head = p / heads;
    const int k = per_head / lv.count;

    // gradients wrt weights and points, parallel over tokens
#pragma omp parallel for schedule(static)
    for (int ti = 0; ti < t; ++ti) {
        const double* grow = dout + static_cast<std::int64_t>(ti) * d;
        for (int hd = 0; hd < heads; ++hd) {
            for (int l = 0; l < lv.count; ++l) {
                const int hl = lv.heights[l], wl = lv.widths[l];
                const double* vmap = lv.value_maps[l];
                for (int kk = 0; kk < k; ++kk) {
                    const int pi = (hd * lv.count + l) * k + kk;
                    const std::int64_t off = (static_cast<std::int64_t>(ti) * p + pi);
                    const double px = pts[2 * off] * wl - 0.5;
                    const double py = pts[2 * off + 1] * hl - 0.5;
                    const bool inx = px > 0.0 && px < static_cast<double>(wl - 1);
                    const bool iny = py > 0.0 && py < static_cast<double>(hl - 1);
                    const Corner cr = corner_weights(px, py, wl, hl);
                    const double fx = px - static_cast<double>(cr.x0);
                    const double fy = py - static_cast<double>(cr.y0);
                    const double wv = wts[off];
                    double dw = 0.0, gx = 0.0, gy = 0.0;
                    for (int ch = hd * dh; ch < (hd + 1) * dh; ++ch) {
                        const double* plane = vmap + static_cast<std::int64_t>(ch) * hl * wl;
                        const double m00 = plane[cr.y0 * wl + cr.x0];
                        const double m01 = plane[cr.y0 * wl + cr.x1];
                        const double m10 = plane[cr.y1 * wl + cr.x0];
                        const double m11 = plane[cr.y1 * wl + cr.x1];
                        const double g = grow[ch];
                        dw += g * (((m00 * cr.w00 + m01 * cr.w01) + m10 * cr.w10) +
                                   m11 * cr.w11);
                        gx += g * ((m01 - m00) * (1.0 - fy) + (m11 - m10) * fy);
                        gy += g * ((m10 - m00) * (1.0 - fx) + (m11 - m01) * fx);
                    }
                    dwts[off] += dw;
                    dpts[2 * off] += inx ? wv * gx * wl : 0.0;
                    dpts[2 * off + 1] += iny ? wv * gy * hl : 0.0;
                }
            }
        }
    }

    // gradient wrt value maps: scatter, parallel across disjoint channels
#pragma omp parallel for schedule(static)
    for (int ch = 0; ch < d; ++ch) {
        const int hd = ch / dh;
        for (int ti = 0; ti < t; ++ti) {
            const double g0 = dout[static_cast<std::int64_t>(ti) * d + ch];
            for (int l = 0; l < lv.count; ++l) {
                const int hl = lv.heights[l], wl = lv.widths[l];
                double* plane = dvalue_maps[l] + static_cast<std::int64_t>(ch) * hl * wl;
                for (int kk = 0; kk < k; ++kk) {
                    const int pi = (hd * lv.count + l) * k + kk;
                    const std::int64_t off = (static_cast<std::int64_t>(ti) * p + pi);
                    const double px = pts[2 * off] * wl - 0.5;
                    const double py = pts[2 * off + 1] * hl - 0.5;
                    const Corner cr = corner_weights(px, py, wl, hl);
                    const double g = g0 * wts[off];
                    plane[cr.y0 * wl + cr.x0] += g * cr.w00;
                    plane[cr.y0 * wl + cr.x1] += g * cr.w01;
                    plane[cr.y1 * wl + cr.x0] += g * cr.w10;
                    plane[cr.y1 * wl + cr.x1] += g * cr.w11;
                }
            }
        }
    }
}

// ------------------------------------------------------ softmax / layernorm ---

void softmax_rows(const double* x, double* y, int r, int c) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < r; ++i) {
        const double* xr = x + static_cast<std::int64_t>(i) * c;
        double* yr = y + static_cast<std::int64_t>(i) * c;
        double mx = xr[0];
        for (int j = 1; j < c; ++j) mx = std::max(mx, xr[j]);
        double s = 0.0;
        for (int j = 0; j < c; ++j) {
            yr[j] = std::exp(xr[j] - mx);
            s += yr[j];
        }
        const double inv = 1.0 / s;
        for (int j = 0; j < c; ++j) yr[j] *= inv;
    }
}

void softmax_rows_backward(const double* y, const double* dy, double* dx, int r, int c) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < r; ++i) {
        const double* yr = y + static_cast<std::int64_t>(i) * c;
        const double* dyr = dy + static_cast<std::int64_t>(i) * c;
        double* dxr = dx + static_cast<std::int64_t>(i) * c;
        double dot = 0.0;
        for (int j = 0; j < c; ++j) dot += yr[j] * dyr[j];
        for (int j = 0; j < c; ++j) dxr[j] += yr[j] * (dyr[j] - dot);
    }
}

void layer_norm_rows(const double* x, const double* gamma, const double* beta, double* y,
                     double* inv_std, double* xhat, int r, int c, double eps) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < r; ++i) {
        const double* xr = x + static_cast<std::int64_t>(i) * c;
        double* yr = y + static_cast<std::int64_t>(i) * c;
        double* xh = xhat + static_cast<std::int64_t>(i) * c;
        double mu = 0.0;
        for (int j = 0; j < c; ++j) mu += xr[j];
        mu /= c;
        double var = 0.0;
        for (int j = 0; j < c; ++j) var += (xr[j] - mu) * (xr[j] - mu);
        var /= c;
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[i] = is;
        for (int j = 0; j < c; ++j) {
            xh[j] = (xr[j] - mu) * is;
            yr[j] = gamma[j] * xh[j] + beta[j];
        }
    }
}

void layer_norm_rows_backward(const double* dy, const double* gamma, const double* xhat,
                              const double* inv_std, double* dx, double* dgamma, double* dbeta,
                              int r, int c) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < r; ++i) {
        const double* dyr = dy + static_cast<std::int64_t>(i) * c;
        const double* xh = xhat + static_cast<std::int64_t>(i) * c;
        double* dxr = dx + static_cast<std::int64_t>(i) * c;
        double m1 = 0.0, m2 = 0.0;
        for (int j = 0; j < c; ++j) {
            const double dh = dyr[j] * gamma[j];
            m1 += dh;
            m2 += dh * xh[j];
        }
        m1 /= c;
        m2 /= c;
        for (int j = 0; j < c; ++j) {
            const double dh = dyr[j] * gamma[j];
            dxr[j] += inv_std[i] * (dh - m1 - xh[j] * m2);
        }
    }
    // parameter gradients, parallel across disjoint columns
#pragma omp parallel for schedule(static)
    for (int j = 0; j < c; ++j) {
        double dg = 0.0, db = 0.0;
        for (int i = 0; i < r; ++i) {
            dg += dy[static_cast<std::int64_t>(i) * c + j] *
                  xhat[static_cast<std::int64_t>(i) * c + j];
            db += dy[static_cast<std::int64_t>(i) * c + j];
        }
        dgamma[j] += dg;
        dbeta[j] += db;
    }
}

// ------------------------------------------------------------- reference ---

namespace ref {

void matmul_nn(const double* a, const double* b, double* c, int m, int k, int n,
               bool accumulate) {
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            double s = accumulate ? c[static_cast<std::int64_t>(i) * n + j] : 0.0;
            for (int kk = 0; kk < k; ++kk) {
                s += a[static_cast<std::int64_t>(i) * k + kk] *
                     b[static_cast<std::int64_t>(kk) * n + j];
            }
            c[static_cast<std::int64_t>(i) * n + j] = s;
        }
    }
}

void conv2d_forward(const double* in, const double* w, const double* b, double* out,
                    int c, int h, int wd, int f, int kh, int kw, int stride, int pad,
                    PadMode mode) {
    const int oh = (h + 2 * pad - kh) / stride + 1;
    const int ow = (wd + 2 * pad - kw) / stride + 1;
    for (int fo = 0; fo < f; ++fo) {
        double* oplane = out + static_cast<std::int64_t>(fo) * oh * ow;
        std::fill(oplane, oplane + static_cast<std::int64_t>(oh) * ow, b ? b[fo] : 0.0);
        for (int ci = 0; ci < c; ++ci) {
            for (int ky = 0; ky < kh; ++ky) {
                for (int kx = 0; kx < kw; ++kx) {
                    const double wv =
                        w[(((static_cast<std::int64_t>(fo) * c + ci) * kh) + ky) * kw + kx];
                    for (int oy = 0; oy < oh; ++oy) {
                        int iy = oy * stride - pad + ky;
                        if (mode == PadMode::Zero && !in_range(iy, h)) continue;
                        iy = clampi(iy, 0, h - 1);
                        for (int ox = 0; ox < ow; ++ox) {
                            int ix = ox * stride - pad + kx;
                            if (mode == PadMode::Zero && !in_range(ix, wd)) continue;
                            ix = clampi(ix, 0, wd - 1);
                            oplane[static_cast<std::int64_t>(oy) * ow + ox] +=
                                wv * in[(static_cast<std::int64_t>(ci) * h + iy) * wd + ix];
                        }
                    }
                }
            }
        }
    }
}

void conv2d_backward_input(const double* dout, const double* w, double* din, int c, int h,
                           int wd, int f, int kh, int kw, int stride, int pad, PadMode mode) {
    const int oh = (h + 2 * pad - kh) / stride + 1;
    const int ow = (wd + 2 * pad - kw) / stride + 1;
    for (int ci = 0; ci < c; ++ci) {
        for (int fo = 0; fo < f; ++fo) {
            for (int ky = 0; ky < kh; ++ky) {
                for (int kx = 0; kx < kw; ++kx) {
                    const double wv =
                        w[(((static_cast<std::int64_t>(fo) * c + ci) * kh) + ky) * kw + kx];
                    for (int oy = 0; oy < oh; ++oy) {
                        int iy = oy * stride - pad + ky;
                        if (mode == PadMode::Zero && !in_range(iy, h)) continue;
                        iy = clampi(iy, 0, h - 1);
                        for (int ox = 0; ox < ow; ++ox) {
                            int ix = ox * stride - pad + kx;
                            if (mode == PadMode::Zero && !in_range(ix, wd)) continue;
                            ix = clampi(ix, 0, wd - 1);
                            din[(static_cast<std::int64_t>(ci) * h + iy) * wd + ix] +=
                                wv * dout[(static_cast<std::int64_t>(fo) * oh + oy) * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

void conv2d_backward_weight(const double* dout, const double* in, double* dw, int c, int h,
                            int wd, int f, int kh, int kw, int stride, int pad, PadMode mode) {
    const int oh = (h + 2 * pad - kh) / stride + 1;
    const int ow = (wd + 2 * pad - kw) / stride + 1;
    for (int fo = 0; fo < f; ++fo) {
        for (int ci = 0; ci < c; ++ci) {
            for (int ky = 0; ky < kh; ++ky) {
                for (int kx = 0; kx < kw; ++kx) {
                    double s = 0.0;
                    for (int oy = 0; oy < oh; ++oy) {
                        int iy = oy * stride - pad + ky;
                        if (mode == PadMode::Zero && !in_range(iy, h)) continue;
                        iy = clampi(iy, 0, h - 1);
                        for (int ox = 0; ox < ow; ++ox) {
                            int ix = ox * stride - pad + kx;
                            if (mode == PadMode::Zero && !in_range(ix, wd)) continue;
                            ix = clampi(ix, 0, wd - 1);
                            s += dout[(static_cast<std::int64_t>(fo) * oh + oy) * ow + ox] *
                                 in[(static_cast<std::int64_t>(ci) * h + iy) * wd + ix];
                        }
                    }
                    dw[(((static_cast<std::int64_t>(fo) * c + ci) * kh) + ky) * kw + kx] += s;
                }
            }
        }
    }
}

void bilinear_forward(const double* map, int c, int h, int w, const double* pts, int n,
                      double* out) {
    for (int i = 0; i < n; ++i) {
        const Corner cr = corner_weights(pts[2 * i], pts[2 * i + 1], w, h);
        for (int ch = 0; ch < c; ++ch) {
            out[static_cast<std::int64_t>(i) * c + ch] =
                corner_sample(map + static_cast<std::int64_t>(ch) * h * w, w, cr);
        }
    }
}

void deform_attn_forward(const DeformLevels& lv, int d, int heads, const double* pts,
                         const double* wts, int t, int p, double* out) {
    const int dh = d / heads;
    const int per_head = p / heads;
    const int k = per_head / lv.count;
    for (int ti = 0; ti < t; ++ti) {
        double* orow = out + static_cast<std::int64_t>(ti) * d;
        std::fill(orow, orow + d, 0.0);
        for (int hd = 0; hd < heads; ++hd) {
            for (int l = 0; l < lv.count; ++l) {
                const int hl = lv.heights[l], wl = lv.widths[l];
                for (int kk = 0; kk < k; ++kk) {
                    const int pi = (hd * lv.count + l) * k + kk;
                    const std::int64_t off = (static_cast<std::int64_t>(ti) * p + pi);
                    const Corner cr = corner_weights(pts[2 * off] * wl - 0.5,
                                                     pts[2 * off + 1] * hl - 0.5, wl, hl);
                    for (int ch = hd * dh; ch < (hd + 1) * dh; ++ch) {
                        orow[ch] += wts[off] *
                                    corner_sample(lv.value_maps[l] +
                                                      static_cast<std::int64_t>(ch) * hl * wl,
                                                  wl, cr);
                    }
                }
            }
        }
    }
}

void softmax_rows(const double* x, double* y, int r, int c) {
    for (int i = 0; i < r; ++i) {
        const double* xr = x + static_cast<std::int64_t>(i) * c;
        double* yr = y + static_cast<std::int64_t>(i) * c;
        double mx = xr[0];
        for (int j = 1; j < c; ++j) mx = std::max(mx, xr[j]);
        double s = 0.0;
        for (int j = 0; j < c; ++j) {
            yr[j] = std::exp(xr[j] - mx);
            s += yr[j];
        }
        const double inv = 1.0 / s;
        for (int j = 0; j < c; ++j) yr[j] *= inv;
    }
}

}  // namespace ref

}  // namespace ranklsd::kernels
