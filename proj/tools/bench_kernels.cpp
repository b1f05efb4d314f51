// Timing comparison between the OpenMP kernels and their serial reference
// implementations, with a bitwise equality check on every benchmarked shape.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <vector>

#include "ranklsd/kernels.hpp"
#include "ranklsd/rng.hpp"

using namespace ranklsd;
namespace K = ranklsd::kernels;

namespace {

std::vector<double> rand_vec(Rng& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(lo, hi);
    return v;
}

double time_ms(const std::function<void()>& fn, int reps) {
    fn();  // warm up
    auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < reps; ++i) fn();
    auto t1 = std::chrono::steady_clock::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

bool report(const char* name, double par_ms, double ref_ms, const std::vector<double>& a,
            const std::vector<double>& b) {
    const bool same = a.size() == b.size() &&
                      std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
    std::printf("%-24s %10.3f ms %10.3f ms %8.2fx  %s\n", name, par_ms, ref_ms,
                ref_ms / par_ms, same ? "bitwise-equal" : "MISMATCH");
    return same;
}

}  // namespace

int main() {
    Rng rng(20240817);
    bool ok = true;
    std::printf("%-24s %13s %13s %9s  %s\n", "kernel", "parallel", "reference", "speedup",
                "check");

    {
        const int m = 256, k = 256, n = 256;
        auto a = rand_vec(rng, static_cast<std::size_t>(m) * k);
        auto b = rand_vec(rng, static_cast<std::size_t>(k) * n);
        std::vector<double> c1(static_cast<std::size_t>(m) * n), c2(c1.size());
        double tp = time_ms([&] { K::matmul_nn(a.data(), b.data(), c1.data(), m, k, n, false); }, 5);
        double tr = time_ms(
            [&] { K::ref::matmul_nn(a.data(), b.data(), c2.data(), m, k, n, false); }, 5);
        ok &= report("matmul 256^3", tp, tr, c1, c2);
    }
    {
        const int c = 32, h = 64, w = 64, f = 32, kh = 3, kw = 3;
        auto in = rand_vec(rng, static_cast<std::size_t>(c) * h * w);
        auto wt = rand_vec(rng, static_cast<std::size_t>(f) * c * kh * kw);
        auto b = rand_vec(rng, f);
        std::vector<double> o1(static_cast<std::size_t>(f) * h * w), o2(o1.size());
        double tp = time_ms(
            [&] {
                K::conv2d_forward(in.data(), wt.data(), b.data(), o1.data(), c, h, w, f, kh,
                                  kw, 1, 1, K::PadMode::Replicate);
            },
            3);
        double tr = time_ms(
            [&] {
                K::ref::conv2d_forward(in.data(), wt.data(), b.data(), o2.data(), c, h, w, f,
                                       kh, kw, 1, 1, K::PadMode::Replicate);
            },
            3);
        ok &= report("conv 32x64x64 3x3", tp, tr, o1, o2);
    }
    {
        const int c = 8, h = 128, w = 128, n = 10000;
        auto map = rand_vec(rng, static_cast<std::size_t>(c) * h * w);
        std::vector<double> pts(static_cast<std::size_t>(n) * 2);
        for (int i = 0; i < n; ++i) {
            pts[2 * i + 0] = rng.uniform(0.0, w - 1.0);
            pts[2 * i + 1] = rng.uniform(0.0, h - 1.0);
        }
        std::vector<double> o1(static_cast<std::size_t>(n) * c), o2(o1.size());
        double tp = time_ms(
            [&] { K::bilinear_forward(map.data(), c, h, w, pts.data(), n, o1.data()); }, 10);
        double tr = time_ms(
            [&] { K::ref::bilinear_forward(map.data(), c, h, w, pts.data(), n, o2.data()); },
            10);
        ok &= report("bilinear 10k pts", tp, tr, o1, o2);
    }
    {
        const int d = 64, heads = 2, levels = 2, kpts = 4, t = 4096;
        const int p = heads * levels * kpts;
        const int hs[2] = {64, 32}, ws[2] = {64, 32};
        auto v0 = rand_vec(rng, static_cast<std::size_t>(d) * 64 * 64);
        auto v1 = rand_vec(rng, static_cast<std::size_t>(d) * 32 * 32);
        const double* maps[2] = {v0.data(), v1.data()};
        K::DeformLevels lv{maps, hs, ws, levels};
        auto pts = rand_vec(rng, static_cast<std::size_t>(t) * p * 2, 0.05, 0.95);
        auto wts = rand_vec(rng, static_cast<std::size_t>(t) * p, 0.0, 1.0);
        std::vector<double> o1(static_cast<std::size_t>(t) * d), o2(o1.size());
        double tp = time_ms(
            [&] {
                K::deform_attn_forward(lv, d, heads, pts.data(), wts.data(), t, p, o1.data());
            },
            5);
        double tr = time_ms(
            [&] {
                K::ref::deform_attn_forward(lv, d, heads, pts.data(), wts.data(), t, p,
                                            o2.data());
            },
            5);
        ok &= report("deform_attn 4096 tok", tp, tr, o1, o2);
    }
    {
        const int r = 8192, c = 8;
        auto x = rand_vec(rng, static_cast<std::size_t>(r) * c);
        std::vector<double> y1(x.size()), y2(x.size());
        double tp = time_ms([&] { K::softmax_rows(x.data(), y1.data(), r, c); }, 20);
        double tr = time_ms([&] { K::ref::softmax_rows(x.data(), y2.data(), r, c); }, 20);
        ok &= report("softmax 8192x8", tp, tr, y1, y2);
    }

    if (!ok) {
        std::printf("kernel outputs diverged from the reference\n");
        return 1;
    }
    return 0;
}
