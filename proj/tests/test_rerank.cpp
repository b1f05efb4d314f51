#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "ranklsd/gtmaps.hpp"
#include "ranklsd/rerank.hpp"

using namespace ranklsd;

namespace {

// normalized coordinate of pixel center px at the given resolution
double at_px(double px, int res) { return (px + 0.5) / res; }

Tensor constant_map(int res, double v) {
    return Tensor({res, res}, std::vector<double>(static_cast<std::size_t>(res * res), v));
}

}  // namespace

TEST_CASE("endpoint score averages the two endpoint samples") {
    SUBCASE("constant map gives the constant everywhere") {
        Tensor m = constant_map(16, 0.7);
        CHECK(endpoint_score(LineSegment(0.1, 0.2, 0.9, 0.8), m) ==
              doctest::Approx(0.7).epsilon(1e-12));
        CHECK(endpoint_score(LineSegment(0.0, 0.0, 1.0, 1.0), m) ==
              doctest::Approx(0.7).epsilon(1e-12));
    }
    SUBCASE("ground-truth segment scores exactly 1 on its own endpoint map") {
        const int res = 32;
        LineSegment gt(at_px(8, res), at_px(8, res), at_px(24, res), at_px(24, res));
        Tensor m = rasterize_endpoint_map({gt}, res, 2.0);
        CHECK(endpoint_score(gt, m) == doctest::Approx(1.0).epsilon(1e-12));
    }
    SUBCASE("one endpoint a sigma off the peak") {
        const int res = 32;
        LineSegment gt(at_px(8, res), at_px(8, res), at_px(24, res), at_px(24, res));
        Tensor m = rasterize_endpoint_map({gt}, res, 2.0);
        // peak sample 1.0, other endpoint 2 px (= sigma) away: exp(-1/2)
        LineSegment probe(at_px(10, res), at_px(8, res), at_px(24, res), at_px(24, res));
        CHECK(endpoint_score(probe, m) ==
              doctest::Approx((1.0 + std::exp(-0.5)) / 2.0).epsilon(1e-12));
        CHECK(endpoint_score(probe, m) == doctest::Approx(0.8032653298563167).epsilon(1e-10));
    }
    SUBCASE("endpoint between two pixel centers interpolates") {
        const int res = 32;
        Tensor m({res, res});
        m.data()[8 * res + 8] = 1.0;  // lone hot pixel at (8,8)
        const double x = at_px(8.5, res);
        const double y = at_px(8.0, res);
        LineSegment probe(x, y, x, y);
        CHECK(endpoint_score(probe, m) == doctest::Approx(0.5).epsilon(1e-12));
    }
    SUBCASE("map must be two-dimensional") {
        CHECK_THROWS(endpoint_score(LineSegment(0, 0, 1, 1), Tensor({4})));
    }
}

TEST_CASE("edge score averages m samples along the segment") {
    SUBCASE("constant map gives the constant for any sample count") {
        Tensor m = constant_map(16, 0.7);
        LineSegment seg(0.1, 0.3, 0.8, 0.6);
        for (int k : {1, 2, 7, 32}) {
            CHECK(edge_score(seg, m, k) == doctest::Approx(0.7).epsilon(1e-12));
        }
    }
    SUBCASE("a single sample sits at the first endpoint") {
        const int res = 32;
        Tensor m({res, res});
        m.data()[5 * res + 5] = 0.9;
        m.data()[20 * res + 20] = 0.3;
        LineSegment seg(at_px(5, res), at_px(5, res), at_px(20, res), at_px(20, res));
        CHECK(edge_score(seg, m, 1) == doctest::Approx(0.9).epsilon(1e-12));
        // swapping the endpoints moves the sample to the other end
        LineSegment rev(at_px(20, res), at_px(20, res), at_px(5, res), at_px(5, res));
        CHECK(edge_score(rev, m, 1) == doctest::Approx(0.3).epsilon(1e-12));
    }
    SUBCASE("an on-trace segment scores 1 on its own edge map") {
        const int res = 32;
        LineSegment gt(at_px(3, res), at_px(5, res), at_px(9, res), at_px(5, res));
        Tensor m = rasterize_edge_map({gt}, res);
        CHECK(edge_score(gt, m, 32) == doctest::Approx(1.0).epsilon(1e-12));
    }
    SUBCASE("sample count below one is rejected") {
        Tensor m = constant_map(8, 0.5);
        CHECK_THROWS(edge_score(LineSegment(0, 0, 1, 1), m, 0));
    }
}

TEST_CASE("length score is the log of the pixel length plus one") {
    SUBCASE("degenerate segments score zero") {
        CHECK(length_score(LineSegment(0.3, 0.3, 0.3, 0.3), 128.0) == 0.0);
    }
    SUBCASE("a segment of e-1 pixels scores exactly one") {
        const double len = (std::exp(1.0) - 1.0) / 128.0;
        LineSegment seg(0.1, 0.4, 0.1 + len, 0.4);
        CHECK(length_score(seg, 128.0) == doctest::Approx(1.0).epsilon(1e-12));
    }
    SUBCASE("127 pixels score ln 128") {
        LineSegment seg(0.0, 0.5, 127.0 / 128.0, 0.5);
        CHECK(length_score(seg, 128.0) == doctest::Approx(std::log(128.0)).epsilon(1e-15));
    }
    SUBCASE("longer is monotonically better") {
        double prev = -1.0;
        for (double x2 : {0.1, 0.3, 0.6, 1.0}) {
            const double v = length_score(LineSegment(0.0, 0.2, x2, 0.2), 64.0);
            CHECK(v > prev);
            prev = v;
        }
    }
    SUBCASE("non-positive scale is rejected") {
        CHECK_THROWS(length_score(LineSegment(0, 0, 1, 0), 0.0));
    }
}

TEST_CASE("fusion is linear in the evidence with unit weight on confidence") {
    LineSegment seg(0.1, 0.1, 0.6, 0.6);
    SUBCASE("zero deltas reduce the fused score to the confidence") {
        RerankWeights w{0.0, 0.0, 0.0, 32};
        ScoredSegment out = fuse(seg, 0.8, 0.9, 2.5, 0.37, w);
        CHECK(out.s == 0.37);
        CHECK(out.c == 0.37);
        CHECK(out.s_e == 0.8);
        CHECK(out.s_d == 0.9);
        CHECK(out.s_l == 2.5);
        CHECK(seg_equal(out.seg, seg));
    }
    SUBCASE("hand-computed fusion") {
        RerankWeights w;  // deltas default to 0.5
        ScoredSegment out = fuse(seg, 1.0, 1.0, 2.0, 0.9, w);
        CHECK(out.s == doctest::Approx(2.9).epsilon(1e-12));
    }
    SUBCASE("doubling the deltas doubles the evidence contribution") {
        RerankWeights w1{0.3, 0.4, 0.2, 32};
        RerankWeights w2{0.6, 0.8, 0.4, 32};
        const double c = 0.25;
        const double s1 = fuse(seg, 0.7, 0.5, 1.5, c, w1).s;
        const double s2 = fuse(seg, 0.7, 0.5, 1.5, c, w2).s;
        CHECK(s2 - c == doctest::Approx(2.0 * (s1 - c)).epsilon(1e-12));
    }
}

TEST_CASE("rerank orders by fused score without touching geometry") {
    const int res = 64;
    LineSegment gt(at_px(4, res), at_px(30, res), at_px(58, res), at_px(30, res));
    GeoMaps maps = rasterize_geo_maps({gt}, {res, res / 2}, 2.0);

    SUBCASE("zero deltas reproduce the confidence ordering") {
        RerankWeights w{0.0, 0.0, 0.0, 32};
        std::vector<ScoredSegment> cands;
        for (double c : {0.2, 0.9, 0.5, 0.7}) {
            ScoredSegment s;
            s.seg = LineSegment(0.1, 0.1, 0.3, 0.1 + c);  // distinct geometry per c
            s.c = c;
            cands.push_back(s);
        }
        auto out = rerank(cands, maps, w);
        REQUIRE(out.size() == 4);
        CHECK(out[0].c == 0.9);
        CHECK(out[1].c == 0.7);
        CHECK(out[2].c == 0.5);
        CHECK(out[3].c == 0.2);
        for (const auto& o : out) CHECK(o.s == o.c);
        // geometry passes through bit-for-bit
        CHECK(out[0].seg.e2.y == 0.1 + 0.9);
        CHECK(out[3].seg.e2.y == 0.1 + 0.2);
    }
    SUBCASE("a single candidate passes through scored") {
        ScoredSegment s;
        s.seg = gt;
        s.c = 0.4;
        auto out = rerank({s}, maps, RerankWeights{});
        REQUIRE(out.size() == 1);
        CHECK(out[0].s_e == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(out[0].s_d == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(out[0].c == 0.4);
    }
    SUBCASE("identical geometry falls back to confidence order") {
        RerankWeights w{0.0, 0.0, 0.0, 32};
        ScoredSegment a, b;
        a.seg = b.seg = gt;
        a.c = 0.3;
        b.c = 0.8;
        auto out = rerank({a, b}, maps, w);
        CHECK(out[0].c == 0.8);
        CHECK(out[1].c == 0.3);
    }
    SUBCASE("exact score ties break on canonical segment order") {
        RerankWeights w{0.0, 0.0, 0.0, 32};
        ScoredSegment a, b;
        a.seg = LineSegment(0.5, 0.6, 0.9, 0.6);  // larger e1.y
        b.seg = LineSegment(0.2, 0.1, 0.9, 0.1);  // smaller e1.y, sorts first
        a.c = b.c = 0.5;
        auto out = rerank({a, b}, maps, w);
        CHECK(out[0].seg.e1.y == 0.1);
        CHECK(out[1].seg.e1.y == 0.6);
    }
    SUBCASE("geometric evidence overturns a bad confidence ordering") {
        // the true segment with weak confidence vs a short far-off decoy
        // with strong confidence; the evidence terms decide
        ScoredSegment weak_true, strong_decoy;
        weak_true.seg = gt;
        weak_true.c = 0.3;
        strong_decoy.seg =
            LineSegment(at_px(40, res), at_px(50, res), at_px(44, res), at_px(50, res));
        strong_decoy.c = 0.6;
        auto out = rerank({strong_decoy, weak_true}, maps, RerankWeights{});
        REQUIRE(out.size() == 2);
        CHECK(out[0].c == 0.3);  // the true segment won
        CHECK(out[0].s > out[1].s + 1.0);
    }
    SUBCASE("empty map pyramid is rejected") {
        ScoredSegment s;
        s.seg = gt;
        CHECK_THROWS(rerank({s}, GeoMaps{}, RerankWeights{}));
    }
}
