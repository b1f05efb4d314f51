#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <sstream>
#include <string>

#include "ranklsd/geometry.hpp"
#include "ranklsd/rng.hpp"
#include "ranklsd/tensor.hpp"

using namespace ranklsd;

TEST_CASE("construction clamps and rejects garbage") {
    LineSegment s(-0.5, 0.2, 1.7, 0.9);
    CHECK(s.e1.x == 0.0);
    CHECK(s.e2.x == 1.0);
    CHECK_THROWS(LineSegment(std::nan(""), 0, 1, 1));
}

TEST_CASE("canonicalization orders by y then x and is idempotent") {
    LineSegment s(0.8, 0.9, 0.1, 0.2);
    LineSegment c = s.canonicalized();
    CHECK(c.e1.y == 0.2);
    CHECK(c.e1.x == 0.1);
    CHECK(c.e2.y == 0.9);
    LineSegment cc = c.canonicalized();
    CHECK(seg_equal(c, cc));

    // same y falls back to x ordering
    LineSegment t = LineSegment(0.7, 0.5, 0.1, 0.5).canonicalized();
    CHECK(t.e1.x == 0.1);
}

TEST_CASE("centroid is the endpoint midpoint") {
    Point c1 = centroid(LineSegment(0, 0, 1, 1));
    CHECK(c1.x == 0.5);
    CHECK(c1.y == 0.5);
    Point c2 = centroid(LineSegment(0.2, 0.2, 0.2, 0.2));
    CHECK(c2.x == 0.2);
    Point c3 = centroid(LineSegment(0.1, 0.3, 0.5, 0.1));
    CHECK(c3.x == doctest::Approx(0.3));
    CHECK(c3.y == doctest::Approx(0.2));
}

TEST_CASE("segment distance takes the better endpoint pairing") {
    const double s = 64.0;
    LineSegment a(0, 0, 1, 0);

    CHECK(segment_distance(a, a, s) == 0.0);
    CHECK(segment_distance(a, LineSegment(1, 0, 0, 0), s) == 0.0);

    // 3-4-5 triangle: offsets of 3 and 4 pixels on the two endpoints
    LineSegment b(0, 3.0 / s, 1, 4.0 / s);
    CHECK(segment_distance(a, b, s) == doctest::Approx(5.0).epsilon(1e-12));
    CHECK(segment_sqdist(a, b, s) == doctest::Approx(25.0).epsilon(1e-12));

    SUBCASE("symmetry and endpoint-order invariance") {
        Rng rng(42);
        for (int i = 0; i < 50; ++i) {
            LineSegment p(rng.uniform(), rng.uniform(), rng.uniform(), rng.uniform());
            LineSegment q(rng.uniform(), rng.uniform(), rng.uniform(), rng.uniform());
            const double d = segment_distance(p, q, 128.0);
            CHECK(segment_distance(q, p, 128.0) == d);
            LineSegment q_swapped(q.e2.x, q.e2.y, q.e1.x, q.e1.y);
            CHECK(segment_distance(p, q_swapped, 128.0) == d);
            CHECK(d >= 0.0);
        }
    }
}

TEST_CASE("rotate90 fixed point and corner") {
    Point mid = rotate90(Point{0.5, 0.5}, +1);
    CHECK(mid.x == 0.5);
    CHECK(mid.y == 0.5);
    Point corner = rotate90(Point{1.0, 0.0}, +1);  // (x,y) -> (y, 1-x)
    CHECK(corner.x == 0.0);
    CHECK(corner.y == 0.0);
    Point back = rotate90(corner, -1);
    CHECK(back.x == 1.0);
    CHECK(back.y == 0.0);
}

TEST_CASE("rotation round-trips exactly on dyadic coordinates") {
    // multiples of 2^-7 make 1-x exact in binary64, so the round trip has no
    // rounding at all
    Rng rng(7);
    for (int i = 0; i < 200; ++i) {
        auto dyadic = [&] { return static_cast<double>(rng.below(129)) / 128.0; };
        LineSegment s(dyadic(), dyadic(), dyadic(), dyadic());
        for (int dir : {+1, -1}) {
            LineSegment r = rotate90(rotate90(s, dir), -dir);
            CHECK(r.e1.x == s.e1.x);
            CHECK(r.e1.y == s.e1.y);
            CHECK(r.e2.x == s.e2.x);
            CHECK(r.e2.y == s.e2.y);
        }
    }
}

TEST_CASE("map rotation is an exact permutation") {
    Rng rng(9);
    Tensor m({6, 6});
    for (auto& v : m.values()) v = rng.uniform();

    SUBCASE("round trip is bitwise identity") {
        for (int dir : {+1, -1}) {
            Tensor r = rot90_map(rot90_map(m, dir), -dir);
            CHECK(r.values() == m.values());
        }
    }
    SUBCASE("four rotations compose to the identity") {
        Tensor r = m;
        for (int i = 0; i < 4; ++i) r = rot90_map(r, +1);
        CHECK(r.values() == m.values());
    }
    SUBCASE("channels rotate independently") {
        Tensor c({2, 4, 4});
        for (auto& v : c.values()) v = rng.uniform();
        Tensor r = rot90_map(rot90_map(c, +1), -1);
        CHECK(r.values() == c.values());
    }
    SUBCASE("map rotation agrees with point rotation") {
        // value at cell (ix,iy) must move where the cell-center point moves
        const int n = 6;
        Tensor r = rot90_map(m, +1);
        for (int iy = 0; iy < n; ++iy) {
            for (int ix = 0; ix < n; ++ix) {
                Point p{(ix + 0.5) / n, (iy + 0.5) / n};
                Point q = rotate90(p, +1);
                const int qx = static_cast<int>(std::floor(q.x * n));
                const int qy = static_cast<int>(std::floor(q.y * n));
                CHECK(r.values()[static_cast<std::size_t>(qy * n + qx)] ==
                      m.values()[static_cast<std::size_t>(iy * n + ix)]);
            }
        }
    }
}

TEST_CASE("segment text round-trip") {
    std::vector<SegmentRecord> recs;
    SegmentRecord a;
    a.seg = LineSegment(0.125, 0.25, 0.75, 0.5);
    a.score = 0.625;
    a.has_score = true;
    SegmentRecord b;
    b.seg = LineSegment(0, 0, 1, 1);
    recs.push_back(a);
    recs.push_back(b);

    std::stringstream ss;
    write_segment_text(ss, recs);
    auto back = read_segment_text(ss);
    REQUIRE(back.size() == 2);
    CHECK(back[0].has_score);
    CHECK(back[0].score == 0.625);
    CHECK(seg_equal(back[0].seg, a.seg));
    CHECK_FALSE(back[1].has_score);
    CHECK(seg_equal(back[1].seg, b.seg));
}

TEST_CASE("segment text parsing") {
    SUBCASE("comments and blank lines are skipped") {
        std::stringstream ss("# header\n\n0.1 0.2 0.3 0.4\n0.5 0.5 0.6 0.6 0.9 # trailing\n");
        auto recs = read_segment_text(ss);
        REQUIRE(recs.size() == 2);
        CHECK_FALSE(recs[0].has_score);
        CHECK(recs[1].has_score);
        CHECK(recs[1].score == 0.9);
    }
    SUBCASE("errors carry the line number") {
        std::stringstream ss("0.1 0.2 0.3 0.4\n0.1 0.2 oops 0.4\n");
        try {
            read_segment_text(ss);
            FAIL("expected a parse error");
        } catch (const std::exception& e) {
            CHECK(std::string(e.what()).find("2") != std::string::npos);
        }
    }
    SUBCASE("wrong field counts are rejected") {
        std::stringstream three("0.1 0.2 0.3\n");
        CHECK_THROWS(read_segment_text(three));
        std::stringstream six("0.1 0.2 0.3 0.4 0.5 0.6\n");
        CHECK_THROWS(read_segment_text(six));
    }
}
