#include "ranklsd/geometry.hpp"

#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>

namespace ranklsd {

namespace {

double clamp01(double v, const char* what) {
    if (!std::isfinite(v)) {
        throw std::runtime_error(std::string("LineSegment: non-finite ") + what);
    }
    return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
}

bool point_less(const Point& a, const Point& b) {
    if (a.y != b.y) return a.y < b.y;
    return a.x < b.x;
}

}  // namespace

LineSegment::LineSegment(Point a, Point b) {
    e1 = {clamp01(a.x, "x1"), clamp01(a.y, "y1")};
    e2 = {clamp01(b.x, "x2"), clamp01(b.y, "y2")};
}

LineSegment LineSegment::canonicalized() const {
    LineSegment s = *this;
    if (point_less(s.e2, s.e1)) std::swap(s.e1, s.e2);
    return s;
}

Point centroid(const LineSegment& s) {
    return {(s.e1.x + s.e2.x) / 2.0, (s.e1.y + s.e2.y) / 2.0};
}

double length(const LineSegment& s) {
    return std::hypot(s.e2.x - s.e1.x, s.e2.y - s.e1.y);
}

bool seg_less(const LineSegment& a, const LineSegment& b) {
    const LineSegment ca = a.canonicalized();
    const LineSegment cb = b.canonicalized();
    if (ca.e1.y != cb.e1.y) return ca.e1.y < cb.e1.y;
    if (ca.e1.x != cb.e1.x) return ca.e1.x < cb.e1.x;
    if (ca.e2.y != cb.e2.y) return ca.e2.y < cb.e2.y;
    return ca.e2.x < cb.e2.x;
}

bool seg_equal(const LineSegment& a, const LineSegment& b) {
    return !seg_less(a, b) && !seg_less(b, a);
}

namespace {

double sqdist(const Point& a, const Point& b, double scale) {
    const double dx = a.x * scale - b.x * scale;
    const double dy = a.y * scale - b.y * scale;
    return dx * dx + dy * dy;
}

}  // namespace

double segment_sqdist(const LineSegment& a, const LineSegment& b, double scale) {
    const double straight = sqdist(a.e1, b.e1, scale) + sqdist(a.e2, b.e2, scale);
    const double crossed = sqdist(a.e1, b.e2, scale) + sqdist(a.e2, b.e1, scale);
    return straight < crossed ? straight : crossed;
}

double segment_distance(const LineSegment& a, const LineSegment& b, double scale) {
    return std::sqrt(segment_sqdist(a, b, scale));
}

Point rotate90(Point p, int direction) {
    if (direction == +1) return {p.y, 1.0 - p.x};
    if (direction == -1) return {1.0 - p.y, p.x};
    throw std::runtime_error("rotate90: direction must be +1 or -1");
}

LineSegment rotate90(const LineSegment& s, int direction) {
    LineSegment out;
    out.e1 = rotate90(s.e1, direction);
    out.e2 = rotate90(s.e2, direction);
    return out;
}

std::vector<SegmentRecord> read_segment_text(std::istream& is) {
    std::vector<SegmentRecord> recs;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        std::istringstream ss(line);
        double x1, y1, x2, y2;
        if (!(ss >> x1)) continue;  // blank or comment-only
        if (!(ss >> y1 >> x2 >> y2)) {
            throw std::runtime_error("segment text line " + std::to_string(lineno) +
                                     ": expected x1 y1 x2 y2 [score]");
        }
        SegmentRecord r;
        r.seg = LineSegment(x1, y1, x2, y2);
        if (ss >> r.score) r.has_score = true;
        double extra;
        if (ss >> extra) {
            throw std::runtime_error("segment text line " + std::to_string(lineno) +
                                     ": trailing fields");
        }
        recs.push_back(r);
    }
    return recs;
}

void write_segment_text(std::ostream& os, const std::vector<SegmentRecord>& recs) {
    char buf[160];
    for (const auto& r : recs) {
        if (r.has_score) {
            std::snprintf(buf, sizeof(buf), "%.17g %.17g %.17g %.17g %.17g\n", r.seg.e1.x,
                          r.seg.e1.y, r.seg.e2.x, r.seg.e2.y, r.score);
        } else {
            std::snprintf(buf, sizeof(buf), "%.17g %.17g %.17g %.17g\n", r.seg.e1.x,
                          r.seg.e1.y, r.seg.e2.x, r.seg.e2.y);
        }
        os << buf;
    }
}

}  // namespace ranklsd
