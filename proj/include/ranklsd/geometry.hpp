#pragma once

// Line-segment value types and the coordinate conventions used everywhere:
// x grows rightward, y grows downward, positions are normalized to [0,1]².
// Pixel coordinates are normalized * resolution - 0.5, so values live at
// pixel centers.

#include <iosfwd>
#include <vector>

namespace ranklsd {

struct Point {
    double x = 0.0;
    double y = 0.0;
};

struct LineSegment {
    Point e1, e2;

    LineSegment() = default;
    // clamps coordinates into [0,1]; non-finite input throws
    LineSegment(Point a, Point b);
    LineSegment(double x1, double y1, double x2, double y2)
        : LineSegment(Point{x1, y1}, Point{x2, y2}) {}

    // endpoint order fixed lexicographically by (y, then x); idempotent
    LineSegment canonicalized() const;
};

Point centroid(const LineSegment& s);
double length(const LineSegment& s);  // normalized units

// strict ordering on canonical-form coordinates (e1.y, e1.x, e2.y, e2.x);
// the deterministic tie-break used by sorts across the repo
bool seg_less(const LineSegment& a, const LineSegment& b);
bool seg_equal(const LineSegment& a, const LineSegment& b);

// min over the two endpoint pairings of the sum of squared endpoint
// distances, coordinates scaled to pixels first; segment_distance is its
// square root
double segment_sqdist(const LineSegment& a, const LineSegment& b, double scale);
double segment_distance(const LineSegment& a, const LineSegment& b, double scale);

// 90° rotation about the image center, +1 counter-clockwise in the y-down
// convention: (x,y) -> (y, 1-x).  The float complement 1-x is not exactly
// involutive below 0.25, so point round trips are bit-exact only for
// coordinates representable at 2^-53 granularity; map rotation (rot90_map)
// is a pure index permutation and always round-trips bit-exactly.
Point rotate90(Point p, int direction);
LineSegment rotate90(const LineSegment& s, int direction);

// ------------------------------------------------- segment text format ---
// One segment per line: "x1 y1 x2 y2 [score]", normalized coordinates,
// '#' starts a comment.

struct SegmentRecord {
    LineSegment seg;
    double score = 0.0;
    bool has_score = false;
};

std::vector<SegmentRecord> read_segment_text(std::istream& is);
void write_segment_text(std::ostream& os, const std::vector<SegmentRecord>& recs);

}  // namespace ranklsd
