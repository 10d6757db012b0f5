#pragma once

// Landmark frames and the geometric feature templates: normalized point
// distances, point angles (cos/sin), and their frame-pair derivatives.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "pcrf/errors.hpp"

namespace pcrf {

using Label = int;

struct Point2 {
    double x = 0.0;
    double y = 0.0;

    bool operator==(const Point2&) const = default;
};

inline Point2 operator-(Point2 a, Point2 b) { return {a.x - b.x, a.y - b.y}; }
inline Point2 operator+(Point2 a, Point2 b) { return {a.x + b.x, a.y + b.y}; }
inline Point2 operator*(double k, Point2 a) { return {k * a.x, k * a.y}; }
inline double norm(Point2 a) { return std::hypot(a.x, a.y); }

/// Head pose in degrees.
struct Pose {
    double yaw = 0.0;
    double pitch = 0.0;
};

class IntegralChannels;

/// Landmark count and the two landmarks whose distance defines the scale normalizer.
struct LandmarkLayout {
    std::size_t count = 49;
    std::size_t left_eye = 19;
    std::size_t right_eye = 28;

    bool operator==(const LandmarkLayout&) const = default;
};

struct LandmarkFrame {
    std::string subject_id;
    std::string sequence_id;
    int frame_index = 0;
    std::vector<Point2> landmarks;
    std::optional<Label> label;
    std::optional<Pose> pose;
    std::optional<std::string> image_path;
    std::shared_ptr<const IntegralChannels> channels;
};

inline double inter_ocular_distance(const LandmarkFrame& frame, const LandmarkLayout& layout) {
    if (layout.left_eye >= frame.landmarks.size() || layout.right_eye >= frame.landmarks.size())
        throw DataError("eye landmark index out of range");
    const double d = norm(frame.landmarks[layout.left_eye] - frame.landmarks[layout.right_eye]);
    if (!(d > 0.0) || !std::isfinite(d))
        throw DataError("degenerate frame: coincident eye landmarks");
    return d;
}

/// Throws DataError unless the frame matches the layout and has a usable iod.
inline void validate_frame(const LandmarkFrame& frame, const LandmarkLayout& layout) {
    if (frame.landmarks.size() != layout.count)
        throw DataError("frame has " + std::to_string(frame.landmarks.size()) +
                        " landmarks, expected " + std::to_string(layout.count));
    for (const auto& p : frame.landmarks)
        if (!std::isfinite(p.x) || !std::isfinite(p.y)) throw DataError("non-finite landmark");
    inter_ocular_distance(frame, layout);
}

struct GeomParams {
    std::uint16_t a = 0;
    std::uint16_t b = 1;
    std::uint16_t c = 2;
    bool cosine = true;  // λ: cosine when true, sine otherwise
};

/// ||f_a - f_b|| / iod
inline double phi1(const LandmarkFrame& frame, std::size_t a, std::size_t b, const LandmarkLayout& layout) {
    return norm(frame.landmarks[a] - frame.landmarks[b]) / inter_ocular_distance(frame, layout);
}

/// Cosine or sine of the signed angle from ray (f_b -> f_a) to ray (f_b -> f_c).
/// A zero-length ray yields 0.
inline double phi2(const LandmarkFrame& frame, std::size_t a, std::size_t b, std::size_t c, bool cosine) {
    const Point2 u = frame.landmarks[a] - frame.landmarks[b];
    const Point2 v = frame.landmarks[c] - frame.landmarks[b];
    const double nu = norm(u);
    const double nv = norm(v);
    if (nu == 0.0 || nv == 0.0) return 0.0;
    const double denom = nu * nv;
    if (cosine) return std::clamp((u.x * v.x + u.y * v.y) / denom, -1.0, 1.0);
    return std::clamp((u.x * v.y - u.y * v.x) / denom, -1.0, 1.0);
}

inline double phi1(const LandmarkFrame& frame, const GeomParams& p, const LandmarkLayout& layout) {
    return phi1(frame, p.a, p.b, layout);
}

inline double phi2(const LandmarkFrame& frame, const GeomParams& p) {
    return phi2(frame, p.a, p.b, p.c, p.cosine);
}

inline double phi4(const LandmarkFrame& prev, const LandmarkFrame& cur, const GeomParams& p,
                   const LandmarkLayout& layout) {
    return phi1(cur, p, layout) - phi1(prev, p, layout);
}

inline double phi5(const LandmarkFrame& prev, const LandmarkFrame& cur, const GeomParams& p) {
    return phi2(cur, p) - phi2(prev, p);
}

}  // namespace pcrf
