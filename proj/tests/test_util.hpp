#pragma once

#include <random>
#include <vector>

#include "pcrf/geometry.hpp"
#include "pcrf/random.hpp"

namespace pcrf::testutil {

/// Frame with L random landmarks in [0, 250)^2 and well-separated eye points.
inline LandmarkFrame random_frame(Rng& rng, const LandmarkLayout& layout = {}) {
    std::uniform_real_distribution<double> u(0.0, 250.0);
    LandmarkFrame f;
    f.subject_id = "s";
    f.sequence_id = "q";
    f.landmarks.resize(layout.count);
    for (auto& p : f.landmarks) p = {u(rng), u(rng)};
    f.landmarks[layout.left_eye] = {75.0 + u(rng) / 25, 120.0};
    f.landmarks[layout.right_eye] = {175.0 + u(rng) / 25, 121.0};
    return f;
}


}  // namespace pcrf::testutil
