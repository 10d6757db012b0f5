#pragma once

// The six heterogeneous feature templates and their candidate generator.
//   1 normalized distance      4 its frame-pair derivative
//   2 angle cos/sin            5 its frame-pair derivative
//   3 integral HOG ratio       6 its frame-pair derivative

#include <array>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "pcrf/channels.hpp"
#include "pcrf/forest.hpp"
#include "pcrf/geometry.hpp"
#include "pcrf/hyperparams.hpp"
#include "pcrf/random.hpp"

namespace pcrf {

struct FeatureDescriptor {
    std::uint8_t kind = 1;  // template id 1..6
    GeomParams geom;
    HogParams hog;

    bool is_pairwise() const { return kind >= 4; }
    int base_template() const { return is_pairwise() ? kind - 3 : kind; }
};

inline bool operator==(const GeomParams& a, const GeomParams& b) {
    return a.a == b.a && a.b == b.b && a.c == b.c && a.cosine == b.cosine;
}
inline bool operator==(const HogParams& a, const HogParams& b) {
    return a.triangle == b.triangle && a.channel == b.channel && a.size == b.size && a.alpha == b.alpha &&
           a.beta == b.beta && a.gamma == b.gamma;
}
inline bool operator==(const FeatureDescriptor& a, const FeatureDescriptor& b) {
    if (a.kind != b.kind) return false;
    return a.base_template() == 3 ? a.hog == b.hog : a.geom == b.geom;
}

/// One training/evaluation sample: the current frame and, for pairwise
/// models, a previous frame of the same subject.
struct FramePair {
    const LandmarkFrame* prev = nullptr;
    const LandmarkFrame* cur = nullptr;
};

/// Evaluates feature templates on frames sharing one landmark layout.
class TemplateSpace {
public:
    TemplateSpace() = default;
    explicit TemplateSpace(LandmarkLayout layout) : layout_(layout) {}

    const LandmarkLayout& layout() const { return layout_; }

    double evaluate_static(const FeatureDescriptor& f, const LandmarkFrame& frame) const {
        switch (f.base_template()) {
            case 1: return phi1(frame, f.geom, layout_);
            case 2: return phi2(frame, f.geom);
            default: return phi3(frame, f.hog, layout_);
        }
    }

    double evaluate(const FeatureDescriptor& f, const FramePair& x) const {
        if (!f.is_pairwise()) return evaluate_static(f, *x.cur);
        if (!x.prev) throw std::logic_error("derivative feature evaluated without a previous frame");
        return evaluate_static(f, *x.cur) - evaluate_static(f, *x.prev);
    }

private:
    LandmarkLayout layout_;
};

using FrameForest = Forest<FeatureDescriptor>;
using FrameTree = DecisionTree<FeatureDescriptor>;

struct ThresholdRange {
    double lo = 0.0;
    double hi = 0.0;
};

using TemplateRanges = std::array<ThresholdRange, kTemplateCount>;

/// Uniform draw of template parameters (thresholds are drawn separately).
inline FeatureDescriptor sample_feature(int kind, std::size_t n_landmarks, Rng& rng) {
    if (n_landmarks < 3) throw UsageError("feature sampling needs at least 3 landmarks");
    FeatureDescriptor f;
    f.kind = static_cast<std::uint8_t>(kind);
    const auto distinct = [&](std::size_t count) {
        auto picks = sample_without_replacement(n_landmarks, count, rng);
        return std::vector<std::uint16_t>(picks.begin(), picks.end());
    };
    switch (f.base_template()) {
        case 1: {
            auto p = distinct(2);
            f.geom = {p[0], p[1], 0, true};
            break;
        }
        case 2: {
            auto p = distinct(3);
            f.geom = {p[0], p[1], p[2], std::bernoulli_distribution(0.5)(rng)};
            break;
        }
        default: {
            auto p = distinct(3);
            f.hog.triangle = {p[0], p[1], p[2]};
            f.hog.channel = static_cast<std::uint8_t>(1 + uniform_index(rng, kOrientationBins));
            f.hog.size = std::uniform_real_distribution<double>(0.1, 1.0)(rng);
            // Uniform point on the simplex from sorted uniforms.
            double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
            double v = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
            if (u > v) std::swap(u, v);
            f.hog.alpha = u;
            f.hog.beta = v - u;
            f.hog.gamma = 1.0 - v;
            break;
        }
    }
    return f;
}

/// k(i) feature draws per template, each with `thresholds_per_feature` uniform
/// thresholds inside that template's range. Template order 1..6.
inline std::vector<CandidateGroup<FeatureDescriptor>> sample_candidates(const HyperParams& hp, const TemplateRanges& ranges,
                                                                        std::size_t n_landmarks, Rng& rng) {
    std::vector<CandidateGroup<FeatureDescriptor>> groups;
    groups.reserve(static_cast<std::size_t>(hp.feature_draws()));
    for (int t = 0; t < kTemplateCount; ++t) {
        const auto& range = ranges[static_cast<std::size_t>(t)];
        for (int j = 0; j < hp.k[static_cast<std::size_t>(t)]; ++j) {
            CandidateGroup<FeatureDescriptor> g;
            g.feature = sample_feature(t + 1, n_landmarks, rng);
            g.thresholds.resize(static_cast<std::size_t>(hp.thresholds_per_feature));
            std::uniform_real_distribution<double> dist(range.lo, range.hi);
            for (double& th : g.thresholds) th = range.hi > range.lo ? dist(rng) : range.lo;
            groups.push_back(std::move(g));
        }
    }
    return groups;
}

/// Per-template min/max of feature values over a random subset of samples.
/// Templates with k = 0 are left at [0, 0].
template <class Sample>
TemplateRanges estimate_ranges(const TemplateSpace& space, std::span<const Sample> samples, const HyperParams& hp,
                               Rng& rng) {
    TemplateRanges ranges{};
    if (samples.empty()) return ranges;
    const auto subset = sample_without_replacement(samples.size(), static_cast<std::size_t>(hp.range_subset), rng);
    for (int t = 0; t < kTemplateCount; ++t) {
        if (hp.k[static_cast<std::size_t>(t)] == 0) continue;
        double lo = std::numeric_limits<double>::infinity();
        double hi = -lo;
        for (int d = 0; d < hp.range_draws; ++d) {
            const FeatureDescriptor f = sample_feature(t + 1, space.layout().count, rng);
            for (std::size_t i : subset) {
                const double v = space.evaluate(f, samples[i]);
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
        }
        ranges[static_cast<std::size_t>(t)] = {lo, hi};
    }
    return ranges;
}

/// Candidate source handed to the tree grower: fresh draws at every node.
struct CandidateSampler {
    HyperParams hp;
    TemplateRanges ranges{};
    std::size_t n_landmarks = 49;

    std::vector<CandidateGroup<FeatureDescriptor>> operator()(Rng& rng) const {
        return sample_candidates(hp, ranges, n_landmarks, rng);
    }
};

}  // namespace pcrf
