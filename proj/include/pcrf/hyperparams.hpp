#pragma once

#include <array>
#include <numeric>
#include <string>

#include "pcrf/errors.hpp"

namespace pcrf {

inline constexpr int kTemplateCount = 6;

/// Training hyperparameters. The two factory profiles reproduce the published
/// static-RF and pairwise settings (240 feature draws x 25 thresholds each).
struct HyperParams {
    std::array<int, kTemplateCount> k{40, 40, 160, 0, 0, 0};  // candidate draws per template
    int thresholds_per_feature = 25;
    double data_ratio = 2.0 / 3.0;  // fraction of subjects per bootstrap
    int n_trees = 500;
    int max_depth = 30;
    int min_samples_leaf = 1;
    int pair_sources = 4;          // P_src: source frames drawn per subject
    int pair_targets = 4;          // P_dst: target frames drawn per subject and label
    int range_subset = 1000;       // samples used to estimate threshold ranges
    int range_draws = 32;          // feature draws per template for range estimation
    bool cross_view_pairs = false; // multi-view: allow prev frame from another pose bin

    bool operator==(const HyperParams&) const = default;

    static HyperParams static_profile() { return HyperParams{}; }

    static HyperParams pairwise_profile() {
        HyperParams hp;
        hp.k = {20, 20, 80, 20, 20, 80};
        return hp;
    }

    int feature_draws() const { return std::accumulate(k.begin(), k.end(), 0); }
    int total_candidates() const { return feature_draws() * thresholds_per_feature; }

    void validate() const {
        for (int v : k)
            if (v < 0) throw UsageError("candidate counts must be non-negative");
        if (feature_draws() == 0) throw UsageError("at least one feature template must be enabled");
        if (thresholds_per_feature < 1) throw UsageError("thresholds_per_feature must be >= 1");
        if (!(data_ratio > 0.0 && data_ratio <= 1.0)) throw UsageError("data_ratio must be in (0, 1]");
        if (n_trees < 1) throw UsageError("n_trees must be >= 1");
        if (max_depth < 0) throw UsageError("max_depth must be >= 0");
        if (min_samples_leaf < 1) throw UsageError("min_samples_leaf must be >= 1");
        if (pair_sources < 1 || pair_targets < 1) throw UsageError("pair draw caps must be >= 1");
        if (range_subset < 1 || range_draws < 1) throw UsageError("range estimation sizes must be >= 1");
    }
};

}  // namespace pcrf
