#pragma once

// Frame-level prediction: static forests, temporally averaged pairwise
// forests, and tree sampling from conditional banks according to the
// previous frames' expression priors and the current head pose.

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>
#include <span>
#include <vector>

#include "pcrf/features.hpp"
#include "pcrf/pose.hpp"
#include "pcrf/random.hpp"
#include "pcrf/training.hpp"

namespace pcrf {

enum class PriorMode { Static, Dynamic };

struct WindowConfig {
    int length = 60;  // N: look-back in frames
    int step = 6;     // stride between paired previous frames
    PriorMode prior = PriorMode::Dynamic;
    int trees = 500;  // T: trees drawn per pair (or per frame for static multi-view)

    void validate() const {
        if (length < 1) throw UsageError("window length must be >= 1");
        if (step < 1) throw UsageError("window step must be >= 1");
        if (trees < 1) throw UsageError("tree count must be >= 1");
    }
};

/// Largest-remainder apportionment of T over the normalized weights.
/// Remainder ties go to the lower index. All-zero weights fall back to uniform.
inline std::vector<std::size_t> allocate_trees(std::size_t total, std::span<const double> weights) {
    if (total == 0) throw UsageError("cannot allocate zero trees");
    if (weights.empty()) throw UsageError("cannot allocate trees over zero keys");
    double sum = 0.0;
    for (double w : weights) {
        if (!(w >= 0.0) || !std::isfinite(w)) throw UsageError("allocation weights must be finite and non-negative");
        sum += w;
    }
    const std::size_t k = weights.size();
    std::vector<double> quota(k);
    for (std::size_t i = 0; i < k; ++i)
        quota[i] = sum > 0.0 ? static_cast<double>(total) * (weights[i] / sum) : static_cast<double>(total) / k;

    std::vector<std::size_t> counts(k);
    std::vector<double> remainder(k);
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < k; ++i) {
        counts[i] = static_cast<std::size_t>(std::floor(quota[i]));
        remainder[i] = quota[i] - static_cast<double>(counts[i]);
        assigned += counts[i];
    }
    // Rounding can push the floor sum past T by an ulp; trim from the smallest remainders.
    std::vector<std::size_t> order(k);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
    for (std::size_t j = 0; assigned < total; j = (j + 1) % k) {
        ++counts[order[j]];
        ++assigned;
    }
    for (std::size_t j = k; assigned > total;) {
        j = j == 0 ? k - 1 : j - 1;
        if (counts[order[j]] > 0) {
            --counts[order[j]];
            --assigned;
        }
    }
    return counts;
}

/// Adds the outputs of `count` trees drawn from `forest` to `acc`. Trees are
/// drawn uniformly without replacement; a count beyond the forest size takes
/// whole passes over the forest plus a without-replacement remainder, and each
/// distinct tree is evaluated once.
inline void accumulate_sampled(const FrameForest& forest, std::size_t count, const TemplateSpace& space,
                               const FramePair& sample, Rng& rng, std::span<double> acc) {
    if (count == 0) return;
    const std::size_t F = forest.size();
    const std::size_t passes = count / F;
    const std::size_t rest = count % F;
    const auto picks = sample_without_replacement(F, rest, rng);
    if (passes == 0) {
        for (std::size_t t : picks) forest.accumulate(t, space, sample, acc);
        return;
    }
    const std::size_t L = acc.size();
    std::vector<double> per_tree(F * L);
    std::vector<double> all(L, 0.0);
    for (std::size_t t = 0; t < F; ++t) {
        const auto p = forest.trees[t].predict(space, sample);
        std::copy(p.begin(), p.end(), per_tree.begin() + static_cast<std::ptrdiff_t>(t * L));
        for (std::size_t l = 0; l < L; ++l) all[l] += p[l];
    }
    for (std::size_t l = 0; l < L; ++l) acc[l] += static_cast<double>(passes) * all[l];
    for (std::size_t t : picks)
        for (std::size_t l = 0; l < L; ++l) acc[l] += per_tree[t * L + l];
}

/// Divides by `denominator`, then renormalizes to sum exactly 1 up to rounding.
inline void normalize(std::vector<double>& acc, double denominator) {
    for (double& v : acc) v /= denominator;
    const double s = std::accumulate(acc.begin(), acc.end(), 0.0);
    if (s > 0.0)
        for (double& v : acc) v /= s;
}

/// Previous frame with the priors it produced.
struct FrameRecord {
    const LandmarkFrame* frame = nullptr;
    std::vector<double> static_output;
    std::vector<double> output;
};

/// Ring buffer of the last N frames of one sequence.
class SequenceState {
public:
    explicit SequenceState(std::size_t capacity = 60) : capacity_(std::max<std::size_t>(capacity, 1)) {}

    void push(FrameRecord record) {
        history_.push_back(std::move(record));
        if (history_.size() > capacity_) history_.pop_front();
    }

    std::size_t size() const { return history_.size(); }
    bool empty() const { return history_.empty(); }

    /// Record `offset` frames back (1 = the previous frame).
    const FrameRecord& back(std::size_t offset) const { return history_[history_.size() - offset]; }

    /// Previous frames paired with the current one: offsets step, 2*step, ...
    /// up to the window length. When no strided frame is buffered yet, the
    /// oldest buffered frame is used.
    std::vector<const FrameRecord*> window(const WindowConfig& cfg) const {
        std::vector<const FrameRecord*> out;
        for (std::size_t off = static_cast<std::size_t>(cfg.step); off <= static_cast<std::size_t>(cfg.length); off += static_cast<std::size_t>(cfg.step)) {
            if (off > history_.size()) break;
            out.push_back(&back(off));
        }
        if (out.empty() && !history_.empty()) out.push_back(&history_.front());
        return out;
    }

private:
    std::size_t capacity_;
    std::deque<FrameRecord> history_;
};

inline std::vector<double> predict_static(const FrameForest& forest, const TemplateSpace& space, const LandmarkFrame& frame) {
    return forest.predict(space, FramePair{nullptr, &frame});
}

/// Uniform average of the pairwise forest over the window's pairs.
inline std::vector<double> predict_full(const FrameForest& pair_forest, const TemplateSpace& space, const SequenceState& state,
                                        const LandmarkFrame& frame, const WindowConfig& cfg) {
    const auto window = state.window(cfg);
    if (window.empty()) throw std::logic_error("predict_full needs at least one previous frame");
    std::vector<double> acc(static_cast<std::size_t>(pair_forest.n_labels()), 0.0);
    for (const FrameRecord* rec : window) {
        const auto p = pair_forest.predict(space, FramePair{rec->frame, &frame});
        for (std::size_t l = 0; l < acc.size(); ++l) acc[l] += p[l];
    }
    normalize(acc, static_cast<double>(window.size()));
    return acc;
}

inline const std::vector<double>& prior_of(const FrameRecord& rec, const WindowConfig& cfg) {
    return cfg.prior == PriorMode::Dynamic ? rec.output : rec.static_output;
}

/// Conditional model: per previous frame m, T trees are apportioned over the
/// source-label forests by the prior p0^m and sampled; all sampled outputs
/// are averaged over the window.
inline std::vector<double> predict_conditional(const ConditionalBank& bank, const TemplateSpace& space, const SequenceState& state,
                                               const LandmarkFrame& frame, const WindowConfig& cfg, Rng& rng,
                                               std::size_t pose_bin = 0) {
    const auto window = state.window(cfg);
    if (window.empty()) throw std::logic_error("predict_conditional needs at least one previous frame");
    std::vector<const FrameForest*> forests;
    std::vector<Label> sources;
    for (Label l = 0; l < static_cast<Label>(bank.labels.size()); ++l)
        if (const FrameForest* f = bank.find({l, pose_bin})) {
            forests.push_back(f);
            sources.push_back(l);
        }
    if (forests.empty()) throw DataError("conditional bank has no cell for this pose bin");
    const std::size_t T = static_cast<std::size_t>(cfg.trees);
    std::vector<double> acc(bank.labels.size(), 0.0);
    std::vector<double> weights(forests.size());
    for (const FrameRecord* rec : window) {
        const auto& prior = prior_of(*rec, cfg);
        for (std::size_t i = 0; i < forests.size(); ++i) weights[i] = prior[static_cast<std::size_t>(sources[i])];
        const auto counts = allocate_trees(T, weights);
        const FramePair pair{rec->frame, &frame};
        for (std::size_t i = 0; i < forests.size(); ++i) accumulate_sampled(*forests[i], counts[i], space, pair, rng, acc);
    }
    normalize(acc, static_cast<double>(window.size() * T));
    return acc;
}

/// Pose-bin weights for a frame; frames without a pose estimate get uniform weights.
inline std::vector<double> pose_weights(const PoseSampler& sampler, const LandmarkFrame& frame) {
    if (!frame.pose) return std::vector<double>(sampler.bins(), 1.0 / static_cast<double>(sampler.bins()));
    return sampler.sample_weights(*frame.pose);
}

/// Static multi-view model: T trees apportioned over the per-bin static forests.
inline std::vector<double> predict_multiview_static(const ConditionalBank& static_bank, const PoseSampler& sampler,
                                                    const TemplateSpace& space, const LandmarkFrame& frame, std::size_t trees,
                                                    Rng& rng) {
    const auto bin_w = pose_weights(sampler, frame);
    std::vector<const FrameForest*> forests;
    std::vector<double> weights;
    for (const auto& [key, forest] : static_bank.cells) {
        forests.push_back(&forest);
        weights.push_back(key.pose_bin < bin_w.size() ? bin_w[key.pose_bin] : 0.0);
    }
    if (forests.empty()) throw DataError("static bank is empty");
    const auto counts = allocate_trees(trees, weights);
    std::vector<double> acc(static_bank.labels.size(), 0.0);
    const FramePair sample{nullptr, &frame};
    for (std::size_t i = 0; i < forests.size(); ++i) accumulate_sampled(*forests[i], counts[i], space, sample, rng, acc);
    normalize(acc, static_cast<double>(trees));
    return acc;
}

/// Multi-view conditional model: weights w(l', bin) = P_bin(pose of frame n) * p0^m(l')
/// over the bank's cells, in ascending (l', bin) order.
inline std::vector<double> predict_multiview(const ConditionalBank& bank, const PoseSampler& sampler, const TemplateSpace& space,
                                             const SequenceState& state, const LandmarkFrame& frame, const WindowConfig& cfg,
                                             Rng& rng) {
    const auto window = state.window(cfg);
    if (window.empty()) throw std::logic_error("predict_multiview needs at least one previous frame");
    const auto bin_w = pose_weights(sampler, frame);
    std::vector<const FrameForest*> forests;
    std::vector<CellKey> keys;
    for (const auto& [key, forest] : bank.cells) {
        if (key.source == kAnySource) continue;
        forests.push_back(&forest);
        keys.push_back(key);
    }
    if (forests.empty()) throw DataError("multi-view bank has no conditional cells");
    const std::size_t T = static_cast<std::size_t>(cfg.trees);
    std::vector<double> acc(bank.labels.size(), 0.0);
    std::vector<double> weights(forests.size());
    for (const FrameRecord* rec : window) {
        const auto& prior = prior_of(*rec, cfg);
        for (std::size_t i = 0; i < keys.size(); ++i) {
            const double pw = keys[i].pose_bin < bin_w.size() ? bin_w[keys[i].pose_bin] : 0.0;
            weights[i] = pw * prior[static_cast<std::size_t>(keys[i].source)];
        }
        const auto counts = allocate_trees(T, weights);
        const FramePair pair{rec->frame, &frame};
        for (std::size_t i = 0; i < forests.size(); ++i) accumulate_sampled(*forests[i], counts[i], space, pair, rng, acc);
    }
    normalize(acc, static_cast<double>(window.size() * T));
    return acc;
}

}  // namespace pcrf
