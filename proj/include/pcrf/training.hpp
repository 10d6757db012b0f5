#pragma once

// Static and pairwise conditional forest training. A conditional bank holds
// one forest per (source label, pose bin) cell; the static and "full"
// pairwise models use the any-source key.

#include <compare>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "pcrf/features.hpp"
#include "pcrf/forest.hpp"
#include "pcrf/hyperparams.hpp"
#include "pcrf/pose.hpp"

namespace pcrf {

inline constexpr Label kAnySource = -1;

struct CellKey {
    Label source = kAnySource;
    std::size_t pose_bin = 0;

    auto operator<=>(const CellKey&) const = default;
};

struct ConditionalBank {
    std::vector<std::string> labels;
    PoseBinTable bins = PoseBinTable::frontal();
    std::map<CellKey, FrameForest> cells;
    std::vector<std::string> warnings;

    const FrameForest* find(const CellKey& key) const {
        auto it = cells.find(key);
        return it == cells.end() ? nullptr : &it->second;
    }

    std::size_t tree_count() const {
        std::size_t n = 0;
        for (const auto& [k, f] : cells) n += f.size();
        return n;
    }

    bool operator==(const ConditionalBank& o) const {
        return labels == o.labels && bins == o.bins && cells == o.cells;
    }
};

struct BankOptions {
    PoseBinTable bins = PoseBinTable::frontal();
    bool multi_view = false;
    std::uint64_t seed = 0;
    unsigned threads = thread_count();
};

/// Pose bin of a training frame: nearest bin center in multi-view mode, else bin 0.
inline std::size_t frame_bin(const LandmarkFrame& f, const BankOptions& opts) {
    if (!opts.multi_view) return 0;
    if (!f.pose) throw DataError("multi-view training frame without a pose (" + f.sequence_id + ")");
    return opts.bins.nearest(*f.pose);
}

/// Indices into the training frame list.
struct PairSample {
    std::size_t prev = 0;
    std::size_t cur = 0;
};

struct PairBag {
    std::vector<PairSample> pairs;
    std::vector<Label> labels;  // pair label = label of the current frame
    std::vector<std::string> subjects;
    std::vector<Label> missing_labels;
};

/// Per-subject frame lists for one bank cell.
class PairIndex {
public:
    /// `source`: required label of the previous frame, or kAnySource.
    /// `bin`: pose bin the current frame must lie in (and the previous one too unless cross-view).
    PairIndex(std::span<const LandmarkFrame> frames, int n_labels, Label source, std::optional<std::size_t> bin,
              const BankOptions& opts, bool cross_view)
        : n_labels_(n_labels) {
        for (std::size_t i = 0; i < frames.size(); ++i) {
            const auto& f = frames[i];
            if (!f.label) continue;
            const bool in_bin = !bin || frame_bin(f, opts) == *bin;
            auto& entry = by_subject_[f.subject_id];
            if (entry.targets.empty()) entry.targets.resize(static_cast<std::size_t>(n_labels));
            if (in_bin) entry.targets[static_cast<std::size_t>(*f.label)].push_back(i);
            if ((in_bin || cross_view) && (source == kAnySource || *f.label == source)) entry.sources.push_back(i);
        }
        for (const auto& [s, e] : by_subject_) all_subjects_.push_back(s);
    }

    const std::vector<std::string>& subjects() const { return all_subjects_; }

    bool has_sources() const {
        for (const auto& [s, e] : by_subject_)
            if (!e.sources.empty()) return true;
        return false;
    }

    /// Sources x targets for one subject, capped per draw.
    void add_subject_pairs(const std::string& subject, int max_sources, int max_targets, Rng& rng, std::vector<PairSample>& pairs, std::vector<Label>& labels) const {
        const auto it = by_subject_.find(subject);
        if (it == by_subject_.end() || it->second.sources.empty()) return;
        const auto& e = it->second;
        std::vector<std::size_t> src;
        for (std::size_t j : sample_without_replacement(e.sources.size(), static_cast<std::size_t>(max_sources), rng))
            src.push_back(e.sources[j]);
        std::vector<std::pair<std::size_t, Label>> dst;
        for (int l = 0; l < n_labels_; ++l) {
            const auto& pool = e.targets[static_cast<std::size_t>(l)];
            for (std::size_t j : sample_without_replacement(pool.size(), static_cast<std::size_t>(max_targets), rng))
                dst.push_back({pool[j], l});
        }
        for (std::size_t s : src)
            for (const auto& [d, l] : dst) {
                pairs.push_back({s, d});
                labels.push_back(l);
            }
    }

private:
    struct Entry {
        std::vector<std::size_t> sources;
        std::vector<std::vector<std::size_t>> targets;  // per label
    };
    int n_labels_;
    std::map<std::string, Entry> by_subject_;
    std::vector<std::string> all_subjects_;
};

/// One pairwise bootstrap: draw a subject fraction, pair up to P_src source
/// frames with up to P_dst frames of every label per subject, then balance
/// the pair labels by downsampling.
inline PairBag build_pair_bootstrap(const PairIndex& index, int n_labels, const HyperParams& hp, double data_ratio, Rng& rng) {
    PairBag bag;
    if (index.subjects().empty()) return bag;
    bag.subjects = draw_subjects(index.subjects(), data_ratio, rng);
    std::vector<PairSample> pairs;
    std::vector<Label> labels;
    for (const auto& s : bag.subjects) index.add_subject_pairs(s, hp.pair_sources, hp.pair_targets, rng, pairs, labels);
    std::vector<std::size_t> pool(pairs.size());
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    for (std::size_t i : balance_by_downsampling(pool, labels, n_labels, rng, &bag.missing_labels)) {
        bag.pairs.push_back(pairs[i]);
        bag.labels.push_back(labels[i]);
    }
    return bag;
}

inline std::vector<FramePair> to_frame_pairs(std::span<const LandmarkFrame> frames, std::span<const PairSample> pairs) {
    std::vector<FramePair> out;
    out.reserve(pairs.size());
    for (const auto& p : pairs) out.push_back({&frames[p.prev], &frames[p.cur]});
    return out;
}

namespace detail {

inline void require_channels(std::span<const LandmarkFrame> frames, const HyperParams& hp) {
    if (hp.k[2] == 0 && hp.k[5] == 0) return;
    for (const auto& f : frames)
        if (!f.channels) throw DataError("appearance templates enabled but frame " + f.sequence_id + "#" +
                                         std::to_string(f.frame_index) + " has no image channels");
}

inline std::string cell_name(const std::vector<std::string>& labels, const CellKey& key) {
    std::string s = key.source == kAnySource ? std::string("any") : labels[static_cast<std::size_t>(key.source)];
    return s + "/bin" + std::to_string(key.pose_bin);
}

}  // namespace detail

/// Static forests, one per pose bin present in the data (a single bin unless multi-view).
inline ConditionalBank train_static_bank(std::span<const LandmarkFrame> frames, const std::vector<std::string>& vocabulary,
                                         const LandmarkLayout& layout, const HyperParams& hp, const BankOptions& opts) {
    hp.validate();
    if (hp.k[3] || hp.k[4] || hp.k[5]) throw UsageError("static models cannot use derivative templates");
    detail::require_channels(frames, hp);
    ConditionalBank bank;
    bank.labels = vocabulary;
    bank.bins = opts.multi_view ? opts.bins : PoseBinTable::frontal();
    const TemplateSpace space(layout);
    const std::size_t n_bins = opts.multi_view ? opts.bins.size() : 1;
    for (std::size_t b = 0; b < n_bins; ++b) {
        std::vector<FramePair> samples;
        std::vector<Label> labels;
        std::vector<std::string> subjects;
        for (const auto& f : frames) {
            if (!f.label || frame_bin(f, opts) != b) continue;
            samples.push_back({nullptr, &f});
            labels.push_back(*f.label);
            subjects.push_back(f.subject_id);
        }
        const CellKey key{kAnySource, b};
        std::set<Label> distinct(labels.begin(), labels.end());
        if (distinct.size() < 2) {
            bank.warnings.push_back("skipped static cell " + detail::cell_name(vocabulary, key) + ": fewer than two labels");
            continue;
        }
        Rng range_rng(derive_seed(opts.seed, {0x52414e47u, b}));
        const CandidateSampler sampler{hp, estimate_ranges(space, std::span<const FramePair>(samples), hp, range_rng), layout.count};
        bank.cells.emplace(key, train_forest(space, std::span<const FramePair>(samples), std::span<const Label>(labels),
                                             std::span<const std::string>(subjects), vocabulary, hp, sampler,
                                             derive_seed(opts.seed, {0x53544154u, b}), opts.threads));
    }
    if (bank.cells.empty()) throw DataError("no static cell could be trained");
    return bank;
}

/// Trains one pairwise cell. Returns nullopt when no subject has a source frame.
inline std::optional<FrameForest> train_pair_cell(std::span<const LandmarkFrame> frames, const std::vector<std::string>& vocabulary,
                                                  const LandmarkLayout& layout, const HyperParams& hp, const BankOptions& opts,
                                                  const CellKey& key) {
    const int n_labels = static_cast<int>(vocabulary.size());
    const std::optional<std::size_t> bin = opts.multi_view ? std::optional<std::size_t>(key.pose_bin) : std::nullopt;
    const PairIndex index(frames, n_labels, key.source, bin, opts, hp.cross_view_pairs);
    if (!index.has_sources()) return std::nullopt;
    const TemplateSpace space(layout);
    const std::uint64_t cell_seed = derive_seed(opts.seed, {0x50414952u, static_cast<std::uint64_t>(key.source + 1), key.pose_bin});

    // Derivative thresholds need ranges measured on pairwise data.
    Rng range_rng(derive_seed(cell_seed, {0x52414e47u}));
    const PairBag range_bag = build_pair_bootstrap(index, n_labels, hp, 1.0, range_rng);
    if (range_bag.pairs.empty()) return std::nullopt;
    const auto range_pairs = to_frame_pairs(frames, range_bag.pairs);
    const CandidateSampler sampler{hp, estimate_ranges(space, std::span<const FramePair>(range_pairs), hp, range_rng), layout.count};

    auto make_bag = [&](Rng& rng) {
        PairBag pb = build_pair_bootstrap(index, n_labels, hp, hp.data_ratio, rng);
        if (pb.pairs.empty()) {
            // Every drawn subject lacked source frames; fall back to all subjects.
            pb = build_pair_bootstrap(index, n_labels, hp, 1.0, rng);
        }
        TrainingBag<FramePair> bag;
        bag.samples = to_frame_pairs(frames, pb.pairs);
        bag.labels = std::move(pb.labels);
        bag.subjects = std::move(pb.subjects);
        bag.missing_labels = std::move(pb.missing_labels);
        return bag;
    };
    return grow_forest(space, vocabulary, hp.n_trees, TreeLimits::from(hp), make_bag, sampler, cell_seed, opts.threads);
}

/// Pairwise conditional bank: one forest per source label (and pose bin in
/// multi-view mode). With `full = true` a single any-source forest per bin is
/// trained on all transitions instead.
inline ConditionalBank train_pcrf(std::span<const LandmarkFrame> frames, const std::vector<std::string>& vocabulary,
                                  const LandmarkLayout& layout, const HyperParams& hp, const BankOptions& opts,
                                  bool full = false) {
    hp.validate();
    detail::require_channels(frames, hp);
    const int n_labels = static_cast<int>(vocabulary.size());
    if (n_labels < 2) throw UsageError("pairwise training needs at least two labels");
    ConditionalBank bank;
    bank.labels = vocabulary;
    bank.bins = opts.multi_view ? opts.bins : PoseBinTable::frontal();
    const std::size_t n_bins = opts.multi_view ? opts.bins.size() : 1;
    std::vector<CellKey> keys;
    for (std::size_t b = 0; b < n_bins; ++b) {
        if (full) {
            keys.push_back({kAnySource, b});
        } else {
            for (Label l = 0; l < n_labels; ++l) keys.push_back({l, b});
        }
    }
    for (const auto& key : keys) {
        auto forest = train_pair_cell(frames, vocabulary, layout, hp, opts, key);
        if (!forest) {
            bank.warnings.push_back("skipped pairwise cell " + detail::cell_name(vocabulary, key) + ": no source frames");
            continue;
        }
        bank.cells.emplace(key, std::move(*forest));
    }
    if (bank.cells.empty()) throw DataError("no pairwise cell could be trained");
    return bank;
}

/// OOB accuracy of one pairwise cell on a fresh all-subject pair draw.
inline OobReport pair_cell_oob(std::span<const LandmarkFrame> frames, const ConditionalBank& bank, const CellKey& key,
                               const LandmarkLayout& layout, const HyperParams& hp, const BankOptions& opts) {
    const FrameForest* forest = bank.find(key);
    if (!forest) throw UsageError("bank has no cell " + detail::cell_name(bank.labels, key));
    const int n_labels = static_cast<int>(bank.labels.size());
    const std::optional<std::size_t> bin = opts.multi_view ? std::optional<std::size_t>(key.pose_bin) : std::nullopt;
    const PairIndex index(frames, n_labels, key.source, bin, opts, hp.cross_view_pairs);
    Rng rng(derive_seed(opts.seed, {0x4f4f42u, static_cast<std::uint64_t>(key.source + 1), key.pose_bin}));
    const PairBag bag = build_pair_bootstrap(index, n_labels, hp, 1.0, rng);
    const auto samples = to_frame_pairs(frames, bag.pairs);
    std::vector<std::string> subjects;
    subjects.reserve(bag.pairs.size());
    for (const auto& p : bag.pairs) subjects.push_back(frames[p.cur].subject_id);
    return oob_accuracy(*forest, TemplateSpace(layout), std::span<const FramePair>(samples),
                        std::span<const Label>(bag.labels), std::span<const std::string>(subjects));
}

/// OOB accuracy of the static forest of one pose bin over its labeled frames.
inline OobReport static_cell_oob(std::span<const LandmarkFrame> frames, const ConditionalBank& bank, std::size_t pose_bin,
                                 const LandmarkLayout& layout, const BankOptions& opts) {
    const CellKey key{kAnySource, pose_bin};
    const FrameForest* forest = bank.find(key);
    if (!forest) throw UsageError("bank has no cell " + detail::cell_name(bank.labels, key));
    std::vector<FramePair> samples;
    std::vector<Label> labels;
    std::vector<std::string> subjects;
    for (const auto& f : frames) {
        if (!f.label || frame_bin(f, opts) != pose_bin) continue;
        samples.push_back({nullptr, &f});
        labels.push_back(*f.label);
        subjects.push_back(f.subject_id);
    }
    return oob_accuracy(*forest, TemplateSpace(layout), std::span<const FramePair>(samples), std::span<const Label>(labels),
                        std::span<const std::string>(subjects));
}

}  // namespace pcrf
