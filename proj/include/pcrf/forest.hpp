#pragma once

// Generic balanced-bootstrap random forests over an arbitrary feature space.
//
// A feature space is any type with
//     double evaluate(const Feature&, const Sample&) const;
// Split candidates come in groups: one sampled feature with several thresholds.
// A sample goes left when its feature value is strictly below the threshold.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pcrf/errors.hpp"
#include "pcrf/geometry.hpp"
#include "pcrf/hyperparams.hpp"
#include "pcrf/parallel.hpp"
#include "pcrf/random.hpp"

namespace pcrf {

template <class Feature>
struct CandidateGroup {
    Feature feature{};
    std::vector<double> thresholds;
};

template <class Feature>
struct SplitCandidate {
    Feature feature{};
    double threshold = 0.0;
};

/// Flattens groups into the candidate order used for tie-breaking.
template <class Feature>
std::vector<SplitCandidate<Feature>> flatten(std::span<const CandidateGroup<Feature>> groups) {
    std::vector<SplitCandidate<Feature>> out;
    for (const auto& g : groups)
        for (double t : g.thresholds) out.push_back({g.feature, t});
    return out;
}

struct TreeLimits {
    int max_depth = 30;
    int min_samples_leaf = 1;

    static TreeLimits from(const HyperParams& hp) { return {hp.max_depth, hp.min_samples_leaf}; }
};

/// 1 - sum p_l^2
inline double gini(std::span<const std::size_t> counts) {
    const std::size_t total = std::accumulate(counts.begin(), counts.end(), std::size_t{0});
    if (total == 0) throw std::invalid_argument("gini of an empty node");
    double sum_sq = 0.0;
    for (std::size_t c : counts) {
        const double p = static_cast<double>(c) / total;
        sum_sq += p * p;
    }
    return 1.0 - sum_sq;
}

struct SplitChoice {
    std::size_t group = 0;
    std::size_t threshold = 0;  // index within the group
    std::size_t candidate = 0;  // flattened index
    double impurity = 0.0;      // children-size-weighted Gini
};

namespace detail {

using u128 = unsigned __int128;

/// Split quality kept as the exact rational A/nl + B/nr = (A*nr + B*nl) / (nl*nr),
/// where A, B are the sums of squared child label counts. Larger is purer.
struct SplitScore {
    u128 num = 0;
    u128 den = 1;

    bool better_than(const SplitScore& o) const { return num * o.den > o.num * den; }
    bool equals(const SplitScore& o) const { return num * o.den == o.num * den; }
};

}  // namespace detail

/// Best split given precomputed feature values.
/// `values` is row-major: values[g * n + i] is group g's feature on sample i.
/// Candidates leaving fewer than `min_leaf` samples on either side are skipped.
/// Ties go to the lowest flattened candidate index. Returns nullopt when every
/// candidate is degenerate.
inline std::optional<SplitChoice> best_split_values(std::span<const Label> labels, int n_labels,
                                                    std::span<const double> values,
                                                    std::span<const std::span<const double>> thresholds,
                                                    std::size_t min_leaf = 1) {
    const std::size_t n = labels.size();
    const std::size_t L = static_cast<std::size_t>(n_labels);
    if (n == 0 || thresholds.empty()) return std::nullopt;
    min_leaf = std::max<std::size_t>(min_leaf, 1);

    std::vector<std::size_t> total(L, 0);
    for (Label l : labels) ++total[static_cast<std::size_t>(l)];

    std::optional<SplitChoice> best;
    detail::SplitScore best_score;
    std::size_t offset = 0;
    std::vector<std::size_t> perm;
    std::vector<double> sorted;
    std::vector<std::size_t> hist;
    std::vector<std::size_t> left(L);

    for (std::size_t g = 0; g < thresholds.size(); ++g) {
        const auto th = thresholds[g];
        const std::size_t m = th.size();
        perm.resize(m);
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        std::stable_sort(perm.begin(), perm.end(), [&](std::size_t a, std::size_t b) { return th[a] < th[b]; });
        sorted.resize(m);
        for (std::size_t j = 0; j < m; ++j) sorted[j] = th[perm[j]];

        // hist[p][l]: samples of label l with exactly p thresholds <= value.
        // Such a sample goes left for sorted threshold j iff p <= j.
        hist.assign((m + 1) * L, 0);
        const double* row = values.data() + g * n;
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t p = static_cast<std::size_t>(std::upper_bound(sorted.begin(), sorted.end(), row[i]) - sorted.begin());
            ++hist[p * L + static_cast<std::size_t>(labels[i])];
        }

        std::fill(left.begin(), left.end(), 0);
        std::size_t n_left = 0;
        for (std::size_t j = 0; j < m; ++j) {
            for (std::size_t l = 0; l < L; ++l) {
                left[l] += hist[j * L + l];
                n_left += hist[j * L + l];
            }
            const std::size_t n_right = n - n_left;
            if (n_left < min_leaf || n_right < min_leaf) continue;
            detail::u128 a = 0, b = 0;
            for (std::size_t l = 0; l < L; ++l) {
                const std::size_t r = total[l] - left[l];
                a += static_cast<detail::u128>(left[l]) * left[l];
                b += static_cast<detail::u128>(r) * r;
            }
            detail::SplitScore score{a * n_right + b * n_left, static_cast<detail::u128>(n_left) * n_right};
            const std::size_t flat = offset + perm[j];
            if (!best || score.better_than(best_score) || (score.equals(best_score) && flat < best->candidate)) {
                best_score = score;
                const double purity = static_cast<double>(a) / n_left + static_cast<double>(b) / n_right;
                best = SplitChoice{g, perm[j], flat, (static_cast<double>(n) - purity) / n};
            }
        }
        offset += m;
    }
    return best;
}

/// Evaluates every group's feature on every sample, then picks the best split.
template <class Space, class Sample, class Feature>
std::optional<SplitChoice> best_split(const Space& space, std::span<const Sample> samples, std::span<const Label> labels,
                                      int n_labels, std::span<const CandidateGroup<Feature>> groups,
                                      std::size_t min_leaf = 1) {
    const std::size_t n = samples.size();
    std::vector<double> values(groups.size() * n);
    std::vector<std::span<const double>> th;
    th.reserve(groups.size());
    for (std::size_t g = 0; g < groups.size(); ++g) {
        for (std::size_t i = 0; i < n; ++i) values[g * n + i] = space.evaluate(groups[g].feature, samples[i]);
        th.emplace_back(groups[g].thresholds);
    }
    return best_split_values(labels, n_labels, values, th, min_leaf);
}

template <class Feature>
struct TreeNode {
    Feature feature{};
    double threshold = 0.0;
    std::int32_t right = -1;  // split nodes: right child index (left child is the next node)
    std::int32_t leaf = -1;   // leaf nodes: row into the leaf probability table

    bool is_leaf() const { return leaf >= 0; }
    bool operator==(const TreeNode&) const = default;
};

/// Decision tree stored as a preorder node array.
template <class Feature>
class DecisionTree {
public:
    int n_labels = 0;
    std::vector<TreeNode<Feature>> nodes;
    std::vector<double> leaf_probs;  // n_leaves x n_labels

    std::size_t leaf_count() const { return n_labels ? leaf_probs.size() / n_labels : 0; }

    std::span<const double> leaf(std::size_t row) const {
        return {leaf_probs.data() + row * n_labels, static_cast<std::size_t>(n_labels)};
    }

    template <class Space, class Sample>
    std::span<const double> predict(const Space& space, const Sample& sample) const {
        std::size_t i = 0;
        while (!nodes[i].is_leaf()) {
            const auto& node = nodes[i];
            i = space.evaluate(node.feature, sample) < node.threshold ? i + 1 : static_cast<std::size_t>(node.right);
        }
        return leaf(static_cast<std::size_t>(nodes[i].leaf));
    }

    std::size_t depth() const {
        std::size_t best = 0;
        std::vector<std::pair<std::size_t, std::size_t>> stack{{0, 0}};
        while (!stack.empty()) {
            auto [i, d] = stack.back();
            stack.pop_back();
            best = std::max(best, d);
            if (!nodes[i].is_leaf()) {
                stack.push_back({i + 1, d + 1});
                stack.push_back({static_cast<std::size_t>(nodes[i].right), d + 1});
            }
        }
        return best;
    }

    bool operator==(const DecisionTree&) const = default;
};

namespace detail {

template <class Space, class Sample, class Feature, class Source>
class TreeGrower {
public:
    TreeGrower(const Space& space, std::span<const Sample> samples, std::span<const Label> labels, int n_labels,
               TreeLimits limits, const Source& source, Rng& rng)
        : space_(space), samples_(samples), labels_(labels), n_labels_(n_labels), limits_(limits), source_(source),
          rng_(rng) {
        tree_.n_labels = n_labels;
    }

    DecisionTree<Feature> run() {
        std::vector<std::size_t> idx(samples_.size());
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        grow(idx, 0);
        return std::move(tree_);
    }

private:
    void make_leaf(const std::vector<std::size_t>& counts, std::size_t n) {
        TreeNode<Feature> node;
        node.leaf = static_cast<std::int32_t>(tree_.leaf_count());
        tree_.nodes.push_back(node);
        for (std::size_t c : counts) tree_.leaf_probs.push_back(static_cast<double>(c) / n);
    }

    void grow(std::vector<std::size_t>& idx, int depth) {
        const std::size_t n = idx.size();
        std::vector<std::size_t> counts(static_cast<std::size_t>(n_labels_), 0);
        for (std::size_t i : idx) ++counts[static_cast<std::size_t>(labels_[i])];
        const bool homogeneous = std::count_if(counts.begin(), counts.end(), [](std::size_t c) { return c > 0; }) <= 1;
        const std::size_t min_leaf = static_cast<std::size_t>(limits_.min_samples_leaf);
        if (homogeneous || depth >= limits_.max_depth || n < 2 * min_leaf) {
            make_leaf(counts, n);
            return;
        }

        const std::vector<CandidateGroup<Feature>> groups = source_(rng_);
        std::vector<double> values(groups.size() * n);
        std::vector<Label> node_labels(n);
        for (std::size_t i = 0; i < n; ++i) node_labels[i] = labels_[idx[i]];
        std::vector<std::span<const double>> th;
        th.reserve(groups.size());
        for (std::size_t g = 0; g < groups.size(); ++g) {
            for (std::size_t i = 0; i < n; ++i) values[g * n + i] = space_.evaluate(groups[g].feature, samples_[idx[i]]);
            th.emplace_back(groups[g].thresholds);
        }
        const auto choice = best_split_values(node_labels, n_labels_, values, th, min_leaf);
        if (!choice) {
            make_leaf(counts, n);
            return;
        }

        const double theta = groups[choice->group].thresholds[choice->threshold];
        const double* row = values.data() + choice->group * n;
        std::vector<std::size_t> left_idx, right_idx;
        for (std::size_t i = 0; i < n; ++i) (row[i] < theta ? left_idx : right_idx).push_back(idx[i]);
        values = {};

        const std::size_t self = tree_.nodes.size();
        TreeNode<Feature> node;
        node.feature = groups[choice->group].feature;
        node.threshold = theta;
        tree_.nodes.push_back(node);
        idx = {};
        grow(left_idx, depth + 1);
        tree_.nodes[self].right = static_cast<std::int32_t>(tree_.nodes.size());
        grow(right_idx, depth + 1);
    }

    const Space& space_;
    std::span<const Sample> samples_;
    std::span<const Label> labels_;
    int n_labels_;
    TreeLimits limits_;
    const Source& source_;
    Rng& rng_;
    DecisionTree<Feature> tree_;
};

}  // namespace detail

/// Greedy recursive tree growing. `source(rng)` yields fresh candidate groups
/// for every split node. Homogeneous nodes become one-hot leaves; depth or size
/// caps and all-degenerate candidate sets produce empirical-distribution leaves.
template <class Space, class Sample, class Source>
auto grow_tree(const Space& space, std::span<const Sample> samples, std::span<const Label> labels, int n_labels,
               TreeLimits limits, const Source& source, Rng& rng) {
    using Feature = std::decay_t<decltype(source(rng).front().feature)>;
    if (samples.empty()) throw std::invalid_argument("cannot grow a tree from an empty bootstrap");
    if (samples.size() != labels.size()) throw std::invalid_argument("samples and labels differ in length");
    return detail::TreeGrower<Space, Sample, Feature, Source>(space, samples, labels, n_labels, limits, source, rng).run();
}

template <class Feature>
struct Forest {
    std::vector<std::string> labels;  // vocabulary
    std::vector<DecisionTree<Feature>> trees;
    std::vector<std::vector<std::string>> bootstrap_subjects;  // sorted, per tree
    std::vector<std::vector<Label>> missing_labels;            // labels absent from each tree's bootstrap

    int n_labels() const { return static_cast<int>(labels.size()); }
    std::size_t size() const { return trees.size(); }
    bool empty() const { return trees.empty(); }

    bool tree_saw_subject(std::size_t t, const std::string& subject) const {
        const auto& s = bootstrap_subjects[t];
        return std::binary_search(s.begin(), s.end(), subject);
    }

    template <class Space, class Sample>
    void accumulate(std::size_t t, const Space& space, const Sample& sample, std::span<double> acc) const {
        const auto p = trees[t].predict(space, sample);
        for (std::size_t l = 0; l < p.size(); ++l) acc[l] += p[l];
    }

    /// Mean of the per-tree leaf distributions.
    template <class Space, class Sample>
    std::vector<double> predict(const Space& space, const Sample& sample) const {
        if (trees.empty()) throw std::logic_error("predict on an empty forest");
        std::vector<double> acc(labels.size(), 0.0);
        for (std::size_t t = 0; t < trees.size(); ++t) accumulate(t, space, sample, acc);
        for (double& v : acc) v /= static_cast<double>(trees.size());
        return acc;
    }

    bool operator==(const Forest&) const = default;
};

template <class Sample>
struct TrainingBag {
    std::vector<Sample> samples;
    std::vector<Label> labels;
    std::vector<std::string> subjects;  // distinct subjects drawn for this bag
    std::vector<Label> missing_labels;
};

struct Bootstrap {
    std::vector<std::size_t> indices;   // ascending
    std::vector<std::string> subjects;  // sorted
    std::vector<Label> missing_labels;
};

inline std::vector<std::string> unique_sorted(std::vector<std::string> v) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
    return v;
}

inline std::size_t subject_draw_count(double ratio, std::size_t n_subjects) {
    const auto k = static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(n_subjects) - 1e-9));
    return std::clamp<std::size_t>(k, 1, n_subjects);
}

/// Draws subjects uniformly without replacement; result is sorted.
inline std::vector<std::string> draw_subjects(const std::vector<std::string>& all_subjects, double ratio, Rng& rng) {
    const auto picks = sample_without_replacement(all_subjects.size(), subject_draw_count(ratio, all_subjects.size()), rng);
    std::vector<std::string> out;
    out.reserve(picks.size());
    for (std::size_t i : picks) out.push_back(all_subjects[i]);
    std::sort(out.begin(), out.end());
    return out;
}

/// Downsamples every present label to the minority count. `pool` holds indices
/// into `labels`; returns the kept indices in ascending order.
inline std::vector<std::size_t> balance_by_downsampling(const std::vector<std::size_t>& pool, std::span<const Label> labels,
                                                        int n_labels, Rng& rng, std::vector<Label>* missing = nullptr) {
    std::vector<std::vector<std::size_t>> by_label(static_cast<std::size_t>(n_labels));
    for (std::size_t i : pool) by_label[static_cast<std::size_t>(labels[i])].push_back(i);
    std::size_t minority = SIZE_MAX;
    for (std::size_t l = 0; l < by_label.size(); ++l) {
        if (by_label[l].empty()) {
            if (missing) missing->push_back(static_cast<Label>(l));
        } else {
            minority = std::min(minority, by_label[l].size());
        }
    }
    std::vector<std::size_t> kept;
    if (minority == SIZE_MAX) return kept;
    for (const auto& members : by_label) {
        if (members.empty()) continue;
        for (std::size_t j : sample_without_replacement(members.size(), minority, rng)) kept.push_back(members[j]);
    }
    std::sort(kept.begin(), kept.end());
    return kept;
}

/// Subject-level bootstrap with majority-class downsampling.
inline Bootstrap build_balanced_bootstrap(std::span<const std::string> sample_subjects, std::span<const Label> labels,
                                          int n_labels, double data_ratio, Rng& rng) {
    if (sample_subjects.size() != labels.size()) throw std::invalid_argument("subjects and labels differ in length");
    std::vector<bool> seen(static_cast<std::size_t>(n_labels), false);
    for (Label l : labels) seen[static_cast<std::size_t>(l)] = true;
    if (std::count(seen.begin(), seen.end(), true) < 2) throw DataError("bootstrap needs at least two labels");

    Bootstrap boot;
    const auto all_subjects = unique_sorted({sample_subjects.begin(), sample_subjects.end()});
    boot.subjects = draw_subjects(all_subjects, data_ratio, rng);
    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (std::binary_search(boot.subjects.begin(), boot.subjects.end(), sample_subjects[i])) pool.push_back(i);
    boot.indices = balance_by_downsampling(pool, labels, n_labels, rng, &boot.missing_labels);
    return boot;
}

/// Grows `n_trees` trees, each from its own bag and rng stream seeded by
/// (seed, tree index), so the result does not depend on scheduling.
template <class Space, class BagFn, class Source>
auto grow_forest(const Space& space, std::vector<std::string> vocabulary, int n_trees, TreeLimits limits,
                 const BagFn& make_bag, const Source& source, std::uint64_t seed, unsigned threads = thread_count()) {
    using Feature = std::decay_t<decltype(std::declval<Source>()(std::declval<Rng&>()).front().feature)>;
    Forest<Feature> forest;
    forest.labels = std::move(vocabulary);
    forest.trees.resize(static_cast<std::size_t>(n_trees));
    forest.bootstrap_subjects.resize(static_cast<std::size_t>(n_trees));
    forest.missing_labels.resize(static_cast<std::size_t>(n_trees));
    const int n_labels = forest.n_labels();
    parallel_for(
        static_cast<std::size_t>(n_trees),
        [&](std::size_t t) {
            Rng rng(derive_seed(seed, {t}));
            auto bag = make_bag(rng);
            if (bag.samples.empty()) throw DataError("empty bootstrap for tree " + std::to_string(t));
            forest.trees[t] = grow_tree(space, std::span(std::as_const(bag.samples)), std::span<const Label>(bag.labels),
                                        n_labels, limits, source, rng);
            forest.bootstrap_subjects[t] = std::move(bag.subjects);
            forest.missing_labels[t] = std::move(bag.missing_labels);
        },
        threads);
    return forest;
}

/// Static forest over a labeled sample set with balanced subject bootstraps.
template <class Space, class Sample, class Source>
auto train_forest(const Space& space, std::span<const Sample> samples, std::span<const Label> labels,
                  std::span<const std::string> subjects, std::vector<std::string> vocabulary, const HyperParams& hp,
                  const Source& source, std::uint64_t seed, unsigned threads = thread_count()) {
    const int n_labels = static_cast<int>(vocabulary.size());
    auto make_bag = [&](Rng& rng) {
        const Bootstrap boot = build_balanced_bootstrap(subjects, labels, n_labels, hp.data_ratio, rng);
        TrainingBag<Sample> bag;
        for (std::size_t i : boot.indices) {
            bag.samples.push_back(samples[i]);
            bag.labels.push_back(labels[i]);
        }
        bag.subjects = boot.subjects;
        bag.missing_labels = boot.missing_labels;
        return bag;
    };
    return grow_forest(space, std::move(vocabulary), hp.n_trees, TreeLimits::from(hp), make_bag, source, seed, threads);
}

struct OobReport {
    double accuracy = 0.0;
    std::size_t evaluated = 0;
    std::size_t correct = 0;
    std::size_t skipped = 0;                          // samples with no eligible tree
    std::vector<std::vector<std::size_t>> confusion;  // [truth][predicted]
};

inline Label argmax_label(std::span<const double> p) {
    return static_cast<Label>(std::max_element(p.begin(), p.end()) - p.begin());
}

/// Out-of-bag accuracy: each sample is scored only by trees whose bootstrap
/// excluded the sample's subject.
template <class Feature, class Space, class Sample>
OobReport oob_accuracy(const Forest<Feature>& forest, const Space& space, std::span<const Sample> samples,
                       std::span<const Label> labels, std::span<const std::string> subjects) {
    const std::size_t L = static_cast<std::size_t>(forest.n_labels());
    OobReport report;
    report.confusion.assign(L, std::vector<std::size_t>(L, 0));
    std::vector<double> acc(L);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        std::fill(acc.begin(), acc.end(), 0.0);
        std::size_t used = 0;
        for (std::size_t t = 0; t < forest.size(); ++t) {
            if (forest.tree_saw_subject(t, subjects[i])) continue;
            forest.accumulate(t, space, samples[i], acc);
            ++used;
        }
        if (used == 0) {
            ++report.skipped;
            continue;
        }
        const Label predicted = argmax_label(acc);
        ++report.evaluated;
        ++report.confusion[static_cast<std::size_t>(labels[i])][static_cast<std::size_t>(predicted)];
        if (predicted == labels[i]) ++report.correct;
    }
    report.accuracy = report.evaluated ? static_cast<double>(report.correct) / report.evaluated : 0.0;
    return report;
}

}  // namespace pcrf
