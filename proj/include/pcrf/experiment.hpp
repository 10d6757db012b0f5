#pragma once

// Subject splits and batch sequence evaluation of one or more models over a
// dataset, building image channels per sequence on demand.

#include <algorithm>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "pcrf/dataset.hpp"
#include "pcrf/metrics.hpp"
#include "pcrf/model.hpp"
#include "pcrf/synth.hpp"

namespace pcrf {

struct SubjectSplit {
    std::vector<std::string> train;
    std::vector<std::string> test;
};

/// Held-out subjects: round(test_fraction * S) subjects drawn without replacement (at least one each side).
inline SubjectSplit split_subjects(const Dataset& data, double test_fraction, std::uint64_t seed) {
    const auto all = subjects(data);
    if (all.size() < 2) throw DataError("a subject split needs at least two subjects");
    if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw UsageError("test fraction must be in (0, 1)");
    std::size_t n_test = static_cast<std::size_t>(std::lround(test_fraction * static_cast<double>(all.size())));
    n_test = std::clamp<std::size_t>(n_test, 1, all.size() - 1);
    Rng rng(derive_seed(seed, {hash_string("split")}));
    const auto pick = sample_without_replacement(all.size(), n_test, rng);
    std::set<std::size_t> test(pick.begin(), pick.end());
    SubjectSplit s;
    for (std::size_t i = 0; i < all.size(); ++i) (test.count(i) ? s.test : s.train).push_back(all[i]);
    return s;
}

/// Frames of the listed subjects whose sequence passes `keep` (all when empty).
inline Dataset subset(const Dataset& data, const std::vector<std::string>& subject_ids,
                      const std::function<bool(const SequenceView&)>& keep = {}) {
    const std::set<std::string> wanted(subject_ids.begin(), subject_ids.end());
    Dataset out;
    out.header = data.header;
    out.base_dir = data.base_dir;
    for (const auto& seq : sequences(data)) {
        if (!wanted.count(seq.subject_id) || (keep && !keep(seq))) continue;
        for (std::size_t i = seq.begin; i < seq.end; ++i) out.frames.push_back(data.frames[i]);
    }
    return out;
}

struct EvalOptions {
    WindowConfig window;
    std::uint64_t seed = 0;
    std::vector<Label> excluded;             // labels ignored by the sequence decision
    std::optional<ImageSource> images;       // required when a model uses appearance templates
    ChannelOptions channels;
};

struct SequenceOutcome {
    std::string subject_id;
    std::string sequence_id;
    std::size_t begin = 0;  // first frame row in the dataset
    Label truth = 0;
    SequenceResult result;
};

struct EvalReport {
    std::vector<SequenceOutcome> outcomes;
    ClassificationMetrics metrics;
};

inline bool uses_images(const Model& m) {
    auto uses = [](const HyperParams& hp) { return hp.k[2] > 0 || hp.k[5] > 0; };
    return uses(m.static_hp) || (is_pairwise(m.kind) && uses(m.pair_hp));
}

inline std::uint64_t sequence_seed(std::uint64_t seed, const SequenceView& seq) {
    return derive_seed(seed, {hash_string(seq.subject_id), hash_string(seq.sequence_id)});
}

/// Classifies every labeled sequence with every model. Channels are built once
/// per sequence and released afterwards.
inline std::vector<EvalReport> evaluate_models(const std::vector<const Model*>& models, const Dataset& data, const EvalOptions& opts) {
    bool need_images = false;
    for (const Model* m : models) need_images |= uses_images(*m);
    if (need_images && !opts.images) throw UsageError("a model uses appearance templates but no image source was given");
    std::vector<EvalReport> reports(models.size());
    std::vector<LandmarkFrame> buffer;
    for (const auto& seq : sequences(data)) {
        if (!seq.label) continue;
        buffer.assign(data.frames.begin() + static_cast<std::ptrdiff_t>(seq.begin), data.frames.begin() + static_cast<std::ptrdiff_t>(seq.end));
        if (need_images) attach_channels(buffer, *opts.images, opts.channels);
        for (std::size_t k = 0; k < models.size(); ++k) {
            SequenceOutcome o{seq.subject_id, seq.sequence_id, seq.begin, *seq.label,
                              classify_sequence(*models[k], buffer, opts.window, sequence_seed(opts.seed, seq), opts.excluded)};
            reports[k].outcomes.push_back(std::move(o));
        }
    }
    for (std::size_t k = 0; k < models.size(); ++k) {
        std::vector<Label> truth, pred;
        for (const auto& o : reports[k].outcomes) {
            truth.push_back(o.truth);
            pred.push_back(o.result.label);
        }
        reports[k].metrics = classification_metrics(truth, pred, static_cast<int>(data.header.labels.size()));
    }
    return reports;
}

}  // namespace pcrf
