#pragma once

// Trained model bundles (static bank, optional pairwise bank, optional pose
// sampler), frame-by-frame sequence prediction and sequence-level decisions.

#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pcrf/dataset.hpp"
#include "pcrf/inference.hpp"

namespace pcrf {

enum class ModelKind { Rf, Full, Pcrf, Mvrf, Mvpcrf };

inline std::string_view to_string(ModelKind k) {
    switch (k) {
        case ModelKind::Rf: return "rf";
        case ModelKind::Full: return "full";
        case ModelKind::Pcrf: return "pcrf";
        case ModelKind::Mvrf: return "mvrf";
        case ModelKind::Mvpcrf: return "mvpcrf";
    }
    return "?";
}

inline ModelKind parse_model_kind(std::string_view s) {
    for (ModelKind k : {ModelKind::Rf, ModelKind::Full, ModelKind::Pcrf, ModelKind::Mvrf, ModelKind::Mvpcrf})
        if (to_string(k) == s) return k;
    throw UsageError("unknown model kind '" + std::string(s) + "' (expected rf, full, pcrf, mvrf or mvpcrf)");
}

inline bool is_multiview(ModelKind k) { return k == ModelKind::Mvrf || k == ModelKind::Mvpcrf; }
inline bool is_pairwise(ModelKind k) { return k == ModelKind::Full || k == ModelKind::Pcrf || k == ModelKind::Mvpcrf; }

struct Model {
    ModelKind kind = ModelKind::Rf;
    LandmarkLayout layout;
    std::vector<std::string> labels;
    HyperParams static_hp = HyperParams::static_profile();
    HyperParams pair_hp = HyperParams::pairwise_profile();
    ConditionalBank static_bank;
    std::optional<ConditionalBank> pair_bank;
    std::optional<PoseSampler> sampler;

    bool operator==(const Model&) const = default;
};

struct TrainOptions {
    ModelKind kind = ModelKind::Pcrf;
    HyperParams static_hp = HyperParams::static_profile();
    HyperParams pair_hp = HyperParams::pairwise_profile();
    PoseBinTable bins = PoseBinTable::multiview();
    double pose_sigma = 5.0;
    std::uint64_t seed = 0;
    unsigned threads = thread_count();
};

inline Model train_model(std::span<const LandmarkFrame> frames, const std::vector<std::string>& vocabulary,
                         const LandmarkLayout& layout, const TrainOptions& opts) {
    if (frames.empty()) throw DataError("no training frames");
    Model m;
    m.kind = opts.kind;
    m.layout = layout;
    m.labels = vocabulary;
    m.static_hp = opts.static_hp;
    m.pair_hp = opts.pair_hp;
    BankOptions bo;
    bo.multi_view = is_multiview(opts.kind);
    bo.bins = bo.multi_view ? opts.bins : PoseBinTable::frontal();
    bo.bins.validate();
    bo.threads = opts.threads;

    bo.seed = derive_seed(opts.seed, {hash_string("static")});
    m.static_bank = train_static_bank(frames, vocabulary, layout, opts.static_hp, bo);
    if (!bo.multi_view && !m.static_bank.find({kAnySource, 0})) throw DataError("static forest could not be trained");

    if (is_pairwise(opts.kind)) {
        bo.seed = derive_seed(opts.seed, {hash_string("pairwise")});
        m.pair_bank = train_pcrf(frames, vocabulary, layout, opts.pair_hp, bo, opts.kind == ModelKind::Full);
        if (opts.kind == ModelKind::Full && !m.pair_bank->find({kAnySource, 0}))
            throw DataError("full pairwise forest could not be trained");
    }
    if (bo.multi_view) {
        std::vector<TrainingPose> poses;
        for (const auto& f : frames)
            if (f.label) poses.push_back({*f.pose, frame_bin(f, bo)});
        m.sampler = build_pose_sampler(poses, bo.bins.size(), opts.pose_sigma);
    }
    return m;
}

/// Runs one model causally over a sequence, one frame at a time.
class SequencePredictor {
public:
    SequencePredictor(const Model& model, WindowConfig cfg, std::uint64_t seed)
        : model_(model), cfg_(cfg), space_(model.layout), state_(static_cast<std::size_t>(cfg.length)), rng_(seed) {
        cfg_.validate();
        if (is_multiview(model.kind) && !model.sampler) throw DataError("multi-view model without a pose sampler");
        if (is_pairwise(model.kind) && !model.pair_bank) throw DataError("pairwise model without a pairwise bank");
    }

    /// Output p^n for the next frame. The frame must outlive the predictor.
    const std::vector<double>& push(const LandmarkFrame& frame) {
        FrameRecord rec;
        rec.frame = &frame;
        const std::size_t T = static_cast<std::size_t>(cfg_.trees);
        if (is_multiview(model_.kind)) {
            rec.static_output = predict_multiview_static(model_.static_bank, *model_.sampler, space_, frame, T, rng_);
        } else {
            rec.static_output = predict_static(*model_.static_bank.find({kAnySource, 0}), space_, frame);
        }
        if (!is_pairwise(model_.kind) || state_.empty()) {
            rec.output = rec.static_output;
        } else if (model_.kind == ModelKind::Full) {
            rec.output = predict_full(*model_.pair_bank->find({kAnySource, 0}), space_, state_, frame, cfg_);
        } else if (model_.kind == ModelKind::Pcrf) {
            rec.output = predict_conditional(*model_.pair_bank, space_, state_, frame, cfg_, rng_);
        } else {
            rec.output = predict_multiview(*model_.pair_bank, *model_.sampler, space_, state_, frame, cfg_, rng_);
        }
        state_.push(std::move(rec));
        return state_.back(1).output;
    }

private:
    const Model& model_;
    WindowConfig cfg_;
    TemplateSpace space_;
    SequenceState state_;
    Rng rng_;
};

struct SequenceResult {
    Label label = 0;
    std::size_t peak_frame = 0;
    double peak = 0.0;
    std::vector<std::vector<double>> trace;
};

/// Label achieving the global maximum over frames and non-excluded labels;
/// ties go to the earliest frame, then the lowest label.
inline SequenceResult decide(std::vector<std::vector<double>> trace, std::span<const Label> excluded = {}) {
    if (trace.empty()) throw DataError("cannot classify an empty sequence");
    SequenceResult r;
    bool found = false;
    for (std::size_t n = 0; n < trace.size(); ++n)
        for (std::size_t l = 0; l < trace[n].size(); ++l) {
            if (std::find(excluded.begin(), excluded.end(), static_cast<Label>(l)) != excluded.end()) continue;
            if (!found || trace[n][l] > r.peak) {
                found = true;
                r.peak = trace[n][l];
                r.peak_frame = n;
                r.label = static_cast<Label>(l);
            }
        }
    if (!found) throw UsageError("every label is excluded from the sequence decision");
    r.trace = std::move(trace);
    return r;
}

inline SequenceResult classify_sequence(const Model& model, std::span<const LandmarkFrame> frames, const WindowConfig& cfg,
                                        std::uint64_t seed, std::span<const Label> excluded = {}) {
    if (frames.empty()) throw DataError("cannot classify an empty sequence");
    SequencePredictor predictor(model, cfg, seed);
    std::vector<std::vector<double>> trace;
    trace.reserve(frames.size());
    for (const auto& f : frames) trace.push_back(predictor.push(f));
    return decide(std::move(trace), excluded);
}

/// frame_index,p_<label>...,model,yaw,pitch
inline void write_trace_csv(std::ostream& out, std::span<const LandmarkFrame> frames, const std::vector<std::vector<double>>& trace,
                            const std::vector<std::string>& labels, ModelKind kind) {
    out << "frame_index";
    for (const auto& l : labels) out << ",p_" << l;
    out << ",model,yaw,pitch\n";
    for (std::size_t n = 0; n < trace.size(); ++n) {
        out << frames[n].frame_index;
        for (double p : trace[n]) out << ',' << format_double(p);
        out << ',' << to_string(kind);
        if (frames[n].pose)
            out << ',' << format_double(frames[n].pose->yaw) << ',' << format_double(frames[n].pose->pitch);
        else
            out << ",,";
        out << '\n';
    }
}

}  // namespace pcrf
