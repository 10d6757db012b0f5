#pragma once

// Per-frame latency profile: channel building and model evaluation on a
// synthetic corpus, swept over the number of trees drawn per pair.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <vector>

#include "pcrf/experiment.hpp"

namespace pcrf {

struct BenchConfig {
    ModelKind kind = ModelKind::Pcrf;
    std::vector<int> trees{500, 1000, 2000, 6000};  // T values to sweep
    int bank_trees = 500;          // trees per trained cell
    int k_divisor = 4;             // candidate draws per template are divided by this
    bool appearance = true;        // render images and enable appearance templates
    int subjects = 6;
    int sequences = 2;             // sequences timed per T
    int frames = 90;               // frames per sequence; only full-window frames are timed
    WindowConfig window;           // length and step; trees is overwritten per sweep entry
    std::uint64_t seed = 7;
};

struct LatencyStats {
    double mean_ms = 0.0;
    double p95_ms = 0.0;
    std::size_t frames = 0;
};

struct BenchRow {
    int trees = 0;
    LatencyStats model;
};

struct BenchReport {
    LatencyStats channels;  // image to integral channels, per frame
    std::vector<BenchRow> rows;
    double train_seconds = 0.0;
};

inline LatencyStats latency_stats(std::vector<double> ms) {
    LatencyStats s;
    s.frames = ms.size();
    if (ms.empty()) return s;
    double sum = 0.0;
    for (double v : ms) sum += v;
    s.mean_ms = sum / static_cast<double>(ms.size());
    std::sort(ms.begin(), ms.end());
    const auto rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(ms.size())));
    s.p95_ms = ms[std::clamp<std::size_t>(rank, 1, ms.size()) - 1];
    return s;
}

inline BenchReport run_bench(const BenchConfig& cfg) {
    using clock = std::chrono::steady_clock;
    auto ms_since = [](clock::time_point t0) { return std::chrono::duration<double, std::milli>(clock::now() - t0).count(); };
    if (cfg.trees.empty()) throw UsageError("bench needs at least one tree count");
    if (cfg.bank_trees < 1 || cfg.k_divisor < 1 || cfg.subjects < 2 || cfg.sequences < 1) throw UsageError("invalid bench sizes");
    if (cfg.frames <= cfg.window.length) throw UsageError("bench sequences must be longer than the window");
    cfg.window.validate();

    GeneratorConfig gen;
    gen.seed = cfg.seed;
    gen.n_subjects = cfg.subjects;
    gen.frames_per_sequence = cfg.frames;
    gen.pose_mode = is_multiview(cfg.kind) ? PoseMode::MultiView : PoseMode::Frontal;
    const auto corpus = generate_corpus(gen);
    const ImageSource images = synthetic_image_source();

    // Multi-view banks keep one neutral and one apex frame per sequence so images fit in memory.
    auto frames = select_training_frames(corpus.data, FramePolicy::first_last(is_multiview(cfg.kind) ? 1 : 3));
    auto scale = [&](HyperParams hp) {
        for (int& k : hp.k) k = static_cast<int>(std::lround(static_cast<double>(k) / cfg.k_divisor));
        if (!cfg.appearance) hp.k[2] = hp.k[5] = 0;
        hp.n_trees = cfg.bank_trees;
        return hp;
    };
    TrainOptions opts;
    opts.kind = cfg.kind;
    opts.seed = cfg.seed;
    opts.static_hp = scale(HyperParams::static_profile());
    opts.pair_hp = scale(HyperParams::pairwise_profile());
    BenchReport report;
    const auto t_train = clock::now();
    if (cfg.appearance) attach_channels(frames, images);
    const Model model = train_model(frames, corpus.data.header.labels, corpus.data.header.layout, opts);
    report.train_seconds = ms_since(t_train) / 1000.0;
    frames.clear();

    const auto seqs = sequences(corpus.data);
    const std::size_t n_seq = std::min<std::size_t>(static_cast<std::size_t>(cfg.sequences), seqs.size());
    std::vector<double> channel_ms;
    for (std::size_t r = 0; r < cfg.trees.size(); ++r) {
        WindowConfig window = cfg.window;
        window.trees = cfg.trees[r];
        std::vector<double> model_ms;
        for (std::size_t q = 0; q < n_seq; ++q) {
            // Spread timed sequences over subjects (and views).
            const auto& seq = seqs[q * seqs.size() / n_seq];
            std::vector<LandmarkFrame> buffer(corpus.data.frames.begin() + static_cast<std::ptrdiff_t>(seq.begin),
                                              corpus.data.frames.begin() + static_cast<std::ptrdiff_t>(seq.end));
            SequencePredictor predictor(model, window, sequence_seed(cfg.seed, seq));
            for (std::size_t n = 0; n < buffer.size(); ++n) {
                const bool timed = n >= static_cast<std::size_t>(window.length);
                if (cfg.appearance) {
                    const GrayImage img = images(buffer[n]);
                    const auto t0 = clock::now();
                    buffer[n].channels = std::make_shared<const IntegralChannels>(build_channels(img));
                    if (timed && r == 0) channel_ms.push_back(ms_since(t0));
                }
                const auto t0 = clock::now();
                predictor.push(buffer[n]);
                if (timed) model_ms.push_back(ms_since(t0));
            }
        }
        report.rows.push_back({cfg.trees[r], latency_stats(std::move(model_ms))});
    }
    report.channels = latency_stats(std::move(channel_ms));
    return report;
}

}  // namespace pcrf
