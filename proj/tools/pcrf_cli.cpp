// pcrf: corpus generation, training, evaluation, OOB estimation and latency
// benchmarks. Exit codes: 0 ok, 1 usage, 2 data error, 3 internal error.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "pcrf/bench.hpp"
#include "pcrf/experiment.hpp"
#include "pcrf/serialization.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace pcrf;

namespace {

constexpr const char* kToolVersion = "1.0.0";

/// Removes outputs created by a command unless it completes.
class OutputGuard {
public:
    void track(const fs::path& p) {
        if (!fs::exists(p)) created_.push_back(p);
    }
    void commit() { created_.clear(); }
    ~OutputGuard() {
        std::error_code ec;
        for (auto it = created_.rbegin(); it != created_.rend(); ++it) fs::remove_all(*it, ec);
    }

private:
    std::vector<fs::path> created_;
};

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << text;
    if (!out) throw DataError("write failed for " + path.string());
}

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

std::string hex64(std::uint64_t v) {
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

json to_json(const WindowConfig& w) {
    return {{"length", w.length}, {"step", w.step}, {"trees", w.trees}, {"prior", w.prior == PriorMode::Dynamic ? "dynamic" : "static"}};
}

json to_json(const GeneratorConfig& c) {
    return {{"seed", c.seed},
            {"subjects", c.n_subjects},
            {"sequences", c.sequences_per_subject},
            {"frames", c.frames_per_sequence},
            {"labels", c.labels},
            {"morphology", c.morphology},
            {"resting_bias", c.resting_bias},
            {"amplitude_min", c.amplitude_min},
            {"amplitude_max", c.amplitude_max},
            {"noise", c.noise},
            {"pose_mode", c.pose_mode == PoseMode::MultiView ? "multiview" : "frontal"},
            {"pose_noise", c.pose_noise},
            {"occlusion_damping", c.occlusion_damping},
            {"occlusion_noise", c.occlusion_noise},
            {"images", c.render_images},
            {"offset_tail", c.offset_tail}};
}

json to_json(const std::vector<std::vector<std::size_t>>& confusion) {
    json j = json::array();
    for (const auto& row : confusion) j.push_back(row);
    return j;
}

// ---------------------------------------------------------------- shared options

struct DataOptions {
    std::string path;
    double split = 0.0;  // held-out subject fraction; 0 uses every subject
    std::uint64_t split_seed = 0;

    void add(CLI::App* cmd) {
        cmd->add_option("--data", path, "Dataset header (header.json)")->required()->check(CLI::ExistingFile);
        cmd->add_option("--split", split, "Held-out subject fraction (0 = no split)")->check(CLI::Range(0.0, 0.99));
        cmd->add_option("--split-seed", split_seed, "Seed of the subject split");
    }

    /// `held_out` selects the test side of the split.
    Dataset load(bool held_out) const {
        Dataset data = load_manifest(path);
        if (split <= 0.0) return data;
        const SubjectSplit s = split_subjects(data, split, split_seed);
        return subset(data, held_out ? s.test : s.train);
    }

    json describe(const Dataset& data) const {
        return {{"path", path}, {"split", split}, {"split_seed", split_seed}, {"frames", data.frames.size()},
                {"subjects", subjects(data).size()}, {"fingerprint", hex64(fingerprint(data))}};
    }
};

struct TrainingSetup {
    std::string kind = "pcrf";
    std::uint64_t seed = 0;
    std::string profile = "default";
    int trees = 0;  // overrides n_trees of both profiles when > 0
    std::string policy = "first-last";
    int k = 3;
    std::string appearance = "auto";
    double pose_sigma = 5.0;

    void add(CLI::App* cmd) {
        cmd->add_option("--model", kind, "Model kind")->check(CLI::IsMember({"rf", "full", "pcrf", "mvrf", "mvpcrf"}));
        cmd->add_option("--seed", seed, "Training seed");
        cmd->add_option("--profile", profile, "Hyperparameters: 'default' or a JSON file {\"static\": {...}, \"pairwise\": {...}}");
        cmd->add_option("--trees", trees, "Trees per forest (overrides the profile)")->check(CLI::PositiveNumber);
        cmd->add_option("--policy", policy, "Training frames: first-last or all")->check(CLI::IsMember({"first-last", "all"}));
        cmd->add_option("--k", k, "Frames taken from each end by first-last")->check(CLI::PositiveNumber);
        cmd->add_option("--appearance", appearance, "Appearance templates: auto (when images exist), on or off")
            ->check(CLI::IsMember({"auto", "on", "off"}));
        cmd->add_option("--pose-sigma", pose_sigma, "Pose sampler smoothing, degrees")->check(CLI::PositiveNumber);
    }

    TrainOptions options(const Dataset& data, bool& images) const {
        TrainOptions o;
        o.kind = parse_model_kind(kind);
        o.seed = seed;
        o.pose_sigma = pose_sigma;
        if (profile != "default") {
            const json j = read_json(profile);
            if (!j.is_object()) throw UsageError("profile must be a JSON object");
            for (const auto& [key, v] : j.items())
                if (key != "static" && key != "pairwise") throw UsageError("unknown profile section '" + key + "'");
            if (j.contains("static")) o.static_hp = hyperparams_from_json(j["static"], o.static_hp);
            if (j.contains("pairwise")) o.pair_hp = hyperparams_from_json(j["pairwise"], o.pair_hp);
        }
        if (trees > 0) o.static_hp.n_trees = o.pair_hp.n_trees = trees;
        const bool have_images = !data.frames.empty() && std::all_of(data.frames.begin(), data.frames.end(),
                                                                     [](const LandmarkFrame& f) { return f.image_path.has_value(); });
        if (appearance == "on" && !have_images) throw DataError("--appearance on but the dataset has no image paths");
        images = appearance == "on" || (appearance == "auto" && have_images);
        if (!images) {
            o.static_hp.k[2] = 0;
            o.pair_hp.k[2] = o.pair_hp.k[5] = 0;
        }
        o.static_hp.validate();
        o.pair_hp.validate();
        return o;
    }

    FramePolicy frame_policy() const { return policy == "all" ? FramePolicy::all_labeled() : FramePolicy::first_last(k); }

    json describe(const TrainOptions& o, bool images) const {
        return {{"model", kind}, {"seed", seed}, {"profile", profile}, {"policy", policy}, {"k", k}, {"appearance", images},
                {"pose_sigma", pose_sigma}, {"static", pcrf::to_json(o.static_hp)}, {"pairwise", pcrf::to_json(o.pair_hp)}};
    }
};

Model train_from(const Dataset& data, const TrainingSetup& setup, TrainOptions& opts, bool& images,
                 std::vector<LandmarkFrame>& frames) {
    opts = setup.options(data, images);
    frames = select_training_frames(data, setup.frame_policy());
    if (frames.empty()) throw DataError("the dataset has no labeled training frames");
    if (images) attach_channels(frames, file_image_source(data.base_dir));
    return train_model(frames, data.header.labels, data.header.layout, opts);
}

// ---------------------------------------------------------------- commands

struct SynthArgs {
    GeneratorConfig cfg;
    std::string out;
    std::string pose_mode = "frontal";
};

void cmd_synth_gen(const SynthArgs& a) {
    GeneratorConfig cfg = a.cfg;
    cfg.pose_mode = a.pose_mode == "multiview" ? PoseMode::MultiView : PoseMode::Frontal;
    cfg.validate();
    OutputGuard guard;
    const fs::path dir(a.out);
    guard.track(dir);
    for (const char* name : {"header.json", "frames.csv", "images", "generator.json"}) guard.track(dir / name);
    const auto corpus = generate_corpus(cfg);
    write_corpus(corpus.data, dir);
    json meta = {{"tool_version", kToolVersion}, {"generator", to_json(cfg)}, {"frames", corpus.data.frames.size()},
                 {"fingerprint", hex64(fingerprint(corpus.data))}};
    write_text(dir / "generator.json", meta.dump(2) + "\n");
    guard.commit();
    std::cout << "wrote " << corpus.data.frames.size() << " frames to " << dir.string() << "\n";
}

struct TrainArgs {
    DataOptions data;
    TrainingSetup setup;
    std::string out;
};

void cmd_train(const TrainArgs& a) {
    const Dataset data = a.data.load(false);
    TrainOptions opts;
    bool images = false;
    std::vector<LandmarkFrame> frames;
    const Model model = train_from(data, a.setup, opts, images, frames);
    OutputGuard guard;
    const fs::path out(a.out), manifest(a.out + ".json");
    guard.track(out);
    guard.track(manifest);
    save_model(model, out);
    json warnings = json::array();
    for (const auto& w : model.static_bank.warnings) warnings.push_back(w);
    if (model.pair_bank)
        for (const auto& w : model.pair_bank->warnings) warnings.push_back(w);
    json meta = {{"tool_version", kToolVersion},
                 {"format_version", kFormatVersion},
                 {"training", a.setup.describe(opts, images)},
                 {"data", a.data.describe(data)},
                 {"training_frames", frames.size()},
                 {"labels", model.labels},
                 {"static_cells", model.static_bank.cells.size()},
                 {"pairwise_cells", model.pair_bank ? model.pair_bank->cells.size() : 0},
                 {"warnings", warnings}};
    write_text(manifest, meta.dump(2) + "\n");
    guard.commit();
    for (const auto& w : warnings) std::cerr << "warning: " << w.get<std::string>() << "\n";
    std::cout << "trained " << to_string(model.kind) << " on " << frames.size() << " frames -> " << out.string() << "\n";
}

struct EvalArgs {
    DataOptions data;
    std::string model;
    std::string out;
    WindowConfig window;
    int trees = 0;  // 0: the model's pairwise (or static) forest size
    std::string prior = "dynamic";
    bool include_neutral = false;
    std::uint64_t seed = 0;
};

std::string trace_name(const SequenceOutcome& o) { return o.subject_id + "__" + o.sequence_id + ".csv"; }

void cmd_eval(const EvalArgs& a) {
    const Model model = load_model(a.model);
    const Dataset data = a.data.load(true);
    if (data.header.labels != model.labels) throw DataError("dataset label vocabulary differs from the model's");
    if (data.header.layout.count != model.layout.count) throw DataError("dataset landmark count differs from the model's");
    EvalOptions eo;
    eo.window = a.window;
    eo.window.prior = a.prior == "static" ? PriorMode::Static : PriorMode::Dynamic;
    eo.window.trees = a.trees > 0 ? a.trees : (is_pairwise(model.kind) ? model.pair_hp.n_trees : model.static_hp.n_trees);
    eo.window.validate();
    eo.seed = a.seed;
    if (!a.include_neutral) eo.excluded = {data.header.neutral()};
    if (uses_images(model)) {
        for (const auto& f : data.frames)
            if (!f.image_path) throw DataError("the model uses appearance templates but the dataset has no image paths");
        eo.images = file_image_source(data.base_dir);
    }
    const EvalReport rep = evaluate_models({&model}, data, eo).front();

    OutputGuard guard;
    const fs::path dir(a.out);
    guard.track(dir);
    for (const char* name : {"predictions.csv", "metrics.json", "traces"}) guard.track(dir / name);
    fs::create_directories(dir / "traces");
    std::ostringstream pred;
    pred << "subject_id,sequence_id,truth,predicted,peak_frame,peak,trace\n";
    for (const auto& o : rep.outcomes) {
        pred << o.subject_id << ',' << o.sequence_id << ',' << model.labels[static_cast<std::size_t>(o.truth)] << ','
             << model.labels[static_cast<std::size_t>(o.result.label)] << ',' << o.result.peak_frame << ','
             << format_double(o.result.peak) << ",traces/" << trace_name(o) << '\n';
        std::ostringstream trace;
        const auto frames = std::span(data.frames).subspan(o.begin, o.result.trace.size());
        write_trace_csv(trace, frames, o.result.trace, model.labels, model.kind);
        write_text(dir / "traces" / trace_name(o), trace.str());
    }
    write_text(dir / "predictions.csv", pred.str());

    const auto& m = rep.metrics;
    json f1 = json::object();
    for (std::size_t l = 0; l < model.labels.size(); ++l) f1[model.labels[l]] = m.f1_defined[l] ? json(m.f1[l]) : json(nullptr);
    json excluded = json::array();
    for (Label l : eo.excluded) excluded.push_back(model.labels[static_cast<std::size_t>(l)]);
    json meta = {{"tool_version", kToolVersion},
                 {"model", a.model},
                 {"model_kind", to_string(model.kind)},
                 {"data", a.data.describe(data)},
                 {"window", to_json(eo.window)},
                 {"seed", a.seed},
                 {"excluded_labels", excluded},
                 {"sequences", m.total},
                 {"correct", m.correct},
                 {"accuracy", m.accuracy},
                 {"macro_f1", m.macro_f1},
                 {"f1", f1},
                 {"labels", model.labels},
                 {"confusion", to_json(m.confusion)}};
    write_text(dir / "metrics.json", meta.dump(2) + "\n");
    guard.commit();
    std::printf("accuracy %.4f (%zu/%zu)  macro F1 %.4f\n", m.accuracy, m.correct, m.total, m.macro_f1);
}

struct OobArgs {
    DataOptions data;
    TrainingSetup setup;
    std::string out;
};

json oob_json(const std::string& cell, const OobReport& r) {
    return {{"cell", cell}, {"accuracy", r.accuracy}, {"evaluated", r.evaluated}, {"correct", r.correct},
            {"skipped", r.skipped}, {"confusion", to_json(r.confusion)}};
}

void cmd_oob(const OobArgs& a) {
    const Dataset data = a.data.load(false);
    TrainOptions opts;
    bool images = false;
    std::vector<LandmarkFrame> frames;
    const Model model = train_from(data, a.setup, opts, images, frames);
    BankOptions bo;
    bo.multi_view = is_multiview(model.kind);
    bo.bins = bo.multi_view ? opts.bins : PoseBinTable::frontal();
    bo.seed = derive_seed(opts.seed, {hash_string("oob")});

    auto cell_name = [&](const CellKey& k) {
        return (k.source == kAnySource ? std::string("any") : model.labels[static_cast<std::size_t>(k.source)]) + "/bin" +
               std::to_string(k.pose_bin);
    };
    const std::size_t L = model.labels.size();
    json cells = json::array();
    std::vector<std::vector<std::size_t>> pooled(L, std::vector<std::size_t>(L, 0));
    std::size_t evaluated = 0, correct = 0;
    auto add = [&](const std::string& name, const OobReport& r, bool pool) {
        cells.push_back(oob_json(name, r));
        if (!pool) return;
        evaluated += r.evaluated;
        correct += r.correct;
        for (std::size_t i = 0; i < L; ++i)
            for (std::size_t j = 0; j < L; ++j) pooled[i][j] += r.confusion[i][j];
    };
    // The pooled figure covers the forests that produce the model's output.
    const bool pairwise = is_pairwise(model.kind);
    for (const auto& [key, forest] : model.static_bank.cells)
        add("static/" + cell_name(key), static_cell_oob(frames, model.static_bank, key.pose_bin, model.layout, bo), !pairwise);
    if (pairwise)
        for (const auto& [key, forest] : model.pair_bank->cells)
            add("pairwise/" + cell_name(key), pair_cell_oob(frames, *model.pair_bank, key, model.layout, opts.pair_hp, bo), true);

    const double accuracy = evaluated ? static_cast<double>(correct) / static_cast<double>(evaluated) : 0.0;
    json meta = {{"tool_version", kToolVersion},
                 {"training", a.setup.describe(opts, images)},
                 {"data", a.data.describe(data)},
                 {"accuracy", accuracy},
                 {"evaluated", evaluated},
                 {"labels", model.labels},
                 {"confusion", to_json(pooled)},
                 {"cells", cells}};
    if (!a.out.empty()) {
        OutputGuard guard;
        guard.track(a.out);
        write_text(a.out, meta.dump(2) + "\n");
        guard.commit();
    }
    std::printf("OOB accuracy %.4f over %zu samples\n", accuracy, evaluated);
}

struct BenchArgs {
    BenchConfig cfg;
    std::string kind = "pcrf";
    std::string out;
};

void cmd_bench(const BenchArgs& a) {
    BenchConfig cfg = a.cfg;
    cfg.kind = parse_model_kind(a.kind);
    const BenchReport r = run_bench(cfg);
    std::printf("model %s, bank %d trees/cell, window N=%d step=%d, threads %u, train %.1fs\n", a.kind.c_str(), cfg.bank_trees,
                cfg.window.length, cfg.window.step, thread_count(), r.train_seconds);
    if (cfg.appearance)
        std::printf("channels   mean %8.3f ms  p95 %8.3f ms  (%zu frames)\n", r.channels.mean_ms, r.channels.p95_ms, r.channels.frames);
    json rows = json::array();
    for (const auto& row : r.rows) {
        std::printf("T=%-5d    mean %8.3f ms  p95 %8.3f ms  (%zu frames)\n", row.trees, row.model.mean_ms, row.model.p95_ms,
                    row.model.frames);
        rows.push_back({{"trees", row.trees}, {"model_mean_ms", row.model.mean_ms}, {"model_p95_ms", row.model.p95_ms},
                        {"frames", row.model.frames}});
    }
    if (!a.out.empty()) {
        json meta = {{"tool_version", kToolVersion},
                     {"model", a.kind},
                     {"bank_trees", cfg.bank_trees},
                     {"k_divisor", cfg.k_divisor},
                     {"appearance", cfg.appearance},
                     {"subjects", cfg.subjects},
                     {"sequences", cfg.sequences},
                     {"frames", cfg.frames},
                     {"window", to_json(cfg.window)},
                     {"seed", cfg.seed},
                     {"threads", thread_count()},
                     {"train_seconds", r.train_seconds},
                     {"channels_mean_ms", r.channels.mean_ms},
                     {"channels_p95_ms", r.channels.p95_ms},
                     {"rows", rows}};
        OutputGuard guard;
        guard.track(a.out);
        write_text(a.out, meta.dump(2) + "\n");
        guard.commit();
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Pairwise conditional random forests for expression recognition over landmark sequences"};
    app.require_subcommand(1);
    app.set_config("--config", "", "INI/TOML file with option defaults; command-line flags override it");
    app.set_version_flag("--version", kToolVersion);

    SynthArgs synth;
    auto* gen = app.add_subcommand("synth-gen", "Generate a synthetic corpus");
    gen->add_option("--out", synth.out, "Output directory")->required();
    gen->add_option("--seed", synth.cfg.seed, "Generator seed");
    gen->add_option("--subjects", synth.cfg.n_subjects, "Number of subjects");
    gen->add_option("--sequences", synth.cfg.sequences_per_subject, "Sequences per subject");
    gen->add_option("--frames", synth.cfg.frames_per_sequence, "Frames per sequence");
    gen->add_option("--morphology", synth.cfg.morphology, "Subject shape variation strength");
    gen->add_option("--resting-bias", synth.cfg.resting_bias, "Per-subject resting expression mix");
    gen->add_option("--amplitude-min", synth.cfg.amplitude_min, "Lowest apex amplitude");
    gen->add_option("--amplitude-max", synth.cfg.amplitude_max, "Highest apex amplitude");
    gen->add_option("--noise", synth.cfg.noise, "Landmark noise, inter-ocular units");
    gen->add_option("--pose-mode", synth.pose_mode, "frontal or multiview")->check(CLI::IsMember({"frontal", "multiview"}));
    gen->add_option("--pose-noise", synth.cfg.pose_noise, "Pose estimate noise, degrees");
    gen->add_option("--occlusion-damping", synth.cfg.occlusion_damping, "Tracker motion loss on turned-away landmarks");
    gen->add_option("--occlusion-noise", synth.cfg.occlusion_noise, "Extra noise on turned-away landmarks, in noise units");
    gen->add_flag("--images", synth.cfg.render_images, "Render PGM images");
    gen->add_flag("--offset-tail", synth.cfg.offset_tail, "Let expressions decay after the apex");

    TrainArgs train;
    auto* tr = app.add_subcommand("train", "Train a model");
    train.data.add(tr);
    train.setup.add(tr);
    tr->add_option("--out", train.out, "Model file; a JSON manifest is written next to it")->required();

    EvalArgs ev;
    auto* eval = app.add_subcommand("eval", "Classify sequences and score them");
    ev.data.add(eval);
    eval->add_option("--model", ev.model, "Model file")->required()->check(CLI::ExistingFile);
    eval->add_option("--out", ev.out, "Output directory")->required();
    eval->add_option("--length", ev.window.length, "Window length N in frames")->check(CLI::PositiveNumber);
    eval->add_option("--step", ev.window.step, "Window step in frames")->check(CLI::PositiveNumber);
    eval->add_option("--trees", ev.trees, "Trees drawn per pair (default: the model's forest size)")->check(CLI::PositiveNumber);
    eval->add_option("--prior", ev.prior, "Source prior: dynamic or static")->check(CLI::IsMember({"dynamic", "static"}));
    eval->add_flag("--include-neutral", ev.include_neutral, "Let the sequence decision pick the neutral label");
    eval->add_option("--seed", ev.seed, "Tree sampling seed");

    OobArgs oob;
    auto* oo = app.add_subcommand("oob", "Train and report out-of-bag accuracy");
    oob.data.add(oo);
    oob.setup.add(oo);
    oo->add_option("--out", oob.out, "JSON report");

    BenchArgs bench;
    auto* be = app.add_subcommand("bench", "Per-frame latency of channel building and model evaluation");
    be->add_option("--model", bench.kind, "Model kind")->check(CLI::IsMember({"rf", "full", "pcrf", "mvrf", "mvpcrf"}));
    be->add_option("--trees", bench.cfg.trees, "Tree counts to sweep")->delimiter(',');
    be->add_option("--bank-trees", bench.cfg.bank_trees, "Trees per trained cell")->check(CLI::PositiveNumber);
    be->add_option("--k-divisor", bench.cfg.k_divisor, "Divide candidate draws per template by this")->check(CLI::PositiveNumber);
    be->add_option("--subjects", bench.cfg.subjects, "Subjects in the benchmark corpus");
    be->add_option("--sequences", bench.cfg.sequences, "Sequences timed per tree count");
    be->add_option("--frames", bench.cfg.frames, "Frames per sequence");
    be->add_option("--length", bench.cfg.window.length, "Window length N")->check(CLI::PositiveNumber);
    be->add_option("--step", bench.cfg.window.step, "Window step")->check(CLI::PositiveNumber);
    be->add_option("--seed", bench.cfg.seed, "Seed");
    bool no_appearance = false;
    be->add_flag("--no-appearance", no_appearance, "Geometry-only model without images");
    be->add_option("--out", bench.out, "JSON report");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }
    try {
        if (*gen) cmd_synth_gen(synth);
        else if (*tr) cmd_train(train);
        else if (*eval) cmd_eval(ev);
        else if (*oo) cmd_oob(oob);
        else if (*be) {
            bench.cfg.appearance = !no_appearance;
            cmd_bench(bench);
        }
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
