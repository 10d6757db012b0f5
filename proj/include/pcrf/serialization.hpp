#pragma once

// Versioned little-endian binary format for forests, banks and models, a
// text dump for debugging, and JSON views of hyperparameters.
//
// Forest record: u32 tree count, vocabulary, then per tree its preorder node
// array, leaf probability table, bootstrap subject ids and missing labels.
// A standalone forest file starts with the magic "PCRFFRST" and a u32 version;
// a model file starts with "PCRFMODL".

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pcrf/model.hpp"

namespace pcrf {

static_assert(std::endian::native == std::endian::little, "serialization assumes a little-endian host");

inline constexpr std::uint32_t kFormatVersion = 1;
inline constexpr std::array<char, 8> kForestMagic{'P', 'C', 'R', 'F', 'F', 'R', 'S', 'T'};
inline constexpr std::array<char, 8> kModelMagic{'P', 'C', 'R', 'F', 'M', 'O', 'D', 'L'};

class BinaryWriter {
public:
    explicit BinaryWriter(std::ostream& out) : out_(out) {}

    template <class T>
    void pod(const T& v) {
        static_assert(std::is_trivially_copyable_v<T>);
        out_.write(reinterpret_cast<const char*>(&v), sizeof(T));
    }
    void u8(std::uint8_t v) { pod(v); }
    void u32(std::uint32_t v) { pod(v); }
    void i32(std::int32_t v) { pod(v); }
    void f64(double v) { pod(v); }
    void size(std::size_t n) { u32(static_cast<std::uint32_t>(n)); }
    void str(const std::string& s) {
        size(s.size());
        out_.write(s.data(), static_cast<std::streamsize>(s.size()));
    }
    void strings(const std::vector<std::string>& v) {
        size(v.size());
        for (const auto& s : v) str(s);
    }
    void doubles(const std::vector<double>& v) {
        size(v.size());
        out_.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
    }
    void magic(const std::array<char, 8>& m) { out_.write(m.data(), 8); }

private:
    std::ostream& out_;
};

class BinaryReader {
public:
    explicit BinaryReader(std::istream& in) : in_(in) {}

    template <class T>
    T pod() {
        T v{};
        in_.read(reinterpret_cast<char*>(&v), sizeof(T));
        if (!in_) throw DataError("truncated model file");
        return v;
    }
    std::uint8_t u8() { return pod<std::uint8_t>(); }
    std::uint32_t u32() { return pod<std::uint32_t>(); }
    std::int32_t i32() { return pod<std::int32_t>(); }
    double f64() { return pod<double>(); }
    std::size_t size(std::size_t limit = std::size_t{1} << 28) {
        const std::size_t n = u32();
        if (n > limit) throw DataError("corrupt model file: length " + std::to_string(n) + " out of range");
        return n;
    }
    std::string str() {
        std::string s(size(1u << 16), '\0');
        in_.read(s.data(), static_cast<std::streamsize>(s.size()));
        if (!in_) throw DataError("truncated model file");
        return s;
    }
    std::vector<std::string> strings() {
        std::vector<std::string> v(size());
        for (auto& s : v) s = str();
        return v;
    }
    std::vector<double> doubles() {
        std::vector<double> v(size());
        in_.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
        if (!in_) throw DataError("truncated model file");
        return v;
    }
    void expect_magic(const std::array<char, 8>& m) {
        std::array<char, 8> got{};
        in_.read(got.data(), 8);
        if (!in_ || got != m) throw DataError("not a " + std::string(m.data(), 8) + " file (bad magic)");
        const std::uint32_t v = u32();
        if (v != kFormatVersion) throw DataError("unsupported format version " + std::to_string(v));
    }

private:
    std::istream& in_;
};

// ---------------------------------------------------------------- forests

inline void write_feature(BinaryWriter& w, const FeatureDescriptor& f) {
    w.u8(f.kind);
    if (f.base_template() == 3) {
        for (auto t : f.hog.triangle) w.u32(t);
        w.u8(f.hog.channel);
        w.f64(f.hog.size);
        w.f64(f.hog.alpha);
        w.f64(f.hog.beta);
        w.f64(f.hog.gamma);
    } else {
        w.u32(f.geom.a);
        w.u32(f.geom.b);
        w.u32(f.geom.c);
        w.u8(f.geom.cosine ? 1 : 0);
    }
}

inline FeatureDescriptor read_feature(BinaryReader& r) {
    FeatureDescriptor f;
    f.kind = r.u8();
    if (f.kind < 1 || f.kind > 6) throw DataError("corrupt model file: template id " + std::to_string(f.kind));
    if (f.base_template() == 3) {
        for (auto& t : f.hog.triangle) t = static_cast<std::uint16_t>(r.u32());
        f.hog.channel = r.u8();
        f.hog.size = r.f64();
        f.hog.alpha = r.f64();
        f.hog.beta = r.f64();
        f.hog.gamma = r.f64();
    } else {
        f.geom.a = static_cast<std::uint16_t>(r.u32());
        f.geom.b = static_cast<std::uint16_t>(r.u32());
        f.geom.c = static_cast<std::uint16_t>(r.u32());
        f.geom.cosine = r.u8() != 0;
    }
    return f;
}

inline void write_forest_body(BinaryWriter& w, const FrameForest& forest) {
    w.strings(forest.labels);
    w.size(forest.trees.size());
    for (std::size_t t = 0; t < forest.trees.size(); ++t) {
        const auto& tree = forest.trees[t];
        w.size(tree.nodes.size());
        for (const auto& n : tree.nodes) {
            w.i32(n.leaf);
            if (n.is_leaf()) continue;
            write_feature(w, n.feature);
            w.f64(n.threshold);
            w.i32(n.right);
        }
        w.doubles(tree.leaf_probs);
        w.strings(forest.bootstrap_subjects[t]);
        w.size(forest.missing_labels[t].size());
        for (Label l : forest.missing_labels[t]) w.i32(l);
    }
}

inline FrameForest read_forest_body(BinaryReader& r) {
    FrameForest forest;
    forest.labels = r.strings();
    const int L = forest.n_labels();
    const std::size_t n_trees = r.size();
    forest.trees.resize(n_trees);
    forest.bootstrap_subjects.resize(n_trees);
    forest.missing_labels.resize(n_trees);
    for (std::size_t t = 0; t < n_trees; ++t) {
        auto& tree = forest.trees[t];
        tree.n_labels = L;
        tree.nodes.resize(r.size());
        for (auto& n : tree.nodes) {
            n.leaf = r.i32();
            if (n.is_leaf()) continue;
            n.feature = read_feature(r);
            n.threshold = r.f64();
            n.right = r.i32();
        }
        tree.leaf_probs = r.doubles();
        if (L == 0 || tree.leaf_probs.size() % static_cast<std::size_t>(L) != 0)
            throw DataError("corrupt model file: leaf table size");
        const std::size_t n_nodes = tree.nodes.size();
        for (std::size_t i = 0; i < n_nodes; ++i) {
            const auto& n = tree.nodes[i];
            if (n.is_leaf() ? static_cast<std::size_t>(n.leaf) >= tree.leaf_count()
                            : (n.right <= static_cast<std::int32_t>(i) + 1 || static_cast<std::size_t>(n.right) >= n_nodes))
                throw DataError("corrupt model file: node links");
        }
        forest.bootstrap_subjects[t] = r.strings();
        forest.missing_labels[t].resize(r.size());
        for (Label& l : forest.missing_labels[t]) l = r.i32();
    }
    return forest;
}

inline void write_forest(std::ostream& out, const FrameForest& forest) {
    BinaryWriter w(out);
    w.magic(kForestMagic);
    w.u32(kFormatVersion);
    write_forest_body(w, forest);
}

inline FrameForest read_forest(std::istream& in) {
    BinaryReader r(in);
    r.expect_magic(kForestMagic);
    return read_forest_body(r);
}

/// Human-readable tree listing, one node per line.
inline void dump_forest(std::ostream& out, const FrameForest& forest) {
    out << "forest labels=" << forest.labels.size() << " trees=" << forest.trees.size() << '\n';
    for (std::size_t t = 0; t < forest.trees.size(); ++t) {
        const auto& tree = forest.trees[t];
        out << "tree " << t << " nodes=" << tree.nodes.size() << " depth=" << tree.depth() << " subjects=";
        for (std::size_t i = 0; i < forest.bootstrap_subjects[t].size(); ++i)
            out << (i ? "," : "") << forest.bootstrap_subjects[t][i];
        out << '\n';
        for (std::size_t i = 0; i < tree.nodes.size(); ++i) {
            const auto& n = tree.nodes[i];
            out << "  " << i << ' ';
            if (n.is_leaf()) {
                out << "leaf";
                for (double p : tree.leaf(static_cast<std::size_t>(n.leaf))) out << ' ' << format_double(p);
            } else {
                const auto& f = n.feature;
                out << "phi" << int(f.kind) << '(';
                if (f.base_template() == 3)
                    out << "tri=" << f.hog.triangle[0] << '/' << f.hog.triangle[1] << '/' << f.hog.triangle[2]
                        << " ch=" << int(f.hog.channel) << " s=" << format_double(f.hog.size) << " bary="
                        << format_double(f.hog.alpha) << '/' << format_double(f.hog.beta) << '/' << format_double(f.hog.gamma);
                else
                    out << f.geom.a << ',' << f.geom.b << ',' << f.geom.c << (f.geom.cosine ? ",cos" : ",sin");
                out << ") < " << format_double(n.threshold) << " ? " << i + 1 << " : " << n.right;
            }
            out << '\n';
        }
    }
}

// ---------------------------------------------------------------- banks and models

inline void write_bins(BinaryWriter& w, const PoseBinTable& b) {
    w.doubles(b.yaw_centers);
    w.doubles(b.pitch_centers);
    w.f64(b.jitter_yaw);
    w.f64(b.jitter_pitch);
}

inline PoseBinTable read_bins(BinaryReader& r) {
    PoseBinTable b;
    b.yaw_centers = r.doubles();
    b.pitch_centers = r.doubles();
    b.jitter_yaw = r.f64();
    b.jitter_pitch = r.f64();
    b.validate();
    return b;
}

inline void write_bank(BinaryWriter& w, const ConditionalBank& bank) {
    w.strings(bank.labels);
    write_bins(w, bank.bins);
    w.size(bank.cells.size());
    for (const auto& [key, forest] : bank.cells) {
        w.i32(key.source);
        w.size(key.pose_bin);
        write_forest_body(w, forest);
    }
    w.strings(bank.warnings);
}

inline ConditionalBank read_bank(BinaryReader& r) {
    ConditionalBank bank;
    bank.labels = r.strings();
    bank.bins = read_bins(r);
    const std::size_t n = r.size();
    for (std::size_t i = 0; i < n; ++i) {
        CellKey key;
        key.source = r.i32();
        key.pose_bin = r.size();
        if (key.source < kAnySource || key.source >= static_cast<Label>(bank.labels.size()) || key.pose_bin >= bank.bins.size())
            throw DataError("corrupt model file: cell key");
        FrameForest f = read_forest_body(r);
        if (f.labels != bank.labels) throw DataError("corrupt model file: cell vocabulary differs from bank");
        bank.cells.emplace(key, std::move(f));
    }
    bank.warnings = r.strings();
    return bank;
}

inline void write_hyperparams(BinaryWriter& w, const HyperParams& hp) {
    for (int v : hp.k) w.i32(v);
    w.i32(hp.thresholds_per_feature);
    w.f64(hp.data_ratio);
    w.i32(hp.n_trees);
    w.i32(hp.max_depth);
    w.i32(hp.min_samples_leaf);
    w.i32(hp.pair_sources);
    w.i32(hp.pair_targets);
    w.i32(hp.range_subset);
    w.i32(hp.range_draws);
    w.u8(hp.cross_view_pairs ? 1 : 0);
}

inline HyperParams read_hyperparams(BinaryReader& r) {
    HyperParams hp;
    for (int& v : hp.k) v = r.i32();
    hp.thresholds_per_feature = r.i32();
    hp.data_ratio = r.f64();
    hp.n_trees = r.i32();
    hp.max_depth = r.i32();
    hp.min_samples_leaf = r.i32();
    hp.pair_sources = r.i32();
    hp.pair_targets = r.i32();
    hp.range_subset = r.i32();
    hp.range_draws = r.i32();
    hp.cross_view_pairs = r.u8() != 0;
    return hp;
}

inline void write_model(std::ostream& out, const Model& m) {
    BinaryWriter w(out);
    w.magic(kModelMagic);
    w.u32(kFormatVersion);
    w.u8(static_cast<std::uint8_t>(m.kind));
    w.size(m.layout.count);
    w.size(m.layout.left_eye);
    w.size(m.layout.right_eye);
    w.strings(m.labels);
    write_hyperparams(w, m.static_hp);
    write_hyperparams(w, m.pair_hp);
    write_bank(w, m.static_bank);
    w.u8(m.pair_bank ? 1 : 0);
    if (m.pair_bank) write_bank(w, *m.pair_bank);
    w.u8(m.sampler ? 1 : 0);
    if (m.sampler) {
        const auto& g = m.sampler->grid();
        for (double v : {g.yaw_min, g.yaw_max, g.pitch_min, g.pitch_max, g.step}) w.f64(v);
        w.size(m.sampler->bins());
        w.doubles(m.sampler->surface());
    }
}

inline Model read_model(std::istream& in) {
    BinaryReader r(in);
    r.expect_magic(kModelMagic);
    Model m;
    const std::uint8_t kind = r.u8();
    if (kind > static_cast<std::uint8_t>(ModelKind::Mvpcrf)) throw DataError("corrupt model file: model kind");
    m.kind = static_cast<ModelKind>(kind);
    m.layout.count = r.size();
    m.layout.left_eye = r.size();
    m.layout.right_eye = r.size();
    m.labels = r.strings();
    m.static_hp = read_hyperparams(r);
    m.pair_hp = read_hyperparams(r);
    m.static_bank = read_bank(r);
    if (r.u8()) m.pair_bank = read_bank(r);
    if (r.u8()) {
        PoseGrid g;
        g.yaw_min = r.f64();
        g.yaw_max = r.f64();
        g.pitch_min = r.f64();
        g.pitch_max = r.f64();
        g.step = r.f64();
        if (!(g.step > 0) || !(g.yaw_max >= g.yaw_min) || !(g.pitch_max >= g.pitch_min))
            throw DataError("corrupt model file: pose grid");
        const std::size_t bins = r.size();
        m.sampler = PoseSampler(g, bins, r.doubles());
    }
    if (m.static_bank.labels != m.labels || (m.pair_bank && m.pair_bank->labels != m.labels))
        throw DataError("corrupt model file: vocabulary mismatch");
    return m;
}

inline void save_model(const Model& m, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    write_model(out, m);
    if (!out) throw DataError("write failed for " + path.string());
}

inline Model load_model(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    return read_model(in);
}

// ---------------------------------------------------------------- JSON views

inline nlohmann::json to_json(const HyperParams& hp) {
    return {{"k", hp.k},
            {"thresholds_per_feature", hp.thresholds_per_feature},
            {"data_ratio", hp.data_ratio},
            {"n_trees", hp.n_trees},
            {"max_depth", hp.max_depth},
            {"min_samples_leaf", hp.min_samples_leaf},
            {"pair_sources", hp.pair_sources},
            {"pair_targets", hp.pair_targets},
            {"range_subset", hp.range_subset},
            {"range_draws", hp.range_draws},
            {"cross_view_pairs", hp.cross_view_pairs}};
}

/// Overrides the fields present in `j`; unknown keys are rejected.
inline HyperParams hyperparams_from_json(const nlohmann::json& j, HyperParams hp) {
    if (!j.is_object()) throw UsageError("hyperparameter profile must be a JSON object");
    for (const auto& [key, v] : j.items()) {
        try {
            if (key == "k") hp.k = v.get<std::array<int, kTemplateCount>>();
            else if (key == "thresholds_per_feature") hp.thresholds_per_feature = v.get<int>();
            else if (key == "data_ratio") hp.data_ratio = v.get<double>();
            else if (key == "n_trees") hp.n_trees = v.get<int>();
            else if (key == "max_depth") hp.max_depth = v.get<int>();
            else if (key == "min_samples_leaf") hp.min_samples_leaf = v.get<int>();
            else if (key == "pair_sources") hp.pair_sources = v.get<int>();
            else if (key == "pair_targets") hp.pair_targets = v.get<int>();
            else if (key == "range_subset") hp.range_subset = v.get<int>();
            else if (key == "range_draws") hp.range_draws = v.get<int>();
            else if (key == "cross_view_pairs") hp.cross_view_pairs = v.get<bool>();
            else throw UsageError("unknown hyperparameter '" + key + "'");
        } catch (const nlohmann::json::exception& e) {
            throw UsageError("bad value for hyperparameter '" + key + "': " + e.what());
        }
    }
    hp.validate();
    return hp;
}

}  // namespace pcrf
