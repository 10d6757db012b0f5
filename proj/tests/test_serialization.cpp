#include <gtest/gtest.h>

#include <sstream>

#include "pcrf/serialization.hpp"
#include "pcrf/synth.hpp"

using namespace pcrf;

namespace {

HyperParams tiny(HyperParams hp) {
    hp.k[2] = hp.k[5] = 0;
    hp.n_trees = 3;
    hp.thresholds_per_feature = 5;
    hp.range_subset = 100;
    hp.range_draws = 4;
    return hp;
}

struct Fixture {
    Dataset data;
    std::vector<LandmarkFrame> frames;
};

const Fixture& corpus(bool multiview) {
    static const auto make = [](bool mv) {
        GeneratorConfig cfg;
        cfg.n_subjects = mv ? 3 : 5;
        cfg.sequences_per_subject = 2;
        cfg.frames_per_sequence = 16;
        cfg.labels = {"neutral", "happiness", "surprise"};
        cfg.pose_mode = mv ? PoseMode::MultiView : PoseMode::Frontal;
        cfg.seed = 11;
        Fixture f;
        f.data = generate_corpus(cfg).data;
        f.frames = select_training_frames(f.data, FramePolicy::first_last(3));
        return f;
    };
    static const Fixture frontal = make(false), mv = make(true);
    return multiview ? mv : frontal;
}

Model train(ModelKind kind) {
    const auto& c = corpus(is_multiview(kind));
    TrainOptions o;
    o.kind = kind;
    o.seed = 5;
    o.static_hp = tiny(HyperParams::static_profile());
    o.pair_hp = tiny(HyperParams::pairwise_profile());
    return train_model(c.frames, c.data.header.labels, c.data.header.layout, o);
}

std::string bytes(const Model& m) {
    std::ostringstream out(std::ios::binary);
    write_model(out, m);
    return out.str();
}

Model parse(const std::string& s) {
    std::istringstream in(s, std::ios::binary);
    return read_model(in);
}

}  // namespace

class ModelRoundTrip : public ::testing::TestWithParam<ModelKind> {};

TEST_P(ModelRoundTrip, StructurallyEqualAndByteIdentical) {
    const Model m = train(GetParam());
    const std::string a = bytes(m);
    const Model back = parse(a);
    EXPECT_TRUE(back == m);
    EXPECT_EQ(bytes(back), a);
}

TEST_P(ModelRoundTrip, ReloadedModelPredictsIdentically) {
    const Model m = train(GetParam());
    const Model back = parse(bytes(m));
    const auto& c = corpus(is_multiview(GetParam()));
    const auto seqs = sequences(c.data);
    const auto frames = std::span(c.data.frames).subspan(seqs[1].begin, seqs[1].size());
    WindowConfig w;
    w.trees = 7;
    const auto a = classify_sequence(m, frames, w, 99);
    const auto b = classify_sequence(back, frames, w, 99);
    EXPECT_EQ(a.trace, b.trace);
    EXPECT_EQ(a.label, b.label);
}

INSTANTIATE_TEST_SUITE_P(AllKinds, ModelRoundTrip,
                         ::testing::Values(ModelKind::Rf, ModelKind::Full, ModelKind::Pcrf, ModelKind::Mvrf, ModelKind::Mvpcrf),
                         [](const auto& info) { return std::string(to_string(info.param)); });

TEST(ModelFile, SaveLoadThroughFilesystem) {
    const Model m = train(ModelKind::Pcrf);
    const auto path = std::filesystem::temp_directory_path() / "pcrf_test_model.bin";
    save_model(m, path);
    EXPECT_TRUE(load_model(path) == m);
    std::filesystem::remove(path);
    EXPECT_THROW(load_model(path), DataError);
}

TEST(ModelFile, EveryTruncationIsRejected) {
    const std::string s = bytes(train(ModelKind::Pcrf));
    for (std::size_t n = 0; n < s.size(); n += std::max<std::size_t>(1, s.size() / 97))
        EXPECT_THROW(parse(s.substr(0, n)), DataError) << "length " << n;
}

TEST(ModelFile, BadMagicAndVersionAreRejected) {
    std::string s = bytes(train(ModelKind::Rf));
    std::string bad = s;
    bad[0] = 'X';
    EXPECT_THROW(parse(bad), DataError);
    bad = s;
    bad[8] = static_cast<char>(kFormatVersion + 1);
    EXPECT_THROW(parse(bad), DataError);
    bad = s;
    bad[12] = 9;  // model kind byte
    EXPECT_THROW(parse(bad), DataError);
}

TEST(ForestFile, RoundTripAndCorruptLinks) {
    const Model m = train(ModelKind::Rf);
    const FrameForest& f = *m.static_bank.find({kAnySource, 0});
    std::ostringstream out(std::ios::binary);
    write_forest(out, f);
    std::istringstream in(out.str(), std::ios::binary);
    EXPECT_TRUE(read_forest(in) == f);

    // A right-child link pointing backwards must be caught on load.
    FrameForest broken = f;
    for (auto& n : broken.trees[0].nodes)
        if (!n.is_leaf()) {
            n.right = 0;
            break;
        }
    std::ostringstream out2(std::ios::binary);
    write_forest(out2, broken);
    std::istringstream in2(out2.str(), std::ios::binary);
    EXPECT_THROW(read_forest(in2), DataError);

    std::istringstream wrong(bytes(m), std::ios::binary);
    EXPECT_THROW(read_forest(wrong), DataError);
}

TEST(ForestFile, DumpListsEveryNode) {
    const Model m = train(ModelKind::Rf);
    const FrameForest& f = *m.static_bank.find({kAnySource, 0});
    std::ostringstream out;
    dump_forest(out, f);
    const std::string text = out.str();
    std::size_t lines = 0;
    for (char c : text) lines += c == '\n';
    std::size_t expected = 1;
    for (const auto& t : f.trees) expected += 1 + t.nodes.size();
    EXPECT_EQ(lines, expected);
    EXPECT_NE(text.find("leaf"), std::string::npos);
}

TEST(HyperParamsJson, ProfilesMatchPublishedSettings) {
    const HyperParams rf = HyperParams::static_profile(), pc = HyperParams::pairwise_profile();
    EXPECT_EQ(rf.k, (std::array<int, 6>{40, 40, 160, 0, 0, 0}));
    EXPECT_EQ(pc.k, (std::array<int, 6>{20, 20, 80, 20, 20, 80}));
    for (const auto& hp : {rf, pc}) {
        EXPECT_DOUBLE_EQ(hp.data_ratio, 2.0 / 3.0);
        EXPECT_EQ(hp.thresholds_per_feature, 25);
        EXPECT_EQ(hp.total_candidates(), 6000);
        EXPECT_EQ(hp.n_trees, 500);
    }
}

TEST(HyperParamsJson, RoundTripAndOverrides) {
    HyperParams hp = HyperParams::pairwise_profile();
    hp.n_trees = 17;
    hp.max_depth = 9;
    hp.cross_view_pairs = true;
    EXPECT_TRUE(hyperparams_from_json(to_json(hp), HyperParams{}).k == hp.k);
    const HyperParams back = hyperparams_from_json(to_json(hp), HyperParams{});
    EXPECT_EQ(back.n_trees, 17);
    EXPECT_EQ(back.max_depth, 9);
    EXPECT_TRUE(back.cross_view_pairs);

    const HyperParams partial = hyperparams_from_json({{"n_trees", 3}}, HyperParams::pairwise_profile());
    EXPECT_EQ(partial.n_trees, 3);
    EXPECT_EQ(partial.k, HyperParams::pairwise_profile().k);
}

TEST(HyperParamsJson, RejectsUnknownKeysBadTypesAndInvalidValues) {
    EXPECT_THROW(hyperparams_from_json({{"n_tree", 3}}, HyperParams{}), UsageError);
    EXPECT_THROW(hyperparams_from_json({{"n_trees", "many"}}, HyperParams{}), UsageError);
    EXPECT_THROW(hyperparams_from_json({{"n_trees", 0}}, HyperParams{}), UsageError);
    EXPECT_THROW(hyperparams_from_json({{"data_ratio", 1.5}}, HyperParams{}), UsageError);
    EXPECT_THROW(hyperparams_from_json(nlohmann::json::array(), HyperParams{}), UsageError);
}
