#include <gtest/gtest.h>

#include <map>
#include <set>

#include "pcrf/synth.hpp"
#include "pcrf/training.hpp"
#include "test_util.hpp"

using namespace pcrf;

namespace {

Dataset small_corpus(int subjects = 6, std::uint64_t seed = 3) {
    GeneratorConfig cfg;
    cfg.n_subjects = subjects;
    cfg.sequences_per_subject = 3;
    cfg.frames_per_sequence = 20;
    cfg.labels = {"neutral", "happiness", "surprise"};
    cfg.seed = seed;
    return generate_corpus(cfg).data;
}

HyperParams tiny_hp(bool pairwise) {
    HyperParams hp = pairwise ? HyperParams::pairwise_profile() : HyperParams::static_profile();
    hp.k[2] = hp.k[5] = 0;
    hp.n_trees = 4;
    hp.thresholds_per_feature = 5;
    hp.range_subset = 100;
    hp.range_draws = 4;
    return hp;
}

}  // namespace

TEST(SampleCandidates, CountsOrderAndParameterDomains) {
    HyperParams hp = HyperParams::pairwise_profile();
    TemplateRanges ranges{};
    for (int t = 0; t < kTemplateCount; ++t) ranges[t] = {-0.5 * (t + 1), 0.25 * (t + 1)};
    Rng rng(1);
    const auto groups = sample_candidates(hp, ranges, 49, rng);
    ASSERT_EQ(static_cast<int>(groups.size()), hp.feature_draws());
    EXPECT_EQ(hp.total_candidates(), 6000);
    std::size_t g = 0;
    for (int t = 0; t < kTemplateCount; ++t)
        for (int j = 0; j < hp.k[t]; ++j, ++g) {
            const auto& c = groups[g];
            ASSERT_EQ(c.feature.kind, t + 1);
            ASSERT_EQ(static_cast<int>(c.thresholds.size()), hp.thresholds_per_feature);
            for (double th : c.thresholds) {
                ASSERT_GE(th, ranges[t].lo);
                ASSERT_LE(th, ranges[t].hi);
            }
            if (c.feature.base_template() == 3) {
                const auto& h = c.feature.hog;
                EXPECT_NEAR(h.alpha + h.beta + h.gamma, 1.0, 1e-12);
                EXPECT_GE(std::min({h.alpha, h.beta, h.gamma}), 0.0);
                EXPECT_GE(h.size, 0.1);
                EXPECT_LE(h.size, 1.0);
                EXPECT_GE(h.channel, 1);
                EXPECT_LE(h.channel, 8);
                const std::set<std::uint16_t> distinct(h.triangle.begin(), h.triangle.end());
                EXPECT_EQ(distinct.size(), 3u);
            } else {
                EXPECT_NE(c.feature.geom.a, c.feature.geom.b);
                if (c.feature.base_template() == 2) {
                    EXPECT_NE(c.feature.geom.c, c.feature.geom.a);
                    EXPECT_NE(c.feature.geom.c, c.feature.geom.b);
                }
            }
        }
}

TEST(SampleCandidates, StaticProfileHas6000Candidates) {
    EXPECT_EQ(HyperParams::static_profile().total_candidates(), 6000);
    EXPECT_EQ(HyperParams::static_profile().feature_draws(), 240);
    EXPECT_EQ(HyperParams::pairwise_profile().feature_draws(), 240);
}

TEST(SampleCandidates, DegenerateRangeUsesItsValue) {
    HyperParams hp;
    hp.k = {1, 0, 0, 0, 0, 0};
    TemplateRanges ranges{};
    ranges[0] = {0.7, 0.7};
    Rng rng(2);
    const auto groups = sample_candidates(hp, ranges, 49, rng);
    for (double th : groups[0].thresholds) EXPECT_EQ(th, 0.7);
}

TEST(EstimateRanges, DisabledTemplatesStayZeroAndAnglesBounded) {
    const auto data = small_corpus();
    std::vector<FramePair> samples;
    for (const auto& f : data.frames) samples.push_back({nullptr, &f});
    HyperParams hp = tiny_hp(false);
    Rng rng(4);
    const auto r = estimate_ranges(TemplateSpace(LandmarkLayout{}), std::span<const FramePair>(samples), hp, rng);
    EXPECT_LT(r[0].lo, r[0].hi);
    EXPECT_GT(r[0].lo, 0.0);
    EXPECT_GE(r[1].lo, -1.0);
    EXPECT_LE(r[1].hi, 1.0);
    for (int t = 2; t < kTemplateCount; ++t) {
        EXPECT_EQ(r[t].lo, 0.0);
        EXPECT_EQ(r[t].hi, 0.0);
    }
}

TEST(TemplateSpace, DerivativeIsDifferenceOfStatic) {
    Rng rng(5);
    const TemplateSpace space{LandmarkLayout{}};
    for (int trial = 0; trial < 50; ++trial) {
        const auto a = testutil::random_frame(rng), b = testutil::random_frame(rng);
        for (int kind : {4, 5}) {
            const auto f = sample_feature(kind, 49, rng);
            FeatureDescriptor base = f;
            base.kind = static_cast<std::uint8_t>(kind - 3);
            EXPECT_EQ(space.evaluate(f, FramePair{&a, &b}),
                      space.evaluate_static(base, b) - space.evaluate_static(base, a));
            EXPECT_EQ(space.evaluate(f, FramePair{&a, &a}), 0.0);
            EXPECT_THROW(space.evaluate(f, FramePair{nullptr, &b}), std::logic_error);
        }
    }
}

TEST(PairBootstrap, PairsStayWithinSubjectAndRespectSourceAndCaps) {
    const auto data = small_corpus(8);
    const std::span<const LandmarkFrame> frames(data.frames);
    HyperParams hp = tiny_hp(true);
    hp.pair_sources = 3;
    hp.pair_targets = 2;
    const BankOptions opts;
    for (Label source : {kAnySource, Label{0}, Label{1}}) {
        const PairIndex index(frames, 3, source, std::nullopt, opts, false);
        for (std::uint64_t seed = 0; seed < 10; ++seed) {
            Rng rng(seed);
            const PairBag bag = build_pair_bootstrap(index, 3, hp, 2.0 / 3.0, rng);
            ASSERT_FALSE(bag.pairs.empty());
            EXPECT_EQ(bag.subjects.size(), 6u);
            std::map<Label, int> counts;
            std::map<std::string, std::set<std::size_t>> prevs;
            std::map<std::pair<std::string, Label>, std::set<std::size_t>> curs;
            for (std::size_t i = 0; i < bag.pairs.size(); ++i) {
                const auto& p = frames[bag.pairs[i].prev];
                const auto& c = frames[bag.pairs[i].cur];
                ASSERT_EQ(p.subject_id, c.subject_id);
                ASSERT_TRUE(std::binary_search(bag.subjects.begin(), bag.subjects.end(), c.subject_id));
                ASSERT_TRUE(p.label && c.label);
                ASSERT_EQ(bag.labels[i], *c.label);
                if (source != kAnySource) {
                    ASSERT_EQ(*p.label, source);
                }
                ++counts[bag.labels[i]];
                prevs[c.subject_id].insert(bag.pairs[i].prev);
                curs[{c.subject_id, *c.label}].insert(bag.pairs[i].cur);
            }
            for (const auto& [l, n] : counts) EXPECT_EQ(n, counts.begin()->second);
            for (const auto& [s, p] : prevs) EXPECT_LE(p.size(), 3u);
            for (const auto& [k, c] : curs) EXPECT_LE(c.size(), 2u);
        }
    }
}

TEST(TrainBanks, ConditionalBankHasOneCellPerSourceLabel) {
    const auto data = small_corpus();
    BankOptions opts;
    opts.seed = 9;
    opts.threads = 1;
    const auto bank = train_pcrf(data.frames, data.header.labels, {}, tiny_hp(true), opts);
    ASSERT_EQ(bank.cells.size(), 3u);
    for (Label l = 0; l < 3; ++l) {
        const auto* f = bank.find({l, 0});
        ASSERT_NE(f, nullptr);
        EXPECT_EQ(f->size(), 4u);
        EXPECT_EQ(f->labels, data.header.labels);
    }
    const auto full = train_pcrf(data.frames, data.header.labels, {}, tiny_hp(true), opts, true);
    ASSERT_EQ(full.cells.size(), 1u);
    EXPECT_NE(full.find({kAnySource, 0}), nullptr);
}

TEST(TrainBanks, DeterministicAcrossThreadCounts) {
    const auto data = small_corpus();
    BankOptions a;
    a.seed = 5;
    a.threads = 1;
    BankOptions b = a;
    b.threads = 3;
    EXPECT_EQ(train_pcrf(data.frames, data.header.labels, {}, tiny_hp(true), a),
              train_pcrf(data.frames, data.header.labels, {}, tiny_hp(true), b));
    EXPECT_EQ(train_static_bank(data.frames, data.header.labels, {}, tiny_hp(false), a),
              train_static_bank(data.frames, data.header.labels, {}, tiny_hp(false), b));
}

TEST(TrainBanks, StaticRejectsDerivativeTemplates) {
    const auto data = small_corpus();
    EXPECT_THROW(train_static_bank(data.frames, data.header.labels, {}, tiny_hp(true), {}), UsageError);
}

TEST(TrainBanks, AppearanceTemplatesNeedChannels) {
    const auto data = small_corpus();
    HyperParams hp = tiny_hp(false);
    hp.k[2] = 4;
    EXPECT_THROW(train_static_bank(data.frames, data.header.labels, {}, hp, {}), DataError);
}

TEST(TrainBanks, MissingSourceLabelSkipsCellWithWarning) {
    auto data = small_corpus();
    // Relabel every surprise frame so no frame has source label 2.
    for (auto& f : data.frames)
        if (f.label == 2) f.label = 1;
    BankOptions opts;
    opts.threads = 1;
    const auto bank = train_pcrf(data.frames, data.header.labels, {}, tiny_hp(true), opts);
    EXPECT_EQ(bank.find({2, 0}), nullptr);
    EXPECT_EQ(bank.cells.size(), 2u);
    ASSERT_EQ(bank.warnings.size(), 1u);
}

TEST(TrainBanks, OobBeatsChance) {
    const auto data = small_corpus(9);
    BankOptions opts;
    opts.threads = 1;
    HyperParams hp = tiny_hp(false);
    hp.n_trees = 20;
    const auto bank = train_static_bank(data.frames, data.header.labels, {}, hp, opts);
    const auto& forest = bank.cells.begin()->second;
    std::vector<FramePair> samples;
    std::vector<Label> labels;
    std::vector<std::string> subjects;
    for (const auto& f : data.frames) {
        if (!f.label) continue;
        samples.push_back({nullptr, &f});
        labels.push_back(*f.label);
        subjects.push_back(f.subject_id);
    }
    const auto r = oob_accuracy(forest, TemplateSpace(LandmarkLayout{}), std::span<const FramePair>(samples), std::span<const Label>(labels),
                                std::span<const std::string>(subjects));
    EXPECT_EQ(r.skipped, 0u);
    EXPECT_GT(r.accuracy, 0.5);  // chance is 1/3
}
