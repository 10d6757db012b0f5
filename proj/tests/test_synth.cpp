#include <gtest/gtest.h>

#include <filesystem>
#include <map>
#include <set>
#include <sstream>

#include "pcrf/synth.hpp"

using namespace pcrf;
namespace fs = std::filesystem;

namespace {

GeneratorConfig small(PoseMode mode = PoseMode::Frontal) {
    GeneratorConfig cfg;
    cfg.n_subjects = 4;
    cfg.sequences_per_subject = 6;
    cfg.frames_per_sequence = 30;
    cfg.pose_mode = mode;
    return cfg;
}

fs::path temp_dir(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("pcrf_test_" + name);
    fs::remove_all(dir);
    return dir;
}

}  // namespace

TEST(Generator, DeterministicForSeed) {
    const auto a = generate_corpus(small()), b = generate_corpus(small());
    EXPECT_EQ(fingerprint(a.data), fingerprint(b.data));
    auto other = small();
    other.seed = 2;
    EXPECT_NE(fingerprint(generate_corpus(other).data), fingerprint(a.data));
}

TEST(Generator, CountsAndIds) {
    const auto c = generate_corpus(small());
    EXPECT_EQ(c.data.frames.size(), 4u * 6 * 30);
    const auto seqs = sequences(c.data);
    EXPECT_EQ(seqs.size(), 24u);
    EXPECT_EQ(subjects(c.data), (std::vector<std::string>{"s000", "s001", "s002", "s003"}));
    EXPECT_EQ(seqs[0].sequence_id, "s000_q0");
    const auto mv = generate_corpus(small(PoseMode::MultiView));
    EXPECT_EQ(sequences(mv.data).size(), 24u * 15);
    EXPECT_EQ(mv.view_bins.size(), 24u * 15);
    EXPECT_EQ(sequences(mv.data)[16].sequence_id, "s000_q1_b01");
}

TEST(Generator, LabelsFollowDynamics) {
    const auto c = generate_corpus(small());
    for (const auto& seq : sequences(c.data)) {
        ASSERT_TRUE(seq.label);
        ASSERT_NE(*seq.label, 0);
        const auto& frames = c.data.frames;
        EXPECT_EQ(frames[seq.begin].label, Label{0});
        EXPECT_EQ(frames[seq.end - 1].label, seq.label);
        // neutral prefix, unlabeled rise, expression suffix
        int phase = 0;
        for (std::size_t i = seq.begin; i < seq.end; ++i) {
            const int p = !frames[i].label ? 1 : (*frames[i].label == 0 ? 0 : 2);
            ASSERT_GE(p, phase);
            phase = p;
            if (frames[i].label && *frames[i].label != 0) {
                ASSERT_EQ(frames[i].label, seq.label);
            }
        }
    }
}

TEST(Generator, EverySubjectCyclesThroughAllClasses) {
    const auto c = generate_corpus(small());
    std::map<std::string, std::set<Label>> seen;
    for (const auto& seq : sequences(c.data)) seen[seq.subject_id].insert(*seq.label);
    for (const auto& [s, labels] : seen) EXPECT_EQ(labels.size(), 6u) << s;
}

TEST(Generator, ZeroAmplitudeFreezesTheFace) {
    auto cfg = small();
    cfg.amplitude_min = cfg.amplitude_max = 0.0;
    cfg.noise = 0.0;
    const auto c = generate_corpus(cfg);
    for (const auto& seq : sequences(c.data))
        for (std::size_t i = seq.begin + 1; i < seq.end; ++i)
            ASSERT_EQ(c.data.frames[i].landmarks, c.data.frames[seq.begin].landmarks);
}

TEST(Generator, NoMorphologyGivesTheMeanTemplate) {
    auto cfg = small();
    cfg.morphology = 0.0;
    cfg.resting_bias = 0.0;
    std::vector<Shape3> fields(cfg.labels.size());
    for (std::size_t c = 1; c < fields.size(); ++c) fields[c] = synth::deformation(cfg.labels[c]);
    const auto subj = synth::make_subject(cfg, 2, fields);
    const auto mean = synth::mean_template();
    for (std::size_t i = 0; i < mean.size(); ++i) {
        EXPECT_EQ(subj.neutral[i].x, mean[i].x);
        EXPECT_EQ(subj.neutral[i].y, mean[i].y);
    }
}

TEST(Generator, MorphologySeedPinsSubjectShapes) {
    auto a = small(), b = small();
    a.seed = 10;
    b.seed = 11;
    a.morphology_seed = b.morphology_seed = 77;
    std::vector<Shape3> fields(a.labels.size());
    for (std::size_t c = 1; c < fields.size(); ++c) fields[c] = synth::deformation(a.labels[c]);
    for (std::size_t s = 0; s < 4; ++s) {
        const auto sa = synth::make_subject(a, s, fields), sb = synth::make_subject(b, s, fields);
        for (std::size_t i = 0; i < sa.neutral.size(); ++i) EXPECT_EQ(sa.neutral[i].x, sb.neutral[i].x);
        EXPECT_EQ(sa.style, sb.style);
    }
    // Subjects differ from each other.
    const auto s0 = synth::make_subject(a, 0, fields), s1 = synth::make_subject(a, 1, fields);
    EXPECT_NE(s0.neutral[0].x, s1.neutral[0].x);
}

TEST(Generator, MorphologyIndependentOfExpressionLabel) {
    // The neutral frames of a subject's sequences differ only by pose, jitter
    // and noise, never by which expression the sequence shows.
    auto cfg = small();
    cfg.noise = 0.0;
    cfg.pose_noise = 0.0;
    const auto c = generate_corpus(cfg);
    const RenderConfig rc;
    std::vector<Shape3> fields(cfg.labels.size());
    for (std::size_t k = 1; k < fields.size(); ++k) fields[k] = synth::deformation(cfg.labels[k]);
    for (const auto& seq : sequences(c.data)) {
        const auto& f = c.data.frames[seq.begin];
        const std::size_t s = static_cast<std::size_t>(std::stoi(seq.subject_id.substr(1)));
        const auto subj = synth::make_subject(cfg, s, fields);
        const auto expect = synth::project(subj.neutral, *f.pose, rc);
        for (std::size_t i = 0; i < expect.size(); ++i) {
            ASSERT_NEAR(f.landmarks[i].x, expect[i].x, 1e-9);
            ASSERT_NEAR(f.landmarks[i].y, expect[i].y, 1e-9);
        }
    }
}

TEST(Generator, PosesStayInTheirJitterBox) {
    auto cfg = small(PoseMode::MultiView);
    cfg.pose_noise = 0.0;
    const auto c = generate_corpus(cfg);
    const auto table = PoseBinTable::multiview();
    const auto seqs = sequences(c.data);
    for (std::size_t q = 0; q < seqs.size(); ++q) {
        const Pose center = table.center(c.view_bins[q]);
        for (std::size_t i = seqs[q].begin; i < seqs[q].end; ++i) {
            const Pose p = *c.data.frames[i].pose;
            ASSERT_LE(std::abs(p.yaw - center.yaw), 5.0);
            ASSERT_LE(std::abs(p.pitch - center.pitch), 5.0);
        }
    }
}

TEST(Generator, MorphologyOutweighsApexDeformation) {
    // Subject shape offsets from the mean template exceed each class's realized
    // apex motion at the default morphology strength.
    GeneratorConfig cfg;
    std::vector<Shape3> fields(cfg.labels.size());
    for (std::size_t k = 1; k < fields.size(); ++k) fields[k] = synth::deformation(cfg.labels[k]);
    const Shape3 mean = synth::mean_template();
    double morph = 0.0;
    std::vector<double> apex(fields.size(), 0.0);
    for (std::size_t s = 0; s < static_cast<std::size_t>(cfg.n_subjects); ++s) {
        const auto subj = synth::make_subject(cfg, s, fields);
        Shape3 d(mean.size());
        for (std::size_t i = 0; i < mean.size(); ++i) d[i] = subj.neutral[i] + (-1.0) * mean[i];
        morph += synth::mean_norm(d) / cfg.n_subjects;
        Rng rng(derive_seed(cfg.seed, {s}));
        for (std::size_t c = 1; c < fields.size(); ++c) {
            const double a = synth::make_dynamics(cfg, rng).apex;
            apex[c] += a * subj.style[c] * synth::mean_norm(fields[c]) / cfg.n_subjects;
        }
    }
    for (std::size_t c = 1; c < fields.size(); ++c) EXPECT_GT(morph, apex[c]) << cfg.labels[c];
}

TEST(Generator, OcclusionLeavesFrontalLandmarksUntouched) {
    const auto t = synth::mean_template();
    for (const auto& p : t) {
        EXPECT_EQ(synth::tracking_reliability(p, {0.0, 0.0}, 0.6), 1.0);
        EXPECT_EQ(synth::tracking_reliability(p, {0.0, 0.0}, 1.0), 1.0);
    }
    // Turning the head loses motion on the far side of the face only.
    double lo = 1.0, hi = 0.0;
    for (const auto& p : t) {
        const double r = synth::tracking_reliability(p, {40.0, 0.0}, 1.0);
        lo = std::min(lo, r);
        hi = std::max(hi, r);
    }
    EXPECT_LT(lo, 0.9);
    EXPECT_EQ(hi, 1.0);

    // Off by default; when enabled it changes off-frontal views.
    auto plain = small(PoseMode::MultiView);
    EXPECT_EQ(plain.occlusion_damping, 0.0);
    EXPECT_EQ(plain.occlusion_noise, 0.0);
    auto cfg = plain;
    cfg.occlusion_damping = 0.6;
    cfg.occlusion_noise = 3.0;
    EXPECT_NE(fingerprint(generate_corpus(cfg).data), fingerprint(generate_corpus(plain).data));
}

TEST(Generator, FrontalInterOcularDistanceNearTarget) {
    auto cfg = small();
    cfg.noise = 0.0;
    const auto c = generate_corpus(cfg);
    for (const auto& seq : sequences(c.data)) {
        const double iod = inter_ocular_distance(c.data.frames[seq.begin], c.data.header.layout);
        EXPECT_GT(iod, 75.0);
        EXPECT_LT(iod, 125.0);
    }
}

TEST(Generator, InvalidConfigRejected) {
    auto cfg = small();
    cfg.amplitude_min = 0.9;
    cfg.amplitude_max = 0.5;
    EXPECT_THROW(generate_corpus(cfg), UsageError);
    cfg = small();
    cfg.labels = {"neutral", "joy"};
    EXPECT_THROW(generate_corpus(cfg), UsageError);
    cfg = small();
    cfg.n_subjects = 0;
    EXPECT_THROW(generate_corpus(cfg), UsageError);
}

TEST(Render, BlobsMarkLandmarksAndNoiseIsDeterministic) {
    auto cfg = small();
    cfg.noise = 0.0;
    const auto c = generate_corpus(cfg);
    const auto& f = c.data.frames[0];
    const auto img = render_frame(f);
    EXPECT_EQ(img.width, 250);
    const auto eye = f.landmarks[19];
    EXPECT_GT(img.at(static_cast<int>(std::lround(eye.x)), static_cast<int>(std::lround(eye.y))), 150);
    const auto lip = f.landmarks[40];
    EXPECT_LT(img.at(static_cast<int>(std::lround(lip.x)), static_cast<int>(std::lround(lip.y))), 40);
    EXPECT_EQ(render_frame(f).pixels, img.pixels);
    EXPECT_NE(render_frame(c.data.frames[1]).pixels, img.pixels);
}

TEST(Manifest, RoundTripWithImages) {
    auto cfg = small();
    cfg.n_subjects = 2;
    cfg.sequences_per_subject = 2;
    cfg.frames_per_sequence = 5;
    cfg.render_images = true;
    const auto c = generate_corpus(cfg);
    const auto dir = temp_dir("manifest");
    write_corpus(c.data, dir);
    const auto back = load_manifest(dir / "header.json");
    EXPECT_EQ(fingerprint(back), fingerprint(c.data));
    ASSERT_EQ(back.frames.size(), c.data.frames.size());
    for (std::size_t i = 0; i < back.frames.size(); ++i) {
        EXPECT_EQ(back.frames[i].landmarks, c.data.frames[i].landmarks);
        EXPECT_EQ(back.frames[i].label, c.data.frames[i].label);
    }
    const auto source = file_image_source(back.base_dir);
    EXPECT_EQ(source(back.frames[3]).pixels, render_frame(c.data.frames[3]).pixels);
    fs::remove_all(dir);
}

TEST(Manifest, ErrorsNameTheLine) {
    DatasetHeader h;
    h.layout = {3, 0, 1};
    h.labels = {"neutral", "happy"};
    auto parse = [&](const std::string& body) {
        std::istringstream in("subject_id,sequence_id,frame_index,label,yaw,pitch,image,x0,y0,x1,y1,x2,y2\n" + body);
        return parse_rows(in, h, "rows.csv");
    };
    EXPECT_EQ(parse("a,q,0,neutral,,,,0,0,10,0,5,5\na,q,1,,1,2,,0,0,10,0,5,5\n").size(), 2u);
    auto message = [&](const std::string& body) {
        try {
            parse(body);
        } catch (const DataError& e) {
            return std::string(e.what());
        }
        return std::string();
    };
    EXPECT_NE(message("a,q,0,neutral,,,,0,0,10,0,5,5\na,q,1,,,,,0,0,10,0\n").find("rows.csv:3: expected 3 landmarks"), std::string::npos);
    EXPECT_NE(message("a,q,0,angry,,,,0,0,10,0,5,5\n").find("unknown label"), std::string::npos);
    EXPECT_NE(message("a,q,1,,,,,0,0,10,0,5,5\na,q,1,,,,,0,0,10,0,5,5\n").find("strictly increasing"), std::string::npos);
    EXPECT_NE(message("a,q,0,,,,,0,0,10,0,5,5\na,r,0,,,,,0,0,10,0,5,5\na,q,1,,,,,0,0,10,0,5,5\n").find("not contiguous"),
              std::string::npos);
    EXPECT_NE(message("a,q,0,,1,,,0,0,10,0,5,5\n").find("yaw and pitch"), std::string::npos);
    EXPECT_NE(message("a,q,0,,,,,0,0,0,0,5,5\n").find("rows.csv:2"), std::string::npos);
}

TEST(Manifest, HeaderValidation) {
    nlohmann::json j = header_to_json(DatasetHeader{});
    EXPECT_NO_THROW(header_from_json(j));
    auto bad = j;
    bad["version"] = 2;
    EXPECT_THROW(header_from_json(bad), DataError);
    bad = j;
    bad["eye_indices"] = {3, 3};
    EXPECT_THROW(header_from_json(bad), DataError);
    bad = j;
    bad["labels"] = {"a", "a"};
    EXPECT_THROW(header_from_json(bad), DataError);
    bad = j;
    bad.erase("rows");
    EXPECT_THROW(header_from_json(bad), DataError);
}

TEST(FramePolicy, FirstLastSelection) {
    const auto c = generate_corpus(small());
    const auto sel = select_training_frames(c.data, FramePolicy::first_last(3));
    EXPECT_EQ(sel.size(), 24u * 6);
    std::size_t neutral = 0;
    for (const auto& f : sel) neutral += *f.label == 0;
    EXPECT_EQ(neutral, 24u * 3);
    EXPECT_EQ(sel[0].frame_index, 0);
    EXPECT_EQ(sel[3].frame_index, 27);

    Dataset tiny = c.data;
    tiny.frames.resize(3);  // one 3-frame sequence
    tiny.frames[2].label = 1;
    const auto short_sel = select_training_frames(tiny, FramePolicy::first_last(3));
    ASSERT_EQ(short_sel.size(), 3u);
    EXPECT_EQ(short_sel[0].label, Label{0});
    EXPECT_EQ(short_sel[1].label, Label{0});
    EXPECT_EQ(short_sel[2].label, Label{1});

    const auto labeled = select_training_frames(c.data, FramePolicy::all_labeled());
    for (const auto& f : labeled) EXPECT_TRUE(f.label);
    EXPECT_THROW(select_training_frames(c.data, FramePolicy::first_last(0)), UsageError);
}
