#pragma once

// Synthetic labeled landmark sequences: a 3D 49-point face template, per-subject
// morphology (affine + per-point offsets + a resting expression bias), per-class
// deformation fields, onset-to-apex dynamics, posed perspective projection and
// Gaussian-blob image rendering.

#include <array>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pcrf/channels.hpp"
#include "pcrf/dataset.hpp"
#include "pcrf/parallel.hpp"
#include "pcrf/pose.hpp"
#include "pcrf/random.hpp"

namespace pcrf {

struct Point3 {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;
};

inline Point3 operator+(Point3 a, Point3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
inline Point3 operator*(double k, Point3 a) { return {k * a.x, k * a.y, k * a.z}; }

using Shape3 = std::vector<Point3>;

enum class PoseMode { Frontal, MultiView };

struct GeneratorConfig {
    int n_subjects = 40;
    int sequences_per_subject = 6;
    int frames_per_sequence = 60;
    std::vector<std::string> labels{"neutral", "happiness", "surprise", "anger", "disgust", "fear", "sadness"};
    double morphology = 1.0;      // strength of subject shape variation (affine + per-point offsets)
    double resting_bias = 0.0;    // std of the per-subject resting mix of expression fields
    double amplitude_min = 0.5;   // apex amplitude range
    double amplitude_max = 1.0;
    double noise = 0.01;          // landmark noise, iod units
    PoseMode pose_mode = PoseMode::Frontal;
    double pose_noise = 2.0;      // std of the pose estimate around the rendered pose, degrees
    double occlusion_damping = 0.0;  // tracker motion loss on landmarks turned away from the camera
    double occlusion_noise = 0.0;    // extra landmark noise, in multiples of `noise`, on fully occluded points
    bool render_images = false;
    bool offset_tail = false;     // expression decays after the apex hold
    std::uint64_t seed = 1;
    std::optional<std::uint64_t> morphology_seed;  // defaults to seed

    void validate() const {
        if (n_subjects < 1 || sequences_per_subject < 1 || frames_per_sequence < 1)
            throw UsageError("generator counts must be >= 1");
        if (labels.size() < 2) throw UsageError("generator needs neutral plus at least one expression label");
        if (!(amplitude_min >= 0.0 && amplitude_min <= amplitude_max && amplitude_max <= 1.0))
            throw UsageError("amplitude range must satisfy 0 <= min <= max <= 1");
        if (morphology < 0.0 || resting_bias < 0.0 || noise < 0.0 || pose_noise < 0.0 || occlusion_damping < 0.0 || occlusion_noise < 0.0) throw UsageError("generator strengths must be >= 0");
    }
};

/// Camera and rendering constants shared by projection and image synthesis.
struct RenderConfig {
    double iod_px = 100.0;       // inter-ocular distance of the frontal template in pixels
    double camera_distance = 6.0;  // iod units
    double center_x = 125.0;
    double center_y = 125.0;
    int width = kCanonicalSize;
    int height = kCanonicalSize;
    double blob_sigma = 3.0;     // pixels
    double blob_gain = 90.0;
    int background = 90;
    int pixel_noise = 6;         // uniform +-noise gray levels
};

namespace synth {

inline constexpr std::size_t kLandmarks = 49;

/// Mean face in iod units (x right, y down, z away from the camera). Outer eye
/// corners are 19 and 28 at x = -0.5 and +0.5.
inline Shape3 mean_template() {
    Shape3 s(kLandmarks);
    // Brows 0-4 (left), 5-9 (right).
    for (int i = 0; i < 5; ++i) {
        const double t = i / 4.0;
        const double x = -0.78 + 0.6 * t;
        s[i] = {x, -0.36 - 0.07 * std::sin(3.14159265 * t), 0.02};
        s[9 - i] = {-x, s[i].y, 0.02};
    }
    // Nose bridge 10-13, nostrils 14-18.
    for (int i = 0; i < 4; ++i) s[10 + i] = {0.0, -0.12 + 0.16 * i, -0.08 - 0.09 * i};
    for (int i = 0; i < 5; ++i) s[14 + i] = {-0.2 + 0.1 * i, 0.45 - 0.03 * (2 - std::abs(i - 2)), -0.2 - 0.04 * (2 - std::abs(i - 2))};
    // Left eye 19 (outer) .. 24, right eye 25 (inner) .. 30 with 28 the outer corner.
    const std::array<Point3, 6> left{{{-0.50, 0.00, 0.0}, {-0.41, -0.06, -0.02}, {-0.25, -0.06, -0.02},
                                      {-0.16, 0.00, 0.0}, {-0.25, 0.05, -0.02}, {-0.41, 0.05, -0.02}}};
    for (int i = 0; i < 6; ++i) s[19 + i] = left[i];
    const std::array<Point3, 6> right{{{0.16, 0.00, 0.0}, {0.25, -0.06, -0.02}, {0.41, -0.06, -0.02},
                                       {0.50, 0.00, 0.0}, {0.41, 0.05, -0.02}, {0.25, 0.05, -0.02}}};
    for (int i = 0; i < 6; ++i) s[25 + i] = right[i];
    // Outer lip 31-42 (31 left corner, 37 right corner), inner lip 43-48.
    for (int i = 0; i < 12; ++i) {
        const double a = 3.14159265 * (1.0 + i / 6.0);
        s[31 + i] = {0.36 * std::cos(a), 0.82 + 0.13 * std::sin(a), -0.12 + 0.05 * std::abs(std::sin(a))};
    }
    for (int i = 0; i < 6; ++i) {
        const double a = 3.14159265 * (1.0 + i / 3.0);
        s[43 + i] = {0.22 * std::cos(a), 0.82 + 0.04 * std::sin(a), -0.15};
    }
    return s;
}

inline bool is_upper_outer_lip(std::size_t i) { return i >= 32 && i <= 36; }
inline bool is_lower_outer_lip(std::size_t i) { return i >= 38 && i <= 42; }
inline bool is_upper_inner_lip(std::size_t i) { return i >= 44 && i <= 45; }
inline bool is_lower_inner_lip(std::size_t i) { return i >= 47 && i <= 48; }
inline bool is_lip_corner(std::size_t i) { return i == 31 || i == 37 || i == 43 || i == 46; }
inline bool is_inner_brow(std::size_t i) { return i == 3 || i == 4 || i == 5 || i == 6; }
inline bool is_brow(std::size_t i) { return i <= 9; }
inline bool is_upper_lid(std::size_t i) { return i == 20 || i == 21 || i == 26 || i == 27; }
inline bool is_lower_lid(std::size_t i) { return i == 23 || i == 24 || i == 29 || i == 30; }
inline double side(const Shape3& t, std::size_t i) { return t[i].x < 0 ? -1.0 : 1.0; }

/// Apex displacement field of an expression class at amplitude 1.
inline Shape3 deformation(const std::string& label) {
    const Shape3 t = mean_template();
    Shape3 d(kLandmarks);
    auto mouth = [&](std::size_t i) { return i >= 31; };
    if (label == "happiness") {
        for (std::size_t i = 0; i < kLandmarks; ++i) {
            if (is_lip_corner(i)) d[i] = {0.10 * side(t, i), -0.10, 0.0};
            else if (mouth(i)) d[i] = {0.05 * t[i].x / 0.36, -0.04 + (is_lower_outer_lip(i) ? 0.03 : 0.0), 0.0};
            if (is_lower_lid(i)) d[i] = {0.0, -0.03, 0.0};
        }
    } else if (label == "surprise") {
        for (std::size_t i = 0; i < kLandmarks; ++i) {
            if (is_brow(i)) d[i] = {0.0, -0.13, 0.0};
            if (is_upper_lid(i)) d[i] = {0.0, -0.04, 0.0};
            if (is_lower_outer_lip(i) || is_lower_inner_lip(i)) d[i] = {0.0, 0.22, 0.0};
            if (is_lip_corner(i)) d[i] = {-0.06 * side(t, i), 0.10, 0.0};
            if (is_upper_outer_lip(i) || is_upper_inner_lip(i)) d[i] = {0.0, -0.02, 0.0};
        }
    } else if (label == "disgust") {
        for (std::size_t i = 0; i < kLandmarks; ++i) {
            if (is_inner_brow(i)) d[i] = {-0.02 * side(t, i), 0.05, 0.0};
            if (i >= 14 && i <= 18) d[i] = {0.0, -0.04, 0.0};
            if (is_upper_outer_lip(i) || is_upper_inner_lip(i)) d[i] = {0.0, -0.09, 0.0};
            if (is_lip_corner(i)) d[i] = {-0.02 * side(t, i), 0.02, 0.0};
            if (is_lower_lid(i)) d[i] = {0.0, -0.02, 0.0};
        }
    } else if (label == "anger") {
        for (std::size_t i = 0; i < kLandmarks; ++i) {
            if (is_inner_brow(i)) d[i] = {-0.035 * side(t, i), 0.045, 0.0};
            if (is_upper_outer_lip(i) || is_upper_inner_lip(i)) d[i] = {0.0, 0.02, 0.0};
            if (is_lower_outer_lip(i) || is_lower_inner_lip(i)) d[i] = {0.0, -0.025, 0.0};
            if (is_upper_lid(i)) d[i] = {0.0, 0.015, 0.0};
        }
    } else if (label == "fear") {
        for (std::size_t i = 0; i < kLandmarks; ++i) {
            if (is_inner_brow(i)) d[i] = {-0.015 * side(t, i), -0.05, 0.0};
            if (is_upper_lid(i)) d[i] = {0.0, -0.025, 0.0};
            if (is_lip_corner(i)) d[i] = {0.05 * side(t, i), 0.015, 0.0};
            if (is_lower_outer_lip(i)) d[i] = {0.0, 0.03, 0.0};
        }
    } else if (label == "sadness") {
        for (std::size_t i = 0; i < kLandmarks; ++i) {
            if (is_inner_brow(i)) d[i] = {0.0, -0.045, 0.0};
            if (is_lip_corner(i)) d[i] = {-0.01 * side(t, i), 0.05, 0.0};
            if (is_lower_outer_lip(i) && (i == 38 || i == 42)) d[i] = {0.0, 0.02, 0.0};
            if (is_upper_lid(i)) d[i] = {0.0, 0.015, 0.0};
        }
    } else {
        throw UsageError("generator has no deformation field for label '" + label + "'");
    }
    return d;
}

/// Mean over landmarks of the displacement norm.
inline double mean_norm(const Shape3& d) {
    double s = 0.0;
    for (const auto& p : d) s += std::sqrt(p.x * p.x + p.y * p.y + p.z * p.z);
    return s / static_cast<double>(d.size());
}

struct Subject {
    Shape3 neutral;                  // morphed template including the resting bias
    std::vector<double> style;       // per expression label (index into cfg.labels)
};

/// Morphology depends only on (morphology seed, subject index).
inline Subject make_subject(const GeneratorConfig& cfg, std::size_t subject, const std::vector<Shape3>& fields) {
    Rng rng(derive_seed(cfg.morphology_seed.value_or(cfg.seed), {hash_string("morphology"), subject}));
    std::normal_distribution<double> g(0.0, 1.0);
    const double m = cfg.morphology;
    const double sx = 0.07 * m * g(rng), sy = 0.07 * m * g(rng), shear = 0.04 * m * g(rng);
    const double mouth_drop = 0.05 * m * g(rng), brow_lift = 0.05 * m * g(rng);
    Shape3 s = mean_template();
    for (auto& p : s) {
        const double x = p.x, y = p.y;
        p.x = (1 + sx) * x + shear * y;
        p.y = (1 + sy) * y;
    }
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i >= 31) s[i].y += mouth_drop;
        if (is_brow(i)) s[i].y -= brow_lift;
        s[i] = s[i] + Point3{0.025 * m * g(rng), 0.025 * m * g(rng), 0.02 * m * g(rng)};
    }
    // Resting expression bias: the neutral face carries a random mix of the class fields.
    for (std::size_t c = 1; c < fields.size(); ++c) {
        const double b = cfg.resting_bias * g(rng);
        for (std::size_t i = 0; i < s.size(); ++i) s[i] = s[i] + b * fields[c][i];
    }
    Subject out;
    out.neutral = std::move(s);
    out.style.resize(fields.size(), 1.0);
    std::uniform_real_distribution<double> u(0.8, 1.2);
    for (std::size_t c = 1; c < fields.size(); ++c) out.style[c] = u(rng);
    return out;
}

inline double smoothstep(double x) {
    x = std::clamp(x, 0.0, 1.0);
    return x * x * (3 - 2 * x);
}

/// Amplitude profile: neutral until onset, smooth rise to the apex amplitude,
/// then a hold (or, with an offset tail, a decay over the last quarter).
struct Dynamics {
    int onset = 0;
    int rise = 1;
    double apex = 1.0;
    int decay_start = -1;

    double amplitude(int t) const {
        double a = apex * smoothstep(static_cast<double>(t - onset) / rise);
        if (decay_start >= 0 && t > decay_start) a *= std::max(0.0, 1.0 - 0.6 * (t - decay_start) / 10.0);
        return a;
    }
};

inline Dynamics make_dynamics(const GeneratorConfig& cfg, Rng& rng) {
    const int F = cfg.frames_per_sequence;
    Dynamics d;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    d.onset = static_cast<int>(std::floor(F * (0.08 + 0.25 * u(rng))));
    d.rise = std::max(1, static_cast<int>(std::floor(F * (0.25 + 0.25 * u(rng)))));
    if (d.onset + d.rise > F - 1) d.rise = std::max(1, F - 1 - d.onset);
    d.apex = cfg.amplitude_min + (cfg.amplitude_max - cfg.amplitude_min) * u(rng);
    if (cfg.offset_tail) d.decay_start = std::max(d.onset + d.rise, F - std::max(1, F / 4));
    return d;
}

/// Rotates by yaw (about y) then pitch (about x), perspective-projects and maps to pixels.
inline std::vector<Point2> project(const Shape3& shape, const Pose& pose, const RenderConfig& rc) {
    constexpr double kDeg = 3.14159265358979323846 / 180.0;
    const double cy = std::cos(pose.yaw * kDeg), sy = std::sin(pose.yaw * kDeg);
    const double cp = std::cos(pose.pitch * kDeg), sp = std::sin(pose.pitch * kDeg);
    std::vector<Point2> out(shape.size());
    const double D = rc.camera_distance;
    for (std::size_t i = 0; i < shape.size(); ++i) {
        const Point3& p = shape[i];
        const double x1 = cy * p.x + sy * p.z;
        const double z1 = -sy * p.x + cy * p.z;
        const double y2 = cp * p.y - sp * z1;
        const double z2 = sp * p.y + cp * z1;
        const double k = D / (D + z2);
        out[i] = {rc.center_x + rc.iod_px * k * x1, rc.center_y + rc.iod_px * k * y2};
    }
    return out;
}

/// Cosine between a landmark's surface normal and the view direction at `pose`,
/// relative to the frontal view. Normals come from an ellipsoidal face
/// (horizontal radius 0.7, vertical radius 1.2 iod, centred at y = 0.3).
inline double facing(const Point3& p, const Pose& pose) {
    constexpr double kDeg = 3.14159265358979323846 / 180.0;
    const double th = std::asin(std::clamp(p.x / 0.7, -0.99, 0.99));
    const double ph = std::asin(std::clamp((p.y - 0.3) / 1.2, -0.99, 0.99));
    const double c = std::cos(th - pose.yaw * kDeg) * std::cos(ph + pose.pitch * kDeg);
    return std::max(0.0, c) / (std::cos(th) * std::cos(ph));
}

/// Fraction of a landmark's motion the tracker recovers: 1 when it faces the
/// camera at least as squarely as in the frontal view.
inline double tracking_reliability(const Point3& p, const Pose& pose, double damping) {
    return std::clamp(1.0 - damping * (1.0 - facing(p, pose)), 0.0, 1.0);
}

}  // namespace synth

/// Gaussian blobs at the landmarks over a flat background, with deterministic
/// per-frame pixel noise.
inline GrayImage render_frame(const LandmarkFrame& frame, const RenderConfig& rc = {}) {
    std::vector<double> img(static_cast<std::size_t>(rc.width) * rc.height, static_cast<double>(rc.background));
    const double s = rc.blob_sigma;
    const int radius = static_cast<int>(std::ceil(3 * s));
    for (std::size_t i = 0; i < frame.landmarks.size(); ++i) {
        const Point2 c = frame.landmarks[i];
        const double gain = rc.blob_gain * (i >= 31 ? -0.8 : 1.0);  // dark lips, bright elsewhere
        const int cx = static_cast<int>(std::lround(c.x)), cy = static_cast<int>(std::lround(c.y));
        for (int y = std::max(0, cy - radius); y <= std::min(rc.height - 1, cy + radius); ++y)
            for (int x = std::max(0, cx - radius); x <= std::min(rc.width - 1, cx + radius); ++x) {
                const double dx = x - c.x, dy = y - c.y;
                img[static_cast<std::size_t>(y) * rc.width + x] += gain * std::exp(-(dx * dx + dy * dy) / (2 * s * s));
            }
    }
    Rng rng(derive_seed(hash_string(frame.subject_id), {hash_string(frame.sequence_id), static_cast<std::uint64_t>(frame.frame_index)}));
    std::uniform_int_distribution<int> noise(-rc.pixel_noise, rc.pixel_noise);
    GrayImage out(rc.width, rc.height);
    for (std::size_t i = 0; i < img.size(); ++i)
        out.pixels[i] = static_cast<std::uint8_t>(std::clamp<long>(std::lround(img[i]) + noise(rng), 0, 255));
    return out;
}

using ImageSource = std::function<GrayImage(const LandmarkFrame&)>;

inline ImageSource synthetic_image_source(RenderConfig rc = {}) {
    return [rc](const LandmarkFrame& f) { return render_frame(f, rc); };
}

/// Reads frame.image_path relative to `base_dir`.
inline ImageSource file_image_source(std::filesystem::path base_dir) {
    return [base_dir](const LandmarkFrame& f) {
        if (!f.image_path) throw DataError("frame " + f.sequence_id + "#" + std::to_string(f.frame_index) + " has no image");
        return read_pgm((base_dir / *f.image_path).string());
    };
}

/// Builds integral channels for frames that lack them.
inline void attach_channels(std::span<LandmarkFrame> frames, const ImageSource& source, const ChannelOptions& opts = {},
                            unsigned threads = thread_count()) {
    parallel_for(frames.size(), [&](std::size_t i) {
        if (!frames[i].channels) frames[i].channels = std::make_shared<const IntegralChannels>(build_channels(source(frames[i]), opts));
    }, threads);
}

inline void release_channels(std::span<LandmarkFrame> frames) {
    for (auto& f : frames) f.channels.reset();
}

struct GeneratedCorpus {
    Dataset data;
    std::vector<std::size_t> view_bins;  // per sequence: generating pose bin
};

/// Sequence labels cycle through the expression classes from a per-subject offset.
inline GeneratedCorpus generate_corpus(const GeneratorConfig& cfg, const RenderConfig& rc = {}) {
    cfg.validate();
    std::vector<Shape3> fields(cfg.labels.size());
    for (std::size_t c = 1; c < cfg.labels.size(); ++c) fields[c] = synth::deformation(cfg.labels[c]);
    const PoseBinTable table = cfg.pose_mode == PoseMode::MultiView ? PoseBinTable::multiview() : PoseBinTable::frontal();
    const std::size_t n_views = table.size();
    const std::size_t n_expr = cfg.labels.size() - 1;
    const std::size_t S = static_cast<std::size_t>(cfg.n_subjects);
    const std::size_t Q = static_cast<std::size_t>(cfg.sequences_per_subject);
    const int F = cfg.frames_per_sequence;

    std::vector<std::vector<LandmarkFrame>> per_subject(S);
    std::vector<std::vector<std::size_t>> per_subject_bins(S);
    parallel_for(S, [&](std::size_t s) {
        const synth::Subject subj = synth::make_subject(cfg, s, fields);
        char sid[32];
        std::snprintf(sid, sizeof sid, "s%03zu", s);
        Rng label_rng(derive_seed(cfg.seed, {hash_string("labels"), s}));
        const std::size_t offset = uniform_index(label_rng, n_expr);
        for (std::size_t q = 0; q < Q; ++q) {
            const std::size_t c = 1 + (offset + q) % n_expr;
            Rng dyn_rng(derive_seed(cfg.seed, {hash_string("dynamics"), s, q}));
            const synth::Dynamics dyn = synth::make_dynamics(cfg, dyn_rng);
            for (std::size_t v = 0; v < n_views; ++v) {
                Rng view_rng(derive_seed(cfg.seed, {hash_string("view"), s, q, v}));
                const Pose pose = assign_sequence_pose(table, v, view_rng);
                // The tracker locks onto the neutral face and loses part of the motion of occluded points.
                const std::vector<Point2> anchor = synth::project(subj.neutral, pose, rc);
                std::vector<double> reliability(anchor.size()), noise_scale(anchor.size());
                for (std::size_t i = 0; i < anchor.size(); ++i) {
                    reliability[i] = synth::tracking_reliability(subj.neutral[i], pose, cfg.occlusion_damping);
                    noise_scale[i] = 1.0 + cfg.occlusion_noise * (1.0 - synth::tracking_reliability(subj.neutral[i], pose, 1.0));
                }
                std::normal_distribution<double> lm_noise(0.0, cfg.noise * rc.iod_px);
                std::normal_distribution<double> pose_noise(0.0, cfg.pose_noise);
                char qid[64];
                if (n_views > 1) std::snprintf(qid, sizeof qid, "%s_q%zu_b%02zu", sid, q, v);
                else std::snprintf(qid, sizeof qid, "%s_q%zu", sid, q);
                for (int t = 0; t < F; ++t) {
                    const double a = dyn.amplitude(t);
                    Shape3 shape = subj.neutral;
                    for (std::size_t i = 0; i < shape.size(); ++i) shape[i] = shape[i] + (a * subj.style[c]) * fields[c][i];
                    LandmarkFrame f;
                    f.subject_id = sid;
                    f.sequence_id = qid;
                    f.frame_index = t;
                    f.landmarks = synth::project(shape, pose, rc);
                    for (std::size_t i = 0; i < f.landmarks.size(); ++i) {
                        auto& p = f.landmarks[i];
                        p = anchor[i] + reliability[i] * (p - anchor[i]);
                        p.x += noise_scale[i] * lm_noise(view_rng);
                        p.y += noise_scale[i] * lm_noise(view_rng);
                    }
                    if (t < dyn.onset) f.label = 0;
                    else if (a >= 0.9 * dyn.apex) f.label = static_cast<Label>(c);
                    f.pose = Pose{pose.yaw + pose_noise(view_rng), pose.pitch + pose_noise(view_rng)};
                    if (cfg.render_images) {
                        char img[96];
                        std::snprintf(img, sizeof img, "images/%s_%03d.pgm", qid, t);
                        f.image_path = img;
                    }
                    per_subject[s].push_back(std::move(f));
                }
                per_subject_bins[s].push_back(v);
            }
        }
    });

    GeneratedCorpus out;
    out.data.header.labels = cfg.labels;
    out.data.header.neutral_label = cfg.labels[0];
    for (std::size_t s = 0; s < S; ++s) {
        for (auto& f : per_subject[s]) out.data.frames.push_back(std::move(f));
        for (std::size_t b : per_subject_bins[s]) out.view_bins.push_back(b);
    }
    return out;
}

/// Writes the manifest and, when frames carry image paths, their rendered PGMs.
inline void write_corpus(const Dataset& data, const std::filesystem::path& dir, const RenderConfig& rc = {}) {
    std::filesystem::create_directories(dir);
    bool images = false;
    for (const auto& f : data.frames) images |= f.image_path.has_value();
    if (images) std::filesystem::create_directories(dir / "images");
    Dataset copy = data;
    copy.base_dir = dir;
    save_manifest(copy, dir / "header.json");
    for (const auto& f : data.frames)
        if (f.image_path) write_pgm((dir / *f.image_path).string(), render_frame(f, rc));
}

}  // namespace pcrf
