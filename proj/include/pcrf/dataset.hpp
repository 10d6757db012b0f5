#pragma once

// Dataset manifest: a JSON header plus a CSV of frame rows.
//
// CSV columns, in order:
//   subject_id,sequence_id,frame_index,label,yaw,pitch,image,x0,y0,...,x{L-1},y{L-1}
// label/yaw/pitch/image may be empty (absent). Rows of one sequence are
// contiguous and frame_index strictly increases within a sequence.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "pcrf/channels.hpp"
#include "pcrf/errors.hpp"
#include "pcrf/geometry.hpp"
#include "pcrf/random.hpp"

namespace pcrf {

inline constexpr int kManifestVersion = 1;

struct DatasetHeader {
    int version = kManifestVersion;
    LandmarkLayout layout;
    std::vector<std::string> labels{"neutral", "happiness", "surprise", "anger", "disgust", "fear", "sadness"};
    std::string neutral_label = "neutral";
    std::string rows = "frames.csv";  // CSV path relative to the header

    std::optional<Label> find_label(std::string_view name) const {
        for (std::size_t i = 0; i < labels.size(); ++i)
            if (labels[i] == name) return static_cast<Label>(i);
        return std::nullopt;
    }

    Label neutral() const {
        auto l = find_label(neutral_label);
        if (!l) throw DataError("neutral label '" + neutral_label + "' missing from vocabulary");
        return *l;
    }
};

struct Dataset {
    DatasetHeader header;
    std::vector<LandmarkFrame> frames;
    std::filesystem::path base_dir;  // directory image paths are relative to
};

struct SequenceView {
    std::size_t begin = 0;  // frame index range [begin, end)
    std::size_t end = 0;
    std::string subject_id;
    std::string sequence_id;
    std::optional<Label> label;  // label of the last labeled frame

    std::size_t size() const { return end - begin; }
};

inline std::vector<SequenceView> sequences(const Dataset& data) {
    std::vector<SequenceView> out;
    for (std::size_t i = 0; i < data.frames.size(); ++i) {
        const auto& f = data.frames[i];
        if (out.empty() || out.back().sequence_id != f.sequence_id || out.back().subject_id != f.subject_id) {
            out.push_back({i, i, f.subject_id, f.sequence_id, std::nullopt});
        }
        out.back().end = i + 1;
        if (f.label) out.back().label = f.label;
    }
    return out;
}

inline std::vector<std::string> subjects(const Dataset& data) {
    std::set<std::string> s;
    for (const auto& f : data.frames) s.insert(f.subject_id);
    return {s.begin(), s.end()};
}

// ---------------------------------------------------------------- writing

inline nlohmann::json header_to_json(const DatasetHeader& h) {
    return {{"version", h.version},
            {"landmark_count", h.layout.count},
            {"eye_indices", {h.layout.left_eye, h.layout.right_eye}},
            {"labels", h.labels},
            {"neutral_label", h.neutral_label},
            {"rows", h.rows}};
}

inline DatasetHeader header_from_json(const nlohmann::json& j) {
    DatasetHeader h;
    try {
        h.version = j.at("version").get<int>();
        h.layout.count = j.at("landmark_count").get<std::size_t>();
        const auto eyes = j.at("eye_indices").get<std::vector<std::size_t>>();
        if (eyes.size() != 2) throw DataError("eye_indices must hold two indices");
        h.layout.left_eye = eyes[0];
        h.layout.right_eye = eyes[1];
        h.labels = j.at("labels").get<std::vector<std::string>>();
        h.neutral_label = j.value("neutral_label", std::string("neutral"));
        h.rows = j.at("rows").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed manifest header: ") + e.what());
    }
    if (h.version != kManifestVersion) throw DataError("unsupported manifest version " + std::to_string(h.version));
    if (h.layout.count < 3) throw DataError("manifest needs at least 3 landmarks");
    if (h.layout.left_eye >= h.layout.count || h.layout.right_eye >= h.layout.count ||
        h.layout.left_eye == h.layout.right_eye)
        throw DataError("invalid eye landmark indices");
    if (h.labels.size() < 2) throw DataError("label vocabulary needs at least two labels");
    if (std::set<std::string>(h.labels.begin(), h.labels.end()).size() != h.labels.size())
        throw DataError("duplicate labels in vocabulary");
    return h;
}

inline std::string format_double(double v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline void write_rows(std::ostream& out, const Dataset& data) {
    out << "subject_id,sequence_id,frame_index,label,yaw,pitch,image";
    for (std::size_t i = 0; i < data.header.layout.count; ++i) out << ",x" << i << ",y" << i;
    out << '\n';
    for (const auto& f : data.frames) {
        out << f.subject_id << ',' << f.sequence_id << ',' << f.frame_index << ',';
        if (f.label) out << data.header.labels.at(static_cast<std::size_t>(*f.label));
        out << ',';
        if (f.pose) out << format_double(f.pose->yaw) << ',' << format_double(f.pose->pitch);
        else out << ',';
        out << ',' << f.image_path.value_or("");
        for (const auto& p : f.landmarks) out << ',' << format_double(p.x) << ',' << format_double(p.y);
        out << '\n';
    }
}

/// Writes `<header_path>` (JSON) and the CSV named by header.rows next to it.
inline void save_manifest(const Dataset& data, const std::filesystem::path& header_path) {
    const auto dir = header_path.parent_path();
    {
        std::ofstream out(header_path);
        if (!out) throw DataError("cannot write " + header_path.string());
        out << header_to_json(data.header).dump(2) << '\n';
        if (!out) throw DataError("failed writing " + header_path.string());
    }
    const auto rows_path = dir / data.header.rows;
    std::ofstream out(rows_path);
    if (!out) throw DataError("cannot write " + rows_path.string());
    write_rows(out, data);
    if (!out) throw DataError("failed writing " + rows_path.string());
}

// ---------------------------------------------------------------- reading

namespace detail {

inline std::vector<std::string_view> split_csv(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (;;) {
        const std::size_t comma = line.find(',', start);
        if (comma == std::string_view::npos) {
            out.push_back(line.substr(start));
            return out;
        }
        out.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
}

inline std::optional<double> parse_double(std::string_view s) {
    double v = 0.0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) return std::nullopt;
    return v;
}

inline std::optional<long> parse_int(std::string_view s) {
    long v = 0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) return std::nullopt;
    return v;
}

}  // namespace detail

/// Parses CSV rows against a header; errors name the offending line.
inline std::vector<LandmarkFrame> parse_rows(std::istream& in, const DatasetHeader& header, const std::string& source) {
    const std::size_t L = header.layout.count;
    const std::size_t expected = 7 + 2 * L;
    std::vector<LandmarkFrame> frames;
    std::string line;
    std::size_t line_no = 0;
    auto fail = [&](const std::string& what) -> DataError {
        return DataError(source + ":" + std::to_string(line_no) + ": " + what);
    };
    if (!std::getline(in, line)) throw DataError(source + ": missing CSV header row");
    ++line_no;
    if (detail::split_csv(line).size() != expected)
        throw fail("CSV header has the wrong column count for " + std::to_string(L) + " landmarks");

    std::set<std::pair<std::string, std::string>> finished;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto cols = detail::split_csv(line);
        if (cols.size() != expected) {
            const long points = (static_cast<long>(cols.size()) - 7) / 2;
            throw fail("expected " + std::to_string(L) + " landmarks (" + std::to_string(expected) + " columns), got " +
                       std::to_string(cols.size()) + " columns (" + std::to_string(points) + " points)");
        }
        LandmarkFrame f;
        f.subject_id = std::string(cols[0]);
        f.sequence_id = std::string(cols[1]);
        if (f.subject_id.empty() || f.sequence_id.empty()) throw fail("empty subject or sequence id");
        const auto idx = detail::parse_int(cols[2]);
        if (!idx || *idx < 0) throw fail("invalid frame_index '" + std::string(cols[2]) + "'");
        f.frame_index = static_cast<int>(*idx);
        if (!cols[3].empty()) {
            f.label = header.find_label(cols[3]);
            if (!f.label) throw fail("unknown label '" + std::string(cols[3]) + "'");
        }
        if (cols[4].empty() != cols[5].empty()) throw fail("yaw and pitch must be both present or both absent");
        if (!cols[4].empty()) {
            const auto yaw = detail::parse_double(cols[4]);
            const auto pitch = detail::parse_double(cols[5]);
            if (!yaw || !pitch) throw fail("invalid pose");
            f.pose = Pose{*yaw, *pitch};
        }
        if (!cols[6].empty()) f.image_path = std::string(cols[6]);
        f.landmarks.resize(L);
        for (std::size_t i = 0; i < L; ++i) {
            const auto x = detail::parse_double(cols[7 + 2 * i]);
            const auto y = detail::parse_double(cols[8 + 2 * i]);
            if (!x || !y) throw fail("invalid coordinate for landmark " + std::to_string(i));
            f.landmarks[i] = {*x, *y};
        }
        try {
            validate_frame(f, header.layout);
        } catch (const DataError& e) {
            throw fail(e.what());
        }
        if (!frames.empty()) {
            const auto& prev = frames.back();
            const bool same = prev.subject_id == f.subject_id && prev.sequence_id == f.sequence_id;
            if (same && f.frame_index <= prev.frame_index) throw fail("frame_index not strictly increasing");
            if (!same) {
                finished.insert({prev.subject_id, prev.sequence_id});
                if (finished.count({f.subject_id, f.sequence_id})) throw fail("rows of sequence " + f.sequence_id + " are not contiguous");
            }
        }
        frames.push_back(std::move(f));
    }
    return frames;
}

inline Dataset load_manifest(const std::filesystem::path& header_path) {
    std::ifstream hin(header_path);
    if (!hin) throw DataError("cannot open manifest " + header_path.string());
    nlohmann::json j;
    try {
        hin >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(header_path.string() + ": " + e.what());
    }
    Dataset data;
    data.header = header_from_json(j);
    data.base_dir = header_path.parent_path();
    const auto rows_path = data.base_dir / data.header.rows;
    std::ifstream rin(rows_path);
    if (!rin) throw DataError("cannot open " + rows_path.string());
    data.frames = parse_rows(rin, data.header, rows_path.filename().string());
    return data;
}

/// FNV-1a over the canonical row serialization.
inline std::uint64_t fingerprint(const Dataset& data) {
    std::ostringstream out;
    out << header_to_json(data.header).dump();
    write_rows(out, data);
    return hash_string(out.str());
}

// ---------------------------------------------------------------- training subsets

struct FramePolicy {
    enum class Kind { FirstLast, AllLabeled } kind = Kind::FirstLast;
    int k = 3;

    static FramePolicy first_last(int k) { return {Kind::FirstLast, k}; }
    static FramePolicy all_labeled() { return {Kind::AllLabeled, 0}; }
};

/// Training frames with their training labels. first_last(k) takes up to k
/// leading frames as neutral and up to k trailing frames as the sequence label;
/// short sequences are split without reusing a frame.
inline std::vector<LandmarkFrame> select_training_frames(const Dataset& data, const FramePolicy& policy) {
    std::vector<LandmarkFrame> out;
    if (policy.kind == FramePolicy::Kind::AllLabeled) {
        for (const auto& f : data.frames)
            if (f.label) out.push_back(f);
        return out;
    }
    if (policy.k < 1) throw UsageError("first_last policy needs k >= 1");
    const Label neutral = data.header.neutral();
    const std::size_t k = static_cast<std::size_t>(policy.k);
    for (const auto& seq : sequences(data)) {
        if (!seq.label) continue;
        const std::size_t n = seq.size();
        const std::size_t n_last = std::min(k, n / 2);
        const std::size_t n_first = std::min(k, n - n_last);
        for (std::size_t i = 0; i < n_first; ++i) {
            out.push_back(data.frames[seq.begin + i]);
            out.back().label = neutral;
        }
        for (std::size_t i = n - n_last; i < n; ++i) {
            out.push_back(data.frames[seq.begin + i]);
            out.back().label = seq.label;
        }
    }
    return out;
}

}  // namespace pcrf
