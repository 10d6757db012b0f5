#pragma once

// Integral feature channels (gradient magnitude + 8 unsigned orientation bins)
// and the appearance templates evaluated on them.

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "pcrf/errors.hpp"
#include "pcrf/geometry.hpp"

namespace pcrf {

inline constexpr int kChannelCount = 9;
inline constexpr int kOrientationBins = 8;
inline constexpr int kCanonicalSize = 250;
/// Per-pixel magnitudes are stored in fixed point with this many steps per unit,
/// which keeps every summed-area table exact in 32-bit unsigned arithmetic.
inline constexpr double kMagnitudeScale = 64.0;
inline constexpr double kHogEpsilon = 1e-6;

struct GrayImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;  // row-major

    GrayImage() = default;
    GrayImage(int w, int h, std::uint8_t fill = 0)
        : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, fill) {}

    std::uint8_t& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
    std::uint8_t at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
    bool empty() const { return width <= 0 || height <= 0; }
};

/// Half-open pixel rectangle [x0, x1) x [y0, y1).
struct Rect {
    int x0 = 0;
    int y0 = 0;
    int x1 = 0;
    int y1 = 0;
};

/// Per-pixel quantized gradient magnitude and orientation bin (0..7).
struct FeatureMaps {
    int width = 0;
    int height = 0;
    std::vector<std::uint32_t> magnitude;
    std::vector<std::uint8_t> bin;
    double scale_x = 1.0;  // channel pixels per source-image pixel
    double scale_y = 1.0;

    /// Per-pixel value of channel `ch` (0 = magnitude, 1..8 = orientation bins).
    std::uint32_t value(int ch, int x, int y) const {
        const std::size_t i = static_cast<std::size_t>(y) * width + x;
        if (ch == 0) return magnitude[i];
        return bin[i] + 1 == ch ? magnitude[i] : 0u;
    }
};

struct ChannelOptions {
    /// When false the image is used at its native size (test hook for small oracles).
    bool rescale = true;
};

/// Bilinear resample with pixel-center alignment; returns intensities as doubles.
inline std::vector<double> rescale_bilinear(const GrayImage& image, int out_w, int out_h) {
    std::vector<double> out(static_cast<std::size_t>(out_w) * out_h);
    const double fx = static_cast<double>(image.width) / out_w;
    const double fy = static_cast<double>(image.height) / out_h;
    for (int y = 0; y < out_h; ++y) {
        double sy = std::clamp((y + 0.5) * fy - 0.5, 0.0, image.height - 1.0);
        int y0 = static_cast<int>(sy);
        int y1 = std::min(y0 + 1, image.height - 1);
        double wy = sy - y0;
        for (int x = 0; x < out_w; ++x) {
            double sx = std::clamp((x + 0.5) * fx - 0.5, 0.0, image.width - 1.0);
            int x0 = static_cast<int>(sx);
            int x1 = std::min(x0 + 1, image.width - 1);
            double wx = sx - x0;
            double top = (1 - wx) * image.at(x0, y0) + wx * image.at(x1, y0);
            double bottom = (1 - wx) * image.at(x0, y1) + wx * image.at(x1, y1);
            out[static_cast<std::size_t>(y) * out_w + x] = (1 - wy) * top + wy * bottom;
        }
    }
    return out;
}

inline FeatureMaps compute_feature_maps(const GrayImage& image, const ChannelOptions& options = {}) {
    if (image.empty() || image.pixels.size() != static_cast<std::size_t>(image.width) * image.height)
        throw DataError("cannot build channels from an empty image");

    FeatureMaps maps;
    std::vector<double> intensity;
    if (options.rescale) {
        maps.width = maps.height = kCanonicalSize;
        maps.scale_x = static_cast<double>(kCanonicalSize) / image.width;
        maps.scale_y = static_cast<double>(kCanonicalSize) / image.height;
        if (image.width == kCanonicalSize && image.height == kCanonicalSize) {
            intensity.assign(image.pixels.begin(), image.pixels.end());
        } else {
            intensity = rescale_bilinear(image, kCanonicalSize, kCanonicalSize);
        }
    } else {
        maps.width = image.width;
        maps.height = image.height;
        intensity.assign(image.pixels.begin(), image.pixels.end());
    }

    const int w = maps.width;
    const int h = maps.height;
    // Largest quantized magnitude is 255*sqrt(2)*scale; the full-image sum must fit in 32 bits.
    const double max_pixel = std::ceil(255.0 * std::numbers::sqrt2 * kMagnitudeScale);
    if (static_cast<double>(w) * h * max_pixel > std::numeric_limits<std::uint32_t>::max())
        throw DataError("image too large for 32-bit integral channels");

    maps.magnitude.assign(static_cast<std::size_t>(w) * h, 0);
    maps.bin.assign(static_cast<std::size_t>(w) * h, 0);
    auto px = [&](int x, int y) {
        x = std::clamp(x, 0, w - 1);
        y = std::clamp(y, 0, h - 1);
        return intensity[static_cast<std::size_t>(y) * w + x];
    };
    constexpr double bin_width = 180.0 / kOrientationBins;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const double gx = px(x + 1, y) - px(x - 1, y);
            const double gy = px(x, y + 1) - px(x, y - 1);
            const std::size_t i = static_cast<std::size_t>(y) * w + x;
            maps.magnitude[i] = static_cast<std::uint32_t>(std::lround(std::sqrt(gx * gx + gy * gy) * kMagnitudeScale));
            double angle = std::atan2(gy, gx) * 180.0 / std::numbers::pi;
            if (angle < 0.0) angle += 180.0;
            if (angle >= 180.0) angle -= 180.0;
            maps.bin[i] = static_cast<std::uint8_t>(std::min(kOrientationBins - 1, static_cast<int>(angle / bin_width)));
        }
    }
    return maps;
}

/// Nine summed-area tables of size (H+1) x (W+1).
class IntegralChannels {
public:
    IntegralChannels() = default;

    explicit IntegralChannels(const FeatureMaps& maps)
        : width_(maps.width), height_(maps.height), scale_x_(maps.scale_x), scale_y_(maps.scale_y) {
        const std::size_t stride = static_cast<std::size_t>(width_) + 1;
        for (auto& plane : planes_) plane.assign(stride * (height_ + 1), 0);
        std::array<std::uint32_t, kChannelCount> row{};
        for (int y = 0; y < height_; ++y) {
            row.fill(0);
            for (int x = 0; x < width_; ++x) {
                const std::size_t i = static_cast<std::size_t>(y) * width_ + x;
                row[0] += maps.magnitude[i];
                row[1 + maps.bin[i]] += maps.magnitude[i];
                const std::size_t cell = (y + 1) * stride + (x + 1);
                const std::size_t above = y * stride + (x + 1);
                for (int c = 0; c < kChannelCount; ++c) planes_[c][cell] = planes_[c][above] + row[c];
            }
        }
    }

    int width() const { return width_; }
    int height() const { return height_; }
    double scale_x() const { return scale_x_; }
    double scale_y() const { return scale_y_; }

    /// Summed-area value I(x, y) = sum over pixels [0, x) x [0, y).
    std::uint32_t table(int ch, int x, int y) const {
        return planes_[ch][static_cast<std::size_t>(y) * (width_ + 1) + x];
    }

    /// Exact rectangle sum in fixed-point units; the rectangle is clamped to the image.
    std::uint32_t raw_sum(int ch, Rect r) const {
        r = clamp(r);
        if (r.x1 <= r.x0 || r.y1 <= r.y0) return 0;
        // Modular arithmetic is exact because the true result is in [0, 2^32).
        return table(ch, r.x1, r.y1) - table(ch, r.x1, r.y0) - table(ch, r.x0, r.y1) + table(ch, r.x0, r.y0);
    }

    double rect_sum(int ch, Rect r) const { return raw_sum(ch, r) / kMagnitudeScale; }

    Rect clamp(Rect r) const {
        r.x0 = std::clamp(r.x0, 0, width_);
        r.x1 = std::clamp(r.x1, 0, width_);
        r.y0 = std::clamp(r.y0, 0, height_);
        r.y1 = std::clamp(r.y1, 0, height_);
        return r;
    }

private:
    int width_ = 0;
    int height_ = 0;
    double scale_x_ = 1.0;
    double scale_y_ = 1.0;
    std::array<std::vector<std::uint32_t>, kChannelCount> planes_;
};

inline IntegralChannels build_channels(const GrayImage& image, const ChannelOptions& options = {}) {
    return IntegralChannels(compute_feature_maps(image, options));
}

struct HogParams {
    std::array<std::uint16_t, 3> triangle{0, 1, 2};
    std::uint8_t channel = 1;  // 1..8
    double size = 0.5;         // window side in iod units
    double alpha = 1.0 / 3;
    double beta = 1.0 / 3;
    double gamma = 1.0 / 3;
};

/// Square window centred on the barycentric anchor, in channel pixel coordinates (unclamped).
inline Rect hog_window(const LandmarkFrame& frame, const HogParams& p, const LandmarkLayout& layout,
                       double scale_x, double scale_y) {
    const Point2 c = p.alpha * frame.landmarks[p.triangle[0]] + p.beta * frame.landmarks[p.triangle[1]] +
                     p.gamma * frame.landmarks[p.triangle[2]];
    const double side = p.size * inter_ocular_distance(frame, layout);
    const double hx = 0.5 * side * scale_x;
    const double hy = 0.5 * side * scale_y;
    const double cx = c.x * scale_x;
    const double cy = c.y * scale_y;
    return {static_cast<int>(std::lround(cx - hx)), static_cast<int>(std::lround(cy - hy)),
            static_cast<int>(std::lround(cx + hx)), static_cast<int>(std::lround(cy + hy))};
}

/// Orientation-channel share of the gradient magnitude inside the window; in [0, 1].
inline double phi3(const LandmarkFrame& frame, const HogParams& p, const LandmarkLayout& layout) {
    if (!frame.channels) throw DataError("appearance feature requested on a frame without channels");
    const IntegralChannels& ch = *frame.channels;
    const Rect window = ch.clamp(hog_window(frame, p, layout, ch.scale_x(), ch.scale_y()));
    if (window.x1 <= window.x0 || window.y1 <= window.y0) return 0.0;
    return ch.rect_sum(p.channel, window) / (ch.rect_sum(0, window) + kHogEpsilon);
}

inline double phi6(const LandmarkFrame& prev, const LandmarkFrame& cur, const HogParams& p,
                   const LandmarkLayout& layout) {
    return phi3(cur, p, layout) - phi3(prev, p, layout);
}

// PGM (P5, 8-bit) I/O.

inline GrayImage read_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open image " + path);
    std::string magic;
    in >> magic;
    if (magic != "P5") throw DataError(path + ": not a binary PGM (P5)");
    auto next_int = [&]() {
        for (;;) {
            in >> std::ws;
            if (in.peek() == '#') {
                std::string comment;
                std::getline(in, comment);
                continue;
            }
            int v = -1;
            if (!(in >> v)) throw DataError(path + ": malformed PGM header");
            return v;
        }
    };
    const int w = next_int();
    const int h = next_int();
    const int maxval = next_int();
    if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255) throw DataError(path + ": unsupported PGM dimensions");
    in.get();
    GrayImage image(w, h);
    in.read(reinterpret_cast<char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
    if (in.gcount() != static_cast<std::streamsize>(image.pixels.size())) throw DataError(path + ": truncated PGM");
    return image;
}

inline void write_pgm(const std::string& path, const GrayImage& image) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write image " + path);
    out << "P5\n" << image.width << ' ' << image.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
    if (!out) throw DataError("failed writing image " + path);
}

}  // namespace pcrf
