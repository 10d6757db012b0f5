#pragma once

// Pose-bin layout, jittered per-sequence pose assignment, and the smoothed
// per-bin pose sampling surface used to apportion trees across views.

#include <algorithm>
#include <cmath>
#include <ostream>
#include <span>
#include <vector>

#include "pcrf/errors.hpp"
#include "pcrf/geometry.hpp"
#include "pcrf/random.hpp"

namespace pcrf {

/// Yaw x pitch grid of bin centers. Bin index = pitch_index * n_yaw + yaw_index.
struct PoseBinTable {
    std::vector<double> yaw_centers{-35.0, -17.5, 0.0, 17.5, 35.0};
    std::vector<double> pitch_centers{-25.0, 0.0, 25.0};
    double jitter_yaw = 5.0;
    double jitter_pitch = 5.0;

    static PoseBinTable multiview() { return PoseBinTable{}; }
    static PoseBinTable frontal() { return PoseBinTable{{0.0}, {0.0}, 5.0, 5.0}; }

    std::size_t size() const { return yaw_centers.size() * pitch_centers.size(); }

    Pose center(std::size_t bin) const {
        return {yaw_centers[bin % yaw_centers.size()], pitch_centers[bin / yaw_centers.size()]};
    }

    std::size_t index(std::size_t yaw_index, std::size_t pitch_index) const {
        return pitch_index * yaw_centers.size() + yaw_index;
    }

    /// Bin whose center is closest to `pose` (ties to the lower index).
    std::size_t nearest(const Pose& pose) const {
        std::size_t best = 0;
        double best_d = INFINITY;
        for (std::size_t i = 0; i < size(); ++i) {
            const Pose c = center(i);
            const double d = std::hypot(pose.yaw - c.yaw, pose.pitch - c.pitch);
            if (d < best_d) {
                best_d = d;
                best = i;
            }
        }
        return best;
    }

    /// Bin closest to the frontal view.
    std::size_t central() const { return nearest({0.0, 0.0}); }

    void validate() const {
        if (yaw_centers.empty() || pitch_centers.empty()) throw UsageError("pose bin table is empty");
        auto check = [](std::vector<double> v) {
            std::sort(v.begin(), v.end());
            if (std::adjacent_find(v.begin(), v.end()) != v.end()) throw UsageError("pose bin centers must be distinct");
        };
        check(yaw_centers);
        check(pitch_centers);
        if (jitter_yaw < 0 || jitter_pitch < 0) throw UsageError("pose jitter must be non-negative");
    }

    bool operator==(const PoseBinTable&) const = default;
};

/// Bin center plus uniform jitter in [-σγ, σγ] x [-σβ, σβ].
inline Pose assign_sequence_pose(const PoseBinTable& table, std::size_t bin, Rng& rng) {
    const Pose c = table.center(bin);
    auto jitter = [&](double half) {
        if (half == 0.0) return 0.0;
        return std::uniform_real_distribution<double>(-half, half)(rng);
    };
    const double dy = jitter(table.jitter_yaw);
    const double dp = jitter(table.jitter_pitch);
    return {c.yaw + dy, c.pitch + dp};
}

struct PoseGrid {
    double yaw_min = -45.0;
    double yaw_max = 45.0;
    double pitch_min = -35.0;
    double pitch_max = 35.0;
    double step = 1.0;

    std::size_t n_yaw() const { return static_cast<std::size_t>(std::lround((yaw_max - yaw_min) / step)) + 1; }
    std::size_t n_pitch() const { return static_cast<std::size_t>(std::lround((pitch_max - pitch_min) / step)) + 1; }
    bool operator==(const PoseGrid&) const = default;
};

struct TrainingPose {
    Pose pose;
    std::size_t bin = 0;
};

/// Per-bin weight surfaces on a yaw/pitch grid, normalized across bins at every node.
class PoseSampler {
public:
    PoseSampler() = default;
    PoseSampler(PoseGrid grid, std::size_t n_bins, std::vector<double> weights)
        : grid_(grid), n_bins_(n_bins), weights_(std::move(weights)) {
        if (weights_.size() != grid_.n_yaw() * grid_.n_pitch() * n_bins_)
            throw DataError("pose sampler surface has the wrong size");
    }

    const PoseGrid& grid() const { return grid_; }
    std::size_t bins() const { return n_bins_; }
    const std::vector<double>& surface() const { return weights_; }

    /// Stored weights at grid node (iy, ip).
    std::span<const double> node(std::size_t iy, std::size_t ip) const {
        return {weights_.data() + (ip * grid_.n_yaw() + iy) * n_bins_, n_bins_};
    }

    /// Bilinear interpolation; queries outside the grid are clamped to its boundary.
    std::vector<double> sample_weights(const Pose& pose) const {
        const double fy = std::clamp((pose.yaw - grid_.yaw_min) / grid_.step, 0.0, grid_.n_yaw() - 1.0);
        const double fp = std::clamp((pose.pitch - grid_.pitch_min) / grid_.step, 0.0, grid_.n_pitch() - 1.0);
        const std::size_t y0 = static_cast<std::size_t>(fy);
        const std::size_t p0 = static_cast<std::size_t>(fp);
        const std::size_t y1 = std::min(y0 + 1, grid_.n_yaw() - 1);
        const std::size_t p1 = std::min(p0 + 1, grid_.n_pitch() - 1);
        const double wy = fy - y0;
        const double wp = fp - p0;
        std::vector<double> out(n_bins_);
        const auto a = node(y0, p0), b = node(y1, p0), c = node(y0, p1), d = node(y1, p1);
        for (std::size_t i = 0; i < n_bins_; ++i)
            out[i] = (1 - wp) * ((1 - wy) * a[i] + wy * b[i]) + wp * ((1 - wy) * c[i] + wy * d[i]);
        return out;
    }

    /// yaw,pitch,bin_0..bin_{k-1}
    void write_csv(std::ostream& out) const {
        out << "yaw,pitch";
        for (std::size_t i = 0; i < n_bins_; ++i) out << ",bin_" << i;
        out << '\n';
        for (std::size_t ip = 0; ip < grid_.n_pitch(); ++ip)
            for (std::size_t iy = 0; iy < grid_.n_yaw(); ++iy) {
                out << grid_.yaw_min + iy * grid_.step << ',' << grid_.pitch_min + ip * grid_.step;
                for (double w : node(iy, ip)) out << ',' << w;
                out << '\n';
            }
    }

    bool operator==(const PoseSampler&) const = default;

private:
    PoseGrid grid_;
    std::size_t n_bins_ = 0;
    std::vector<double> weights_;  // [pitch][yaw][bin]
};

namespace detail {

/// Separable Gaussian blur with zero padding, kernel radius ceil(4 sigma) grid cells.
inline void gaussian_blur(std::vector<double>& plane, std::size_t nx, std::size_t ny, double sigma_cells) {
    if (sigma_cells <= 0.0) return;
    const int radius = static_cast<int>(std::ceil(4.0 * sigma_cells));
    std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
    for (int k = -radius; k <= radius; ++k)
        kernel[static_cast<std::size_t>(k + radius)] = std::exp(-0.5 * (k * k) / (sigma_cells * sigma_cells));
    std::vector<double> tmp(plane.size(), 0.0);
    for (std::size_t y = 0; y < ny; ++y)
        for (std::size_t x = 0; x < nx; ++x) {
            double s = 0.0;
            for (int k = -radius; k <= radius; ++k) {
                const long xx = static_cast<long>(x) + k;
                if (xx < 0 || xx >= static_cast<long>(nx)) continue;
                s += kernel[static_cast<std::size_t>(k + radius)] * plane[y * nx + static_cast<std::size_t>(xx)];
            }
            tmp[y * nx + x] = s;
        }
    for (std::size_t y = 0; y < ny; ++y)
        for (std::size_t x = 0; x < nx; ++x) {
            double s = 0.0;
            for (int k = -radius; k <= radius; ++k) {
                const long yy = static_cast<long>(y) + k;
                if (yy < 0 || yy >= static_cast<long>(ny)) continue;
                s += kernel[static_cast<std::size_t>(k + radius)] * tmp[static_cast<std::size_t>(yy) * nx + x];
            }
            plane[y * nx + x] = s;
        }
}

}  // namespace detail

/// Gaussian-smoothed training pose repartition per bin, normalized pointwise
/// across bins. Grid nodes without mass get uniform bin weights.
inline PoseSampler build_pose_sampler(std::span<const TrainingPose> poses, std::size_t n_bins, double sigma_deg = 5.0,
                                      PoseGrid grid = {}) {
    if (poses.empty()) throw DataError("cannot build a pose sampler from an empty pose set");
    if (n_bins == 0) throw UsageError("pose sampler needs at least one bin");
    const std::size_t nx = grid.n_yaw();
    const std::size_t ny = grid.n_pitch();
    std::vector<std::vector<double>> density(n_bins, std::vector<double>(nx * ny, 0.0));
    for (const auto& tp : poses) {
        if (tp.bin >= n_bins) throw DataError("training pose refers to an unknown bin");
        // Bilinear splat of the clamped pose onto the grid.
        const double fx = std::clamp((tp.pose.yaw - grid.yaw_min) / grid.step, 0.0, nx - 1.0);
        const double fy = std::clamp((tp.pose.pitch - grid.pitch_min) / grid.step, 0.0, ny - 1.0);
        const std::size_t x0 = static_cast<std::size_t>(fx), y0 = static_cast<std::size_t>(fy);
        const std::size_t x1 = std::min(x0 + 1, nx - 1), y1 = std::min(y0 + 1, ny - 1);
        const double wx = fx - x0, wy = fy - y0;
        auto& d = density[tp.bin];
        d[y0 * nx + x0] += (1 - wx) * (1 - wy);
        d[y0 * nx + x1] += wx * (1 - wy);
        d[y1 * nx + x0] += (1 - wx) * wy;
        d[y1 * nx + x1] += wx * wy;
    }
    for (auto& d : density) detail::gaussian_blur(d, nx, ny, sigma_deg / grid.step);

    std::vector<double> weights(nx * ny * n_bins);
    for (std::size_t y = 0; y < ny; ++y)
        for (std::size_t x = 0; x < nx; ++x) {
            double total = 0.0;
            for (std::size_t b = 0; b < n_bins; ++b) total += density[b][y * nx + x];
            double* w = weights.data() + (y * nx + x) * n_bins;
            for (std::size_t b = 0; b < n_bins; ++b)
                w[b] = total > 0.0 ? density[b][y * nx + x] / total : 1.0 / static_cast<double>(n_bins);
        }
    return PoseSampler(grid, n_bins, std::move(weights));
}

}  // namespace pcrf
