#pragma once

#include "spof/scene.hpp"
#include "spof/sorted_set.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace spof {

/// Half-space with unit inward normal: inside iff normal . x + offset >= 0.
struct Plane {
    Eigen::Vector3d normal = Eigen::Vector3d::UnitZ();
    double offset = 0.0;

    double signed_distance(const Eigen::Vector3d& p) const { return normal.dot(p) + offset; }
};

struct Frustum {
    enum Side { Left = 0, Right, Top, Bottom, Near, Far };
    std::array<Plane, 6> planes;

    bool contains(const Eigen::Vector3d& p) const;
};

/// Indices of the Gaussians a view touches.
struct SparsitySet {
    std::uint64_t view_id = 0;
    sorted::IndexVec indices;
    std::uint64_t n_total = 0;

    std::size_t size() const noexcept { return indices.size(); }
    double rho() const noexcept {
        return n_total == 0 ? 0.0 : static_cast<double>(indices.size()) / static_cast<double>(n_total);
    }
    // Throws ConfigError when indices are unsorted, duplicated or out of range.
    void validate() const;
};

inline constexpr double kDefaultSigmaCutoff = 3.0;

/// Six world-space planes bounding pixels [0,width]x[0,height] between near and far.
Frustum frustum_from_view(const CameraView& view);

/// Per-plane k-sigma test: the ellipsoid's support distance along each plane
/// normal is k * |S R^T n|. Exact per half-space, a superset for the frustum.
bool gaussian_in_frustum(const SelectionCritical& g, const Frustum& frustum, double k = kDefaultSigmaCutoff);
inline bool gaussian_in_frustum(const GaussianAttributes& g, const Frustum& frustum, double k = kDefaultSigmaCutoff) {
    return gaussian_in_frustum(SelectionCritical::of(g), frustum, k);
}

/// Culls an array of resident attributes directly.
SparsitySet cull_resident(std::span<const SelectionCritical> resident, const CameraView& view,
                          double k = kDefaultSigmaCutoff);

SparsitySet cull(const Scene& scene, const CameraView& view, double k = kDefaultSigmaCutoff);
std::vector<SparsitySet> cull_all(const Scene& scene, std::span<const CameraView> views,
                                  double k = kDefaultSigmaCutoff);

struct CdfPoint {
    double rho = 0.0;
    double fraction = 0.0; // fraction of views with sparsity <= rho
};

struct SparsityReport {
    std::vector<double> rho;      // per set, input order
    double mean = 0.0;
    double max = 0.0;
    double min = 0.0;
    std::vector<CdfPoint> cdf;    // one point per distinct rho, increasing
};

SparsityReport sparsity_stats(std::span<const SparsitySet> sets);

// Binary form: per set u64 view_id, u64 count, then count u32 indices, little endian.
void write_sparsity_sets(const std::filesystem::path& path, std::span<const SparsitySet> sets);
std::vector<SparsitySet> read_sparsity_sets(const std::filesystem::path& path, std::uint64_t n_total);

} // namespace spof
