#include "spof/culling.hpp"

#include "binary_io.hpp"
#include "spof/errors.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace spof {

void SparsitySet::validate() const {
    if (!sorted::is_strictly_increasing(indices)) {
        throw ConfigError("sparsity set for view " + std::to_string(view_id) + " is not strictly increasing");
    }
    if (!indices.empty() && indices.back() >= n_total) {
        throw ConfigError("sparsity set for view " + std::to_string(view_id) + " has an index out of range");
    }
}

bool Frustum::contains(const Eigen::Vector3d& p) const {
    return std::all_of(planes.begin(), planes.end(), [&](const Plane& pl) { return pl.signed_distance(p) >= 0.0; });
}

Frustum frustum_from_view(const CameraView& view) {
    view.validate();
    const Eigen::Matrix3d r = view.rotation();
    if (!(r * r.transpose()).isApprox(Eigen::Matrix3d::Identity(), 1e-9) || r.determinant() < 0.0) {
        throw ConfigError("camera " + std::to_string(view.id) + ": world_to_camera is not a rigid transform");
    }
    const Eigen::Vector3d t = view.translation();
    const double fx = view.focal.x(), fy = view.focal.y();
    const double cx = view.principal_point.x(), cy = view.principal_point.y();
    const double w = view.width, h = view.height;

    // Camera-space half-spaces; the side planes pass through the camera center.
    const std::array<std::pair<Eigen::Vector3d, double>, 6> camera_planes = {{
        {{fx, 0.0, cx}, 0.0},
        {{-fx, 0.0, w - cx}, 0.0},
        {{0.0, fy, cy}, 0.0},
        {{0.0, -fy, h - cy}, 0.0},
        {{0.0, 0.0, 1.0}, -view.near},
        {{0.0, 0.0, -1.0}, view.far},
    }};

    Frustum f;
    for (std::size_t i = 0; i < camera_planes.size(); ++i) {
        const double len = camera_planes[i].first.norm();
        const Eigen::Vector3d n_cam = camera_planes[i].first / len;
        const double d_cam = camera_planes[i].second / len;
        f.planes[i].normal = r.transpose() * n_cam;
        f.planes[i].offset = n_cam.dot(t) + d_cam;
    }
    return f;
}

namespace {

struct CullGeometry {
    Eigen::Vector3d center;
    Eigen::Matrix3d rs; // R * diag(exp(log_scale))
};

CullGeometry geometry_of(const SelectionCritical& g) {
    const double q[4] = {g.rotation[0], g.rotation[1], g.rotation[2], g.rotation[3]};
    const Eigen::Matrix3d r = rotation_from_quaternion(q);
    const Eigen::Vector3d s(std::exp(double{g.log_scale[0]}), std::exp(double{g.log_scale[1]}),
                            std::exp(double{g.log_scale[2]}));
    return {Eigen::Vector3d(g.position[0], g.position[1], g.position[2]), r * s.asDiagonal()};
}

bool in_frustum(const CullGeometry& geo, const Frustum& frustum, double k) {
    for (const auto& plane : frustum.planes) {
        const double radius = k * (geo.rs.transpose() * plane.normal).norm();
        if (plane.signed_distance(geo.center) < -radius) {
            return false;
        }
    }
    return true;
}

std::vector<CullGeometry> geometry_of_all(std::span<const SelectionCritical> resident) {
    std::vector<CullGeometry> out;
    out.reserve(resident.size());
    for (const auto& g : resident) {
        out.push_back(geometry_of(g));
    }
    return out;
}

SparsitySet cull_geometry(const std::vector<CullGeometry>& geo, const CameraView& view, double k) {
    if (!(k > 0.0)) {
        throw ConfigError("sigma cutoff k must be positive");
    }
    const Frustum frustum = frustum_from_view(view);
    SparsitySet set;
    set.view_id = view.id;
    set.n_total = geo.size();
    for (std::size_t j = 0; j < geo.size(); ++j) {
        if (in_frustum(geo[j], frustum, k)) {
            set.indices.push_back(static_cast<sorted::Index>(j));
        }
    }
    return set;
}

std::vector<SelectionCritical> critical_of(const Scene& scene) {
    std::vector<SelectionCritical> out;
    out.reserve(scene.size());
    for (const auto& g : scene.gaussians) {
        out.push_back(SelectionCritical::of(g));
    }
    return out;
}

} // namespace

bool gaussian_in_frustum(const SelectionCritical& g, const Frustum& frustum, double k) {
    return in_frustum(geometry_of(g), frustum, k);
}

SparsitySet cull_resident(std::span<const SelectionCritical> resident, const CameraView& view, double k) {
    return cull_geometry(geometry_of_all(resident), view, k);
}

SparsitySet cull(const Scene& scene, const CameraView& view, double k) {
    const auto critical = critical_of(scene);
    return cull_resident(critical, view, k);
}

std::vector<SparsitySet> cull_all(const Scene& scene, std::span<const CameraView> views, double k) {
    const auto geo = geometry_of_all(critical_of(scene));
    std::vector<SparsitySet> sets;
    sets.reserve(views.size());
    for (const auto& view : views) {
        sets.push_back(cull_geometry(geo, view, k));
    }
    return sets;
}

SparsityReport sparsity_stats(std::span<const SparsitySet> sets) {
    if (sets.empty()) {
        throw ConfigError("sparsity statistics need at least one set");
    }
    SparsityReport report;
    double sum = 0.0;
    for (const auto& s : sets) {
        const double rho = s.rho();
        report.rho.push_back(rho);
        sum += rho;
    }
    report.mean = sum / static_cast<double>(sets.size());
    report.max = *std::max_element(report.rho.begin(), report.rho.end());
    report.min = *std::min_element(report.rho.begin(), report.rho.end());

    std::map<double, std::size_t> counts;
    for (double rho : report.rho) {
        ++counts[rho];
    }
    std::size_t cumulative = 0;
    for (const auto& [rho, count] : counts) {
        cumulative += count;
        report.cdf.push_back({rho, static_cast<double>(cumulative) / static_cast<double>(sets.size())});
    }
    return report;
}

void write_sparsity_sets(const std::filesystem::path& path, std::span<const SparsitySet> sets) {
    detail::ByteWriter w;
    for (const auto& s : sets) {
        w.put<std::uint64_t>(s.view_id);
        w.put<std::uint64_t>(s.indices.size());
        w.put_array(s.indices.data(), s.indices.size());
    }
    detail::write_file(path, w.bytes());
}

std::vector<SparsitySet> read_sparsity_sets(const std::filesystem::path& path, std::uint64_t n_total) {
    const auto bytes = detail::read_file(path);
    detail::ByteReader r(bytes);
    std::vector<SparsitySet> sets;
    while (!r.at_end()) {
        SparsitySet s;
        s.view_id = r.get<std::uint64_t>();
        const auto count = r.get<std::uint64_t>();
        if (count > r.remaining() / sizeof(sorted::Index)) {
            throw IoError("sparsity set file '" + path.string() + "' is truncated");
        }
        s.indices.resize(count);
        r.get_array(s.indices.data(), count);
        s.n_total = n_total;
        try {
            s.validate();
        } catch (const ConfigError& e) {
            throw IoError("sparsity set file '" + path.string() + "': " + e.what());
        }
        sets.push_back(std::move(s));
    }
    return sets;
}

} // namespace spof
