#include "spof/scene.hpp"

#include "spof/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

namespace spof {

void CameraView::validate() const {
    if (!(near > 0.0) || !(far > near)) {
        throw ConfigError("camera " + std::to_string(id) + ": require 0 < near < far");
    }
    if (width < 1 || height < 1) {
        throw ConfigError("camera " + std::to_string(id) + ": width and height must be >= 1");
    }
    if (!(focal.x() > 0.0) || !(focal.y() > 0.0)) {
        throw ConfigError("camera " + std::to_string(id) + ": focal lengths must be positive");
    }
}

CameraView CameraView::look_at(std::uint32_t id, const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                               const Eigen::Vector3d& up, std::uint32_t width, std::uint32_t height,
                               double focal_px, double near, double far) {
    const Eigen::Vector3d forward = (target - eye).normalized();
    Eigen::Vector3d hint = up.normalized();
    if (std::abs(forward.dot(hint)) > 0.999) {
        hint = std::abs(forward.y()) < 0.9 ? Eigen::Vector3d::UnitY() : Eigen::Vector3d::UnitX();
    }
    const Eigen::Vector3d right = forward.cross(hint).normalized();
    const Eigen::Vector3d down = forward.cross(right);

    Eigen::Matrix3d r;
    r.row(0) = right.transpose();
    r.row(1) = down.transpose();
    r.row(2) = forward.transpose();

    CameraView view;
    view.id = id;
    view.world_to_camera.setIdentity();
    view.world_to_camera.topLeftCorner<3, 3>() = r;
    view.world_to_camera.topRightCorner<3, 1>() = -r * eye;
    view.focal = {focal_px, focal_px};
    view.principal_point = {0.5 * width, 0.5 * height};
    view.width = width;
    view.height = height;
    view.near = near;
    view.far = far;
    return view;
}

int Aabb::principal_axis() const {
    const Eigen::Vector3d e = extent();
    int axis = 0;
    for (int a = 1; a < 3; ++a) {
        if (e[a] > e[axis]) {
            axis = a;
        }
    }
    return axis;
}

void SceneSpec::validate() const {
    if (gaussians == 0) {
        throw ConfigError("scene spec: at least one Gaussian is required");
    }
    if (views == 0) {
        throw ConfigError("scene spec: at least one view is required");
    }
    if (!((box_max - box_min).array() > 0.0).all()) {
        throw ConfigError("scene spec: box must have positive extent on every axis");
    }
    if (gaussians > std::uint64_t{std::numeric_limits<std::uint32_t>::max()}) {
        throw ConfigError("scene spec: Gaussian count exceeds 32-bit indexing");
    }
    if (width < 1 || height < 1 || !(focal_px > 0.0) || !(near > 0.0) || !(far > near)) {
        throw ConfigError("scene spec: invalid camera intrinsics or depth range");
    }
    if (!(scale_factor > 0.0) || !(log_scale_std >= 0.0) || !(opacity_logit_std >= 0.0) ||
        !(sh_dc_std >= 0.0) || !(sh_rest_std >= 0.0) || !(orbit_radius_factor > 0.0) ||
        !(flyover_altitude > 0.0) || !(flyover_pitch_deg > 0.0 && flyover_pitch_deg <= 90.0)) {
        throw ConfigError("scene spec: invalid distribution parameter");
    }
}

std::string to_string(CameraPath path) {
    switch (path) {
    case CameraPath::Orbit: return "orbit";
    case CameraPath::GridFlyover: return "grid-flyover";
    case CameraPath::StreetLine: return "street-line";
    }
    return "orbit";
}

CameraPath camera_path_from_string(const std::string& name) {
    if (name == "orbit") return CameraPath::Orbit;
    if (name == "grid-flyover") return CameraPath::GridFlyover;
    if (name == "street-line") return CameraPath::StreetLine;
    throw ConfigError("unknown camera path '" + name + "' (expected orbit, grid-flyover or street-line)");
}

namespace {

float inside(double value, double lo, double hi) {
    float f = static_cast<float>(value);
    while (static_cast<double>(f) < lo) f = std::nextafter(f, std::numeric_limits<float>::infinity());
    while (static_cast<double>(f) > hi) f = std::nextafter(f, -std::numeric_limits<float>::infinity());
    return f;
}

std::vector<CameraView> make_orbit(const SceneSpec& spec, std::mt19937_64& rng) {
    const Eigen::Vector3d c = 0.5 * (spec.box_min + spec.box_max);
    const Eigen::Vector3d e = spec.box_max - spec.box_min;
    const double radius = spec.orbit_radius_factor * 0.5 * std::hypot(e.x(), e.y());
    const double height = 0.5 * e.z();
    std::uniform_real_distribution<double> jitter(-0.1, 0.1);
    std::vector<CameraView> views;
    for (std::uint32_t i = 0; i < spec.views; ++i) {
        const double theta = 2.0 * std::numbers::pi * (i + jitter(rng)) / spec.views;
        const Eigen::Vector3d eye = c + Eigen::Vector3d(radius * std::cos(theta), radius * std::sin(theta), height);
        views.push_back(CameraView::look_at(i, eye, c, Eigen::Vector3d::UnitZ(), spec.width, spec.height,
                                            spec.focal_px, spec.near, spec.far));
    }
    return views;
}

std::vector<CameraView> make_flyover(const SceneSpec& spec, std::mt19937_64& rng) {
    const Eigen::Vector3d e = spec.box_max - spec.box_min;
    const auto cols = static_cast<std::uint32_t>(
        std::max(1.0, std::round(std::sqrt(static_cast<double>(spec.views) * e.x() / e.y()))));
    const std::uint32_t rows = (spec.views + cols - 1) / cols;
    const double dx = e.x() / cols;
    const double dy = e.y() / rows;
    const double altitude = spec.box_max.z() + spec.flyover_altitude * e.z();
    const double pitch = spec.flyover_pitch_deg * std::numbers::pi / 180.0;
    std::uniform_real_distribution<double> jitter(-0.15, 0.15);
    std::vector<CameraView> views;
    for (std::uint32_t i = 0; i < spec.views; ++i) {
        const std::uint32_t row = i / cols;
        const std::uint32_t col = (row % 2 == 0) ? i % cols : cols - 1 - i % cols;
        const Eigen::Vector3d eye(spec.box_min.x() + (col + 0.5 + jitter(rng)) * dx,
                                  spec.box_min.y() + (row + 0.5 + jitter(rng)) * dy, altitude);
        const Eigen::Vector3d dir(0.0, std::cos(pitch), -std::sin(pitch));
        views.push_back(CameraView::look_at(i, eye, eye + dir, Eigen::Vector3d::UnitY(), spec.width, spec.height,
                                            spec.focal_px, spec.near, spec.far));
    }
    return views;
}

std::vector<CameraView> make_street_line(const SceneSpec& spec, std::mt19937_64& rng) {
    const Aabb box{spec.box_min, spec.box_max};
    const int axis = box.principal_axis();
    const Eigen::Vector3d c = box.center();
    const Eigen::Vector3d e = box.extent();
    std::uniform_real_distribution<double> jitter(-0.05, 0.05);
    std::vector<CameraView> views;
    for (std::uint32_t i = 0; i < spec.views; ++i) {
        Eigen::Vector3d eye = c;
        eye[axis] = spec.box_min[axis] + e[axis] * (i + 0.5 + jitter(rng)) / (spec.views + 1.0);
        Eigen::Vector3d dir = Eigen::Vector3d::Zero();
        dir[axis] = 1.0;
        const Eigen::Vector3d up = axis == 2 ? Eigen::Vector3d::UnitY() : Eigen::Vector3d::UnitZ();
        views.push_back(CameraView::look_at(i, eye, eye + dir, up, spec.width, spec.height, spec.focal_px,
                                            spec.near, spec.far));
    }
    return views;
}

} // namespace

Scene generate_synthetic_scene(const SceneSpec& spec, std::uint64_t seed) {
    spec.validate();

    Scene scene;
    scene.aabb = {spec.box_min, spec.box_max};

    // Separate streams so that camera placement does not depend on N.
    std::mt19937_64 camera_rng(seed ^ 0x9E3779B97F4A7C15ull);
    switch (spec.path) {
    case CameraPath::Orbit: scene.views = make_orbit(spec, camera_rng); break;
    case CameraPath::GridFlyover: scene.views = make_flyover(spec, camera_rng); break;
    case CameraPath::StreetLine: scene.views = make_street_line(spec, camera_rng); break;
    }

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);

    const Eigen::Vector3d extent = spec.box_max - spec.box_min;
    double log_scale_base = spec.log_scale_mean;
    if (spec.scale_mode == ScaleMode::Density) {
        const double spacing = std::cbrt(extent.prod() / static_cast<double>(spec.gaussians));
        log_scale_base = std::log(spec.scale_factor * spacing);
    }

    scene.gaussians.resize(spec.gaussians);
    for (auto& g : scene.gaussians) {
        for (int a = 0; a < 3; ++a) {
            g.position[a] = inside(spec.box_min[a] + unit(rng) * extent[a], spec.box_min[a], spec.box_max[a]);
        }
        for (int a = 0; a < 3; ++a) {
            g.log_scale[a] = static_cast<float>(log_scale_base + spec.log_scale_std * normal(rng));
        }
        double q[4];
        double norm = 0.0;
        do {
            norm = 0.0;
            for (double& c : q) {
                c = normal(rng);
                norm += c * c;
            }
        } while (norm < 1e-12);
        norm = std::sqrt(norm);
        for (int c = 0; c < 4; ++c) {
            g.rotation[c] = static_cast<float>(q[c] / norm);
        }
        for (std::size_t k = 0; k < 16; ++k) {
            const double stddev = k == 0 ? spec.sh_dc_std : spec.sh_rest_std;
            for (int ch = 0; ch < 3; ++ch) {
                g.sh[3 * k + ch] = static_cast<float>(stddev * normal(rng));
            }
        }
        g.opacity_logit = static_cast<float>(spec.opacity_logit_mean + spec.opacity_logit_std * normal(rng));
    }
    return scene;
}

} // namespace spof
