#pragma once

#include "spof/attributes.hpp"

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace spof {

/// Pinhole camera. Camera space is x right, y down, z forward; a pixel
/// coordinate is (fx * x / z + cx, fy * y / z + cy).
struct CameraView {
    std::uint32_t id = 0;
    Eigen::Matrix4d world_to_camera = Eigen::Matrix4d::Identity();
    Eigen::Vector2d focal{1.0, 1.0};
    Eigen::Vector2d principal_point{0.0, 0.0};
    std::uint32_t width = 1;
    std::uint32_t height = 1;
    double near = 0.01;
    double far = 100.0;

    Eigen::Matrix3d rotation() const { return world_to_camera.topLeftCorner<3, 3>(); }
    Eigen::Vector3d translation() const { return world_to_camera.topRightCorner<3, 1>(); }
    Eigen::Vector3d center() const { return -rotation().transpose() * translation(); }
    std::uint64_t pixels() const { return std::uint64_t{width} * height; }

    void validate() const;

    /// Camera at `eye` looking at `target`; `up` is only a hint for roll.
    static CameraView look_at(std::uint32_t id, const Eigen::Vector3d& eye,
                              const Eigen::Vector3d& target, const Eigen::Vector3d& up,
                              std::uint32_t width, std::uint32_t height, double focal_px,
                              double near, double far);
};

struct Aabb {
    Eigen::Vector3d min = Eigen::Vector3d::Zero();
    Eigen::Vector3d max = Eigen::Vector3d::Zero();

    Eigen::Vector3d extent() const { return max - min; }
    Eigen::Vector3d center() const { return 0.5 * (min + max); }
    bool contains(const Eigen::Vector3d& p) const {
        return (p.array() >= min.array()).all() && (p.array() <= max.array()).all();
    }
    // Index of the longest axis; lowest index on ties.
    int principal_axis() const;
};

struct Scene {
    std::vector<GaussianAttributes> gaussians;
    std::vector<CameraView> views;
    Aabb aabb;

    std::size_t size() const noexcept { return gaussians.size(); }
};

enum class CameraPath { Orbit, GridFlyover, StreetLine };

enum class ScaleMode {
    // Semi-axes proportional to the mean inter-Gaussian spacing (box volume / N)^(1/3).
    Density,
    // Semi-axes drawn from a fixed log-normal independent of N.
    LogNormal,
};

/// Parameters for a synthetic scene. Camera placement depends only on the
/// box, path, view count and seed, never on the Gaussian count.
struct SceneSpec {
    std::uint64_t gaussians = 1000;
    Eigen::Vector3d box_min{-10.0, -10.0, -2.0};
    Eigen::Vector3d box_max{10.0, 10.0, 2.0};
    CameraPath path = CameraPath::Orbit;
    std::uint32_t views = 8;
    std::uint32_t width = 64;
    std::uint32_t height = 48;
    double focal_px = 60.0;
    double near = 0.1;
    double far = 100.0;
    // Orbit radius relative to the box half-diagonal in the ground plane.
    double orbit_radius_factor = 1.5;
    // Camera height above the box top for grid-flyover, relative to box height.
    double flyover_altitude = 1.0;
    // Downward tilt from horizontal for flyover cameras, degrees (90 = nadir).
    double flyover_pitch_deg = 90.0;
    ScaleMode scale_mode = ScaleMode::Density;
    double scale_factor = 0.3;       // Density: multiple of mean spacing
    double log_scale_mean = -3.0;    // LogNormal
    double log_scale_std = 0.3;      // both modes: per-axis jitter in log space
    double opacity_logit_mean = 0.0;
    double opacity_logit_std = 1.0;
    double sh_dc_std = 0.5;
    double sh_rest_std = 0.05;

    void validate() const;
};

std::string to_string(CameraPath path);
CameraPath camera_path_from_string(const std::string& name);

/// Deterministic for a given (spec, seed). Throws ConfigError for empty scenes.
Scene generate_synthetic_scene(const SceneSpec& spec, std::uint64_t seed);

/// Rotation matrix of a (not necessarily normalized) w-x-y-z quaternion.
template <typename T>
Eigen::Matrix<T, 3, 3> rotation_from_quaternion(const T* q) {
    const T norm = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
    const T w = q[0] / norm, x = q[1] / norm, y = q[2] / norm, z = q[3] / norm;
    Eigen::Matrix<T, 3, 3> r;
    r << T(1) - T(2) * (y * y + z * z), T(2) * (x * y - w * z), T(2) * (x * z + w * y),
        T(2) * (x * y + w * z), T(1) - T(2) * (x * x + z * z), T(2) * (y * z - w * x),
        T(2) * (x * z - w * y), T(2) * (y * z + w * x), T(1) - T(2) * (x * x + y * y);
    return r;
}

// ---- persistence -------------------------------------------------------------------------

/// Writes `<stem>.json` (counts, box, views) and `<stem>.bin` (attribute blob).
void save_scene(const Scene& scene, const std::filesystem::path& json_path);
Scene load_scene(const std::filesystem::path& json_path);

/// Attribute blob: "SPOF", u32 version, u64 N, then per-attribute f32 arrays.
std::vector<std::uint8_t> encode_gaussian_blob(const std::vector<GaussianAttributes>& gaussians);
std::vector<GaussianAttributes> decode_gaussian_blob(const std::vector<std::uint8_t>& blob);

SceneSpec load_scene_spec(const std::filesystem::path& path);
SceneSpec scene_spec_from_json_text(const std::string& text);
std::string scene_spec_to_json_text(const SceneSpec& spec);

} // namespace spof
