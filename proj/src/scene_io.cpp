#include "spof/scene.hpp"

#include "binary_io.hpp"
#include "spof/errors.hpp"

#include <json.hpp>

#include <set>

namespace spof {

namespace {

using nlohmann::json;

constexpr std::uint32_t kSceneBlobVersion = 1;

json vec3_json(const Eigen::Vector3d& v) { return json::array({v.x(), v.y(), v.z()}); }

Eigen::Vector3d vec3_from(const json& j, const char* what) {
    if (!j.is_array() || j.size() != 3) {
        throw ConfigError(std::string(what) + " must be an array of 3 numbers");
    }
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

json view_json(const CameraView& v) {
    json m = json::array();
    for (int r = 0; r < 4; ++r) {
        for (int c = 0; c < 4; ++c) {
            m.push_back(v.world_to_camera(r, c));
        }
    }
    return {{"id", v.id},
            {"world_to_camera", m},
            {"focal", {v.focal.x(), v.focal.y()}},
            {"principal_point", {v.principal_point.x(), v.principal_point.y()}},
            {"width", v.width},
            {"height", v.height},
            {"near", v.near},
            {"far", v.far}};
}

CameraView view_from(const json& j) {
    CameraView v;
    v.id = j.at("id").get<std::uint32_t>();
    const auto& m = j.at("world_to_camera");
    if (m.size() != 16) {
        throw IoError("world_to_camera must hold 16 numbers");
    }
    for (int r = 0; r < 4; ++r) {
        for (int c = 0; c < 4; ++c) {
            v.world_to_camera(r, c) = m[4 * r + c].get<double>();
        }
    }
    v.focal = {j.at("focal")[0].get<double>(), j.at("focal")[1].get<double>()};
    v.principal_point = {j.at("principal_point")[0].get<double>(), j.at("principal_point")[1].get<double>()};
    v.width = j.at("width").get<std::uint32_t>();
    v.height = j.at("height").get<std::uint32_t>();
    v.near = j.at("near").get<double>();
    v.far = j.at("far").get<double>();
    return v;
}

} // namespace

std::vector<std::uint8_t> encode_gaussian_blob(const std::vector<GaussianAttributes>& gaussians) {
    detail::ByteWriter w;
    w.put_magic("SPOF");
    w.put<std::uint32_t>(kSceneBlobVersion);
    w.put<std::uint64_t>(gaussians.size());
    w.bytes().reserve(16 + gaussians.size() * sizeof(GaussianAttributes));
    for (const auto& g : gaussians) w.put_array(g.position.data(), 3);
    for (const auto& g : gaussians) w.put_array(g.log_scale.data(), 3);
    for (const auto& g : gaussians) w.put_array(g.rotation.data(), 4);
    for (const auto& g : gaussians) w.put_array(g.sh.data(), 48);
    for (const auto& g : gaussians) w.put<float>(g.opacity_logit);
    return std::move(w.bytes());
}

std::vector<GaussianAttributes> decode_gaussian_blob(const std::vector<std::uint8_t>& blob) {
    detail::ByteReader r(blob);
    r.expect_magic("SPOF", "scene blob");
    const auto version = r.get<std::uint32_t>();
    if (version != kSceneBlobVersion) {
        throw IoError("scene blob: unsupported version " + std::to_string(version));
    }
    const auto n = r.get<std::uint64_t>();
    if (r.remaining() != n * sizeof(GaussianAttributes)) {
        throw IoError("scene blob: size does not match Gaussian count");
    }
    std::vector<GaussianAttributes> gaussians(n);
    for (auto& g : gaussians) r.get_array(g.position.data(), 3);
    for (auto& g : gaussians) r.get_array(g.log_scale.data(), 3);
    for (auto& g : gaussians) r.get_array(g.rotation.data(), 4);
    for (auto& g : gaussians) r.get_array(g.sh.data(), 48);
    for (auto& g : gaussians) g.opacity_logit = r.get<float>();
    return gaussians;
}

void save_scene(const Scene& scene, const std::filesystem::path& json_path) {
    std::filesystem::path blob_path = json_path;
    blob_path.replace_extension(".bin");

    json views = json::array();
    for (const auto& v : scene.views) {
        views.push_back(view_json(v));
    }
    const json doc = {{"format", "spof-scene"},
                      {"version", kSceneBlobVersion},
                      {"gaussians", scene.gaussians.size()},
                      {"blob", blob_path.filename().string()},
                      {"aabb", {{"min", vec3_json(scene.aabb.min)}, {"max", vec3_json(scene.aabb.max)}}},
                      {"views", views}};
    detail::write_file(blob_path, encode_gaussian_blob(scene.gaussians));
    detail::write_text_file(json_path, doc.dump(2) + "\n");
}

Scene load_scene(const std::filesystem::path& json_path) {
    json doc;
    try {
        doc = json::parse(detail::read_text_file(json_path));
    } catch (const json::exception& e) {
        throw IoError("scene descriptor '" + json_path.string() + "': " + e.what());
    }
    Scene scene;
    try {
        if (doc.at("format").get<std::string>() != "spof-scene") {
            throw IoError("'" + json_path.string() + "' is not a scene descriptor");
        }
        scene.aabb.min = vec3_from(doc.at("aabb").at("min"), "aabb.min");
        scene.aabb.max = vec3_from(doc.at("aabb").at("max"), "aabb.max");
        for (const auto& v : doc.at("views")) {
            scene.views.push_back(view_from(v));
        }
        const auto blob_path = json_path.parent_path() / doc.at("blob").get<std::string>();
        scene.gaussians = decode_gaussian_blob(detail::read_file(blob_path));
        if (scene.gaussians.size() != doc.at("gaussians").get<std::uint64_t>()) {
            throw IoError("scene descriptor and blob disagree on the Gaussian count");
        }
    } catch (const json::exception& e) {
        throw IoError("scene descriptor '" + json_path.string() + "': " + e.what());
    }
    return scene;
}

SceneSpec scene_spec_from_json_text(const std::string& text) {
    static const std::set<std::string> known = {
        "gaussians", "box_min", "box_max", "path", "views", "width", "height", "focal_px", "near", "far",
        "orbit_radius_factor", "flyover_altitude", "flyover_pitch_deg", "scale_mode", "scale_factor",
        "log_scale_mean", "log_scale_std", "opacity_logit_mean", "opacity_logit_std", "sh_dc_std", "sh_rest_std"};
    SceneSpec spec;
    try {
        const json j = json::parse(text);
        if (!j.is_object()) {
            throw ConfigError("scene spec must be a JSON object");
        }
        for (const auto& [key, _] : j.items()) {
            if (!known.contains(key)) {
                throw ConfigError("scene spec: unknown key '" + key + "'");
            }
        }
        const auto get = [&](const char* key, auto& field) {
            if (j.contains(key)) field = j[key].get<std::decay_t<decltype(field)>>();
        };
        get("gaussians", spec.gaussians);
        if (j.contains("box_min")) spec.box_min = vec3_from(j["box_min"], "box_min");
        if (j.contains("box_max")) spec.box_max = vec3_from(j["box_max"], "box_max");
        if (j.contains("path")) spec.path = camera_path_from_string(j["path"].get<std::string>());
        get("views", spec.views);
        get("width", spec.width);
        get("height", spec.height);
        get("focal_px", spec.focal_px);
        get("near", spec.near);
        get("far", spec.far);
        get("orbit_radius_factor", spec.orbit_radius_factor);
        get("flyover_altitude", spec.flyover_altitude);
        get("flyover_pitch_deg", spec.flyover_pitch_deg);
        if (j.contains("scale_mode")) {
            const auto mode = j["scale_mode"].get<std::string>();
            if (mode == "density") {
                spec.scale_mode = ScaleMode::Density;
            } else if (mode == "lognormal") {
                spec.scale_mode = ScaleMode::LogNormal;
            } else {
                throw ConfigError("scene spec: scale_mode must be 'density' or 'lognormal'");
            }
        }
        get("scale_factor", spec.scale_factor);
        get("log_scale_mean", spec.log_scale_mean);
        get("log_scale_std", spec.log_scale_std);
        get("opacity_logit_mean", spec.opacity_logit_mean);
        get("opacity_logit_std", spec.opacity_logit_std);
        get("sh_dc_std", spec.sh_dc_std);
        get("sh_rest_std", spec.sh_rest_std);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("scene spec: ") + e.what());
    }
    return spec;
}

std::string scene_spec_to_json_text(const SceneSpec& spec) {
    const json j = {{"gaussians", spec.gaussians},
                    {"box_min", vec3_json(spec.box_min)},
                    {"box_max", vec3_json(spec.box_max)},
                    {"path", to_string(spec.path)},
                    {"views", spec.views},
                    {"width", spec.width},
                    {"height", spec.height},
                    {"focal_px", spec.focal_px},
                    {"near", spec.near},
                    {"far", spec.far},
                    {"orbit_radius_factor", spec.orbit_radius_factor},
                    {"flyover_altitude", spec.flyover_altitude},
                    {"flyover_pitch_deg", spec.flyover_pitch_deg},
                    {"scale_mode", spec.scale_mode == ScaleMode::Density ? "density" : "lognormal"},
                    {"scale_factor", spec.scale_factor},
                    {"log_scale_mean", spec.log_scale_mean},
                    {"log_scale_std", spec.log_scale_std},
                    {"opacity_logit_mean", spec.opacity_logit_mean},
                    {"opacity_logit_std", spec.opacity_logit_std},
                    {"sh_dc_std", spec.sh_dc_std},
                    {"sh_rest_std", spec.sh_rest_std}};
    return j.dump(2) + "\n";
}

SceneSpec load_scene_spec(const std::filesystem::path& path) {
    return scene_spec_from_json_text(detail::read_text_file(path));
}

} // namespace spof
