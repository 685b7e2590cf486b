#include "spof/render.hpp"

#include "spof/culling.hpp"
#include "spof/errors.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <numeric>

namespace spof {

void RenderConfig::validate() const {
    if (sh_degree < 0 || sh_degree > 3) {
        throw ConfigError("sh_degree must be in 0..3");
    }
    if (!(sigma_cutoff > 0.0)) {
        throw ConfigError("sigma_cutoff must be positive");
    }
}

namespace {

constexpr double kC0 = 0.28209479177387814;
constexpr double kC1 = 0.4886025119029199;
constexpr double kC2[5] = {1.0925484305920792, -1.0925484305920792, 0.31539156525252005, -1.0925484305920792,
                           0.5462742152960396};
constexpr double kC3[7] = {-0.5900435899266435, 2.890611442640554, -0.4570457994644658, 0.3731763325901154,
                           -0.4570457994644658, 1.445305721320277, -0.5900435899266435};

template <typename T>
void sh_basis_values(int degree, const T dir[3], T basis[16]) {
    const T x = dir[0], y = dir[1], z = dir[2];
    std::fill(basis, basis + 16, T(0));
    basis[0] = T(kC0);
    if (degree < 1) return;
    basis[1] = T(-kC1) * y;
    basis[2] = T(kC1) * z;
    basis[3] = T(-kC1) * x;
    if (degree < 2) return;
    const T xx = x * x, yy = y * y, zz = z * z;
    basis[4] = T(kC2[0]) * x * y;
    basis[5] = T(kC2[1]) * y * z;
    basis[6] = T(kC2[2]) * (T(2) * zz - xx - yy);
    basis[7] = T(kC2[3]) * x * z;
    basis[8] = T(kC2[4]) * (xx - yy);
    if (degree < 3) return;
    basis[9] = T(kC3[0]) * y * (T(3) * xx - yy);
    basis[10] = T(kC3[1]) * x * y * z;
    basis[11] = T(kC3[2]) * y * (T(4) * zz - xx - yy);
    basis[12] = T(kC3[3]) * z * (T(2) * zz - T(3) * xx - T(3) * yy);
    basis[13] = T(kC3[4]) * x * (T(4) * zz - xx - yy);
    basis[14] = T(kC3[5]) * z * (xx - yy);
    basis[15] = T(kC3[6]) * x * (xx - T(3) * yy);
}

template <typename T>
T sigmoid(T x) {
    return T(1) / (T(1) + std::exp(-x));
}

/// Screen-space footprint of one Gaussian.
template <typename T>
struct Splat {
    std::uint32_t index = 0;
    T depth{};
    T mean[2]{};
    T conic[3]{}; // inverse 2D covariance [[a, b], [b, c]]
    T color[3]{};
    bool clamped[3]{};
    T opacity{};
    int x0 = 0, x1 = -1, y0 = 0, y1 = -1; // inclusive pixel bounds
};

template <typename T>
Eigen::Matrix<T, 3, 3> rotation_of(const CameraView& view) {
    return view.rotation().cast<T>();
}

template <typename T>
std::optional<Splat<T>> project(const GaussianAttributes& g, std::uint32_t index, const CameraView& view,
                                const Frustum& frustum, const RenderConfig& cfg) {
    if (!gaussian_in_frustum(g, frustum, cfg.sigma_cutoff)) {
        return std::nullopt;
    }
    using Vec3 = Eigen::Matrix<T, 3, 1>;
    using Mat3 = Eigen::Matrix<T, 3, 3>;
    const Mat3 w = rotation_of<T>(view);
    const Vec3 mu(T(g.position[0]), T(g.position[1]), T(g.position[2]));
    const Vec3 t = w * mu + view.translation().cast<T>();
    if (!(t.z() > T(view.near))) {
        return std::nullopt;
    }
    const T q[4] = {T(g.rotation[0]), T(g.rotation[1]), T(g.rotation[2]), T(g.rotation[3])};
    const Mat3 r = rotation_from_quaternion(q);
    const Vec3 s(std::exp(T(g.log_scale[0])), std::exp(T(g.log_scale[1])), std::exp(T(g.log_scale[2])));
    const Mat3 m = r * s.asDiagonal();
    const Mat3 v = w * (m * m.transpose()) * w.transpose();

    const T fx = T(view.focal.x()), fy = T(view.focal.y());
    Eigen::Matrix<T, 2, 3> j;
    j << fx / t.z(), T(0), -fx * t.x() / (t.z() * t.z()), T(0), fy / t.z(), -fy * t.y() / (t.z() * t.z());
    Eigen::Matrix<T, 2, 2> cov = j * v * j.transpose();
    cov(0, 0) += T(kCov2dRegularizer);
    cov(1, 1) += T(kCov2dRegularizer);
    const T det = cov(0, 0) * cov(1, 1) - cov(0, 1) * cov(0, 1);

    Splat<T> sp;
    sp.index = index;
    sp.depth = t.z();
    sp.mean[0] = fx * t.x() / t.z() + T(view.principal_point.x());
    sp.mean[1] = fy * t.y() / t.z() + T(view.principal_point.y());
    sp.conic[0] = cov(1, 1) / det;
    sp.conic[1] = -cov(0, 1) / det;
    sp.conic[2] = cov(0, 0) / det;
    sp.opacity = sigmoid(T(g.opacity_logit));

    const Vec3 cam = view.center().cast<T>();
    const Vec3 dir = (mu - cam).normalized();
    const T d[3] = {dir.x(), dir.y(), dir.z()};
    T basis[16];
    sh_basis_values(cfg.sh_degree, d, basis);
    for (int c = 0; c < 3; ++c) {
        T value = T(0.5);
        for (int k = 0; k < 16; ++k) value += basis[k] * T(g.sh[3 * k + c]);
        sp.clamped[c] = value < T(0);
        sp.color[c] = sp.clamped[c] ? T(0) : value;
    }

    // Exact axis-aligned extent of the cutoff ellipse, padded by a pixel.
    const double rx = cfg.sigma_cutoff * std::sqrt(static_cast<double>(cov(0, 0)));
    const double ry = cfg.sigma_cutoff * std::sqrt(static_cast<double>(cov(1, 1)));
    const double mx = static_cast<double>(sp.mean[0]), my = static_cast<double>(sp.mean[1]);
    const double w_px = view.width, h_px = view.height;
    const double lo_x = std::floor(mx - rx - 0.5) - 1.0, hi_x = std::ceil(mx + rx - 0.5) + 1.0;
    const double lo_y = std::floor(my - ry - 0.5) - 1.0, hi_y = std::ceil(my + ry - 0.5) + 1.0;
    if (hi_x >= 0.0 && hi_y >= 0.0 && lo_x < w_px && lo_y < h_px) {
        sp.x0 = static_cast<int>(std::max(0.0, lo_x));
        sp.x1 = static_cast<int>(std::min(w_px - 1.0, hi_x));
        sp.y0 = static_cast<int>(std::max(0.0, lo_y));
        sp.y1 = static_cast<int>(std::min(h_px - 1.0, hi_y));
    }
    return sp;
}

/// Projected splats in compositing order plus, per pixel, the splats that may
/// cover it (CSR, each list in compositing order).
template <typename T>
struct Raster {
    std::vector<Splat<T>> splats;
    std::vector<std::uint32_t> offsets;
    std::vector<std::uint32_t> entries;
    bool tile_free = false;

    template <typename F>
    void for_each_candidate(std::size_t pixel, F&& f) const {
        if (tile_free) {
            for (std::uint32_t s = 0; s < splats.size(); ++s) f(s);
            return;
        }
        for (std::uint32_t e = offsets[pixel]; e < offsets[pixel + 1]; ++e) f(entries[e]);
    }
};

template <typename T>
Raster<T> rasterize(std::span<const GaussianAttributes> gaussians, std::span<const std::uint32_t> subset,
                    const CameraView& view, const RenderConfig& cfg) {
    cfg.validate();
    const Frustum frustum = frustum_from_view(view);
    Raster<T> raster;
    raster.tile_free = cfg.tile_free;
    for (auto index : subset) {
        if (index >= gaussians.size()) {
            throw ConfigError("render subset index out of range");
        }
        if (auto sp = project<T>(gaussians[index], index, view, frustum, cfg)) {
            raster.splats.push_back(*sp);
        }
    }
    std::sort(raster.splats.begin(), raster.splats.end(), [](const Splat<T>& a, const Splat<T>& b) {
        if (a.depth != b.depth) return a.depth < b.depth;
        return a.index < b.index;
    });
    if (cfg.tile_free) {
        return raster;
    }
    const std::size_t pixels = std::size_t{view.width} * view.height;
    raster.offsets.assign(pixels + 1, 0);
    for (const auto& sp : raster.splats) {
        for (int y = sp.y0; y <= sp.y1; ++y) {
            for (int x = sp.x0; x <= sp.x1; ++x) ++raster.offsets[std::size_t(y) * view.width + x + 1];
        }
    }
    std::partial_sum(raster.offsets.begin(), raster.offsets.end(), raster.offsets.begin());
    raster.entries.resize(raster.offsets.back());
    std::vector<std::uint32_t> cursor(raster.offsets.begin(), raster.offsets.end() - 1);
    for (std::uint32_t s = 0; s < raster.splats.size(); ++s) {
        const auto& sp = raster.splats[s];
        for (int y = sp.y0; y <= sp.y1; ++y) {
            for (int x = sp.x0; x <= sp.x1; ++x) raster.entries[cursor[std::size_t(y) * view.width + x]++] = s;
        }
    }
    return raster;
}

template <typename T>
struct Sample {
    std::uint32_t splat;
    T alpha;
    T transmittance; // before this splat
    T dx, dy;
};

// Walks the splats covering pixel (x, y) front to back; returns the final transmittance.
template <typename T, typename F>
T composite(const Raster<T>& raster, std::size_t pixel, std::uint32_t x, std::uint32_t y, T cutoff_sq, F&& visit) {
    const T px = T(x) + T(0.5), py = T(y) + T(0.5);
    T transmittance = T(1);
    raster.for_each_candidate(pixel, [&](std::uint32_t s) {
        const auto& sp = raster.splats[s];
        const T dx = px - sp.mean[0], dy = py - sp.mean[1];
        const T power = sp.conic[0] * dx * dx + T(2) * sp.conic[1] * dx * dy + sp.conic[2] * dy * dy;
        if (power > cutoff_sq) return;
        const T alpha = sp.opacity * std::exp(T(-0.5) * power);
        visit(Sample<T>{s, alpha, transmittance, dx, dy});
        transmittance *= T(1) - alpha;
    });
    return transmittance;
}

} // namespace

void sh_basis(int degree, const double dir[3], double basis[16], double dbasis[16][3]) {
    sh_basis_values(degree, dir, basis);
    for (int k = 0; k < 16; ++k) dbasis[k][0] = dbasis[k][1] = dbasis[k][2] = 0.0;
    const double x = dir[0], y = dir[1], z = dir[2];
    if (degree < 1) return;
    dbasis[1][1] = -kC1;
    dbasis[2][2] = kC1;
    dbasis[3][0] = -kC1;
    if (degree < 2) return;
    const double xx = x * x, yy = y * y, zz = z * z;
    dbasis[4][0] = kC2[0] * y;
    dbasis[4][1] = kC2[0] * x;
    dbasis[5][1] = kC2[1] * z;
    dbasis[5][2] = kC2[1] * y;
    dbasis[6][0] = -2.0 * kC2[2] * x;
    dbasis[6][1] = -2.0 * kC2[2] * y;
    dbasis[6][2] = 4.0 * kC2[2] * z;
    dbasis[7][0] = kC2[3] * z;
    dbasis[7][2] = kC2[3] * x;
    dbasis[8][0] = 2.0 * kC2[4] * x;
    dbasis[8][1] = -2.0 * kC2[4] * y;
    if (degree < 3) return;
    dbasis[9][0] = kC3[0] * 6.0 * x * y;
    dbasis[9][1] = kC3[0] * (3.0 * xx - 3.0 * yy);
    dbasis[10][0] = kC3[1] * y * z;
    dbasis[10][1] = kC3[1] * x * z;
    dbasis[10][2] = kC3[1] * x * y;
    dbasis[11][0] = kC3[2] * -2.0 * x * y;
    dbasis[11][1] = kC3[2] * (4.0 * zz - xx - 3.0 * yy);
    dbasis[11][2] = kC3[2] * 8.0 * y * z;
    dbasis[12][0] = kC3[3] * -6.0 * x * z;
    dbasis[12][1] = kC3[3] * -6.0 * y * z;
    dbasis[12][2] = kC3[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy);
    dbasis[13][0] = kC3[4] * (4.0 * zz - 3.0 * xx - yy);
    dbasis[13][1] = kC3[4] * -2.0 * x * y;
    dbasis[13][2] = kC3[4] * 8.0 * x * z;
    dbasis[14][0] = kC3[5] * 2.0 * x * z;
    dbasis[14][1] = kC3[5] * -2.0 * y * z;
    dbasis[14][2] = kC3[5] * (xx - yy);
    dbasis[15][0] = kC3[6] * (3.0 * xx - 3.0 * yy);
    dbasis[15][1] = kC3[6] * -6.0 * x * y;
}

template <typename T>
ImageT<T> render_as(std::span<const GaussianAttributes> gaussians, std::span<const std::uint32_t> subset,
                    const CameraView& view, const RenderConfig& cfg) {
    const Raster<T> raster = rasterize<T>(gaussians, subset, view, cfg);
    const T cutoff_sq = T(cfg.sigma_cutoff * cfg.sigma_cutoff);
    ImageT<T> image(view.width, view.height);
    for (std::uint32_t y = 0; y < view.height; ++y) {
        for (std::uint32_t x = 0; x < view.width; ++x) {
            const std::size_t pixel = std::size_t{y} * view.width + x;
            T rgb[3] = {T(0), T(0), T(0)};
            const T final_t = composite(raster, pixel, x, y, cutoff_sq, [&](const Sample<T>& s) {
                const auto& sp = raster.splats[s.splat];
                for (int c = 0; c < 3; ++c) rgb[c] += s.transmittance * s.alpha * sp.color[c];
            });
            for (int c = 0; c < 3; ++c) image.rgb[pixel * 3 + c] = rgb[c] + final_t * T(cfg.background[c]);
        }
    }
    return image;
}

template ImageT<float> render_as<float>(std::span<const GaussianAttributes>, std::span<const std::uint32_t>,
                                        const CameraView&, const RenderConfig&);
template ImageT<double> render_as<double>(std::span<const GaussianAttributes>, std::span<const std::uint32_t>,
                                          const CameraView&, const RenderConfig&);

Image render(std::span<const GaussianAttributes> gaussians, std::span<const std::uint32_t> subset,
             const CameraView& view, const RenderConfig& cfg) {
    return render_as<float>(gaussians, subset, view, cfg);
}

Image render(const Scene& scene, std::span<const std::uint32_t> subset, const CameraView& view,
             const RenderConfig& cfg) {
    return render_as<float>(scene.gaussians, subset, view, cfg);
}

Image render_all(const Scene& scene, const CameraView& view, const RenderConfig& cfg) {
    std::vector<std::uint32_t> all(scene.size());
    std::iota(all.begin(), all.end(), 0u);
    return render(scene, all, view, cfg);
}

void Gradients::add(const Gradients& other) {
    if (other.per_gaussian.size() != per_gaussian.size()) {
        throw ConfigError("gradient sizes differ");
    }
    for (std::size_t g = 0; g < per_gaussian.size(); ++g) {
        for (std::size_t p = 0; p < GaussianAttributes::kParamCount; ++p) {
            per_gaussian[g][p] += other.per_gaussian[g][p];
        }
    }
    accumulated = true;
}

bool is_zero(const GradRecord& g) {
    return std::all_of(g.begin(), g.end(), [](double v) { return v == 0.0; });
}

namespace {

// Gradients w.r.t. the screen-space quantities of one splat.
struct SplatGrad {
    double mean[2] = {0.0, 0.0};
    double conic[3] = {0.0, 0.0, 0.0}; // d/da, d/db (single off-diagonal variable), d/dc
    double color[3] = {0.0, 0.0, 0.0};
    double opacity_logit = 0.0;
};

// Chains screen-space gradients back to the 59 parameters of one Gaussian.
void chain_to_parameters(const GaussianAttributes& g, const CameraView& view, const RenderConfig& cfg,
                         const Splat<double>& sp, const SplatGrad& sg, GradRecord& out) {
    using Vec3 = Eigen::Vector3d;
    using Mat3 = Eigen::Matrix3d;
    using Mat2 = Eigen::Matrix2d;

    const Mat3 w = view.rotation();
    const Vec3 mu(g.position[0], g.position[1], g.position[2]);
    const Vec3 t = w * mu + view.translation();
    const double qraw[4] = {g.rotation[0], g.rotation[1], g.rotation[2], g.rotation[3]};
    const double qnorm = std::sqrt(qraw[0] * qraw[0] + qraw[1] * qraw[1] + qraw[2] * qraw[2] + qraw[3] * qraw[3]);
    const double qw = qraw[0] / qnorm, qx = qraw[1] / qnorm, qy = qraw[2] / qnorm, qz = qraw[3] / qnorm;
    const Mat3 r = rotation_from_quaternion(qraw);
    const Vec3 s(std::exp(double{g.log_scale[0]}), std::exp(double{g.log_scale[1]}), std::exp(double{g.log_scale[2]}));
    const Mat3 m = r * s.asDiagonal();
    const Mat3 v = w * (m * m.transpose()) * w.transpose();
    const double fx = view.focal.x(), fy = view.focal.y();
    const double tz2 = t.z() * t.z(), tz3 = tz2 * t.z();
    Eigen::Matrix<double, 2, 3> j;
    j << fx / t.z(), 0.0, -fx * t.x() / tz2, 0.0, fy / t.z(), -fy * t.y() / tz2;

    // conic A = inverse(cov2d); dL/dcov2d = -A G_A A with G_A symmetric.
    Mat2 a;
    a << sp.conic[0], sp.conic[1], sp.conic[1], sp.conic[2];
    Mat2 g_a;
    g_a << sg.conic[0], 0.5 * sg.conic[1], 0.5 * sg.conic[1], sg.conic[2];
    const Mat2 g_cov = -a * g_a * a;

    const Mat3 g_v = j.transpose() * g_cov * j;
    const Eigen::Matrix<double, 2, 3> g_j = 2.0 * g_cov * j * v;
    const Mat3 g_sigma = w.transpose() * g_v * w;
    const Mat3 g_m = 2.0 * g_sigma * m;

    // scale
    for (int k = 0; k < 3; ++k) {
        double g_s = 0.0;
        for (int i = 0; i < 3; ++i) g_s += g_m(i, k) * r(i, k);
        out[param::kLogScale + k] += g_s * s[k];
    }

    // rotation, through the unit-quaternion normalization
    Mat3 g_r;
    for (int i = 0; i < 3; ++i) {
        for (int k = 0; k < 3; ++k) g_r(i, k) = g_m(i, k) * s[k];
    }
    Mat3 dw, dx, dy, dz;
    dw << 0, -2 * qz, 2 * qy, 2 * qz, 0, -2 * qx, -2 * qy, 2 * qx, 0;
    dx << 0, 2 * qy, 2 * qz, 2 * qy, -4 * qx, -2 * qw, 2 * qz, 2 * qw, -4 * qx;
    dy << -4 * qy, 2 * qx, 2 * qw, 2 * qx, 0, 2 * qz, -2 * qw, 2 * qz, -4 * qy;
    dz << -4 * qz, -2 * qw, 2 * qx, 2 * qw, -4 * qz, 2 * qy, 2 * qx, 2 * qy, 0;
    const double g_qhat[4] = {g_r.cwiseProduct(dw).sum(), g_r.cwiseProduct(dx).sum(), g_r.cwiseProduct(dy).sum(),
                              g_r.cwiseProduct(dz).sum()};
    const double qhat[4] = {qw, qx, qy, qz};
    double radial = 0.0;
    for (int k = 0; k < 4; ++k) radial += qhat[k] * g_qhat[k];
    for (int k = 0; k < 4; ++k) out[param::kRotation + k] += (g_qhat[k] - qhat[k] * radial) / qnorm;

    // camera-space mean from the Jacobian and the projected center
    Vec3 g_t = Vec3::Zero();
    g_t.x() += g_j(0, 2) * (-fx / tz2) + sg.mean[0] * fx / t.z();
    g_t.y() += g_j(1, 2) * (-fy / tz2) + sg.mean[1] * fy / t.z();
    g_t.z() += g_j(0, 0) * (-fx / tz2) + g_j(0, 2) * (2.0 * fx * t.x() / tz3) + g_j(1, 1) * (-fy / tz2) +
               g_j(1, 2) * (2.0 * fy * t.y() / tz3) - sg.mean[0] * fx * t.x() / tz2 - sg.mean[1] * fy * t.y() / tz2;
    Vec3 g_mu = w.transpose() * g_t;

    // color via spherical harmonics at the view direction
    const Vec3 to_point = mu - view.center();
    const double len = to_point.norm();
    const Vec3 dir = to_point / len;
    const double d[3] = {dir.x(), dir.y(), dir.z()};
    double basis[16], dbasis[16][3];
    sh_basis(cfg.sh_degree, d, basis, dbasis);
    double g_color[3];
    for (int c = 0; c < 3; ++c) g_color[c] = sp.clamped[c] ? 0.0 : sg.color[c];
    Vec3 g_dir = Vec3::Zero();
    for (int k = 0; k < 16; ++k) {
        double weight = 0.0;
        for (int c = 0; c < 3; ++c) {
            out[param::kSh + 3 * k + c] += basis[k] * g_color[c];
            weight += g.sh[3 * k + c] * g_color[c];
        }
        g_dir += weight * Vec3(dbasis[k][0], dbasis[k][1], dbasis[k][2]);
    }
    g_mu += (g_dir - dir * dir.dot(g_dir)) / len;

    for (int k = 0; k < 3; ++k) out[param::kPosition + k] += g_mu[k];
    out[param::kOpacity] += sg.opacity_logit;
}

} // namespace

Gradients backward(std::span<const GaussianAttributes> gaussians, std::span<const std::uint32_t> subset,
                   const CameraView& view, const RenderConfig& cfg, const ImageD& loss_grad) {
    if (loss_grad.width != view.width || loss_grad.height != view.height) {
        throw ConfigError("loss gradient image does not match the view resolution");
    }
    const Raster<double> raster = rasterize<double>(gaussians, subset, view, cfg);
    const double cutoff_sq = cfg.sigma_cutoff * cfg.sigma_cutoff;
    std::vector<SplatGrad> grads(raster.splats.size());
    std::vector<Sample<double>> samples;

    for (std::uint32_t y = 0; y < view.height; ++y) {
        for (std::uint32_t x = 0; x < view.width; ++x) {
            const std::size_t pixel = std::size_t{y} * view.width + x;
            const double* g_pixel = &loss_grad.rgb[pixel * 3];
            if (g_pixel[0] == 0.0 && g_pixel[1] == 0.0 && g_pixel[2] == 0.0) continue;
            samples.clear();
            composite(raster, pixel, x, y, cutoff_sq, [&](const Sample<double>& s) { samples.push_back(s); });

            // Sweep back to front; `behind` is the color composited after the current splat.
            double behind[3] = {cfg.background[0], cfg.background[1], cfg.background[2]};
            for (auto it = samples.rbegin(); it != samples.rend(); ++it) {
                const auto& sp = raster.splats[it->splat];
                auto& sg = grads[it->splat];
                double g_alpha = 0.0;
                for (int c = 0; c < 3; ++c) {
                    sg.color[c] += g_pixel[c] * it->alpha * it->transmittance;
                    g_alpha += g_pixel[c] * it->transmittance * (sp.color[c] - behind[c]);
                    behind[c] = it->alpha * sp.color[c] + (1.0 - it->alpha) * behind[c];
                }
                sg.opacity_logit += g_alpha * it->alpha * (1.0 - sp.opacity);
                const double g_power = -0.5 * it->alpha * g_alpha;
                const double dx = it->dx, dy = it->dy;
                sg.mean[0] -= g_power * 2.0 * (sp.conic[0] * dx + sp.conic[1] * dy);
                sg.mean[1] -= g_power * 2.0 * (sp.conic[1] * dx + sp.conic[2] * dy);
                sg.conic[0] += g_power * dx * dx;
                sg.conic[1] += g_power * 2.0 * dx * dy;
                sg.conic[2] += g_power * dy * dy;
            }
        }
    }

    Gradients out(gaussians.size());
    for (std::size_t s = 0; s < raster.splats.size(); ++s) {
        const auto& sp = raster.splats[s];
        chain_to_parameters(gaussians[sp.index], view, cfg, sp, grads[s], out.per_gaussian[sp.index]);
    }
    return out;
}

} // namespace spof
