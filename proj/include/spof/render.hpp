#pragma once

#include "spof/image.hpp"
#include "spof/scene.hpp"

#include <array>
#include <span>
#include <vector>

namespace spof {

struct RenderConfig {
    int sh_degree = 3;
    // Pixel contributions with Mahalanobis distance above this are dropped;
    // also the k of the in-renderer frustum test.
    double sigma_cutoff = 3.0;
    std::array<double, 3> background{0.0, 0.0, 0.0};
    // Evaluate every projected Gaussian at every pixel instead of binning by
    // its screen-space bounding box. Same result, slower.
    bool tile_free = false;

    void validate() const;
};

/// Diagonal regularizer added to the projected 2D covariance, pixels^2.
inline constexpr double kCov2dRegularizer = 0.3;

/// Real spherical-harmonic basis up to degree 3 at unit direction `dir`, with
/// the gradient of each basis function w.r.t. the direction components.
void sh_basis(int degree, const double dir[3], double basis[16], double dbasis[16][3]);

/// Renders `subset` (indices into `gaussians`). Gaussians are first tested
/// against the view frustum at `sigma_cutoff` and dropped when their center
/// is not beyond the near plane, then composited front to back by view depth
/// with ties broken by index.
template <typename T>
ImageT<T> render_as(std::span<const GaussianAttributes> gaussians, std::span<const std::uint32_t> subset,
                    const CameraView& view, const RenderConfig& cfg);

Image render(std::span<const GaussianAttributes> gaussians, std::span<const std::uint32_t> subset,
             const CameraView& view, const RenderConfig& cfg);
Image render(const Scene& scene, std::span<const std::uint32_t> subset, const CameraView& view,
             const RenderConfig& cfg);
/// All Gaussians of the scene.
Image render_all(const Scene& scene, const CameraView& view, const RenderConfig& cfg);

using GradRecord = std::array<double, GaussianAttributes::kParamCount>;

/// Per-Gaussian gradient records, parallel to the Gaussian array they came from.
struct Gradients {
    std::vector<GradRecord> per_gaussian;
    bool accumulated = false;

    explicit Gradients(std::size_t n = 0) : per_gaussian(n, GradRecord{}) {}
    void add(const Gradients& other);
};

bool is_zero(const GradRecord& g);

/// d(sum(loss_grad * render)) / d(params), evaluated in double precision.
/// Entries outside `subset` are exactly zero.
Gradients backward(std::span<const GaussianAttributes> gaussians, std::span<const std::uint32_t> subset,
                   const CameraView& view, const RenderConfig& cfg, const ImageD& loss_grad);

} // namespace spof
