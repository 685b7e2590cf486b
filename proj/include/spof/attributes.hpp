#pragma once

#include <array>
#include <cstddef>
#include <cstdint>

namespace spof {

/// Learnable state of one 3D Gaussian, stored unconstrained.
///
/// Activations are applied at render time: `exp(log_scale)` for the ellipsoid
/// semi-axes, `sigmoid(opacity_logit)` for opacity, and the rotation quaternion
/// (w, x, y, z) is renormalized before any geometric use. Spherical-harmonic
/// coefficients are stored coefficient-major: `sh[3 * k + channel]` for
/// basis function k in [0, 16).
struct GaussianAttributes {
    std::array<float, 3> position{};
    std::array<float, 3> log_scale{};
    std::array<float, 4> rotation{1.0f, 0.0f, 0.0f, 0.0f};
    std::array<float, 48> sh{};
    float opacity_logit = 0.0f;

    static constexpr std::size_t kParamCount = 59;

    float* data() noexcept { return position.data(); }
    const float* data() const noexcept { return position.data(); }
};

static_assert(sizeof(GaussianAttributes) == GaussianAttributes::kParamCount * sizeof(float),
              "GaussianAttributes must be a dense block of 59 floats");

/// The ten floats frustum culling needs; kept resident on the device.
struct SelectionCritical {
    std::array<float, 3> position{};
    std::array<float, 3> log_scale{};
    std::array<float, 4> rotation{1.0f, 0.0f, 0.0f, 0.0f};

    static SelectionCritical of(const GaussianAttributes& g) { return {g.position, g.log_scale, g.rotation}; }
    bool operator==(const SelectionCritical&) const = default;
};

// Offsets into the flat 59-float parameter vector.
namespace param {
inline constexpr std::size_t kPosition = 0;
inline constexpr std::size_t kLogScale = 3;
inline constexpr std::size_t kRotation = 6;
inline constexpr std::size_t kSh = 10;
inline constexpr std::size_t kOpacity = 58;
} // namespace param

/// Split between device-resident (selection-critical) and offloaded attributes,
/// with the padded per-Gaussian record sizes used on the host.
struct AttributeLayout {
    std::uint32_t selection_critical_floats = 10;
    std::uint32_t non_critical_floats = 49;
    std::uint32_t param_bytes_per_float = 4;
    std::uint32_t offload_record_bytes = 256;
    std::uint32_t grad_record_bytes = 256;

    std::uint32_t selection_critical_bytes() const noexcept {
        return selection_critical_floats * param_bytes_per_float;
    }

    static constexpr std::uint32_t kRecordAlignment = 64;

    // Throws ConfigError when the counts do not add to 59 or a record is
    // not a padded multiple of the alignment large enough to hold its floats.
    void validate() const;
};

/// Bytes for parameters, gradients and the two Adam moments of n Gaussians.
std::uint64_t model_state_bytes(std::uint64_t n) noexcept;

struct MemoryBreakdown {
    std::uint64_t resident_bytes = 0;
    std::uint64_t staged_bytes = 0;
    std::uint64_t total_bytes = 0;
};

/// Device footprint of the offloaded design: selection-critical attributes for
/// all n Gaussians plus `buffers` staging buffers sized for the largest view.
MemoryBreakdown estimate_gpu_memory(std::uint64_t n, const AttributeLayout& layout,
                                    std::uint64_t max_set, std::uint32_t buffers);

} // namespace spof
