#include "spof/attributes.hpp"

#include "spof/errors.hpp"

#include <string>

namespace spof {

void AttributeLayout::validate() const {
    if (selection_critical_floats + non_critical_floats != GaussianAttributes::kParamCount) {
        throw ConfigError("attribute layout must split exactly 59 floats, got " +
                          std::to_string(selection_critical_floats) + " + " + std::to_string(non_critical_floats));
    }
    if (param_bytes_per_float == 0) {
        throw ConfigError("param_bytes_per_float must be positive");
    }
    const auto check_record = [&](std::uint32_t bytes, std::uint32_t floats, const char* what) {
        if (bytes % kRecordAlignment != 0) {
            throw ConfigError(std::string(what) + " must be a multiple of 64 bytes");
        }
        if (bytes < floats * param_bytes_per_float) {
            throw ConfigError(std::string(what) + " is too small for its floats");
        }
    };
    check_record(offload_record_bytes, non_critical_floats, "offload_record_bytes");
    check_record(grad_record_bytes, GaussianAttributes::kParamCount, "grad_record_bytes");
}

std::uint64_t model_state_bytes(std::uint64_t n) noexcept {
    // parameters, gradients, Adam first and second moments; all f32
    return n * GaussianAttributes::kParamCount * 4 * 4;
}

MemoryBreakdown estimate_gpu_memory(std::uint64_t n, const AttributeLayout& layout, std::uint64_t max_set,
                                    std::uint32_t buffers) {
    layout.validate();
    if (max_set > n) {
        throw ConfigError("max_set exceeds the Gaussian count");
    }
    if (buffers != 1 && buffers != 2) {
        throw ConfigError("buffers must be 1 or 2");
    }
    MemoryBreakdown out;
    out.resident_bytes = n * layout.selection_critical_bytes();
    out.staged_bytes = std::uint64_t{buffers} * max_set * (layout.offload_record_bytes + layout.grad_record_bytes);
    out.total_bytes = out.resident_bytes + out.staged_bytes;
    return out;
}

} // namespace spof
