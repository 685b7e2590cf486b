#pragma once

#include "spof/attributes.hpp"
#include "spof/schedule.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace spof {

/// Data movement around microbatch i (1-based) of a batch.
///
/// Parameters enter through `load_set` (host to device) or `cache_copy_set`
/// (device to device from microbatch i-1). After the backward pass, gradients
/// in `grad_store_set` leave for the host accumulator while `grad_carry_set`
/// stays on device and is added into microbatch i+1's gradient buffer.
/// `adam_set` is the finalization set F_i.
struct TransferPlan {
    std::uint32_t microbatch = 0;
    std::uint64_t view_id = 0;
    sorted::IndexVec load_set;       // S_i \ S_{i-1}
    sorted::IndexVec cache_copy_set; // S_i & S_{i-1}
    sorted::IndexVec grad_store_set; // S_i \ S_{i+1}
    sorted::IndexVec grad_carry_set; // S_i & S_{i+1}
    sorted::IndexVec adam_set;       // F_i

    std::size_t working_set_size() const noexcept { return load_set.size() + cache_copy_set.size(); }
};

/// Rejects a schedule that does not match the ordered sets.
std::vector<TransferPlan> plan_batch(std::span<const SparsitySet> ordered_sets,
                                     const FinalizationSchedule& schedule);

/// Checks every structural invariant of a plan sequence against its sets.
void validate_plans(std::span<const TransferPlan> plans, std::span<const SparsitySet> ordered_sets);

/// Number of cache copies whose source parameters were already updated by
/// the optimizer (a Gaussian reused after its finalization microbatch).
std::uint64_t stale_cache_copies(std::span<const TransferPlan> plans, const FinalizationSchedule& schedule);

struct StepVolume {
    std::uint64_t host_to_device_bytes = 0;
    std::uint64_t device_to_host_bytes = 0;
    std::uint64_t device_copy_bytes = 0;
    std::uint64_t writeback_bytes = 0;

    bool operator==(const StepVolume&) const = default;
};

struct VolumeReport {
    std::uint64_t host_to_device_bytes = 0;
    std::uint64_t device_to_host_bytes = 0;
    // Cached parameter copies plus carried gradient records.
    std::uint64_t device_copy_bytes = 0;
    // Refresh of device-resident selection-critical attributes after host Adam.
    std::uint64_t writeback_bytes = 0;
    // Host-to-device bytes avoided by cache copies.
    std::uint64_t cache_saved_bytes = 0;
    std::vector<StepVolume> steps;

    std::uint64_t total_bytes() const noexcept {
        return host_to_device_bytes + device_to_host_bytes + writeback_bytes;
    }
    bool operator==(const VolumeReport&) const = default;
};

VolumeReport volume(std::span<const TransferPlan> plans, const AttributeLayout& layout);

/// Every image loads and stores all n Gaussians.
VolumeReport naive_offload_volume(std::uint64_t n, std::uint64_t batch, const AttributeLayout& layout);

/// Caching disabled: every microbatch loads its whole working set.
VolumeReport no_cache_volume(std::span<const SparsitySet> ordered_sets, const AttributeLayout& layout);

} // namespace spof
