#include "spof/transfer_plan.hpp"

#include "spof/errors.hpp"

namespace spof {

namespace {

void check_schedule(std::span<const SparsitySet> ordered_sets, const FinalizationSchedule& schedule) {
    const std::uint64_t n = schedule.last_touch.size();
    if (schedule.finalized.size() != ordered_sets.size() + 1) {
        throw ConfigError("finalization schedule has " + std::to_string(schedule.microbatches()) +
                          " microbatches, batch has " + std::to_string(ordered_sets.size()));
    }
    const FinalizationSchedule expected = finalization_schedule(ordered_sets, n);
    if (expected.last_touch != schedule.last_touch || expected.finalized != schedule.finalized) {
        throw ConfigError("finalization schedule is inconsistent with the ordered sparsity sets");
    }
}

} // namespace

std::vector<TransferPlan> plan_batch(std::span<const SparsitySet> ordered_sets, const FinalizationSchedule& schedule) {
    check_schedule(ordered_sets, schedule);
    const sorted::IndexVec empty;
    std::vector<TransferPlan> plans;
    plans.reserve(ordered_sets.size());
    for (std::size_t i = 0; i < ordered_sets.size(); ++i) {
        const auto& here = ordered_sets[i].indices;
        const auto& prev = i > 0 ? ordered_sets[i - 1].indices : empty;
        const auto& next = i + 1 < ordered_sets.size() ? ordered_sets[i + 1].indices : empty;
        TransferPlan p;
        p.microbatch = static_cast<std::uint32_t>(i + 1);
        p.view_id = ordered_sets[i].view_id;
        p.load_set = sorted::set_difference(here, prev);
        p.cache_copy_set = sorted::set_intersection(here, prev);
        p.grad_store_set = sorted::set_difference(here, next);
        p.grad_carry_set = sorted::set_intersection(here, next);
        p.adam_set = schedule.finalized[i + 1];
        plans.push_back(std::move(p));
    }
    return plans;
}

void validate_plans(std::span<const TransferPlan> plans, std::span<const SparsitySet> ordered_sets) {
    if (plans.size() != ordered_sets.size()) {
        throw ConfigError("plan count does not match the batch size");
    }
    const sorted::IndexVec empty;
    for (std::size_t i = 0; i < plans.size(); ++i) {
        const auto& p = plans[i];
        const auto& here = ordered_sets[i].indices;
        const auto& next = i + 1 < plans.size() ? ordered_sets[i + 1].indices : empty;
        if (p.microbatch != i + 1) {
            throw ConfigError("plans must be numbered 1..B in order");
        }
        if (sorted::intersection_size(p.load_set, p.cache_copy_set) != 0 ||
            sorted::set_union(p.load_set, p.cache_copy_set) != here) {
            throw ConfigError("microbatch " + std::to_string(p.microbatch) +
                              ": load and cache-copy sets must partition the working set");
        }
        if (sorted::intersection_size(p.grad_store_set, p.grad_carry_set) != 0 ||
            sorted::set_union(p.grad_store_set, p.grad_carry_set) != here) {
            throw ConfigError("microbatch " + std::to_string(p.microbatch) +
                              ": store and carry sets must partition the working set");
        }
        if (p.grad_carry_set != sorted::set_intersection(here, next)) {
            throw ConfigError("microbatch " + std::to_string(p.microbatch) + ": carry set must be S_i & S_{i+1}");
        }
        if (i == 0 && !p.cache_copy_set.empty()) {
            throw ConfigError("first microbatch cannot copy from a cache");
        }
        if (sorted::intersection_size(p.adam_set, p.grad_store_set) != p.adam_set.size()) {
            throw ConfigError("microbatch " + std::to_string(p.microbatch) +
                              ": finalized Gaussians must have their gradients stored");
        }
    }
    if (!plans.empty() && !plans.back().grad_carry_set.empty()) {
        throw ConfigError("last microbatch must store every residual gradient");
    }
}

std::uint64_t stale_cache_copies(std::span<const TransferPlan> plans, const FinalizationSchedule& schedule) {
    std::uint64_t stale = 0;
    for (const auto& p : plans) {
        for (auto g : p.cache_copy_set) {
            if (schedule.last_touch[g] < p.microbatch) {
                ++stale;
            }
        }
    }
    return stale;
}

VolumeReport volume(std::span<const TransferPlan> plans, const AttributeLayout& layout) {
    layout.validate();
    VolumeReport report;
    for (const auto& p : plans) {
        StepVolume s;
        s.host_to_device_bytes = p.load_set.size() * std::uint64_t{layout.offload_record_bytes};
        s.device_to_host_bytes = p.grad_store_set.size() * std::uint64_t{layout.grad_record_bytes};
        s.device_copy_bytes = p.cache_copy_set.size() * std::uint64_t{layout.offload_record_bytes} +
                              p.grad_carry_set.size() * std::uint64_t{layout.grad_record_bytes};
        // Every F_i member with i >= 1 was touched this batch.
        s.writeback_bytes = p.adam_set.size() * std::uint64_t{layout.selection_critical_bytes()};
        report.host_to_device_bytes += s.host_to_device_bytes;
        report.device_to_host_bytes += s.device_to_host_bytes;
        report.device_copy_bytes += s.device_copy_bytes;
        report.writeback_bytes += s.writeback_bytes;
        report.cache_saved_bytes += p.cache_copy_set.size() * std::uint64_t{layout.offload_record_bytes};
        report.steps.push_back(s);
    }
    return report;
}

VolumeReport naive_offload_volume(std::uint64_t n, std::uint64_t batch, const AttributeLayout& layout) {
    layout.validate();
    VolumeReport report;
    for (std::uint64_t i = 0; i < batch; ++i) {
        StepVolume s;
        s.host_to_device_bytes = n * layout.offload_record_bytes;
        s.device_to_host_bytes = n * layout.grad_record_bytes;
        report.host_to_device_bytes += s.host_to_device_bytes;
        report.device_to_host_bytes += s.device_to_host_bytes;
        report.steps.push_back(s);
    }
    return report;
}

VolumeReport no_cache_volume(std::span<const SparsitySet> ordered_sets, const AttributeLayout& layout) {
    layout.validate();
    VolumeReport report;
    for (const auto& set : ordered_sets) {
        StepVolume s;
        s.host_to_device_bytes = set.size() * std::uint64_t{layout.offload_record_bytes};
        s.device_to_host_bytes = set.size() * std::uint64_t{layout.grad_record_bytes};
        report.host_to_device_bytes += s.host_to_device_bytes;
        report.device_to_host_bytes += s.device_to_host_bytes;
        report.steps.push_back(s);
    }
    return report;
}

} // namespace spof
