#pragma once

#include "spof/attributes.hpp"
#include "spof/render.hpp"
#include "spof/transfer_plan.hpp"

#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace spof {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-15;
};

/// Moments per parameter and a step count shared by all Gaussians.
struct AdamState {
    AdamConfig config{};
    std::vector<GradRecord> m;
    std::vector<GradRecord> v;
    std::uint64_t step = 0;

    AdamState() = default;
    AdamState(std::size_t n, AdamConfig cfg) : config(cfg), m(n, GradRecord{}), v(n, GradRecord{}) {}
};

/// One Adam step for Gaussian `g` with its fully accumulated gradient, using
/// the state's current step count.
void adam_update(GaussianAttributes& params, AdamState& state, std::size_t g, const GradRecord& grad);

void save_adam_state(const AdamState& state, const std::filesystem::path& path);
AdamState load_adam_state(const std::filesystem::path& path);

enum class UntouchedPolicy {
    Skip,  // zero accumulated gradient: no update at all
    Decay, // moments decay and the parameter moves even with a zero gradient
};

enum class AdamTiming {
    Early,      // F_i updated right after microbatch i
    EndOfBatch, // all F-sets updated after the last microbatch, in F order
};

/// Byte-capacity arena with a high-water mark.
class Arena {
public:
    explicit Arena(std::string name = "arena",
                   std::uint64_t capacity = std::numeric_limits<std::uint64_t>::max())
        : name_(std::move(name)), capacity_(capacity) {}

    void allocate(std::uint64_t bytes);
    void release(std::uint64_t bytes);

    const std::string& name() const noexcept { return name_; }
    std::uint64_t capacity() const noexcept { return capacity_; }
    std::uint64_t in_use() const noexcept { return in_use_; }
    std::uint64_t high_water() const noexcept { return high_water_; }

private:
    std::string name_;
    std::uint64_t capacity_;
    std::uint64_t in_use_ = 0;
    std::uint64_t high_water_ = 0;
};

struct ArenaCounters {
    Arena host{"host"};
    Arena device{"device"};
    std::uint64_t host_to_device_bytes = 0;
    std::uint64_t device_to_host_bytes = 0;
    std::uint64_t device_copy_bytes = 0;
    std::uint64_t writeback_bytes = 0;
    std::uint64_t cache_saved_bytes = 0;
    // One-off upload of the resident attributes, outside per-batch plans.
    std::uint64_t resident_upload_bytes = 0;
    // Writeback of untouched Gaussians under UntouchedPolicy::Decay.
    std::uint64_t untouched_writeback_bytes = 0;

    bool matches(const VolumeReport& report) const;
    void reset_transfer_counters();
};

struct TrainOptions {
    double cull_k = 3.0;
    AttributeLayout layout{};
    AdamTiming adam_timing = AdamTiming::Early;
    UntouchedPolicy untouched = UntouchedPolicy::Skip;
};

/// Per-view training sample.
struct TrainView {
    CameraView view;
    Image target;
};

/// Mean squared error over pixels and channels, and its gradient w.r.t. `rendered`.
double mse_loss(const Image& rendered, const Image& target, ImageD* grad);

struct BatchReport {
    double loss = 0.0;
    std::vector<std::uint32_t> order;
    VolumeReport planned;
    std::uint64_t peak_device_bytes = 0;
};

/// Device-side state that persists across batches: the resident
/// selection-critical attributes of every Gaussian and the two arenas.
class OffloadSession {
public:
    OffloadSession(const Scene& scene, std::uint64_t device_capacity = std::numeric_limits<std::uint64_t>::max(),
                   const AttributeLayout& layout = {});

    const std::vector<SelectionCritical>& resident() const noexcept { return resident_; }
    ArenaCounters& arenas() noexcept { return arenas_; }
    const ArenaCounters& arenas() const noexcept { return arenas_; }

    /// Pipelined, offloaded batch executed sequentially: cull on resident
    /// attributes, stage per the transfer plan, render, backward, accumulate
    /// on the host, and run Adam per finalization set.
    BatchReport train_batch(Scene& scene, std::span<const TrainView> batch, std::span<const std::uint32_t> order,
                            const RenderConfig& cfg, AdamState& adam, const TrainOptions& options);

private:
    std::vector<SelectionCritical> resident_;
    ArenaCounters arenas_;
};

/// Whole batch against host parameters, no offloading; accumulates every
/// view's gradient in the given order and applies Adam once.
double train_reference(Scene& scene, std::span<const TrainView> batch, const RenderConfig& cfg, AdamState& adam,
                       UntouchedPolicy untouched = UntouchedPolicy::Skip);

/// Relative parameter distance ||a - b|| / ||b|| over all 59 floats of all Gaussians.
double relative_parameter_distance(const Scene& a, const Scene& b);

} // namespace spof
