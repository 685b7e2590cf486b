#pragma once

#include "spof/attributes.hpp"
#include "spof/transfer_plan.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace spof {

/// Affine cost model for one batch. Durations in seconds, bandwidth in bytes/s.
struct CostModel {
    double h2d_bandwidth = 1.0e9;
    double d2h_bandwidth = 1.0e9;
    double transfer_latency = 0.0;
    double fwd_per_gaussian = 0.0;
    double fwd_per_pixel = 0.0;
    double fwd_fixed = 0.0;
    double bwd_per_gaussian = 0.0;
    double bwd_per_pixel = 0.0;
    double bwd_fixed = 0.0;
    double adam_per_param = 0.0; // multiplied by finalized count * 59
    double adam_fixed = 0.0;
    double sched_overhead = 0.0;

    void validate() const;

    double fwd(std::uint64_t gaussians, std::uint64_t pixels) const {
        return fwd_per_gaussian * static_cast<double>(gaussians) + fwd_per_pixel * static_cast<double>(pixels) + fwd_fixed;
    }
    double bwd(std::uint64_t gaussians, std::uint64_t pixels) const {
        return bwd_per_gaussian * static_cast<double>(gaussians) + bwd_per_pixel * static_cast<double>(pixels) + bwd_fixed;
    }
    double adam(std::uint64_t finalized) const {
        return adam_per_param * static_cast<double>(finalized) * GaussianAttributes::kParamCount + adam_fixed;
    }
    double h2d(std::uint64_t bytes) const { return static_cast<double>(bytes) / h2d_bandwidth + transfer_latency; }
    double d2h(std::uint64_t bytes) const { return static_cast<double>(bytes) / d2h_bandwidth + transfer_latency; }
};

CostModel load_cost_model(const std::filesystem::path& path);
void save_cost_model(const CostModel& cm, const std::filesystem::path& path);
CostModel cost_model_from_json_text(const std::string& text);
std::string cost_model_to_json_text(const CostModel& cm);

enum class Resource { Compute, Comm, HostAdam };
enum class EventKind { Fwd, Bwd, Ld, St, Adam, Sched };
enum class SimMode { Clm, Naive };

std::string to_string(Resource r);
std::string to_string(EventKind k);
std::string to_string(SimMode m);
SimMode sim_mode_from_string(const std::string& name);

struct SimEvent {
    Resource resource = Resource::Compute;
    EventKind kind = EventKind::Fwd;
    std::uint32_t microbatch = 0; // 0 for batch-level events
    double start = 0.0;
    double end = 0.0;

    double duration() const { return end - start; }
    bool operator==(const SimEvent&) const = default;
};

struct SimTrace {
    std::vector<SimEvent> events; // in issue order

    double makespan() const;
    std::vector<SimEvent> on(Resource r) const;
    bool operator==(const SimTrace&) const = default;
};

struct SimOptions {
    std::uint64_t pixels_per_image = 0;
    AttributeLayout layout{};
};

/// Event-driven schedule of one batch on three resources.
///
/// CLM mode: the comm stream runs LD_1, LD_2, ST_1, LD_3, ST_2, ..., LD_B,
/// ST_{B-1}, ST_B in that order; FWD_i waits for LD_i and BWD_{i-1}; ST_i
/// waits for BWD_i; the host Adam chunk for F_i waits for ST_i and runs in
/// F-index order. Naive mode serializes LD(all) -> FWD -> BWD -> ST(all) per
/// image and one Adam pass over every touched Gaussian at the end.
SimTrace simulate(std::span<const TransferPlan> plans, const FinalizationSchedule& schedule,
                  const CostModel& cm, SimMode mode, const SimOptions& options);

struct SimMetrics {
    double makespan = 0.0;
    double throughput = 0.0; // images per second
    std::vector<double> idle_fractions; // compute idle fraction per window, sorted
    double compute_comm_overlap = 0.0;
    double compute_adam_overlap = 0.0;
    double comm_adam_overlap = 0.0;

    /// Fraction of windows whose idle fraction is <= x.
    double idle_cdf(double x) const;
};

/// Compute idle fraction per fixed window. With `duration` > 0 the batch is
/// repeated back to back and sampled over [0, duration), so runs of different
/// makespan can be profiled for the same wall time.
SimMetrics metrics(const SimTrace& trace, double window, std::uint64_t images = 0, double duration = 0.0);

/// True when `a`'s idle CDF is >= `b`'s at every breakpoint of either.
bool idle_cdf_dominates(const SimMetrics& a, const SimMetrics& b);

/// max(0, last ADAM end - last ST end).
double adam_trailing_time(const SimTrace& trace);

/// Sum of event durations on one resource.
double busy_time(const SimTrace& trace, Resource r);

void write_trace_tsv(const SimTrace& trace, const std::filesystem::path& path);
SimTrace read_trace_tsv(const std::filesystem::path& path);

} // namespace spof
