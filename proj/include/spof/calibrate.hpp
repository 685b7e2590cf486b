#pragma once

#include "spof/pipeline_sim.hpp"

#include <cstdint>

namespace spof {

struct CalibrationOptions {
    std::uint64_t seed = 1;
    int repeats = 3;
    double h2d_bandwidth = 2.0e9;
    double d2h_bandwidth = 2.0e9;
    double transfer_latency = 5.0e-6;
    double sched_overhead = 0.0;
};

/// Fits the compute coefficients of a CostModel from wall-clock timings of
/// the mini renderer, backward pass and Adam on synthetic workloads of
/// varying size. Bandwidths and latency are taken from the options.
CostModel calibrate_cost_model(const CalibrationOptions& options);

} // namespace spof
