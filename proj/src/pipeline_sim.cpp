#include "spof/pipeline_sim.hpp"

#include "binary_io.hpp"
#include "spof/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

namespace spof {

void CostModel::validate() const {
    const double coefficients[] = {transfer_latency, fwd_per_gaussian, fwd_per_pixel, fwd_fixed,
                                   bwd_per_gaussian, bwd_per_pixel, bwd_fixed, adam_per_param,
                                   adam_fixed, sched_overhead};
    for (double c : coefficients) {
        if (!(c >= 0.0) || !std::isfinite(c)) {
            throw ConfigError("cost model coefficients must be finite and non-negative");
        }
    }
    if (!(h2d_bandwidth > 0.0) || !(d2h_bandwidth > 0.0)) {
        throw ConfigError("cost model bandwidths must be positive");
    }
}

namespace {

using nlohmann::json;

#define SPOF_COST_FIELDS(X)                                                                                            \
    X(h2d_bandwidth) X(d2h_bandwidth) X(transfer_latency) X(fwd_per_gaussian) X(fwd_per_pixel) X(fwd_fixed)            \
        X(bwd_per_gaussian) X(bwd_per_pixel) X(bwd_fixed) X(adam_per_param) X(adam_fixed) X(sched_overhead)

} // namespace

CostModel cost_model_from_json_text(const std::string& text) {
    CostModel cm;
    try {
        const json j = json::parse(text);
        std::set<std::string> known;
#define SPOF_READ(name)                                                                                                \
    known.insert(#name);                                                                                               \
    if (j.contains(#name)) cm.name = j[#name].get<double>();
        SPOF_COST_FIELDS(SPOF_READ)
#undef SPOF_READ
        for (const auto& [key, _] : j.items()) {
            if (!known.contains(key)) {
                throw ConfigError("cost model: unknown key '" + key + "'");
            }
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("cost model: ") + e.what());
    }
    cm.validate();
    return cm;
}

std::string cost_model_to_json_text(const CostModel& cm) {
    json j;
#define SPOF_WRITE(name) j[#name] = cm.name;
    SPOF_COST_FIELDS(SPOF_WRITE)
#undef SPOF_WRITE
    return j.dump(2) + "\n";
}

CostModel load_cost_model(const std::filesystem::path& path) {
    return cost_model_from_json_text(detail::read_text_file(path));
}

void save_cost_model(const CostModel& cm, const std::filesystem::path& path) {
    detail::write_text_file(path, cost_model_to_json_text(cm));
}

std::string to_string(Resource r) {
    switch (r) {
    case Resource::Compute: return "compute";
    case Resource::Comm: return "comm";
    case Resource::HostAdam: return "host_adam";
    }
    return "compute";
}

std::string to_string(EventKind k) {
    switch (k) {
    case EventKind::Fwd: return "FWD";
    case EventKind::Bwd: return "BWD";
    case EventKind::Ld: return "LD";
    case EventKind::St: return "ST";
    case EventKind::Adam: return "ADAM";
    case EventKind::Sched: return "SCHED";
    }
    return "FWD";
}

std::string to_string(SimMode m) { return m == SimMode::Clm ? "clm" : "naive"; }

SimMode sim_mode_from_string(const std::string& name) {
    if (name == "clm") return SimMode::Clm;
    if (name == "naive") return SimMode::Naive;
    throw ConfigError("unknown mode '" + name + "' (expected clm or naive)");
}

double SimTrace::makespan() const {
    double end = 0.0;
    for (const auto& e : events) end = std::max(end, e.end);
    return end;
}

std::vector<SimEvent> SimTrace::on(Resource r) const {
    std::vector<SimEvent> out;
    for (const auto& e : events) {
        if (e.resource == r) out.push_back(e);
    }
    std::sort(out.begin(), out.end(), [](const SimEvent& a, const SimEvent& b) { return a.start < b.start; });
    return out;
}

namespace {

// Per-resource FIFO clocks. Every event starts at the later of its resource
// becoming free and its dependencies completing.
class Timeline {
public:
    double issue(Resource r, EventKind kind, std::uint32_t microbatch, double ready, double duration) {
        double& free = free_[static_cast<int>(r)];
        const double start = std::max(free, ready);
        const double end = start + duration;
        free = end;
        trace_.events.push_back({r, kind, microbatch, start, end});
        return end;
    }
    SimTrace take() { return std::move(trace_); }

private:
    double free_[3] = {0.0, 0.0, 0.0};
    SimTrace trace_;
};

void check_inputs(std::span<const TransferPlan> plans, const FinalizationSchedule& schedule) {
    if (schedule.microbatches() != plans.size()) {
        throw ConfigError("simulation: schedule and plans disagree on the batch size");
    }
    for (std::size_t i = 0; i < plans.size(); ++i) {
        if (plans[i].microbatch != i + 1) {
            throw ConfigError("simulation: plans must be numbered 1..B in execution order");
        }
        if (plans[i].adam_set != schedule.finalized[i + 1]) {
            throw ConfigError("simulation: plan " + std::to_string(i + 1) + " disagrees with the finalization schedule");
        }
        if (!plans[i].adam_set.empty() &&
            sorted::intersection_size(plans[i].adam_set, plans[i].grad_store_set) != plans[i].adam_set.size()) {
            throw ConfigError("simulation: Adam for microbatch " + std::to_string(i + 1) +
                              " would wait on a gradient that is never stored");
        }
    }
}

} // namespace

SimTrace simulate(std::span<const TransferPlan> plans, const FinalizationSchedule& schedule, const CostModel& cm,
                  SimMode mode, const SimOptions& options) {
    cm.validate();
    options.layout.validate();
    check_inputs(plans, schedule);

    const std::uint64_t pixels = options.pixels_per_image;
    const std::uint64_t ld_record = options.layout.offload_record_bytes;
    const std::uint64_t st_record = options.layout.grad_record_bytes;
    const std::size_t batch = plans.size();

    Timeline tl;
    const double sched_end = tl.issue(Resource::Compute, EventKind::Sched, 0, 0.0, cm.sched_overhead);

    if (mode == SimMode::Naive) {
        const std::uint64_t n = schedule.last_touch.size();
        double ready = sched_end;
        for (std::size_t i = 0; i < batch; ++i) {
            const auto mb = static_cast<std::uint32_t>(i + 1);
            const std::uint64_t working = plans[i].working_set_size();
            ready = tl.issue(Resource::Comm, EventKind::Ld, mb, ready, cm.h2d(n * ld_record));
            ready = tl.issue(Resource::Compute, EventKind::Fwd, mb, ready, cm.fwd(working, pixels));
            ready = tl.issue(Resource::Compute, EventKind::Bwd, mb, ready, cm.bwd(working, pixels));
            ready = tl.issue(Resource::Comm, EventKind::St, mb, ready, cm.d2h(n * st_record));
        }
        std::uint64_t touched = 0;
        for (std::size_t i = 1; i < schedule.finalized.size(); ++i) touched += schedule.finalized[i].size();
        if (touched > 0) {
            tl.issue(Resource::HostAdam, EventKind::Adam, 0, ready, cm.adam(touched));
        }
        return tl.take();
    }

    std::vector<double> ld_end(batch + 1, 0.0), bwd_end(batch + 1, sched_end), st_end(batch + 1, 0.0);
    const auto load = [&](std::size_t i) {
        ld_end[i] = tl.issue(Resource::Comm, EventKind::Ld, static_cast<std::uint32_t>(i), sched_end,
                             cm.h2d(plans[i - 1].load_set.size() * ld_record));
    };
    const auto store_and_update = [&](std::size_t i) {
        st_end[i] = tl.issue(Resource::Comm, EventKind::St, static_cast<std::uint32_t>(i), bwd_end[i],
                             cm.d2h(plans[i - 1].grad_store_set.size() * st_record));
        // Host Adam polls the completion signal written after ST_i.
        if (!plans[i - 1].adam_set.empty()) {
            tl.issue(Resource::HostAdam, EventKind::Adam, static_cast<std::uint32_t>(i), st_end[i],
                     cm.adam(plans[i - 1].adam_set.size()));
        }
    };
    const auto compute = [&](std::size_t i) {
        const std::uint64_t working = plans[i - 1].working_set_size();
        const double fwd_end = tl.issue(Resource::Compute, EventKind::Fwd, static_cast<std::uint32_t>(i),
                                        std::max(ld_end[i], bwd_end[i - 1]), cm.fwd(working, pixels));
        bwd_end[i] = tl.issue(Resource::Compute, EventKind::Bwd, static_cast<std::uint32_t>(i), fwd_end,
                              cm.bwd(working, pixels));
    };

    // Comm stream order: LD_1, LD_2, ST_1, LD_3, ST_2, ..., LD_B, ST_{B-1}, ST_B.
    for (std::size_t i = 1; i <= batch; ++i) {
        load(i);
        if (i >= 2) {
            store_and_update(i - 1);
        }
        compute(i);
    }
    if (batch > 0) {
        store_and_update(batch);
    }
    return tl.take();
}

namespace {

using Interval = std::pair<double, double>;

std::vector<Interval> busy_intervals(const SimTrace& trace, Resource r) {
    std::vector<Interval> spans;
    for (const auto& e : trace.events) {
        if (e.resource == r && e.end > e.start) spans.emplace_back(e.start, e.end);
    }
    std::sort(spans.begin(), spans.end());
    std::vector<Interval> merged;
    for (const auto& s : spans) {
        if (!merged.empty() && s.first <= merged.back().second) {
            merged.back().second = std::max(merged.back().second, s.second);
        } else {
            merged.push_back(s);
        }
    }
    return merged;
}

double measure(const std::vector<Interval>& spans) {
    double total = 0.0;
    for (const auto& s : spans) total += s.second - s.first;
    return total;
}

double intersection_measure(const std::vector<Interval>& a, const std::vector<Interval>& b) {
    double total = 0.0;
    std::size_t i = 0, j = 0;
    while (i < a.size() && j < b.size()) {
        const double lo = std::max(a[i].first, b[j].first);
        const double hi = std::min(a[i].second, b[j].second);
        if (hi > lo) total += hi - lo;
        if (a[i].second < b[j].second) ++i; else ++j;
    }
    return total;
}

double overlap_fraction(const std::vector<Interval>& a, const std::vector<Interval>& b) {
    const double both = intersection_measure(a, b);
    const double either = measure(a) + measure(b) - both;
    return either > 0.0 ? both / either : 0.0;
}

// Compute busy time in [0, t) when the trace repeats back to back with period `period`.
double periodic_busy_before(const std::vector<Interval>& busy, double period, double per_period, double t) {
    const double cycles = std::floor(t / period);
    const double tau = t - cycles * period;
    double total = cycles * per_period;
    for (const auto& s : busy) {
        if (s.first >= tau) break;
        total += std::min(tau, s.second) - s.first;
    }
    return total;
}

} // namespace

double busy_time(const SimTrace& trace, Resource r) {
    double total = 0.0;
    for (const auto& e : trace.events) {
        if (e.resource == r) total += e.duration();
    }
    return total;
}

SimMetrics metrics(const SimTrace& trace, double window, std::uint64_t images, double duration) {
    if (!(window > 0.0)) {
        throw ConfigError("metrics window must be positive");
    }
    if (!(duration >= 0.0)) {
        throw ConfigError("metrics duration must be non-negative");
    }
    if (trace.events.empty()) {
        throw ConfigError("metrics need a non-empty trace");
    }
    SimMetrics out;
    out.makespan = trace.makespan();
    if (images == 0) {
        for (const auto& e : trace.events) {
            if (e.kind == EventKind::Fwd) ++images;
        }
    }
    out.throughput = out.makespan > 0.0 ? static_cast<double>(images) / out.makespan : 0.0;

    const auto compute = busy_intervals(trace, Resource::Compute);
    const auto comm = busy_intervals(trace, Resource::Comm);
    const auto adam = busy_intervals(trace, Resource::HostAdam);

    // Window k covers [k*window, (k+1)*window); a last partial window narrower
    // than rounding noise is not counted.
    const double horizon = duration > 0.0 ? duration : out.makespan;
    const double period = out.makespan;
    const double per_period = measure(compute);
    const auto windows = static_cast<std::size_t>(std::ceil(horizon / window * (1.0 - 1e-9)));
    if (period > 0.0) {
        double busy_lo = 0.0;
        for (std::size_t w = 0; w < windows; ++w) {
            const double lo = static_cast<double>(w) * window;
            const double hi = std::min(lo + window, horizon);
            if (hi <= lo) break;
            const double busy_hi = periodic_busy_before(compute, period, per_period, hi);
            out.idle_fractions.push_back(std::clamp(1.0 - (busy_hi - busy_lo) / (hi - lo), 0.0, 1.0));
            busy_lo = busy_hi;
        }
    }
    std::sort(out.idle_fractions.begin(), out.idle_fractions.end());

    out.compute_comm_overlap = overlap_fraction(compute, comm);
    out.compute_adam_overlap = overlap_fraction(compute, adam);
    out.comm_adam_overlap = overlap_fraction(comm, adam);
    return out;
}

double SimMetrics::idle_cdf(double x) const {
    if (idle_fractions.empty()) return 1.0;
    const auto it = std::upper_bound(idle_fractions.begin(), idle_fractions.end(), x);
    return static_cast<double>(it - idle_fractions.begin()) / static_cast<double>(idle_fractions.size());
}

bool idle_cdf_dominates(const SimMetrics& a, const SimMetrics& b) {
    std::vector<double> points = a.idle_fractions;
    points.insert(points.end(), b.idle_fractions.begin(), b.idle_fractions.end());
    for (double x : points) {
        if (a.idle_cdf(x) + 1e-12 < b.idle_cdf(x)) return false;
    }
    return true;
}

double adam_trailing_time(const SimTrace& trace) {
    double last_adam = -1.0, last_st = -1.0;
    for (const auto& e : trace.events) {
        if (e.kind == EventKind::Adam) last_adam = std::max(last_adam, e.end);
        if (e.kind == EventKind::St) last_st = std::max(last_st, e.end);
    }
    if (last_adam < 0.0 || last_st < 0.0) return 0.0;
    return std::max(0.0, last_adam - last_st);
}

void write_trace_tsv(const SimTrace& trace, const std::filesystem::path& path) {
    std::ostringstream out;
    out << "resource\tkind\tmicrobatch\tstart\tend\n" << std::setprecision(17);
    for (const auto& e : trace.events) {
        out << to_string(e.resource) << '\t' << to_string(e.kind) << '\t' << e.microbatch << '\t' << e.start
            << '\t' << e.end << '\n';
    }
    detail::write_text_file(path, out.str());
}

SimTrace read_trace_tsv(const std::filesystem::path& path) {
    std::istringstream in(detail::read_text_file(path));
    std::string line;
    std::getline(in, line);
    if (line != "resource\tkind\tmicrobatch\tstart\tend") {
        throw IoError("trace '" + path.string() + "' has an unexpected header");
    }
    SimTrace trace;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string resource, kind;
        SimEvent e;
        if (!(row >> resource >> kind >> e.microbatch >> e.start >> e.end)) {
            throw IoError("trace '" + path.string() + "': malformed row '" + line + "'");
        }
        bool ok = false;
        for (Resource r : {Resource::Compute, Resource::Comm, Resource::HostAdam}) {
            if (to_string(r) == resource) { e.resource = r; ok = true; }
        }
        bool kind_ok = false;
        for (EventKind k : {EventKind::Fwd, EventKind::Bwd, EventKind::Ld, EventKind::St, EventKind::Adam,
                            EventKind::Sched}) {
            if (to_string(k) == kind) { e.kind = k; kind_ok = true; }
        }
        if (!ok || !kind_ok) {
            throw IoError("trace '" + path.string() + "': unknown resource or kind in '" + line + "'");
        }
        trace.events.push_back(e);
    }
    return trace;
}

} // namespace spof
