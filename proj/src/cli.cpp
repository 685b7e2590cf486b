#include "spof/cli.hpp"

#include "binary_io.hpp"
#include "spof/calibrate.hpp"
#include "spof/culling.hpp"
#include "spof/errors.hpp"
#include "spof/pipeline_sim.hpp"
#include "spof/render.hpp"
#include "spof/scene.hpp"
#include "spof/schedule.hpp"
#include "spof/trainer.hpp"
#include "spof/transfer_plan.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <memory>
#include <optional>
#include <random>
#include <sstream>

namespace spof {
namespace {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

struct Common {
    std::uint64_t seed = 1;
    std::string out;
};

struct BatchArgs {
    std::string scene;
    double k = kDefaultSigmaCutoff;
    std::uint32_t batch = 0; // 0 = every view
    std::uint32_t first_view = 0;
    std::string strategy = "tsp";
    double budget_ms = 1.0;
    std::uint64_t budget_moves = 0; // overrides the wall-clock budget when > 0
};

void prepare_out(const std::string& out) {
    if (out.empty()) {
        throw ConfigError("--out is required");
    }
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec || !fs::is_directory(out)) {
        throw IoError("cannot create output directory '" + out + "'");
    }
}

void write_json(const fs::path& path, const Json& j) { detail::write_text_file(path, j.dump(2) + "\n"); }

Json read_json(const fs::path& path) {
    try {
        return Json::parse(detail::read_text_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("'" + path.string() + "': " + e.what());
    }
}

void write_manifest(const std::string& out, const std::string& command, const Json& config, std::uint64_t seed) {
    Json m;
    m["command"] = command;
    m["seed"] = seed;
    m["config"] = config;
    write_json(fs::path(out) / "manifest.json", m);
}

Json batch_config(const BatchArgs& b) {
    return Json{{"scene", b.scene},           {"k", b.k},
                {"batch", b.batch},           {"first_view", b.first_view},
                {"strategy", b.strategy},     {"budget_ms", b.budget_ms},
                {"budget_moves", b.budget_moves}};
}

void add_batch_options(CLI::App* cmd, BatchArgs& b) {
    cmd->add_option("--scene", b.scene, "scene descriptor (.json)")->required();
    cmd->add_option("--k", b.k, "culling cutoff in standard deviations")->capture_default_str();
    cmd->add_option("--batch", b.batch, "views per batch (0 = all)")->capture_default_str();
    cmd->add_option("--first-view", b.first_view, "index of the first batch view")->capture_default_str();
    cmd->add_option("--budget-ms", b.budget_ms, "wall-clock budget of the TSP local search")->capture_default_str();
    cmd->add_option("--budget-moves", b.budget_moves, "move-evaluation budget; replaces --budget-ms when set");
}

SearchBudget budget_of(const BatchArgs& b) {
    if (b.budget_moves > 0) return SearchBudget::moves(b.budget_moves);
    if (!(b.budget_ms >= 0.0)) throw ConfigError("--budget-ms must be non-negative");
    return SearchBudget::wall_clock(
        std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::duration<double, std::milli>(b.budget_ms)));
}

std::vector<CameraView> batch_views(const Scene& scene, const BatchArgs& b, std::uint32_t step = 0) {
    const auto total = static_cast<std::uint32_t>(scene.views.size());
    const std::uint32_t size = b.batch == 0 ? total : b.batch;
    if (size > total) {
        throw ConfigError("--batch " + std::to_string(size) + " exceeds the scene's " + std::to_string(total) +
                          " views");
    }
    std::vector<CameraView> views;
    for (std::uint32_t i = 0; i < size; ++i) {
        views.push_back(scene.views[(b.first_view + std::uint64_t{step} * size + i) % total]);
    }
    return views;
}

Json volume_json(const VolumeReport& v) {
    return Json{{"host_to_device_bytes", v.host_to_device_bytes},
                {"device_to_host_bytes", v.device_to_host_bytes},
                {"device_copy_bytes", v.device_copy_bytes},
                {"writeback_bytes", v.writeback_bytes},
                {"cache_saved_bytes", v.cache_saved_bytes},
                {"total_bytes", v.total_bytes()}};
}

Json metrics_json(const SimMetrics& m, double window) {
    Json cdf = Json::array();
    for (double x : {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0}) {
        cdf.push_back(Json{{"idle", x}, {"fraction", m.idle_cdf(x)}});
    }
    return Json{{"makespan", m.makespan},
                {"throughput", m.throughput},
                {"window", window},
                {"compute_comm_overlap", m.compute_comm_overlap},
                {"compute_adam_overlap", m.compute_adam_overlap},
                {"comm_adam_overlap", m.comm_adam_overlap},
                {"idle_fractions", m.idle_fractions},
                {"idle_cdf", cdf}};
}

struct PlannedBatch {
    std::vector<std::uint32_t> order;
    std::vector<SparsitySet> ordered;
    FinalizationSchedule schedule;
    std::vector<TransferPlan> plans;
};

PlannedBatch plan_views(const Scene& scene, std::span<const CameraView> views, OrderStrategy strategy, double k,
                        std::uint64_t seed, const SearchBudget& budget) {
    PlannedBatch p;
    const auto sets = cull_all(scene, views, k);
    p.order = order_views(sets, strategy, views, scene.aabb, seed, budget);
    p.ordered = apply_order(sets, p.order);
    p.schedule = finalization_schedule(p.ordered, scene.size());
    p.plans = plan_batch(p.ordered, p.schedule);
    return p;
}

std::string format_table(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
    std::vector<std::size_t> widths(header.size());
    for (std::size_t c = 0; c < header.size(); ++c) {
        widths[c] = header[c].size();
        for (const auto& r : rows) widths[c] = std::max(widths[c], r[c].size());
    }
    std::ostringstream os;
    const auto line = [&](const std::vector<std::string>& cells) {
        for (std::size_t c = 0; c < cells.size(); ++c) {
            os << (c == 0 ? "" : "  ") << std::setw(static_cast<int>(widths[c])) << cells[c];
        }
        os << "\n";
    };
    line(header);
    for (const auto& r : rows) line(r);
    return os.str();
}

std::string fmt_double(double v) {
    std::ostringstream os;
    os << std::setprecision(6) << v;
    return os.str();
}

// ---- subcommands ------------------------------------------------------------------------

int cmd_gen_scene(const std::string& spec_path, const Common& c, std::optional<std::uint64_t> gaussians,
                  std::ostream& out) {
    prepare_out(c.out);
    SceneSpec spec = spec_path.empty() ? SceneSpec{} : load_scene_spec(spec_path);
    if (gaussians) spec.gaussians = *gaussians;
    const Scene scene = generate_synthetic_scene(spec, c.seed);
    const fs::path path = fs::path(c.out) / "scene.json";
    save_scene(scene, path);
    write_manifest(c.out, "gen-scene",
                   Json{{"spec", Json::parse(scene_spec_to_json_text(spec))}, {"out", c.out}}, c.seed);
    out << "wrote " << path.string() << " (" << scene.size() << " Gaussians, " << scene.views.size() << " views)\n";
    return kExitOk;
}

int cmd_analyze(const std::string& scene_path, double k, const Common& c, std::ostream& out) {
    prepare_out(c.out);
    const Scene scene = load_scene(scene_path);
    const auto sets = cull_all(scene, scene.views, k);
    const auto report = sparsity_stats(sets);
    Json cdf = Json::array();
    std::vector<std::vector<std::string>> rows;
    for (const auto& p : report.cdf) {
        cdf.push_back(Json{{"rho", p.rho}, {"fraction", p.fraction}});
        rows.push_back({fmt_double(p.rho), fmt_double(p.fraction)});
    }
    Json per_view = Json::array();
    for (const auto& s : sets) {
        per_view.push_back(Json{{"view_id", s.view_id}, {"count", s.size()}, {"rho", s.rho()}});
    }
    write_json(fs::path(c.out) / "sparsity.json", Json{{"gaussians", scene.size()},
                                                       {"views", scene.views.size()},
                                                       {"k", k},
                                                       {"mean_rho", report.mean},
                                                       {"max_rho", report.max},
                                                       {"min_rho", report.min},
                                                       {"per_view", per_view},
                                                       {"cdf", cdf}});
    write_manifest(c.out, "analyze", Json{{"scene", scene_path}, {"k", k}, {"out", c.out}}, c.seed);
    out << format_table({"rho", "cdf"}, rows);
    out << "mean rho " << fmt_double(report.mean) << ", max rho " << fmt_double(report.max) << "\n";
    return kExitOk;
}

int cmd_plan(const BatchArgs& b, const Common& c, std::ostream& out) {
    prepare_out(c.out);
    const auto strategy = order_strategy_from_string(b.strategy);
    const auto budget = budget_of(b);
    const Scene scene = load_scene(b.scene);
    const auto views = batch_views(scene, b);
    const auto p = plan_views(scene, views, strategy, b.k, c.seed, budget);
    const AttributeLayout layout;
    const auto v = volume(p.plans, layout);
    const auto naive = naive_offload_volume(scene.size(), views.size(), layout);
    const auto no_cache = no_cache_volume(p.ordered, layout);

    Json steps = Json::array();
    for (const auto& plan : p.plans) {
        steps.push_back(Json{{"microbatch", plan.microbatch},
                             {"view_id", plan.view_id},
                             {"load", plan.load_set.size()},
                             {"cache_copy", plan.cache_copy_set.size()},
                             {"grad_store", plan.grad_store_set.size()},
                             {"grad_carry", plan.grad_carry_set.size()},
                             {"adam", plan.adam_set.size()}});
    }
    Json view_ids = Json::array();
    for (const auto& s : p.ordered) view_ids.push_back(s.view_id);
    write_sparsity_sets(fs::path(c.out) / "sets.bin", p.ordered);
    write_json(fs::path(c.out) / "plan.json", Json{{"gaussians", scene.size()},
                                                   {"pixels_per_image", views.front().pixels()},
                                                   {"strategy", b.strategy},
                                                   {"order", p.order},
                                                   {"view_ids", view_ids},
                                                   {"untouched", p.schedule.finalized[0].size()},
                                                   {"steps", steps},
                                                   {"volume", volume_json(v)},
                                                   {"no_cache_volume", volume_json(no_cache)},
                                                   {"naive_volume", volume_json(naive)}});
    Json cfg = batch_config(b);
    cfg["out"] = c.out;
    write_manifest(c.out, "plan", cfg, c.seed);
    out << "strategy " << b.strategy << ": h2d " << v.host_to_device_bytes << " B, total " << v.total_bytes()
        << " B (naive " << naive.total_bytes() << " B)\n";
    return kExitOk;
}

int cmd_simulate(const std::string& plan_path, const std::string& cost_path, const std::string& mode_name,
                 double window, double duration, const Common& c, std::ostream& out) {
    prepare_out(c.out);
    const auto mode = sim_mode_from_string(mode_name);
    const CostModel cm = cost_path.empty() ? CostModel{} : load_cost_model(cost_path);
    cm.validate();
    const Json plan = read_json(plan_path);
    std::uint64_t n = 0, pixels = 0;
    std::vector<std::uint64_t> view_ids;
    try {
        n = plan.at("gaussians").get<std::uint64_t>();
        pixels = plan.at("pixels_per_image").get<std::uint64_t>();
        view_ids = plan.at("view_ids").get<std::vector<std::uint64_t>>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("'" + plan_path + "': " + e.what());
    }
    const auto sets = read_sparsity_sets(fs::path(plan_path).parent_path() / "sets.bin", n);
    if (sets.size() != view_ids.size()) {
        throw ConfigError("plan and sets.bin disagree on the number of microbatches");
    }
    for (std::size_t i = 0; i < sets.size(); ++i) {
        if (sets[i].view_id != view_ids[i]) throw ConfigError("plan and sets.bin disagree on the view order");
    }
    const auto schedule = finalization_schedule(sets, n);
    const auto plans = plan_batch(sets, schedule);
    SimOptions opt;
    opt.pixels_per_image = pixels;
    const auto trace = simulate(plans, schedule, cm, mode, opt);
    if (duration < 0.0) throw ConfigError("--duration must be non-negative");
    const double w = window > 0.0 ? window : (duration > 0.0 ? duration : trace.makespan()) / 50.0;
    const auto m = metrics(trace, w, sets.size(), duration);
    write_trace_tsv(trace, fs::path(c.out) / "trace.tsv");
    Json mj = metrics_json(m, w);
    mj["mode"] = to_string(mode);
    mj["adam_trailing_time"] = adam_trailing_time(trace);
    write_json(fs::path(c.out) / "metrics.json", mj);
    write_manifest(c.out, "simulate",
                   Json{{"plan", plan_path},
                        {"cost_model", Json::parse(cost_model_to_json_text(cm))},
                        {"mode", mode_name},
                        {"window", w},
                        {"duration", duration},
                        {"out", c.out}},
                   c.seed);
    out << to_string(mode) << ": makespan " << fmt_double(m.makespan) << " s, trailing adam "
        << fmt_double(adam_trailing_time(trace)) << " s\n";
    return kExitOk;
}

struct TrainArgs {
    BatchArgs batch;
    std::string target_scene;
    std::string resume;
    std::uint32_t steps = 1;
    double lr = 1e-3;
    std::uint64_t device_capacity = 0; // 0 = unlimited
    std::string adam_timing = "early";
    std::string untouched = "skip";
};

int cmd_train(const TrainArgs& t, const Common& c, std::ostream& out) {
    prepare_out(c.out);
    const auto strategy = order_strategy_from_string(t.batch.strategy);
    const auto budget = budget_of(t.batch);
    if (t.target_scene.empty()) throw ConfigError("--target-scene is required");
    if (!(t.lr >= 0.0)) throw ConfigError("--lr must be non-negative");
    TrainOptions options;
    options.cull_k = t.batch.k;
    if (t.adam_timing == "early") {
        options.adam_timing = AdamTiming::Early;
    } else if (t.adam_timing == "end-of-batch") {
        options.adam_timing = AdamTiming::EndOfBatch;
    } else {
        throw ConfigError("unknown --adam-timing '" + t.adam_timing + "' (expected early|end-of-batch)");
    }
    if (t.untouched == "skip") {
        options.untouched = UntouchedPolicy::Skip;
    } else if (t.untouched == "decay") {
        options.untouched = UntouchedPolicy::Decay;
    } else {
        throw ConfigError("unknown --untouched '" + t.untouched + "' (expected skip|decay)");
    }

    Scene scene = load_scene(t.batch.scene);
    const Scene target = load_scene(t.target_scene);
    if (target.views.size() != scene.views.size()) {
        throw ConfigError("target scene has a different number of views");
    }
    std::uint32_t done = 0;
    AdamState adam(scene.size(), AdamConfig{t.lr});
    if (!t.resume.empty()) {
        const fs::path dir(t.resume);
        scene = load_scene(dir / "checkpoint.json");
        adam = load_adam_state(dir / "adam.bin");
        const Json state = read_json(dir / "train_state.json");
        done = state.at("steps_done").get<std::uint32_t>();
        if (adam.m.size() != scene.size()) throw ConfigError("checkpoint and optimizer state disagree");
        adam.config.lr = t.lr;
    }
    if (done > t.steps) throw ConfigError("checkpoint is already past --steps");

    RenderConfig cfg;
    cfg.sigma_cutoff = t.batch.k;
    OffloadSession session(scene, t.device_capacity == 0 ? std::numeric_limits<std::uint64_t>::max()
                                                         : t.device_capacity);
    Json steps = Json::array();
    bool all_match = true;
    for (std::uint32_t step = done; step < t.steps; ++step) {
        const auto views = batch_views(scene, t.batch, step);
        std::vector<TrainView> batch;
        for (const auto& v : views) {
            const auto it = std::find_if(target.views.begin(), target.views.end(),
                                         [&](const CameraView& tv) { return tv.id == v.id; });
            if (it == target.views.end()) throw ConfigError("target scene lacks view " + std::to_string(v.id));
            batch.push_back({v, render_all(target, *it, cfg)});
        }
        std::vector<CameraView> batch_cams(views.begin(), views.end());
        std::vector<SparsitySet> sets;
        for (const auto& v : batch_cams) sets.push_back(cull_resident(session.resident(), v, options.cull_k));
        const auto order = order_views(sets, strategy, batch_cams, scene.aabb, c.seed + step, budget);
        session.arenas().reset_transfer_counters();
        const auto report = session.train_batch(scene, batch, order, cfg, adam, options);
        const bool match = session.arenas().matches(report.planned);
        all_match = all_match && match;
        steps.push_back(Json{{"step", step},
                             {"loss", report.loss},
                             {"order", report.order},
                             {"planned", volume_json(report.planned)},
                             {"executed_host_to_device_bytes", session.arenas().host_to_device_bytes},
                             {"executed_device_to_host_bytes", session.arenas().device_to_host_bytes},
                             {"executed_device_copy_bytes", session.arenas().device_copy_bytes},
                             {"executed_writeback_bytes", session.arenas().writeback_bytes},
                             {"untouched_writeback_bytes", session.arenas().untouched_writeback_bytes},
                             {"counters_match_plan", match},
                             {"peak_device_bytes", report.peak_device_bytes}});
        out << "step " << step << ": loss " << fmt_double(report.loss) << (match ? "" : " (counter mismatch)")
            << "\n";
    }
    const fs::path dir(c.out);
    save_scene(scene, dir / "checkpoint.json");
    save_adam_state(adam, dir / "adam.bin");
    write_json(dir / "train_state.json", Json{{"steps_done", t.steps}});
    write_json(dir / "arena_report.json", Json{{"device_high_water_bytes", session.arenas().device.high_water()},
                                                {"device_capacity_bytes", session.arenas().device.capacity()},
                                                {"resident_upload_bytes", session.arenas().resident_upload_bytes},
                                                {"counters_match_plan", all_match},
                                                {"steps", steps}});
    Json cfg_json = batch_config(t.batch);
    cfg_json["target_scene"] = t.target_scene;
    cfg_json["resume"] = t.resume;
    cfg_json["steps"] = t.steps;
    cfg_json["lr"] = t.lr;
    cfg_json["device_capacity"] = t.device_capacity;
    cfg_json["adam_timing"] = t.adam_timing;
    cfg_json["untouched"] = t.untouched;
    cfg_json["out"] = c.out;
    write_manifest(c.out, "train", cfg_json, c.seed);
    return kExitOk;
}

int cmd_compare(const BatchArgs& b, const std::vector<std::string>& strategies, const std::string& cost_path,
                const Common& c, std::ostream& out) {
    prepare_out(c.out);
    const auto budget = budget_of(b);
    std::vector<OrderStrategy> parsed;
    for (const auto& s : strategies) parsed.push_back(order_strategy_from_string(s));
    const CostModel cm = cost_path.empty() ? CostModel{} : load_cost_model(cost_path);
    cm.validate();
    const Scene scene = load_scene(b.scene);
    const auto views = batch_views(scene, b);
    const AttributeLayout layout;
    SimOptions opt;
    opt.pixels_per_image = views.front().pixels();

    Json rows_json = Json::array();
    std::vector<std::vector<std::string>> rows;
    const auto add_row = [&](const std::string& name, const VolumeReport& v, const SimTrace& trace) {
        const double trailing = adam_trailing_time(trace);
        rows_json.push_back(Json{{"strategy", name},
                                 {"host_to_device_bytes", v.host_to_device_bytes},
                                 {"total_bytes", v.total_bytes()},
                                 {"makespan", trace.makespan()},
                                 {"adam_trailing_time", trailing}});
        rows.push_back({name, std::to_string(v.host_to_device_bytes), std::to_string(v.total_bytes()),
                        fmt_double(trace.makespan()), fmt_double(trailing)});
    };
    std::optional<PlannedBatch> first;
    for (std::size_t i = 0; i < parsed.size(); ++i) {
        auto p = plan_views(scene, views, parsed[i], b.k, c.seed, budget);
        add_row(strategies[i], volume(p.plans, layout), simulate(p.plans, p.schedule, cm, SimMode::Clm, opt));
        if (!first) first = std::move(p);
    }
    if (!first) {
        first = plan_views(scene, views, OrderStrategy::Camera, b.k, c.seed, budget);
    }
    add_row("naive", naive_offload_volume(scene.size(), views.size(), layout),
            simulate(first->plans, first->schedule, cm, SimMode::Naive, opt));

    write_json(fs::path(c.out) / "compare.json", Json{{"rows", rows_json}});
    Json cfg = batch_config(b);
    cfg["strategies"] = strategies;
    cfg["cost_model"] = Json::parse(cost_model_to_json_text(cm));
    cfg["out"] = c.out;
    write_manifest(c.out, "compare", cfg, c.seed);
    out << format_table({"strategy", "h2d_bytes", "total_bytes", "makespan_s", "trailing_adam_s"}, rows);
    return kExitOk;
}

int cmd_calibrate(const CalibrationOptions& options, const Common& c, std::ostream& out) {
    prepare_out(c.out);
    CalibrationOptions opt = options;
    opt.seed = c.seed;
    const CostModel cm = calibrate_cost_model(opt);
    save_cost_model(cm, fs::path(c.out) / "cost_model.json");
    write_manifest(c.out, "calibrate",
                   Json{{"repeats", opt.repeats},
                        {"h2d_bandwidth", opt.h2d_bandwidth},
                        {"d2h_bandwidth", opt.d2h_bandwidth},
                        {"transfer_latency", opt.transfer_latency},
                        {"sched_overhead", opt.sched_overhead},
                        {"out", c.out}},
                   c.seed);
    out << cost_model_to_json_text(cm);
    return kExitOk;
}

} // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Sparsity-guided offloading planner, simulator and mini trainer", "spof"};
    app.require_subcommand(1);
    Common common;
    const auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--seed", common.seed, "run seed")->capture_default_str();
        cmd->add_option("--out", common.out, "output directory")->required();
    };

    std::string spec_path;
    std::optional<std::uint64_t> gaussians;
    auto* gen = app.add_subcommand("gen-scene", "generate a synthetic scene");
    gen->add_option("--spec", spec_path, "scene spec (.json); defaults when omitted");
    gen->add_option("--gaussians", gaussians, "override the spec's Gaussian count");
    add_common(gen);

    std::string scene_path;
    double k = kDefaultSigmaCutoff;
    auto* analyze = app.add_subcommand("analyze", "per-view sparsity and its CDF");
    analyze->add_option("--scene", scene_path, "scene descriptor (.json)")->required();
    analyze->add_option("--k", k, "culling cutoff in standard deviations")->capture_default_str();
    add_common(analyze);

    BatchArgs plan_args;
    auto* plan = app.add_subcommand("plan", "order a batch and build its transfer plan");
    add_batch_options(plan, plan_args);
    plan->add_option("--strategy", plan_args.strategy, "random|camera|gscount|tsp")->capture_default_str();
    add_common(plan);

    std::string plan_path, cost_path, mode = "clm";
    double window = 0.0, duration = 0.0;
    auto* sim = app.add_subcommand("simulate", "simulate a planned batch");
    sim->add_option("--plan", plan_path, "plan.json written by `plan`")->required();
    sim->add_option("--cost-model", cost_path, "cost model (.json)");
    sim->add_option("--mode", mode, "clm|naive")->capture_default_str();
    sim->add_option("--window", window, "idle-rate window in seconds (default profiled time / 50)");
    sim->add_option("--duration", duration, "profile this many seconds of back-to-back batches (default one batch)");
    add_common(sim);

    TrainArgs train_args;
    auto* train = app.add_subcommand("train", "offloaded training against a target scene's renders");
    add_batch_options(train, train_args.batch);
    train->add_option("--strategy", train_args.batch.strategy, "random|camera|gscount|tsp")->capture_default_str();
    train->add_option("--target-scene", train_args.target_scene, "scene whose renders are the targets")->required();
    train->add_option("--steps", train_args.steps, "total batches")->capture_default_str();
    train->add_option("--lr", train_args.lr, "Adam learning rate")->capture_default_str();
    train->add_option("--resume", train_args.resume, "output directory of an earlier run");
    train->add_option("--device-capacity", train_args.device_capacity, "device arena bytes (0 = unlimited)");
    train->add_option("--adam-timing", train_args.adam_timing, "early|end-of-batch")->capture_default_str();
    train->add_option("--untouched", train_args.untouched, "skip|decay")->capture_default_str();
    add_common(train);

    BatchArgs cmp_args;
    std::vector<std::string> strategies{"random", "camera", "gscount", "tsp"};
    std::string cmp_cost;
    auto* compare = app.add_subcommand("compare", "volume and simulated time per ordering strategy");
    add_batch_options(compare, cmp_args);
    compare->add_option("--strategies", strategies, "strategies to compare")->delimiter(',')->capture_default_str();
    compare->add_option("--cost-model", cmp_cost, "cost model (.json)");
    add_common(compare);

    CalibrationOptions cal;
    auto* calibrate = app.add_subcommand("calibrate", "fit a cost model from mini-trainer timings");
    calibrate->add_option("--repeats", cal.repeats)->capture_default_str();
    calibrate->add_option("--h2d-bandwidth", cal.h2d_bandwidth)->capture_default_str();
    calibrate->add_option("--d2h-bandwidth", cal.d2h_bandwidth)->capture_default_str();
    calibrate->add_option("--latency", cal.transfer_latency)->capture_default_str();
    add_common(calibrate);

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (*gen) return cmd_gen_scene(spec_path, common, gaussians, out);
        if (*analyze) return cmd_analyze(scene_path, k, common, out);
        if (*plan) return cmd_plan(plan_args, common, out);
        if (*sim) return cmd_simulate(plan_path, cost_path, mode, window, duration, common, out);
        if (*train) return cmd_train(train_args, common, out);
        if (*compare) return cmd_compare(cmp_args, strategies, cmp_cost, common, out);
        if (*calibrate) return cmd_calibrate(cal, common, out);
    } catch (const CapacityError& e) {
        err << "error: " << e.what() << "\n";
        return kExitCapacity;
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const IoError& e) {
        err << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const nlohmann::json::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitConfig;
    }
    return kExitConfig;
}

} // namespace spof
