#include "spof/trainer.hpp"

#include "binary_io.hpp"
#include "spof/culling.hpp"
#include "spof/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace spof {

void adam_update(GaussianAttributes& params, AdamState& state, std::size_t g, const GradRecord& grad) {
    const AdamConfig& c = state.config;
    const double t = static_cast<double>(state.step);
    const double bias1 = 1.0 - std::pow(c.beta1, t);
    const double bias2 = 1.0 - std::pow(c.beta2, t);
    float* p = params.data();
    auto& m = state.m[g];
    auto& v = state.v[g];
    for (std::size_t k = 0; k < GaussianAttributes::kParamCount; ++k) {
        m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * grad[k];
        v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * grad[k] * grad[k];
        const double step = c.lr * (m[k] / bias1) / (std::sqrt(v[k] / bias2) + c.eps);
        p[k] = static_cast<float>(static_cast<double>(p[k]) - step);
    }
}

void save_adam_state(const AdamState& state, const std::filesystem::path& path) {
    detail::ByteWriter w;
    w.put_magic("SPAD");
    w.put<std::uint32_t>(1);
    w.put<std::uint64_t>(state.m.size());
    w.put<std::uint64_t>(state.step);
    w.put<double>(state.config.lr);
    w.put<double>(state.config.beta1);
    w.put<double>(state.config.beta2);
    w.put<double>(state.config.eps);
    for (const auto& rec : state.m) w.put_array(rec.data(), rec.size());
    for (const auto& rec : state.v) w.put_array(rec.data(), rec.size());
    detail::write_file(path, w.bytes());
}

AdamState load_adam_state(const std::filesystem::path& path) {
    const auto bytes = detail::read_file(path);
    detail::ByteReader r(bytes);
    r.expect_magic("SPAD", "optimizer state '" + path.string() + "'");
    if (r.get<std::uint32_t>() != 1) {
        throw IoError("optimizer state '" + path.string() + "': unsupported version");
    }
    const auto n = r.get<std::uint64_t>();
    AdamState state;
    state.step = r.get<std::uint64_t>();
    state.config.lr = r.get<double>();
    state.config.beta1 = r.get<double>();
    state.config.beta2 = r.get<double>();
    state.config.eps = r.get<double>();
    if (r.remaining() != 2 * n * sizeof(GradRecord)) {
        throw IoError("optimizer state '" + path.string() + "': size does not match its Gaussian count");
    }
    state.m.resize(n);
    state.v.resize(n);
    for (auto& rec : state.m) r.get_array(rec.data(), rec.size());
    for (auto& rec : state.v) r.get_array(rec.data(), rec.size());
    return state;
}

void Arena::allocate(std::uint64_t bytes) {
    if (bytes > capacity_ - in_use_) {
        throw CapacityError(name_ + " arena: " + std::to_string(in_use_ + bytes) + " bytes required, capacity " +
                                std::to_string(capacity_),
                            in_use_ + bytes, capacity_);
    }
    in_use_ += bytes;
    high_water_ = std::max(high_water_, in_use_);
}

void Arena::release(std::uint64_t bytes) {
    if (bytes > in_use_) {
        throw ConfigError(name_ + " arena: releasing more than allocated");
    }
    in_use_ -= bytes;
}

bool ArenaCounters::matches(const VolumeReport& report) const {
    return host_to_device_bytes == report.host_to_device_bytes &&
           device_to_host_bytes == report.device_to_host_bytes && device_copy_bytes == report.device_copy_bytes &&
           writeback_bytes == report.writeback_bytes && cache_saved_bytes == report.cache_saved_bytes;
}

void ArenaCounters::reset_transfer_counters() {
    host_to_device_bytes = device_to_host_bytes = device_copy_bytes = 0;
    writeback_bytes = cache_saved_bytes = untouched_writeback_bytes = 0;
}

double mse_loss(const Image& rendered, const Image& target, ImageD* grad) {
    if (rendered.width != target.width || rendered.height != target.height) {
        throw ConfigError("target image size does not match the rendered view");
    }
    const double count = static_cast<double>(rendered.rgb.size());
    if (grad != nullptr) {
        *grad = ImageD(rendered.width, rendered.height);
    }
    double loss = 0.0;
    for (std::size_t i = 0; i < rendered.rgb.size(); ++i) {
        const double diff = double{rendered.rgb[i]} - double{target.rgb[i]};
        loss += diff * diff;
        if (grad != nullptr) grad->rgb[i] = 2.0 * diff / count;
    }
    return loss / count;
}

OffloadSession::OffloadSession(const Scene& scene, std::uint64_t device_capacity, const AttributeLayout& layout)
    : arenas_{Arena("host"), Arena("device", device_capacity)} {
    layout.validate();
    resident_.reserve(scene.size());
    for (const auto& g : scene.gaussians) {
        resident_.push_back(SelectionCritical::of(g));
    }
    const std::uint64_t resident_bytes = scene.size() * std::uint64_t{layout.selection_critical_bytes()};
    arenas_.device.allocate(resident_bytes);
    arenas_.resident_upload_bytes = resident_bytes;
    // Padded parameter records plus the gradient accumulator of every Gaussian.
    arenas_.host.allocate(scene.size() * std::uint64_t{layout.offload_record_bytes + layout.grad_record_bytes});
}

namespace {

constexpr std::size_t kNonCritical = GaussianAttributes::kParamCount - param::kSh;

// Non-critical attributes (SH then opacity) packed at the front of a padded record.
void pack_record(const GaussianAttributes& g, float* record) {
    std::copy(g.data() + param::kSh, g.data() + GaussianAttributes::kParamCount, record);
}

GaussianAttributes assemble(const SelectionCritical& critical, const float* record) {
    GaussianAttributes g;
    g.position = critical.position;
    g.log_scale = critical.log_scale;
    g.rotation = critical.rotation;
    std::copy(record, record + kNonCritical, g.data() + param::kSh);
    return g;
}

} // namespace

BatchReport OffloadSession::train_batch(Scene& scene, std::span<const TrainView> batch,
                                        std::span<const std::uint32_t> order, const RenderConfig& cfg,
                                        AdamState& adam, const TrainOptions& options) {
    const AttributeLayout& layout = options.layout;
    layout.validate();
    if (layout.selection_critical_floats != param::kSh || layout.non_critical_floats != kNonCritical) {
        throw ConfigError("trainer requires the position/scale/rotation vs SH/opacity attribute split");
    }
    if (options.cull_k < cfg.sigma_cutoff) {
        throw ConfigError("culling k must be at least the render sigma cutoff");
    }
    const std::size_t n = scene.size();
    if (resident_.size() != n || adam.m.size() != n || adam.v.size() != n) {
        throw ConfigError("scene, resident attributes and optimizer state disagree on the Gaussian count");
    }
    if (!is_permutation_of_range(order, batch.size())) {
        throw ConfigError("training order is not a permutation of the batch");
    }

    // Culling runs on the device-resident attributes only.
    std::vector<SparsitySet> sets;
    sets.reserve(batch.size());
    for (const auto& tv : batch) {
        sets.push_back(cull_resident(resident_, tv.view, options.cull_k));
    }
    const auto ordered = apply_order(sets, order);
    const auto schedule = finalization_schedule(ordered, n);
    const auto plans = plan_batch(ordered, schedule);

    BatchReport report;
    report.order.assign(order.begin(), order.end());
    report.planned = volume(plans, layout);

    const std::uint64_t per_gaussian_staged = std::uint64_t{layout.offload_record_bytes} + layout.grad_record_bytes;
    std::uint64_t peak_staged = 0;
    for (std::size_t i = 0; i < ordered.size(); ++i) {
        const std::uint64_t prev = i > 0 ? ordered[i - 1].size() : 0;
        peak_staged = std::max(peak_staged, (prev + ordered[i].size()) * per_gaussian_staged);
    }
    report.peak_device_bytes = arenas_.device.in_use() + peak_staged;
    if (report.peak_device_bytes > arenas_.device.capacity()) {
        throw CapacityError("device arena too small for this batch: peak requirement " +
                                std::to_string(report.peak_device_bytes) + " bytes, capacity " +
                                std::to_string(arenas_.device.capacity()),
                            report.peak_device_bytes, arenas_.device.capacity());
    }

    ++adam.step;
    std::vector<GradRecord> host_accum(n, GradRecord{});
    const auto run_adam = [&](const sorted::IndexVec& finalized, std::uint64_t& writeback_counter) {
        for (auto g : finalized) {
            if (options.untouched == UntouchedPolicy::Decay || !is_zero(host_accum[g])) {
                adam_update(scene.gaussians[g], adam, g, host_accum[g]);
            }
            resident_[g] = SelectionCritical::of(scene.gaussians[g]);
            writeback_counter += layout.selection_critical_bytes();
        }
    };
    if (options.untouched == UntouchedPolicy::Decay) {
        run_adam(schedule.finalized[0], arenas_.untouched_writeback_bytes);
    }

    const std::size_t record_floats = layout.offload_record_bytes / sizeof(float);
    const sorted::IndexVec empty;
    std::vector<float> prev_params;
    std::vector<GradRecord> prev_grads;
    double loss_sum = 0.0;

    for (std::size_t i = 0; i < ordered.size(); ++i) {
        const auto& here = ordered[i].indices;
        const auto& prev = i > 0 ? ordered[i - 1].indices : empty;
        const auto& next = i + 1 < ordered.size() ? ordered[i + 1].indices : empty;
        const TrainView& tv = batch[order[i]];

        arenas_.device.allocate(here.size() * per_gaussian_staged);

        // Stage parameters: cache hits copy from the previous buffer, misses load from the host.
        std::vector<float> params(here.size() * record_floats, 0.0f);
        std::vector<std::int64_t> prev_slot(here.size(), -1);
        for (std::size_t p = 0, q = 0; p < here.size(); ++p) {
            while (q < prev.size() && prev[q] < here[p]) ++q;
            float* record = &params[p * record_floats];
            if (q < prev.size() && prev[q] == here[p]) {
                prev_slot[p] = static_cast<std::int64_t>(q);
                std::copy_n(&prev_params[q * record_floats], record_floats, record);
                arenas_.device_copy_bytes += layout.offload_record_bytes;
                arenas_.cache_saved_bytes += layout.offload_record_bytes;
            } else {
                pack_record(scene.gaussians[here[p]], record);
                arenas_.host_to_device_bytes += layout.offload_record_bytes;
            }
        }

        std::vector<GaussianAttributes> staged;
        staged.reserve(here.size());
        for (std::size_t p = 0; p < here.size(); ++p) {
            staged.push_back(assemble(resident_[here[p]], &params[p * record_floats]));
        }
        std::vector<std::uint32_t> local(here.size());
        std::iota(local.begin(), local.end(), 0u);

        const Image rendered = render(staged, local, tv.view, cfg);
        ImageD loss_grad;
        loss_sum += mse_loss(rendered, tv.target, &loss_grad);
        const Gradients fresh = backward(staged, local, tv.view, cfg, loss_grad);

        // Gradient buffer: carried partial sums from the previous microbatch first.
        std::vector<GradRecord> grads(here.size());
        for (std::size_t p = 0; p < here.size(); ++p) {
            if (prev_slot[p] >= 0) {
                const auto& carried = prev_grads[static_cast<std::size_t>(prev_slot[p])];
                for (std::size_t k = 0; k < GaussianAttributes::kParamCount; ++k) {
                    grads[p][k] = carried[k] + fresh.per_gaussian[p][k];
                }
                arenas_.device_copy_bytes += layout.grad_record_bytes;
            } else {
                grads[p] = fresh.per_gaussian[p];
            }
        }
        arenas_.device.release(prev.size() * per_gaussian_staged);

        // Store what the next microbatch does not touch; the host adds into its accumulator.
        for (std::size_t p = 0, q = 0; p < here.size(); ++p) {
            while (q < next.size() && next[q] < here[p]) ++q;
            if (q < next.size() && next[q] == here[p]) continue;
            auto& acc = host_accum[here[p]];
            for (std::size_t k = 0; k < GaussianAttributes::kParamCount; ++k) acc[k] += grads[p][k];
            arenas_.device_to_host_bytes += layout.grad_record_bytes;
        }

        if (options.adam_timing == AdamTiming::Early) {
            run_adam(schedule.finalized[i + 1], arenas_.writeback_bytes);
        }
        prev_params = std::move(params);
        prev_grads = std::move(grads);
    }
    if (!ordered.empty()) {
        arenas_.device.release(ordered.back().size() * per_gaussian_staged);
    }
    if (options.adam_timing == AdamTiming::EndOfBatch) {
        for (std::size_t i = 1; i < schedule.finalized.size(); ++i) {
            run_adam(schedule.finalized[i], arenas_.writeback_bytes);
        }
    }
    report.loss = batch.empty() ? 0.0 : loss_sum / static_cast<double>(batch.size());
    return report;
}

double train_reference(Scene& scene, std::span<const TrainView> batch, const RenderConfig& cfg, AdamState& adam,
                       UntouchedPolicy untouched) {
    const std::size_t n = scene.size();
    if (adam.m.size() != n || adam.v.size() != n) {
        throw ConfigError("optimizer state does not match the scene");
    }
    std::vector<std::uint32_t> all(n);
    std::iota(all.begin(), all.end(), 0u);
    Gradients accum(n);
    double loss_sum = 0.0;
    for (const auto& tv : batch) {
        const Image rendered = render(scene.gaussians, all, tv.view, cfg);
        ImageD loss_grad;
        loss_sum += mse_loss(rendered, tv.target, &loss_grad);
        accum.add(backward(scene.gaussians, all, tv.view, cfg, loss_grad));
    }
    ++adam.step;
    for (std::size_t g = 0; g < n; ++g) {
        if (untouched == UntouchedPolicy::Skip && is_zero(accum.per_gaussian[g])) continue;
        adam_update(scene.gaussians[g], adam, g, accum.per_gaussian[g]);
    }
    return batch.empty() ? 0.0 : loss_sum / static_cast<double>(batch.size());
}

double relative_parameter_distance(const Scene& a, const Scene& b) {
    if (a.size() != b.size()) {
        throw ConfigError("scenes differ in Gaussian count");
    }
    double diff = 0.0, norm = 0.0;
    for (std::size_t g = 0; g < a.size(); ++g) {
        const float* pa = a.gaussians[g].data();
        const float* pb = b.gaussians[g].data();
        for (std::size_t k = 0; k < GaussianAttributes::kParamCount; ++k) {
            const double d = double{pa[k]} - double{pb[k]};
            diff += d * d;
            norm += double{pb[k]} * double{pb[k]};
        }
    }
    return norm > 0.0 ? std::sqrt(diff) / std::sqrt(norm) : std::sqrt(diff);
}

} // namespace spof
