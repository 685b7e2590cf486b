#include "spof/calibrate.hpp"

#include "spof/culling.hpp"
#include "spof/errors.hpp"
#include "spof/render.hpp"
#include "spof/scene.hpp"
#include "spof/trainer.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <limits>
#include <vector>

namespace spof {
namespace {

using Clock = std::chrono::steady_clock;

template <typename F>
double best_of(int repeats, F&& fn) {
    double best = std::numeric_limits<double>::infinity();
    for (int r = 0; r < repeats; ++r) {
        const auto t0 = Clock::now();
        fn();
        best = std::min(best, std::chrono::duration<double>(Clock::now() - t0).count());
    }
    return best;
}

// Non-negative least squares for a small design matrix: solve, drop the most
// negative coefficient, repeat.
Eigen::VectorXd fit_nonnegative(const Eigen::MatrixXd& a, const Eigen::VectorXd& b) {
    const auto cols = a.cols();
    std::vector<bool> active(static_cast<std::size_t>(cols), true);
    Eigen::VectorXd x = Eigen::VectorXd::Zero(cols);
    for (Eigen::Index round = 0; round < cols; ++round) {
        std::vector<Eigen::Index> idx;
        for (Eigen::Index c = 0; c < cols; ++c) {
            if (active[static_cast<std::size_t>(c)]) idx.push_back(c);
        }
        if (idx.empty()) break;
        Eigen::MatrixXd sub(a.rows(), static_cast<Eigen::Index>(idx.size()));
        for (std::size_t j = 0; j < idx.size(); ++j) sub.col(static_cast<Eigen::Index>(j)) = a.col(idx[j]);
        const Eigen::VectorXd sol = sub.colPivHouseholderQr().solve(b);
        x.setZero();
        Eigen::Index worst = -1;
        double worst_value = 0.0;
        for (std::size_t j = 0; j < idx.size(); ++j) {
            x(idx[j]) = sol(static_cast<Eigen::Index>(j));
            if (sol(static_cast<Eigen::Index>(j)) < worst_value) {
                worst_value = sol(static_cast<Eigen::Index>(j));
                worst = idx[j];
            }
        }
        if (worst < 0) return x;
        active[static_cast<std::size_t>(worst)] = false;
    }
    return x.cwiseMax(0.0);
}

} // namespace

CostModel calibrate_cost_model(const CalibrationOptions& options) {
    if (options.repeats < 1) {
        throw ConfigError("calibration repeats must be at least 1");
    }
    CostModel cm;
    cm.h2d_bandwidth = options.h2d_bandwidth;
    cm.d2h_bandwidth = options.d2h_bandwidth;
    cm.transfer_latency = options.transfer_latency;
    cm.sched_overhead = options.sched_overhead;
    cm.validate();

    struct Sample {
        double gaussians, pixels, fwd, bwd;
    };
    std::vector<Sample> samples;
    const RenderConfig cfg;
    for (std::uint64_t n : {250u, 500u, 1000u}) {
        for (std::uint32_t scale : {1u, 2u}) {
            SceneSpec spec;
            spec.gaussians = n;
            spec.views = 1;
            spec.width = 32 * scale;
            spec.height = 24 * scale;
            spec.focal_px = 30.0 * scale;
            const Scene scene = generate_synthetic_scene(spec, options.seed + n + scale);
            const auto& view = scene.views.front();
            const auto set = cull(scene, view, cfg.sigma_cutoff);
            const auto pixels = view.pixels();
            Image image;
            const double fwd = best_of(options.repeats, [&] { image = render(scene, set.indices, view, cfg); });
            ImageD loss_grad(view.width, view.height);
            std::fill(loss_grad.rgb.begin(), loss_grad.rgb.end(), 1.0 / static_cast<double>(loss_grad.rgb.size()));
            const double bwd = best_of(options.repeats, [&] {
                const auto grads = backward(scene.gaussians, set.indices, view, cfg, loss_grad);
                (void)grads;
            });
            samples.push_back({static_cast<double>(set.size()), static_cast<double>(pixels), fwd, bwd});
        }
    }
    Eigen::MatrixXd a(static_cast<Eigen::Index>(samples.size()), 3);
    Eigen::VectorXd fwd(a.rows()), bwd(a.rows());
    for (Eigen::Index r = 0; r < a.rows(); ++r) {
        const auto& s = samples[static_cast<std::size_t>(r)];
        a.row(r) << s.gaussians, s.pixels, 1.0;
        fwd(r) = s.fwd;
        bwd(r) = s.bwd;
    }
    const Eigen::VectorXd cf = fit_nonnegative(a, fwd);
    const Eigen::VectorXd cb = fit_nonnegative(a, bwd);
    cm.fwd_per_gaussian = cf(0);
    cm.fwd_per_pixel = cf(1);
    cm.fwd_fixed = cf(2);
    cm.bwd_per_gaussian = cb(0);
    cm.bwd_per_pixel = cb(1);
    cm.bwd_fixed = cb(2);

    std::vector<std::pair<double, double>> adam_samples;
    for (std::size_t n : {2000u, 8000u, 32000u}) {
        std::vector<GaussianAttributes> params(n);
        AdamState state(n, AdamConfig{});
        GradRecord grad;
        grad.fill(1e-3);
        const double t = best_of(options.repeats, [&] {
            ++state.step;
            for (std::size_t g = 0; g < n; ++g) adam_update(params[g], state, g, grad);
        });
        adam_samples.emplace_back(static_cast<double>(n * GaussianAttributes::kParamCount), t);
    }
    Eigen::MatrixXd aa(static_cast<Eigen::Index>(adam_samples.size()), 2);
    Eigen::VectorXd ta(aa.rows());
    for (Eigen::Index r = 0; r < aa.rows(); ++r) {
        aa.row(r) << adam_samples[static_cast<std::size_t>(r)].first, 1.0;
        ta(r) = adam_samples[static_cast<std::size_t>(r)].second;
    }
    const Eigen::VectorXd ca = fit_nonnegative(aa, ta);
    cm.adam_per_param = ca(0);
    cm.adam_fixed = ca(1);
    cm.validate();
    return cm;
}

} // namespace spof
