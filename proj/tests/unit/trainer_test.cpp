#include "spof/culling.hpp"
#include "spof/errors.hpp"
#include "spof/trainer.hpp"

#include "scenarios.hpp"

#include <gtest/gtest.h>

#include <bit>
#include <filesystem>
#include <numeric>

namespace spof {
namespace {

struct Setup {
    Scene start;
    std::vector<TrainView> batch;
};

Setup make_setup(std::uint64_t seed, std::uint64_t gaussians, std::uint32_t views) {
    const Scene scene = generate_synthetic_scene(scenario::small_flyover(gaussians, views), seed);
    return {scene, scenario::targets_for(scenario::perturbed(scene, seed + 1), scene.views, RenderConfig{})};
}

std::vector<std::uint32_t> identity(std::size_t n) {
    std::vector<std::uint32_t> order(n);
    std::iota(order.begin(), order.end(), 0u);
    return order;
}

bool bit_identical(const GaussianAttributes& a, const GaussianAttributes& b) {
    for (std::size_t p = 0; p < GaussianAttributes::kParamCount; ++p) {
        if (std::bit_cast<std::uint32_t>(a.data()[p]) != std::bit_cast<std::uint32_t>(b.data()[p])) return false;
    }
    return true;
}

TEST(Adam, FirstStepMovesByLearningRate) {
    GaussianAttributes g;
    AdamState state(1, AdamConfig{0.1});
    state.step = 1;
    GradRecord grad{};
    grad[0] = 4.0;
    grad[1] = -0.5;
    adam_update(g, state, 0, grad);
    // Bias correction makes the first step lr * sign(grad).
    EXPECT_NEAR(g.position[0], -0.1f, 1e-6);
    EXPECT_NEAR(g.position[1], 0.1f, 1e-6);
    EXPECT_EQ(g.position[2], 0.0f);
    EXPECT_DOUBLE_EQ(state.m[0][0], 0.4);
    EXPECT_NEAR(state.v[0][0], 0.016, 1e-15);
}

TEST(Adam, StateRoundTrip) {
    AdamState state(3, AdamConfig{0.01, 0.8, 0.95, 1e-12});
    state.step = 17;
    state.m[2][58] = 1.5;
    state.v[1][0] = 0.25;
    const auto path = std::filesystem::temp_directory_path() / "spof_adam_state.bin";
    save_adam_state(state, path);
    const AdamState back = load_adam_state(path);
    EXPECT_EQ(back.step, 17u);
    EXPECT_EQ(back.m, state.m);
    EXPECT_EQ(back.v, state.v);
    EXPECT_EQ(back.config.lr, 0.01);
    EXPECT_EQ(back.config.beta2, 0.95);
    EXPECT_EQ(back.config.eps, 1e-12);
    EXPECT_THROW(load_adam_state("/nonexistent/adam.bin"), IoError);
}

TEST(MseLoss, ValueAndGradient) {
    Image rendered(1, 1), target(1, 1);
    rendered.rgb = {1.0f, 0.5f, 0.0f};
    target.rgb = {0.0f, 0.5f, 1.0f};
    ImageD grad;
    EXPECT_DOUBLE_EQ(mse_loss(rendered, target, &grad), 2.0 / 3.0);
    EXPECT_DOUBLE_EQ(grad.rgb[0], 2.0 / 3.0);
    EXPECT_DOUBLE_EQ(grad.rgb[1], 0.0);
    EXPECT_DOUBLE_EQ(grad.rgb[2], -2.0 / 3.0);
    EXPECT_THROW(mse_loss(rendered, Image(2, 1), nullptr), ConfigError);
}

TEST(Arena, CapacityAndRelease) {
    Arena arena("test", 100);
    arena.allocate(60);
    arena.allocate(40);
    EXPECT_EQ(arena.in_use(), 100u);
    EXPECT_THROW(arena.allocate(1), CapacityError);
    arena.release(70);
    EXPECT_EQ(arena.in_use(), 30u);
    EXPECT_EQ(arena.high_water(), 100u);
    EXPECT_THROW(arena.release(31), ConfigError);
}

TEST(OffloadSession, ResidentFootprintAndUpload) {
    const auto setup = make_setup(1, 250, 2);
    OffloadSession session(setup.start);
    EXPECT_EQ(session.arenas().device.in_use(), 250u * 40u);
    EXPECT_EQ(session.arenas().resident_upload_bytes, 250u * 40u);
    EXPECT_EQ(session.arenas().host.in_use(), 250u * 512u);
    EXPECT_EQ(session.resident().size(), 250u);
}

TEST(OffloadSession, ZeroLearningRateLeavesParametersUnchanged) {
    const auto setup = make_setup(2, 300, 4);
    Scene scene = setup.start;
    AdamState adam(scene.size(), AdamConfig{0.0});
    OffloadSession session(scene);
    const auto report = session.train_batch(scene, setup.batch, identity(4), RenderConfig{}, adam, TrainOptions{});
    EXPECT_GT(report.loss, 0.0);
    for (std::size_t g = 0; g < scene.size(); ++g) EXPECT_TRUE(bit_identical(scene.gaussians[g], setup.start.gaussians[g]));
    EXPECT_EQ(adam.step, 1u);
}

TEST(OffloadSession, SingleViewMatchesReference) {
    const auto setup = make_setup(3, 400, 3);
    const std::vector<TrainView> one{setup.batch[1]};
    Scene reference = setup.start;
    AdamState ref_adam(reference.size(), AdamConfig{1e-2});
    const double ref_loss = train_reference(reference, one, RenderConfig{}, ref_adam);

    Scene scene = setup.start;
    AdamState adam(scene.size(), AdamConfig{1e-2});
    OffloadSession session(scene);
    const auto report = session.train_batch(scene, one, identity(1), RenderConfig{}, adam, TrainOptions{});
    EXPECT_EQ(relative_parameter_distance(scene, reference), 0.0);
    EXPECT_GT(relative_parameter_distance(scene, setup.start), 0.0);
    EXPECT_DOUBLE_EQ(report.loss, ref_loss);
    EXPECT_TRUE(session.arenas().matches(report.planned));
}

TEST(OffloadSession, MultiViewMatchesReference) {
    const auto setup = make_setup(4, 500, 6);
    Scene reference = setup.start;
    AdamState ref_adam(reference.size(), AdamConfig{1e-2});
    train_reference(reference, setup.batch, RenderConfig{}, ref_adam);

    Scene scene = setup.start;
    AdamState adam(scene.size(), AdamConfig{1e-2});
    OffloadSession session(scene);
    const std::vector<std::uint32_t> order{3, 0, 5, 1, 4, 2};
    const auto report = session.train_batch(scene, setup.batch, order, RenderConfig{}, adam, TrainOptions{});
    EXPECT_LE(relative_parameter_distance(scene, reference), 1e-6);
    EXPECT_EQ(report.order, order);
    EXPECT_TRUE(session.arenas().matches(report.planned));
}

TEST(OffloadSession, UntouchedGaussiansStayBitIdentical) {
    const auto setup = make_setup(5, 600, 4);
    Scene scene = setup.start;
    // Two views only, so parts of the box are never seen.
    const std::vector<TrainView> batch(setup.batch.begin(), setup.batch.begin() + 2);
    std::vector<bool> touched(scene.size(), false);
    for (const auto& tv : batch)
        for (auto g : cull(scene, tv.view).indices) touched[g] = true;
    ASSERT_TRUE(std::find(touched.begin(), touched.end(), false) != touched.end());

    AdamState adam(scene.size(), AdamConfig{1e-2});
    OffloadSession session(scene);
    session.train_batch(scene, batch, identity(2), RenderConfig{}, adam, TrainOptions{});
    for (std::size_t g = 0; g < scene.size(); ++g) {
        if (!touched[g]) {
            EXPECT_TRUE(bit_identical(scene.gaussians[g], setup.start.gaussians[g])) << g;
            EXPECT_TRUE(is_zero(adam.m[g]));
        }
    }
}

TEST(OffloadSession, ResidentCopyFollowsTheOptimizer) {
    const auto setup = make_setup(6, 400, 4);
    Scene scene = setup.start;
    AdamState adam(scene.size(), AdamConfig{5e-2});
    OffloadSession session(scene);
    for (int step = 0; step < 3; ++step) {
        session.train_batch(scene, setup.batch, identity(4), RenderConfig{}, adam, TrainOptions{});
        for (std::size_t g = 0; g < scene.size(); ++g) {
            ASSERT_EQ(session.resident()[g], SelectionCritical::of(scene.gaussians[g])) << "step " << step;
        }
    }
    // Culling the resident copy gives what the host parameters give.
    for (const auto& tv : setup.batch) {
        EXPECT_EQ(cull_resident(session.resident(), tv.view).indices, cull(scene, tv.view).indices);
    }
}

TEST(OffloadSession, RepeatedViewIsServedFromCache) {
    const auto setup = make_setup(7, 400, 2);
    const std::vector<TrainView> batch{setup.batch[0], setup.batch[0]};
    const std::size_t visible = cull(setup.start, batch[0].view).size();
    ASSERT_GT(visible, 0u);
    Scene scene = setup.start;
    AdamState adam(scene.size(), AdamConfig{});
    OffloadSession session(scene);
    session.arenas().reset_transfer_counters();
    const auto report = session.train_batch(scene, batch, identity(2), RenderConfig{}, adam, TrainOptions{});
    EXPECT_EQ(report.planned.host_to_device_bytes, visible * 256u);
    EXPECT_EQ(report.planned.device_to_host_bytes, visible * 256u);
    EXPECT_EQ(report.planned.cache_saved_bytes, visible * 256u);
    EXPECT_TRUE(session.arenas().matches(report.planned));
}

TEST(OffloadSession, DisjointViewsShareNothing) {
    SceneSpec spec = scenario::small_flyover(800, 9);
    spec.box_min = {-20.0, -20.0, -1.0};
    spec.box_max = {20.0, 20.0, 1.0};
    const Scene start = generate_synthetic_scene(spec, 8);
    const auto all = scenario::targets_for(scenario::perturbed(start, 9), start.views, RenderConfig{});
    // Opposite corners of the grid.
    const std::vector<TrainView> batch{all.front(), all.back()};
    const auto a = cull(start, batch[0].view).indices;
    const auto b = cull(start, batch[1].view).indices;
    ASSERT_EQ(sorted::intersection_size(a, b), 0u);
    Scene scene = start;
    AdamState adam(scene.size(), AdamConfig{});
    OffloadSession session(scene);
    session.arenas().reset_transfer_counters();
    const auto report = session.train_batch(scene, batch, identity(2), RenderConfig{}, adam, TrainOptions{});
    EXPECT_EQ(report.planned.cache_saved_bytes, 0u);
    EXPECT_EQ(report.planned.host_to_device_bytes, (a.size() + b.size()) * 256u);
    EXPECT_TRUE(session.arenas().matches(report.planned));
}

TEST(OffloadSession, CapacityErrorReportsPeak) {
    const auto setup = make_setup(9, 500, 3);
    Scene scene = setup.start;
    AdamState adam(scene.size(), AdamConfig{});
    // Room for the resident attributes and little else.
    OffloadSession session(scene, 500u * 40u + 1024u);
    try {
        session.train_batch(scene, setup.batch, identity(3), RenderConfig{}, adam, TrainOptions{});
        FAIL() << "expected CapacityError";
    } catch (const CapacityError& e) {
        EXPECT_NE(std::string(e.what()).find("peak"), std::string::npos) << e.what();
    }
    EXPECT_THROW(OffloadSession(scene, 100u), CapacityError);
}

TEST(OffloadSession, DecayMovesGaussiansLeftOutOfALaterBatch) {
    SceneSpec spec = scenario::small_flyover(600, 4);
    const Scene start = generate_synthetic_scene(spec, 10);
    const auto all = scenario::targets_for(scenario::perturbed(start, 11), start.views, RenderConfig{});
    const std::vector<TrainView> first{all[0]}, second{all[3]};
    const auto seen_first = cull(start, first[0].view).indices;
    const auto seen_second = cull(start, second[0].view).indices;
    const auto only_first = sorted::set_difference(seen_first, seen_second);
    ASSERT_FALSE(only_first.empty());

    const auto run = [&](UntouchedPolicy policy) {
        Scene scene = start;
        AdamState adam(scene.size(), AdamConfig{1e-2});
        OffloadSession session(scene);
        TrainOptions options;
        options.untouched = policy;
        session.train_batch(scene, first, identity(1), RenderConfig{}, adam, options);
        const Scene after_first = scene;
        session.arenas().reset_transfer_counters();
        const auto report = session.train_batch(scene, second, identity(1), RenderConfig{}, adam, options);
        EXPECT_TRUE(session.arenas().matches(report.planned));
        std::size_t moved = 0;
        for (auto g : only_first) moved += !bit_identical(scene.gaussians[g], after_first.gaussians[g]);
        return std::make_pair(moved, session.arenas().untouched_writeback_bytes);
    };
    const auto [skip_moved, skip_wb] = run(UntouchedPolicy::Skip);
    const auto [decay_moved, decay_wb] = run(UntouchedPolicy::Decay);
    EXPECT_EQ(skip_moved, 0u);
    EXPECT_EQ(skip_wb, 0u);
    EXPECT_GT(decay_moved, 0u);
    EXPECT_GT(decay_wb, 0u);
}

TEST(OffloadSession, RejectsBadInputs) {
    const auto setup = make_setup(12, 200, 3);
    Scene scene = setup.start;
    AdamState adam(scene.size(), AdamConfig{});
    OffloadSession session(scene);
    const std::vector<std::uint32_t> bad_order{0, 0, 1};
    EXPECT_THROW(session.train_batch(scene, setup.batch, bad_order, RenderConfig{}, adam, TrainOptions{}), ConfigError);
    TrainOptions narrow;
    narrow.cull_k = 2.0;
    EXPECT_THROW(session.train_batch(scene, setup.batch, identity(3), RenderConfig{}, adam, narrow), ConfigError);
    AdamState wrong(scene.size() + 1, AdamConfig{});
    EXPECT_THROW(session.train_batch(scene, setup.batch, identity(3), RenderConfig{}, wrong, TrainOptions{}),
                 ConfigError);
}

TEST(RelativeParameterDistance, Basics) {
    const auto setup = make_setup(13, 50, 1);
    EXPECT_EQ(relative_parameter_distance(setup.start, setup.start), 0.0);
    Scene moved = setup.start;
    moved.gaussians[0].opacity_logit += 1.0f;
    EXPECT_GT(relative_parameter_distance(moved, setup.start), 0.0);
    Scene fewer = setup.start;
    fewer.gaussians.pop_back();
    EXPECT_THROW(relative_parameter_distance(fewer, setup.start), ConfigError);
}

} // namespace
} // namespace spof
