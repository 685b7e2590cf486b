#include "spof/errors.hpp"
#include "spof/transfer_plan.hpp"

#include "oracles.hpp"
#include "spof/culling.hpp"
#include "plan_fixtures.hpp"

#include <gtest/gtest.h>

#include <map>
#include <random>

namespace spof {
namespace {

using fixture::bernoulli_sets;
using fixture::plan;

TEST(PlanBatch, SetDefinitionsOnSmallExample) {
    const auto p = plan({{7, {0, 1, 2}, 6}, {8, {1, 2, 3}, 6}, {9, {3, 4}, 6}});
    ASSERT_EQ(p.plans.size(), 3u);
    const auto& a = p.plans[0];
    EXPECT_EQ(a.microbatch, 1u);
    EXPECT_EQ(a.view_id, 7u);
    EXPECT_EQ(a.load_set, (sorted::IndexVec{0, 1, 2}));
    EXPECT_TRUE(a.cache_copy_set.empty());
    EXPECT_EQ(a.grad_store_set, (sorted::IndexVec{0}));
    EXPECT_EQ(a.grad_carry_set, (sorted::IndexVec{1, 2}));
    EXPECT_EQ(a.adam_set, (sorted::IndexVec{0}));
    const auto& b = p.plans[1];
    EXPECT_EQ(b.load_set, (sorted::IndexVec{3}));
    EXPECT_EQ(b.cache_copy_set, (sorted::IndexVec{1, 2}));
    EXPECT_EQ(b.grad_store_set, (sorted::IndexVec{1, 2}));
    EXPECT_EQ(b.grad_carry_set, (sorted::IndexVec{3}));
    EXPECT_EQ(b.adam_set, (sorted::IndexVec{1, 2}));
    const auto& c = p.plans[2];
    EXPECT_EQ(c.load_set, (sorted::IndexVec{4}));
    EXPECT_EQ(c.cache_copy_set, (sorted::IndexVec{3}));
    EXPECT_EQ(c.grad_store_set, (sorted::IndexVec{3, 4}));
    EXPECT_TRUE(c.grad_carry_set.empty());
    EXPECT_EQ(c.adam_set, (sorted::IndexVec{3, 4}));
    EXPECT_EQ(p.schedule.finalized[0], (sorted::IndexVec{5}));
    EXPECT_NO_THROW(validate_plans(p.plans, p.ordered));
}

TEST(PlanBatch, SingleMicrobatchLoadsAndStoresEverything) {
    const auto p = plan({{0, {2, 5, 9}, 10}});
    const auto& only = p.plans.front();
    EXPECT_EQ(only.load_set, p.ordered[0].indices);
    EXPECT_EQ(only.grad_store_set, p.ordered[0].indices);
    EXPECT_EQ(only.adam_set, p.ordered[0].indices);
    EXPECT_TRUE(only.cache_copy_set.empty());
    EXPECT_TRUE(only.grad_carry_set.empty());
}

TEST(PlanBatch, IdenticalNeighborsCopyEverything) {
    const auto p = plan({{0, {1, 2, 3}, 5}, {1, {1, 2, 3}, 5}});
    EXPECT_TRUE(p.plans[1].load_set.empty());
    EXPECT_EQ(p.plans[1].cache_copy_set, (sorted::IndexVec{1, 2, 3}));
    EXPECT_TRUE(p.plans[0].grad_store_set.empty());
    EXPECT_TRUE(p.plans[0].adam_set.empty());
    const auto v = volume(p.plans, AttributeLayout{});
    EXPECT_EQ(v.host_to_device_bytes, 3u * 256u);
    EXPECT_EQ(v.device_to_host_bytes, 3u * 256u);
    EXPECT_EQ(v.cache_saved_bytes, 3u * 256u);
}

TEST(PlanBatch, RandomPlansSatisfyInvariants) {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 50; ++trial) {
        const auto p = plan(bernoulli_sets(1 + trial % 9, 200, 0.05 + 0.01 * trial, rng));
        EXPECT_NO_THROW(validate_plans(p.plans, p.ordered));
        EXPECT_EQ(stale_cache_copies(p.plans, p.schedule), 0u);
        for (const auto& pl : p.plans) {
            EXPECT_TRUE(sorted::is_strictly_increasing(pl.load_set));
            EXPECT_TRUE(sorted::is_strictly_increasing(pl.grad_store_set));
            EXPECT_EQ(pl.working_set_size(), p.ordered[pl.microbatch - 1].size());
        }
    }
}

TEST(PlanBatch, RejectsScheduleFromAnotherOrder) {
    std::mt19937_64 rng(2);
    const auto sets = bernoulli_sets(4, 50, 0.3, rng);
    const auto schedule = finalization_schedule(sets, 50);
    std::vector<SparsitySet> reversed(sets.rbegin(), sets.rend());
    EXPECT_THROW(plan_batch(reversed, schedule), ConfigError);
    const std::vector<SparsitySet> shorter(sets.begin(), sets.begin() + 3);
    EXPECT_THROW(plan_batch(shorter, schedule), ConfigError);
}

TEST(ValidatePlans, CatchesTamperedPlans) {
    std::mt19937_64 rng(3);
    const auto p = plan(bernoulli_sets(4, 60, 0.4, rng));
    auto bad = p.plans;
    bad[1].load_set.push_back(59);
    bad[1].load_set.erase(bad[1].load_set.begin());
    EXPECT_THROW(validate_plans(bad, p.ordered), ConfigError);
    bad = p.plans;
    std::swap(bad[0], bad[1]);
    EXPECT_THROW(validate_plans(bad, p.ordered), ConfigError);
    bad = p.plans;
    bad.pop_back();
    EXPECT_THROW(validate_plans(bad, p.ordered), ConfigError);
}

TEST(Volume, MatchesReplayOracle) {
    std::mt19937_64 rng(4);
    const AttributeLayout layout;
    for (int trial = 0; trial < 40; ++trial) {
        const std::uint32_t n = 100 + 10 * trial;
        const auto p = plan(bernoulli_sets(1 + trial % 12, n, 0.02 + 0.02 * (trial % 20), rng));
        const auto v = volume(p.plans, layout);
        const auto r = oracle::replay_volume(p.ordered, n, layout);
        EXPECT_EQ(v.host_to_device_bytes, r.host_to_device_bytes);
        EXPECT_EQ(v.device_to_host_bytes, r.device_to_host_bytes);
        EXPECT_EQ(v.device_copy_bytes, r.device_copy_bytes);
        EXPECT_EQ(v.writeback_bytes, r.writeback_bytes);
        ASSERT_EQ(v.steps.size(), p.plans.size());
        StepVolume sum;
        for (const auto& s : v.steps) {
            sum.host_to_device_bytes += s.host_to_device_bytes;
            sum.device_to_host_bytes += s.device_to_host_bytes;
            sum.device_copy_bytes += s.device_copy_bytes;
            sum.writeback_bytes += s.writeback_bytes;
        }
        EXPECT_EQ(sum.host_to_device_bytes, v.host_to_device_bytes);
        EXPECT_EQ(sum.writeback_bytes, v.writeback_bytes);
    }
}

TEST(Volume, GradientsReachTheHostOncePerRun) {
    // Replays the plan with one integer contribution per appearance.
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 30; ++trial) {
        const std::uint32_t n = 80;
        const auto p = plan(bernoulli_sets(2 + trial % 8, n, 0.5, rng));
        std::map<sorted::Index, long> device, host, expected;
        for (std::size_t i = 0; i < p.plans.size(); ++i) {
            const auto& pl = p.plans[i];
            std::map<sorted::Index, long> fresh;
            for (auto g : p.ordered[i].indices) {
                const long contribution = long(i + 1) * 1000 + g;
                expected[g] += contribution;
                fresh[g] = contribution + (device.contains(g) ? device[g] : 0);
            }
            device.clear();
            for (auto g : pl.grad_carry_set) device[g] = fresh.at(g);
            for (auto g : pl.grad_store_set) host[g] += fresh.at(g);
        }
        EXPECT_TRUE(device.empty());
        EXPECT_EQ(host, expected);
    }
}

TEST(Volume, CachingAccountsForEveryAvoidedLoad) {
    std::mt19937_64 rng(6);
    const AttributeLayout layout;
    for (int trial = 0; trial < 30; ++trial) {
        const auto p = plan(bernoulli_sets(2 + trial % 10, 300, 0.3, rng));
        const auto clm = volume(p.plans, layout);
        const auto nocache = no_cache_volume(p.ordered, layout);
        const auto naive = naive_offload_volume(300, p.ordered.size(), layout);
        EXPECT_EQ(nocache.host_to_device_bytes, clm.host_to_device_bytes + clm.cache_saved_bytes);
        EXPECT_LE(clm.host_to_device_bytes, nocache.host_to_device_bytes);
        EXPECT_LE(clm.device_to_host_bytes, nocache.device_to_host_bytes);
        EXPECT_LE(clm.total_bytes(), naive.total_bytes());
    }
}

TEST(Volume, NaiveVolumeIsExact) {
    const auto v = naive_offload_volume(1000, 4, AttributeLayout{});
    EXPECT_EQ(v.host_to_device_bytes, 4u * 1000u * 256u);
    EXPECT_EQ(v.device_to_host_bytes, 4u * 1000u * 256u);
    EXPECT_EQ(v.writeback_bytes, 0u);
    EXPECT_EQ(v.steps.size(), 4u);
}

TEST(Volume, ReversingTheOrderSwapsLoadsAndStores) {
    std::mt19937_64 rng(7);
    const AttributeLayout layout;
    for (int trial = 0; trial < 30; ++trial) {
        const auto sets = bernoulli_sets(2 + trial % 9, 150, 0.4, rng);
        const auto forward = volume(plan(sets).plans, layout);
        const auto backward = volume(plan({sets.rbegin(), sets.rend()}).plans, layout);
        EXPECT_EQ(forward.host_to_device_bytes, backward.device_to_host_bytes);
        EXPECT_EQ(forward.device_to_host_bytes, backward.host_to_device_bytes);
        EXPECT_EQ(forward.host_to_device_bytes + forward.device_to_host_bytes,
                  backward.host_to_device_bytes + backward.device_to_host_bytes);
        EXPECT_EQ(forward.writeback_bytes, backward.writeback_bytes);
    }
}

TEST(Volume, ModerateSparsityReductionBand) {
    SceneSpec spec;
    spec.gaussians = 20'000;
    spec.views = 16;
    spec.path = CameraPath::GridFlyover;
    spec.box_min = {-10.0, -10.0, -1.0};
    spec.box_max = {10.0, 10.0, 1.0};
    spec.flyover_altitude = 8.0;
    const Scene scene = generate_synthetic_scene(spec, 1);
    const auto sets = cull_all(scene, scene.views);
    const double rho = sparsity_stats(sets).mean;
    const auto order = order_views(sets, OrderStrategy::Tsp, scene.views, scene.aabb, 1, SearchBudget::moves(100'000));
    const auto p = plan(apply_order(sets, order));
    const auto clm = volume(p.plans, AttributeLayout{});
    const auto naive = naive_offload_volume(scene.size(), sets.size(), AttributeLayout{});
    const double reduction = 1.0 - double(clm.total_bytes()) / double(naive.total_bytes());
    EXPECT_GT(rho, 0.1);
    EXPECT_GE(reduction, 0.3) << "rho " << rho;
    EXPECT_LE(reduction, 0.9) << "rho " << rho;
}

TEST(StaleCacheCopies, CountsReuseAfterFinalization) {
    const auto p = plan({{0, {0, 1}, 3}, {1, {1, 2}, 3}});
    EXPECT_EQ(stale_cache_copies(p.plans, p.schedule), 0u);
    auto schedule = p.schedule;
    schedule.last_touch[1] = 1; // pretend Gaussian 1 was final after microbatch 1
    EXPECT_EQ(stale_cache_copies(p.plans, schedule), 1u);
}

} // namespace
} // namespace spof
