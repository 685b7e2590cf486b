#pragma once

#include "spof/culling.hpp"

#include <chrono>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace spof {

/// Pairwise |S_i xor S_j| between the views of one batch.
class DistanceMatrix {
public:
    DistanceMatrix() = default;
    explicit DistanceMatrix(std::size_t n) : n_(n), d_(n * n, 0) {}

    std::size_t size() const noexcept { return n_; }
    std::uint64_t operator()(std::size_t i, std::size_t j) const { return d_[i * n_ + j]; }
    void set(std::size_t i, std::size_t j, std::uint64_t v) {
        d_[i * n_ + j] = v;
        d_[j * n_ + i] = v;
    }

private:
    std::size_t n_ = 0;
    std::vector<std::uint64_t> d_;
};

DistanceMatrix distance_matrix(std::span<const SparsitySet> sets);

/// Open Hamiltonian path; no edge back to the start.
struct Tour {
    std::vector<std::uint32_t> order;
    std::uint64_t length = 0;
};

std::uint64_t path_length(std::span<const std::uint32_t> order, const DistanceMatrix& m);
bool is_permutation_of_range(std::span<const std::uint32_t> order, std::size_t n);

/// Greedy chain from `start`; ties go to the lowest index.
Tour nearest_neighbor_init(const DistanceMatrix& m, std::uint32_t start);

/// Either a wall-clock limit or a cap on evaluated candidate moves. The
/// move-count form is the reproducible one.
struct SearchBudget {
    enum class Kind { WallClock, MoveCount };
    Kind kind = Kind::WallClock;
    std::chrono::nanoseconds wall{std::chrono::milliseconds(1)};
    std::uint64_t max_evaluations = 0;

    static SearchBudget wall_clock(std::chrono::nanoseconds d) { return {Kind::WallClock, d, 0}; }
    static SearchBudget moves(std::uint64_t n) { return {Kind::MoveCount, {}, n}; }
};

struct LocalSearchStats {
    std::uint64_t evaluations = 0;
    std::uint64_t two_opt_moves = 0;
    std::uint64_t three_opt_moves = 0;
    bool converged = false;
};

/// First-improvement 2-opt and 3-opt on an open path. The seed permutes the
/// scan order of the first cut position.
Tour local_search(const Tour& tour, const DistanceMatrix& m, const SearchBudget& budget,
                  std::uint64_t seed, LocalSearchStats* stats = nullptr);

inline constexpr std::size_t kHeldKarpMaxNodes = 15;

/// Exact shortest open path by dynamic programming over subsets. Rejects n > 15.
Tour held_karp_exact(const DistanceMatrix& m);

enum class OrderStrategy { Random, Camera, GsCount, Tsp };

std::string to_string(OrderStrategy s);
OrderStrategy order_strategy_from_string(const std::string& name);

/// Returns a permutation of positions into `sets` (and `views`, which is parallel).
std::vector<std::uint32_t> order_views(std::span<const SparsitySet> sets, OrderStrategy strategy,
                                       std::span<const CameraView> views, const Aabb& scene_box,
                                       std::uint64_t seed, const SearchBudget& budget);

/// Last-touch microbatch per Gaussian and its preimages.
///
/// Microbatches are numbered 1..B in execution order; `last_touch[g] == 0`
/// means no view in the batch touches g. `finalized[i]` lists the Gaussians
/// whose optimizer update becomes legal right after microbatch i.
struct FinalizationSchedule {
    std::vector<std::uint32_t> last_touch;
    std::vector<sorted::IndexVec> finalized; // size B + 1

    std::size_t microbatches() const noexcept { return finalized.empty() ? 0 : finalized.size() - 1; }
};

FinalizationSchedule finalization_schedule(std::span<const SparsitySet> ordered_sets, std::uint64_t n);

std::vector<SparsitySet> apply_order(std::span<const SparsitySet> sets, std::span<const std::uint32_t> order);

} // namespace spof
