#include "spof/schedule.hpp"

#include "spof/errors.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <random>

namespace spof {

DistanceMatrix distance_matrix(std::span<const SparsitySet> sets) {
    for (const auto& s : sets) {
        if (s.n_total != sets.front().n_total) {
            throw ConfigError("sparsity sets disagree on the scene size");
        }
    }
    DistanceMatrix m(sets.size());
    for (std::size_t i = 0; i < sets.size(); ++i) {
        for (std::size_t j = i + 1; j < sets.size(); ++j) {
            const std::size_t common = sorted::intersection_size(sets[i].indices, sets[j].indices);
            m.set(i, j, sets[i].size() + sets[j].size() - 2 * common);
        }
    }
    return m;
}

std::uint64_t path_length(std::span<const std::uint32_t> order, const DistanceMatrix& m) {
    std::uint64_t length = 0;
    for (std::size_t i = 1; i < order.size(); ++i) {
        length += m(order[i - 1], order[i]);
    }
    return length;
}

bool is_permutation_of_range(std::span<const std::uint32_t> order, std::size_t n) {
    if (order.size() != n) {
        return false;
    }
    std::vector<bool> seen(n, false);
    for (auto v : order) {
        if (v >= n || seen[v]) {
            return false;
        }
        seen[v] = true;
    }
    return true;
}

Tour nearest_neighbor_init(const DistanceMatrix& m, std::uint32_t start) {
    const std::size_t n = m.size();
    if (n == 0) {
        return {};
    }
    if (start >= n) {
        throw ConfigError("nearest-neighbor start index out of range");
    }
    std::vector<bool> visited(n, false);
    Tour tour;
    tour.order.reserve(n);
    tour.order.push_back(start);
    visited[start] = true;
    std::uint32_t current = start;
    for (std::size_t step = 1; step < n; ++step) {
        std::uint32_t best = 0;
        std::uint64_t best_d = std::numeric_limits<std::uint64_t>::max();
        for (std::uint32_t next = 0; next < n; ++next) {
            if (!visited[next] && m(current, next) < best_d) {
                best_d = m(current, next);
                best = next;
            }
        }
        visited[best] = true;
        tour.order.push_back(best);
        current = best;
    }
    tour.length = path_length(tour.order, m);
    return tour;
}

namespace {

class MoveBudget {
public:
    explicit MoveBudget(const SearchBudget& budget)
        : budget_(budget), deadline_(std::chrono::steady_clock::now() + budget.wall) {}

    // Charges one candidate evaluation; false once the budget is spent.
    bool charge() {
        ++evaluations_;
        if (budget_.kind == SearchBudget::Kind::MoveCount) {
            return evaluations_ <= budget_.max_evaluations;
        }
        if ((evaluations_ & 0xFF) == 0 && std::chrono::steady_clock::now() >= deadline_) {
            expired_ = true;
        }
        return !expired_;
    }
    std::uint64_t evaluations() const { return evaluations_; }

private:
    SearchBudget budget_;
    std::chrono::steady_clock::time_point deadline_;
    std::uint64_t evaluations_ = 0;
    bool expired_ = false;
};

constexpr std::uint32_t kNone = std::numeric_limits<std::uint32_t>::max();

struct PathCost {
    const DistanceMatrix& m;
    std::int64_t operator()(std::uint32_t a, std::uint32_t b) const {
        return (a == kNone || b == kNone) ? 0 : static_cast<std::int64_t>(m(a, b));
    }
};

enum class Outcome { Improved, NoMove, OutOfBudget };

// Reverses p[i..k) when that shortens the path.
Outcome try_two_opt(std::vector<std::uint32_t>& p, const PathCost& c, std::span<const std::size_t> scan,
                    MoveBudget& budget) {
    const std::size_t n = p.size();
    for (std::size_t i : scan) {
        const std::uint32_t a = i > 0 ? p[i - 1] : kNone;
        for (std::size_t k = i + 2; k <= n; ++k) {
            if (!budget.charge()) return Outcome::OutOfBudget;
            const std::uint32_t d = k < n ? p[k] : kNone;
            const std::int64_t delta = c(a, p[k - 1]) + c(p[i], d) - c(a, p[i]) - c(p[k - 1], d);
            if (delta < 0) {
                std::reverse(p.begin() + static_cast<std::ptrdiff_t>(i), p.begin() + static_cast<std::ptrdiff_t>(k));
                return Outcome::Improved;
            }
        }
    }
    return Outcome::NoMove;
}

// Pure 3-opt reconnections of segments B = p[i..j) and C = p[j..k) that are
// not a single reversal: B'C', CB, CB', C'B.
Outcome try_three_opt(std::vector<std::uint32_t>& p, const PathCost& c, std::span<const std::size_t> scan,
                      MoveBudget& budget) {
    const std::size_t n = p.size();
    for (std::size_t i : scan) {
        const std::uint32_t a = i > 0 ? p[i - 1] : kNone;
        for (std::size_t j = i + 1; j < n; ++j) {
            for (std::size_t k = j + 1; k <= n; ++k) {
                const std::uint32_t b1 = p[i], b2 = p[j - 1], c1 = p[j], c2 = p[k - 1];
                const std::uint32_t d = k < n ? p[k] : kNone;
                const std::int64_t old_cost = c(a, b1) + c(b2, c1) + c(c2, d);
                // {first segment start, end, second segment start, end}
                const std::array<std::array<std::uint32_t, 4>, 4> variants = {{
                    {b2, b1, c2, c1},
                    {c1, c2, b1, b2},
                    {c1, c2, b2, b1},
                    {c2, c1, b1, b2},
                }};
                for (std::size_t v = 0; v < variants.size(); ++v) {
                    if (!budget.charge()) return Outcome::OutOfBudget;
                    const auto& e = variants[v];
                    const std::int64_t new_cost = c(a, e[0]) + c(e[1], e[2]) + c(e[3], d);
                    if (new_cost >= old_cost) continue;

                    std::vector<std::uint32_t> seg_b(p.begin() + static_cast<std::ptrdiff_t>(i),
                                                     p.begin() + static_cast<std::ptrdiff_t>(j));
                    std::vector<std::uint32_t> seg_c(p.begin() + static_cast<std::ptrdiff_t>(j),
                                                     p.begin() + static_cast<std::ptrdiff_t>(k));
                    std::vector<std::uint32_t> middle;
                    middle.reserve(k - i);
                    const auto append = [&](std::vector<std::uint32_t> seg, bool reversed) {
                        if (reversed) std::reverse(seg.begin(), seg.end());
                        middle.insert(middle.end(), seg.begin(), seg.end());
                    };
                    switch (v) {
                    case 0: append(seg_b, true); append(seg_c, true); break;
                    case 1: append(seg_c, false); append(seg_b, false); break;
                    case 2: append(seg_c, false); append(seg_b, true); break;
                    default: append(seg_c, true); append(seg_b, false); break;
                    }
                    std::copy(middle.begin(), middle.end(), p.begin() + static_cast<std::ptrdiff_t>(i));
                    return Outcome::Improved;
                }
            }
        }
    }
    return Outcome::NoMove;
}

} // namespace

Tour local_search(const Tour& tour, const DistanceMatrix& m, const SearchBudget& budget, std::uint64_t seed,
                  LocalSearchStats* stats) {
    if (!is_permutation_of_range(tour.order, m.size())) {
        throw ConfigError("local search needs a tour that is a permutation of the matrix nodes");
    }
    std::vector<std::uint32_t> p = tour.order;
    LocalSearchStats local;
    const std::size_t n = p.size();
    MoveBudget charge(budget);
    const PathCost cost{m};

    std::vector<std::size_t> scan(n);
    std::iota(scan.begin(), scan.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    std::shuffle(scan.begin(), scan.end(), rng);

    if (n <= 2) {
        local.converged = true;
    }
    while (!local.converged) {
        Outcome outcome = try_two_opt(p, cost, scan, charge);
        if (outcome == Outcome::Improved) {
            ++local.two_opt_moves;
            continue;
        }
        if (outcome == Outcome::NoMove) {
            outcome = try_three_opt(p, cost, scan, charge);
            if (outcome == Outcome::Improved) {
                ++local.three_opt_moves;
                continue;
            }
        }
        local.converged = outcome == Outcome::NoMove;
        break;
    }
    local.evaluations = charge.evaluations();
    if (stats != nullptr) {
        *stats = local;
    }
    return {p, path_length(p, m)};
}

Tour held_karp_exact(const DistanceMatrix& m) {
    const std::size_t n = m.size();
    if (n > kHeldKarpMaxNodes) {
        throw ConfigError("exact path search is limited to " + std::to_string(kHeldKarpMaxNodes) + " nodes");
    }
    if (n == 0) {
        return {};
    }
    constexpr std::uint64_t kInf = std::numeric_limits<std::uint64_t>::max();
    const std::size_t full = (std::size_t{1} << n) - 1;
    std::vector<std::uint64_t> best((full + 1) * n, kInf);
    std::vector<std::uint8_t> parent((full + 1) * n, 0xFF);
    for (std::size_t j = 0; j < n; ++j) {
        best[(std::size_t{1} << j) * n + j] = 0;
    }
    for (std::size_t mask = 1; mask <= full; ++mask) {
        for (std::size_t j = 0; j < n; ++j) {
            const std::uint64_t here = best[mask * n + j];
            if (here == kInf || !(mask & (std::size_t{1} << j))) continue;
            for (std::size_t next = 0; next < n; ++next) {
                if (mask & (std::size_t{1} << next)) continue;
                const std::size_t to = mask | (std::size_t{1} << next);
                const std::uint64_t cand = here + m(j, next);
                if (cand < best[to * n + next]) {
                    best[to * n + next] = cand;
                    parent[to * n + next] = static_cast<std::uint8_t>(j);
                }
            }
        }
    }
    std::size_t end = 0;
    for (std::size_t j = 1; j < n; ++j) {
        if (best[full * n + j] < best[full * n + end]) end = j;
    }
    Tour tour;
    tour.length = best[full * n + end];
    std::size_t mask = full;
    std::size_t node = end;
    while (true) {
        tour.order.push_back(static_cast<std::uint32_t>(node));
        const std::uint8_t prev = parent[mask * n + node];
        if (prev == 0xFF) break;
        mask &= ~(std::size_t{1} << node);
        node = prev;
    }
    std::reverse(tour.order.begin(), tour.order.end());
    return tour;
}

std::string to_string(OrderStrategy s) {
    switch (s) {
    case OrderStrategy::Random: return "random";
    case OrderStrategy::Camera: return "camera";
    case OrderStrategy::GsCount: return "gscount";
    case OrderStrategy::Tsp: return "tsp";
    }
    return "random";
}

OrderStrategy order_strategy_from_string(const std::string& name) {
    if (name == "random") return OrderStrategy::Random;
    if (name == "camera") return OrderStrategy::Camera;
    if (name == "gscount") return OrderStrategy::GsCount;
    if (name == "tsp") return OrderStrategy::Tsp;
    throw ConfigError("unknown strategy '" + name + "' (expected random, camera, gscount or tsp)");
}

std::vector<std::uint32_t> order_views(std::span<const SparsitySet> sets, OrderStrategy strategy,
                                       std::span<const CameraView> views, const Aabb& scene_box,
                                       std::uint64_t seed, const SearchBudget& budget) {
    const std::size_t n = sets.size();
    std::vector<std::uint32_t> order(n);
    std::iota(order.begin(), order.end(), 0u);
    if (n <= 1) {
        return order;
    }
    switch (strategy) {
    case OrderStrategy::Random: {
        std::mt19937_64 rng(seed);
        std::shuffle(order.begin(), order.end(), rng);
        break;
    }
    case OrderStrategy::Camera: {
        if (views.size() != n) {
            throw ConfigError("camera ordering needs one view per sparsity set");
        }
        const int axis = scene_box.principal_axis();
        std::stable_sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
            const double ka = views[a].center()[axis];
            const double kb = views[b].center()[axis];
            if (ka != kb) return ka < kb;
            return views[a].id < views[b].id;
        });
        break;
    }
    case OrderStrategy::GsCount:
        std::stable_sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
            if (sets[a].size() != sets[b].size()) return sets[a].size() > sets[b].size();
            return sets[a].view_id < sets[b].view_id;
        });
        break;
    case OrderStrategy::Tsp: {
        const DistanceMatrix m = distance_matrix(sets);
        std::mt19937_64 rng(seed);
        const auto start = static_cast<std::uint32_t>(rng() % n);
        order = local_search(nearest_neighbor_init(m, start), m, budget, seed).order;
        // Both directions have the same length; the last view's whole set is
        // finalized last, so end on the smaller one.
        if (sets[order.back()].size() > sets[order.front()].size()) {
            std::reverse(order.begin(), order.end());
        }
        break;
    }
    }
    return order;
}

FinalizationSchedule finalization_schedule(std::span<const SparsitySet> ordered_sets, std::uint64_t n) {
    FinalizationSchedule schedule;
    schedule.last_touch.assign(n, 0);
    schedule.finalized.resize(ordered_sets.size() + 1);
    for (std::size_t i = 0; i < ordered_sets.size(); ++i) {
        const auto& s = ordered_sets[i];
        if (s.n_total != n) {
            throw ConfigError("sparsity set scene size does not match the schedule");
        }
        s.validate();
        for (auto g : s.indices) {
            schedule.last_touch[g] = static_cast<std::uint32_t>(i + 1);
        }
    }
    for (std::size_t g = 0; g < n; ++g) {
        schedule.finalized[schedule.last_touch[g]].push_back(static_cast<sorted::Index>(g));
    }
    return schedule;
}

std::vector<SparsitySet> apply_order(std::span<const SparsitySet> sets, std::span<const std::uint32_t> order) {
    if (!is_permutation_of_range(order, sets.size())) {
        throw ConfigError("order is not a permutation of the batch");
    }
    std::vector<SparsitySet> out;
    out.reserve(order.size());
    for (auto i : order) {
        out.push_back(sets[i]);
    }
    return out;
}

} // namespace spof
