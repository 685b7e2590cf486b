#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <iterator>
#include <vector>

// Set algebra on strictly increasing index vectors.
namespace spof::sorted {

using Index = std::uint32_t;
using IndexVec = std::vector<Index>;

inline IndexVec set_intersection(const IndexVec& a, const IndexVec& b) {
    IndexVec out;
    out.reserve(std::min(a.size(), b.size()));
    std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
    return out;
}

inline IndexVec set_difference(const IndexVec& a, const IndexVec& b) {
    IndexVec out;
    out.reserve(a.size());
    std::set_difference(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
    return out;
}

inline IndexVec set_union(const IndexVec& a, const IndexVec& b) {
    IndexVec out;
    out.reserve(a.size() + b.size());
    std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
    return out;
}

inline std::size_t intersection_size(const IndexVec& a, const IndexVec& b) {
    std::size_t count = 0;
    auto ia = a.begin();
    auto ib = b.begin();
    while (ia != a.end() && ib != b.end()) {
        if (*ia < *ib) {
            ++ia;
        } else if (*ib < *ia) {
            ++ib;
        } else {
            ++count;
            ++ia;
            ++ib;
        }
    }
    return count;
}

inline bool is_strictly_increasing(const IndexVec& a) {
    return std::adjacent_find(a.begin(), a.end(), [](Index x, Index y) { return x >= y; }) == a.end();
}

} // namespace spof::sorted
