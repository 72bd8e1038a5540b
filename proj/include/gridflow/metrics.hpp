#pragma once

#include <cstddef>
#include <span>
#include <string>

namespace gridflow {

/// Ranking quality over a set of (source, destination) queries. Ties are
/// broken optimistically: only strictly higher scores push the target down.
struct MetricsReport {
    double hits1 = 0.0;
    double hits5 = 0.0;
    double hits10 = 0.0;
    double mr = 0.0;
    double mrr = 0.0;
    std::size_t n = 0;
};

inline constexpr const char* kTiePolicy = "optimistic";

/// 1 + number of scores strictly greater than scores[target].
std::size_t rank_of(std::span<const double> scores, std::size_t target);

/// Throws std::invalid_argument on an empty list or a zero rank.
MetricsReport metrics(std::span<const std::size_t> ranks);

}  // namespace gridflow
