#include "gridflow/metrics.hpp"

#include <stdexcept>
#include <string>

namespace gridflow {

std::size_t rank_of(std::span<const double> scores, std::size_t target) {
    if (target >= scores.size()) {
        throw std::invalid_argument("rank_of: target " + std::to_string(target) + " outside score vector of size " +
                                    std::to_string(scores.size()));
    }
    const double t = scores[target];
    std::size_t above = 0;
    for (const double s : scores) {
        above += s > t ? 1 : 0;
    }
    return above + 1;
}

MetricsReport metrics(std::span<const std::size_t> ranks) {
    if (ranks.empty()) {
        throw std::invalid_argument("metrics: empty rank list");
    }
    MetricsReport r;
    r.n = ranks.size();
    double sum_rank = 0.0;
    double sum_rr = 0.0;
    std::size_t h1 = 0, h5 = 0, h10 = 0;
    for (const std::size_t k : ranks) {
        if (k == 0) {
            throw std::invalid_argument("metrics: ranks are 1-based");
        }
        h1 += k <= 1 ? 1 : 0;
        h5 += k <= 5 ? 1 : 0;
        h10 += k <= 10 ? 1 : 0;
        sum_rank += static_cast<double>(k);
        sum_rr += 1.0 / static_cast<double>(k);
    }
    const auto n = static_cast<double>(r.n);
    r.hits1 = static_cast<double>(h1) / n;
    r.hits5 = static_cast<double>(h5) / n;
    r.hits10 = static_cast<double>(h10) / n;
    r.mr = sum_rank / n;
    r.mrr = sum_rr / n;
    return r;
}

}  // namespace gridflow
