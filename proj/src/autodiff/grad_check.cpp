#include "gridflow/autodiff/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <utility>

#include "gridflow/rng.hpp"

namespace gridflow::ad {

template <typename Real>
GradCheckResult grad_check(const std::function<Tensor<Real>()>& f, std::vector<Tensor<Real>>& params,
                           const GradCheckOptions& options) {
    for (Tensor<Real>& p : params) {
        p.zero_grad();
    }
    backward(f());

    // (parameter, flat coordinate) pairs over every entry.
    std::vector<std::pair<std::size_t, Eigen::Index>> coords;
    for (std::size_t i = 0; i < params.size(); ++i) {
        for (Eigen::Index k = 0; k < params[i].size(); ++k) {
            coords.emplace_back(i, k);
        }
    }
    const auto wanted = static_cast<std::size_t>(std::ceil(options.fraction * static_cast<double>(coords.size())));
    const std::size_t count = std::min(coords.size(), std::max(wanted, options.min_coords));
    Rng rng(options.seed);
    rng.shuffle(coords);
    coords.resize(count);

    GradCheckResult result;
    NoGradGuard guard;
    for (const auto& [i, k] : coords) {
        Real* x = params[i].mutable_value().data() + k;
        const Real saved = *x;
        *x = saved + static_cast<Real>(options.eps);
        const double up = f().item();
        *x = saved - static_cast<Real>(options.eps);
        const double down = f().item();
        *x = saved;
        const double numeric = (up - down) / (2.0 * options.eps);
        const double analytic = params[i].grad().data()[k];
        const double scale = std::max({1.0, std::abs(analytic), std::abs(numeric)});
        result.max_error = std::max(result.max_error, std::abs(analytic - numeric) / scale);
        ++result.checked;
    }
    return result;
}

template GradCheckResult grad_check(const std::function<Tensor<float>()>&, std::vector<Tensor<float>>&,
                                    const GradCheckOptions&);
template GradCheckResult grad_check(const std::function<Tensor<double>()>&, std::vector<Tensor<double>>&,
                                    const GradCheckOptions&);

}  // namespace gridflow::ad
