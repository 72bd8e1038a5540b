#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "gridflow/autodiff/tensor.hpp"

namespace gridflow::ad {

struct GradCheckOptions {
    double eps = 1e-5;
    double fraction = 0.05;      // share of coordinates probed
    std::size_t min_coords = 50;  // probe at least this many (or all, if fewer)
    std::uint64_t seed = 1;
};

struct GradCheckResult {
    double max_error = 0.0;
    std::size_t checked = 0;
};

/// Compares backward() against central differences on a random subsample of
/// parameter coordinates. `f` must rebuild the loss from the current parameter
/// values on every call. The error per coordinate is
/// |analytic - numeric| / max(1, |analytic|, |numeric|).
template <typename Real>
GradCheckResult grad_check(const std::function<Tensor<Real>()>& f, std::vector<Tensor<Real>>& params,
                           const GradCheckOptions& options = {});

}  // namespace gridflow::ad
