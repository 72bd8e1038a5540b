#pragma once

#include <cstdint>
#include <vector>

#include "gridflow/autodiff/tensor.hpp"

namespace gridflow::ad {

/// Moment estimates for a fixed parameter list. Moments are created lazily on
/// the first step and must keep matching the parameter shapes afterwards.
template <typename Real>
struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::int64_t step = 0;
    std::vector<Matrix<Real>> m;
    std::vector<Matrix<Real>> v;
};

/// One bias-corrected Adam update using each parameter's accumulated grad
/// (an empty grad counts as zero). Parameters flagged in `decay_mask` are
/// first shrunk by p -= lr * weight_decay * p. Throws std::invalid_argument on
/// shape or length mismatches and on lr <= 0.
template <typename Real>
void adam_step(std::vector<Tensor<Real>>& params, AdamState<Real>& state, double lr, double weight_decay,
               const std::vector<bool>& decay_mask);

}  // namespace gridflow::ad
