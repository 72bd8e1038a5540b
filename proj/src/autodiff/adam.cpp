#include "gridflow/autodiff/adam.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace gridflow::ad {

template <typename Real>
void adam_step(std::vector<Tensor<Real>>& params, AdamState<Real>& state, double lr, double weight_decay,
               const std::vector<bool>& decay_mask) {
    if (!(lr > 0.0)) {
        throw std::invalid_argument("adam_step: learning rate must be positive, got " + std::to_string(lr));
    }
    if (decay_mask.size() != params.size()) {
        throw std::invalid_argument("adam_step: decay mask has " + std::to_string(decay_mask.size()) +
                                    " entries for " + std::to_string(params.size()) + " parameters");
    }
    if (state.m.empty() && state.v.empty()) {
        for (const Tensor<Real>& p : params) {
            state.m.push_back(Matrix<Real>::Zero(p.rows(), p.cols()));
            state.v.push_back(Matrix<Real>::Zero(p.rows(), p.cols()));
        }
    }
    if (state.m.size() != params.size() || state.v.size() != params.size()) {
        throw std::invalid_argument("adam_step: optimizer state tracks " + std::to_string(state.m.size()) +
                                    " parameters, got " + std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        const Tensor<Real>& p = params[i];
        const bool grad_ok = p.grad().size() == 0 || (p.grad().rows() == p.rows() && p.grad().cols() == p.cols());
        if (state.m[i].rows() != p.rows() || state.m[i].cols() != p.cols() || !grad_ok) {
            throw std::invalid_argument("adam_step: parameter " + std::to_string(i) + " has shape " +
                                        p.shape_string() + " but state/grad shape differs");
        }
    }

    ++state.step;
    const auto t = static_cast<double>(state.step);
    const auto b1 = static_cast<Real>(state.beta1);
    const auto b2 = static_cast<Real>(state.beta2);
    const double c1 = 1.0 - std::pow(state.beta1, t);
    const double c2 = 1.0 - std::pow(state.beta2, t);
    const auto step_size = static_cast<Real>(lr / c1);
    const auto inv_sqrt_c2 = static_cast<Real>(1.0 / std::sqrt(c2));
    const auto eps = static_cast<Real>(state.eps);
    const auto shrink = static_cast<Real>(1.0 - lr * weight_decay);

    for (std::size_t i = 0; i < params.size(); ++i) {
        Matrix<Real>& value = params[i].mutable_value();
        if (decay_mask[i]) {
            value *= shrink;
        }
        if (params[i].grad().size() == 0) {
            state.m[i] *= b1;
            state.v[i] *= b2;
        } else {
            const Matrix<Real>& g = params[i].grad();
            state.m[i] = b1 * state.m[i] + (Real(1) - b1) * g;
            state.v[i] = b2 * state.v[i] + (Real(1) - b2) * g.cwiseProduct(g);
        }
        value.array() -= step_size * state.m[i].array() / (state.v[i].array().sqrt() * inv_sqrt_c2 + eps);
    }
}

template void adam_step(std::vector<Tensor<float>>&, AdamState<float>&, double, double, const std::vector<bool>&);
template void adam_step(std::vector<Tensor<double>>&, AdamState<double>&, double, double, const std::vector<bool>&);

}  // namespace gridflow::ad
