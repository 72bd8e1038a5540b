#pragma once

#include <array>

#include "gridflow/autodiff/tensor.hpp"
#include "gridflow/grid.hpp"
#include "gridflow/model.hpp"
#include "gridflow/plan.hpp"

// Single-example attention-flow operators over a whole graph. The batched
// model forward uses planned equivalents; these serve as the readable
// definition and as test oracles.
namespace gridflow {

template <typename Real>
struct TransitionWeights {
    std::array<ad::Tensor<Real>, kNumEdgeTypes> w_src;  // d x 1
    std::array<ad::Tensor<Real>, kNumEdgeTypes> w_dst;  // d x 1
    std::array<ad::Tensor<Real>, kNumEdgeTypes> m;      // d x d, flattened row-major as the outer-product weights
    ad::Tensor<Real> b;                                 // 9 x 1
};

/// Reads the trans.* parameters of a flow model.
template <typename Real>
TransitionWeights<Real> transition_weights(const ParamStore<Real>& params);

/// tau_ij = w_e^T [h_i : h_j : vec(h_i (x) h_j)] + b_e for every graph edge,
/// evaluated literally with an explicit outer product per edge.
template <typename Real>
ad::Tensor<Real> transition_logits(const ad::Tensor<Real>& h, const GraphIndex& graph, const TransitionWeights<Real>& w);

/// Per-sender softmax of edge logits (one entry per graph edge).
template <typename Real>
ad::Tensor<Real> transition_matrix(const ad::Tensor<Real>& logits, const GraphIndex& graph);

template <typename Real>
struct FlowStep {
    ad::Tensor<Real> flowing;  // per edge: T_ij a_i
    ad::Tensor<Real> focused;  // per node: sum of incoming flow
};

template <typename Real>
FlowStep<Real> flow_step(const ad::Tensor<Real>& focused, const ad::Tensor<Real>& transition, const GraphIndex& graph);

/// Applies the message-attending rule to per-edge messages (E x d). MulMlp
/// needs the projection `w` (d x d) and bias `b` (1 x d).
template <typename Real>
ad::Tensor<Real> attend_message(Attend variant, const ad::Tensor<Real>& flowing, const ad::Tensor<Real>& messages,
                                const ad::Tensor<Real>* w = nullptr, const ad::Tensor<Real>* b = nullptr);

/// -log(max(a_dst, 1e-12)); throws std::invalid_argument for an out-of-range dst.
template <typename Real>
ad::Tensor<Real> flow_loss(const ad::Tensor<Real>& focused, int dst);

/// softmax_i <h_i[0:d'], 1/sqrt(d')> over all nodes.
template <typename Real>
ad::Tensor<Real> implicit_readout(const ad::Tensor<Real>& h, int attn_dims);

}  // namespace gridflow
