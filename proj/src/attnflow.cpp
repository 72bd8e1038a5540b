#include "gridflow/attnflow.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "gridflow/autodiff/ops.hpp"
#include "gridflow/model_internal.hpp"

namespace gridflow {

using namespace ad;

template <typename Real>
TransitionWeights<Real> transition_weights(const ParamStore<Real>& params) {
    TransitionWeights<Real> w;
    for (int e = 0; e < kNumEdgeTypes; ++e) {
        w.w_src[static_cast<std::size_t>(e)] = params.get(typed_name("trans.w_src", e));
        w.w_dst[static_cast<std::size_t>(e)] = params.get(typed_name("trans.w_dst", e));
        w.m[static_cast<std::size_t>(e)] = params.get(typed_name("trans.M", e));
    }
    w.b = params.get("trans.b");
    return w;
}

template <typename Real>
Tensor<Real> transition_logits(const Tensor<Real>& h, const GraphIndex& graph, const TransitionWeights<Real>& w) {
    const Eigen::Index d = h.cols();
    std::vector<Tensor<Real>> logits;
    logits.reserve(static_cast<std::size_t>(graph.num_edges()));
    for (int k = 0; k < graph.num_edges(); ++k) {
        const int e = graph.edge_type[static_cast<std::size_t>(k)];
        const auto se = static_cast<std::size_t>(e);
        const std::vector<int> ri{graph.edge_src[static_cast<std::size_t>(k)]};
        const std::vector<int> rj{graph.edge_dst[static_cast<std::size_t>(k)]};
        const Tensor<Real> hi = reshape(gather_rows(h, ri), d, 1, 1);
        const Tensor<Real> hj = reshape(gather_rows(h, rj), d, 1, 1);
        const Tensor<Real> features = concat_rows<Real>({hi, hj, reshape(outer_product(hi, hj), d * d, 1, 1)});
        const Tensor<Real> weights = concat_rows<Real>({w.w_src[se], w.w_dst[se], reshape(w.m[se], d * d, 1, 1)});
        const std::vector<int> br{e};
        const std::vector<int> bc{0};
        logits.push_back(add(reshape(inner_product(weights, features), 1, 1, 1), pick(w.b, br, bc)));
    }
    return concat_rows(logits);
}

template <typename Real>
Tensor<Real> transition_matrix(const Tensor<Real>& logits, const GraphIndex& graph) {
    if (logits.rows() != graph.num_edges() || logits.cols() != 1) {
        throw std::invalid_argument("transition_matrix: need one logit per edge, got " + logits.shape_string());
    }
    return segment_softmax(logits, graph.edge_src, graph.n);
}

template <typename Real>
FlowStep<Real> flow_step(const Tensor<Real>& focused, const Tensor<Real>& transition, const GraphIndex& graph) {
    if (focused.rows() != graph.n || transition.rows() != graph.num_edges()) {
        throw std::invalid_argument("flow_step: attention " + focused.shape_string() + " / transition " +
                                    transition.shape_string() + " do not fit the graph");
    }
    FlowStep<Real> out;
    out.flowing = mul(transition, gather_rows(focused, graph.edge_src));
    out.focused = segment_sum(out.flowing, graph.edge_dst, graph.n);
    return out;
}

template <typename Real>
Tensor<Real> attend_message(Attend variant, const Tensor<Real>& flowing, const Tensor<Real>& messages,
                            const Tensor<Real>* w, const Tensor<Real>* b) {
    switch (variant) {
        case Attend::Regular:
        case Attend::NoAct:
            return messages;
        case Attend::Mul:
            return mul_col(messages, flowing);
        case Attend::MulMlp:
            if (!w || !b) {
                throw std::invalid_argument("attend_message: MulMlp needs a projection and bias");
            }
            return tanh(add_row(matmul(mul_col(messages, flowing), *w), *b));
    }
    throw std::logic_error("attend_message: unknown variant");
}

template <typename Real>
Tensor<Real> flow_loss(const Tensor<Real>& focused, int dst) {
    if (dst < 0 || dst >= focused.rows()) {
        throw std::invalid_argument("flow_loss: destination " + std::to_string(dst) + " outside " +
                                    focused.shape_string());
    }
    const std::vector<int> r{dst};
    const std::vector<int> c{0};
    return scale(sum(log(pick(focused, r, c))), Real(-1));
}

template <typename Real>
Tensor<Real> implicit_readout(const Tensor<Real>& h, int attn_dims) {
    const Tensor<Real> one = Tensor<Real>::constant(
        Matrix<Real>::Constant(attn_dims, 1, Real(1) / std::sqrt(static_cast<Real>(attn_dims))), 1);
    return softmax(matmul(slice_cols(h, 0, attn_dims), one));
}

#define GRIDFLOW_INSTANTIATE_FLOW(R)                                                                           \
    template TransitionWeights<R> transition_weights(const ParamStore<R>&);                                  \
    template Tensor<R> transition_logits(const Tensor<R>&, const GraphIndex&, const TransitionWeights<R>&);    \
    template Tensor<R> transition_matrix(const Tensor<R>&, const GraphIndex&);                               \
    template FlowStep<R> flow_step(const Tensor<R>&, const Tensor<R>&, const GraphIndex&);                   \
    template Tensor<R> attend_message(Attend, const Tensor<R>&, const Tensor<R>&, const Tensor<R>*,          \
                                      const Tensor<R>*);                                                     \
    template Tensor<R> flow_loss(const Tensor<R>&, int);                                                     \
    template Tensor<R> implicit_readout(const Tensor<R>&, int);

GRIDFLOW_INSTANTIATE_FLOW(float)
GRIDFLOW_INSTANTIATE_FLOW(double)

}  // namespace gridflow
