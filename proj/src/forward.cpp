#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "gridflow/autodiff/ops.hpp"
#include "gridflow/model.hpp"
#include "gridflow/model_internal.hpp"

namespace gridflow {

namespace {

using namespace ad;

std::vector<int> scaled_types(const std::vector<int>& types, int width, int base = 0) {
    std::vector<int> out(types.size());
    for (std::size_t k = 0; k < types.size(); ++k) out[k] = base + types[k] * width;
    return out;
}

std::vector<int> row_nodes(const Layout& l) {
    std::vector<int> out(static_cast<std::size_t>(l.rows()));
    for (int r = 0; r < l.rows(); ++r) out[static_cast<std::size_t>(r)] = l.row_node(r);
    return out;
}

std::vector<int> row_slots(const Layout& l) {
    std::vector<int> out(static_cast<std::size_t>(l.rows()));
    for (int r = 0; r < l.rows(); ++r) out[static_cast<std::size_t>(r)] = l.row_slot(r);
    return out;
}

template <typename Real>
class Forward {
public:
    Forward(const ModelConfig& config, const ParamStore<Real>& params, const GraphIndex& graph, const BatchPlan& plan,
            const ForwardOptions& options)
        : c_(config), p_(params), g_(graph), plan_(plan), opt_(options), d_(config.dims), dp_(config.attn_dims) {}

    ForwardOutput<Real> run();

private:
    using TT = Tensor<Real>;
    using M = Matrix<Real>;

    const TT& P(const std::string& name) const { return p_.get(name); }
    TT typed_cols(const std::string& prefix) const {
        std::vector<TT> parts;
        for (int e = 0; e < kNumEdgeTypes; ++e) parts.push_back(P(typed_name(prefix, e)));
        return concat_cols(parts);
    }
    TT typed_rows(const std::string& prefix) const {
        std::vector<TT> parts;
        for (int e = 0; e < kNumEdgeTypes; ++e) parts.push_back(P(typed_name(prefix, e)));
        return concat_rows(parts);
    }

    void prepare();
    TT initial_states() const;
    TT transition_from(const TT& G, const TT& H, const FlowPlan& fp) const;
    TT attend(const TT& m, const TT& flowing, const MessagePlan& mp, bool folded) const;
    TT gru_update(const TT& mbar, const TT& H, const MessagePlan& mp, const Layout& next) const;
    void step_ggnn(int t, const TT& G, TT& H, const TT& flowing);
    void step_gat(int t, const TT& G, TT& H, const TT& flowing);
    void step_fullgn(int t, const TT& G, TT& H, TT& g, const TT& flowing);
    void step_rwdynamic(int t, TT& H, TT& g, const TT& a);
    void record_states(int t, const TT& H);
    void record_flow(int t, const TT& a, const TT* transition, const TT* flowing);

    const ModelConfig& c_;
    const ParamStore<Real>& p_;
    const GraphIndex& g_;
    const BatchPlan& plan_;
    const ForwardOptions& opt_;
    const int d_;
    const int dp_;

    // Per-forward derived weights.
    TT U_, F_, UX_, UN_, msg_bias_, W_big_, W_dst_, W_glob_, trans_b_;
    int off_m_ = 0;   // first column of the outer-product blocks in W_big
    int off_w1_ = 0;
    int off_w2_ = 0;
    bool folded_ = false;
    std::optional<Trace> trace_;
};

template <typename Real>
void Forward<Real>::prepare() {
    const Core core = c_.variant.core;
    const Attend att = c_.variant.attend;
    U_ = P("embed.u");
    if (core != Core::RWStationary) {
        F_ = tanh(add_row(matmul(U_, P("init.W")), P("init.b")));
    }
    std::vector<TT> big;
    if (core == Core::GGNN) {
        const TT W = typed_cols("ggnn.msg.W");
        msg_bias_ = typed_rows("ggnn.msg.b");
        folded_ = att == Attend::MulMlp && opt_.fold_attend;
        if (folded_) {
            // (h W_e + b_e) W_a = h (W_e W_a) + b_e W_a
            std::vector<TT> blocks;
            for (int e = 0; e < kNumEdgeTypes; ++e) {
                blocks.push_back(matmul(P(typed_name("ggnn.msg.W", e)), P("attend.W")));
            }
            big.push_back(concat_cols(blocks));
            msg_bias_ = matmul(msg_bias_, P("attend.W"));
        } else {
            big.push_back(W);
        }
    } else if (core == Core::GAT) {
        big.push_back(typed_cols("gat.W"));
    } else if (core == Core::FullGN) {
        big.push_back(typed_cols("fullgn.msg.W_src"));
        W_dst_ = typed_cols("fullgn.msg.W_dst");
        W_glob_ = typed_cols("fullgn.msg.W_global");
        msg_bias_ = typed_rows("fullgn.msg.b");
        UN_ = add_row(matmul(U_, P("fullgn.node.W_u")), P("fullgn.node.b"));
    } else if (core == Core::RWDynamic) {
        UN_ = add_row(matmul(U_, P("rwdyn.node.W_u")), P("rwdyn.node.b"));
    }
    if (core == Core::GGNN || core == Core::GAT) {
        UX_ = add_row(matmul(U_, P("gru.W_xu")), P("gru.b"));
    }
    if (c_.variant.explicit_flow()) {
        off_m_ = big.empty() ? 0 : static_cast<int>(big.front().cols());
        off_w1_ = off_m_ + kNumEdgeTypes * d_;
        off_w2_ = off_w1_ + kNumEdgeTypes;
        big.push_back(typed_cols("trans.M"));
        big.push_back(typed_cols("trans.w_src"));
        big.push_back(typed_cols("trans.w_dst"));
        trans_b_ = P("trans.b");
    }
    if (!big.empty()) {
        W_big_ = big.size() == 1 ? big.front() : concat_cols(big);
    }
}

template <typename Real>
Tensor<Real> Forward<Real>::initial_states() const {
    const Layout& l = plan_.layouts.front();
    M attn = M::Zero(l.rows(), dp_);
    const Real one = Real(1) / std::sqrt(static_cast<Real>(dp_));
    for (int r = l.base_rows; r < l.rows(); ++r) {
        const int s = l.row_slot(r);
        if (l.row_node(r) == plan_.src[static_cast<std::size_t>(s)]) attn.row(r).setConstant(one);
    }
    return concat_cols<Real>({TT::constant(std::move(attn)), gather_rows(F_, row_nodes(l))});
}

template <typename Real>
Tensor<Real> Forward<Real>::transition_from(const TT& G, const TT& H, const FlowPlan& fp) const {
    return edge_score(G, H, fp.sender_row, fp.nbr_row, scaled_types(fp.type, d_, off_m_),
                      scaled_types(fp.type, 1, off_w1_), scaled_types(fp.type, 1, off_w2_), trans_b_, fp.type);
}

template <typename Real>
Tensor<Real> Forward<Real>::attend(const TT& m, const TT& flowing, const MessagePlan& mp, bool folded) const {
    switch (c_.variant.attend) {
        case Attend::Regular:
        case Attend::NoAct:
            return m;
        case Attend::Mul:
            return mul_col(m, gather_rows(flowing, mp.flow_index));
        case Attend::MulMlp: {
            const TT scaled = mul_col(m, gather_rows(flowing, mp.flow_index));
            if (folded) return tanh(add_row(scaled, P("attend.b")));
            return tanh(add_row(matmul(scaled, P("attend.W")), P("attend.b")));
        }
    }
    throw std::logic_error("unknown message-attending variant");
}

template <typename Real>
Tensor<Real> Forward<Real>::gru_update(const TT& mbar, const TT& H, const MessagePlan& mp, const Layout& next) const {
    const TT pre_x = add(matmul(mbar, P("gru.W_xm")), gather_rows(UX_, row_nodes(next)));
    return gru_cell(pre_x, gather_rows(H, mp.prev_row), P("gru.W_hrz"), P("gru.W_hh"));
}

template <typename Real>
void Forward<Real>::step_ggnn(int t, const TT& G, TT& H, const TT& flowing) {
    const MessagePlan& mp = plan_.messages[static_cast<std::size_t>(t)];
    const Layout& next = plan_.layouts[static_cast<std::size_t>(t) + 1];
    const Attend att = c_.variant.attend;
    TT mbar;
    if (att == Attend::MulMlp && !folded_) {
        const TT m = edge_linear<Real>({G}, {mp.sender_row}, scaled_types(mp.type, d_), d_, &msg_bias_, mp.type);
        mbar = segment_sum(attend(m, flowing, mp, false), mp.receiver, next.rows());
    } else {
        const bool scaled = att == Attend::Mul || att == Attend::MulMlp;
        const TT* post = att == Attend::MulMlp ? &P("attend.b") : nullptr;
        mbar = edge_message(G, mp.sender_row, scaled_types(mp.type, d_), msg_bias_, mp.type, scaled ? &flowing : nullptr,
                            mp.flow_index, post, att == Attend::MulMlp, mp.receiver, next.rows());
    }
    H = gru_update(mbar, H, mp, next);
}

template <typename Real>
void Forward<Real>::step_gat(int t, const TT& G, TT& H, const TT& flowing) {
    const MessagePlan& mp = plan_.messages[static_cast<std::size_t>(t)];
    const Layout& next = plan_.layouts[static_cast<std::size_t>(t) + 1];
    const std::vector<int> off = scaled_types(mp.type, d_);
    const TT z_src = edge_linear<Real>({G}, {mp.sender_row}, off, d_, nullptr, {});
    const TT z_dst = edge_linear<Real>({G}, {mp.receiver_prev}, off, d_, nullptr, {});
    const TT logits = leaky_relu(add(head_dot(z_src, P("gat.a_src")), head_dot(z_dst, P("gat.a_dst"))),
                                 static_cast<Real>(c_.leaky_slope));
    const TT alpha = segment_softmax(logits, mp.receiver, next.rows());
    const TT m = head_scale(z_src, alpha);
    const TT mbar = segment_sum(attend(m, flowing, mp, false), mp.receiver, next.rows());
    H = gru_update(mbar, H, mp, next);
}

template <typename Real>
void Forward<Real>::step_fullgn(int t, const TT& G, TT& H, TT& g, const TT& flowing) {
    const MessagePlan& mp = plan_.messages[static_cast<std::size_t>(t)];
    const Layout& next = plan_.layouts[static_cast<std::size_t>(t) + 1];
    const std::vector<int> slots = row_slots(next);
    std::vector<int> msg_slot(mp.receiver.size());
    for (std::size_t k = 0; k < msg_slot.size(); ++k) msg_slot[k] = slots[static_cast<std::size_t>(mp.receiver[k])];

    const TT G_dst = matmul(H, W_dst_);
    const TT G_glob = matmul(g, W_glob_);
    const TT m = tanh(edge_linear<Real>({G, G_dst, G_glob}, {mp.sender_row, mp.receiver_prev, msg_slot},
                                        scaled_types(mp.type, d_), d_, &msg_bias_, mp.type));
    const TT mbar = segment_sum(attend(m, flowing, mp, false), mp.receiver, next.rows());
    const TT H_prev = gather_rows(H, mp.prev_row);

    const TT node_in = add(add(matmul(H_prev, P("fullgn.node.W_h")), matmul(mbar, P("fullgn.node.W_m"))),
                           add(gather_rows(UN_, row_nodes(next)), gather_rows(matmul(g, P("fullgn.node.W_g")), slots)));
    const Real inv_n = Real(1) / static_cast<Real>(g_.n);
    const TT h_mean = scale(segment_sum(H_prev, slots, plan_.slots()), inv_n);
    const TT m_mean = scale(segment_sum(mbar, slots, plan_.slots()), inv_n);
    const TT glob_in = add(add(matmul(g, P("fullgn.global.W_g")), matmul(h_mean, P("fullgn.global.W_h"))),
                           matmul(m_mean, P("fullgn.global.W_m")));
    H = tanh(node_in);
    g = tanh(add_row(glob_in, P("fullgn.global.b")));
}

template <typename Real>
void Forward<Real>::step_rwdynamic(int t, TT& H, TT& g, const TT& a) {
    const Layout& now = plan_.layouts[static_cast<std::size_t>(t)];
    const std::vector<int> slots = row_slots(now);
    const TT node_in = add(add(matmul(H, P("rwdyn.node.W_h")), gather_rows(UN_, row_nodes(now))),
                           gather_rows(matmul(g, P("rwdyn.node.W_g")), slots));
    // Attention-weighted state summary; dense rows coincide with example rows.
    const TT h_bar = segment_sum(mul_col(H, a), slots, plan_.slots());
    const TT glob_in = add(matmul(g, P("rwdyn.global.W_g")), matmul(h_bar, P("rwdyn.global.W_h")));
    H = tanh(node_in);
    g = tanh(add_row(glob_in, P("rwdyn.global.b")));
}

template <typename Real>
void Forward<Real>::record_states(int t, const TT& H) {
    const Layout& l = plan_.layouts[static_cast<std::size_t>(t)];
    const Real inv = Real(1) / std::sqrt(static_cast<Real>(dp_));
    for (int s = 0; s < plan_.slots(); ++s) {
        Matrix<double> st(g_.n, d_);
        std::vector<double> score(static_cast<std::size_t>(g_.n));
        double peak = -std::numeric_limits<double>::infinity();
        for (int i = 0; i < g_.n; ++i) {
            st.row(i) = H.value().row(l.lookup(s, i)).template cast<double>();
            score[static_cast<std::size_t>(i)] = static_cast<double>(H.value().row(l.lookup(s, i)).head(dp_).sum() * inv);
            peak = std::max(peak, score[static_cast<std::size_t>(i)]);
        }
        double total = 0.0;
        for (double& v : score) total += (v = std::exp(v - peak));
        for (double& v : score) v /= total;
        trace_->states[static_cast<std::size_t>(s)].push_back(std::move(st));
        trace_->readout[static_cast<std::size_t>(s)].push_back(std::move(score));
    }
}

template <typename Real>
void Forward<Real>::record_flow(int t, const TT& a, const TT* transition, const TT* flowing) {
    const Layout& l = plan_.layouts[static_cast<std::size_t>(t)];
    for (int s = 0; s < plan_.slots(); ++s) {
        std::vector<double> dense(static_cast<std::size_t>(g_.n), 0.0);
        for (int i = 0; i < g_.n; ++i) {
            const int x = l.example_index(s, i);
            if (x >= 0) dense[static_cast<std::size_t>(i)] = static_cast<double>(a.value()(x, 0));
        }
        trace_->focused[static_cast<std::size_t>(s)].push_back(std::move(dense));
    }
    if (!transition) return;
    const FlowPlan& fp = plan_.flows[static_cast<std::size_t>(t)];
    const auto nan = std::numeric_limits<double>::quiet_NaN();
    for (int s = 0; s < plan_.slots(); ++s) {
        trace_->transition[static_cast<std::size_t>(s)].emplace_back(static_cast<std::size_t>(g_.num_edges()), nan);
        trace_->flowing[static_cast<std::size_t>(s)].emplace_back(static_cast<std::size_t>(g_.num_edges()), 0.0);
    }
    for (std::size_t k = 0; k < fp.edge.size(); ++k) {
        const auto s = static_cast<std::size_t>(l.ex_slot[static_cast<std::size_t>(fp.sender_ex[k])]);
        const auto e = static_cast<std::size_t>(fp.edge[k]);
        trace_->transition[s].back()[e] = static_cast<double>(transition->value()(static_cast<Eigen::Index>(k), 0));
        trace_->flowing[s].back()[e] = static_cast<double>(flowing->value()(static_cast<Eigen::Index>(k), 0));
    }
}

template <typename Real>
ForwardOutput<Real> Forward<Real>::run() {
    const Core core = c_.variant.core;
    const bool flow = c_.variant.explicit_flow();
    const int T = plan_.steps;
    const int S = plan_.slots();
    if (opt_.trace) {
        trace_.emplace();
        trace_->steps = T;
        const auto slots = static_cast<std::size_t>(S);
        trace_->focused.resize(slots);
        trace_->flowing.resize(slots);
        trace_->transition.resize(slots);
        trace_->readout.resize(slots);
        trace_->states.resize(slots);
    }
    prepare();

    TT H;
    TT g;
    if (core != Core::RWStationary) H = initial_states();
    if (core == Core::FullGN || core == Core::RWDynamic) g = TT::constant(M::Zero(S, d_));

    TT a;
    TT T_stationary;
    if (flow) {
        const Layout& l0 = plan_.layouts.front();
        M a0 = M::Zero(l0.num_examples(), 1);
        for (int x = 0; x < l0.num_examples(); ++x) {
            if (l0.ex_node[static_cast<std::size_t>(x)] == plan_.src[static_cast<std::size_t>(l0.ex_slot[static_cast<std::size_t>(x)])]) {
                a0(x, 0) = 1;
            }
        }
        a = TT::constant(std::move(a0), 1);
        if (core == Core::RWStationary) {
            // One transition from the embeddings, shared by every step and example.
            std::vector<TT> blocks{typed_cols("trans.M"), typed_cols("trans.w_src"), typed_cols("trans.w_dst")};
            off_m_ = 0;
            off_w1_ = kNumEdgeTypes * d_;
            off_w2_ = off_w1_ + kNumEdgeTypes;
            trans_b_ = P("trans.b");
            const TT G = matmul(U_, concat_cols(blocks));
            FlowPlan all;
            all.sender_row = g_.edge_src;
            all.nbr_row = g_.edge_dst;
            all.type = g_.edge_type;
            T_stationary = segment_softmax(transition_from(G, U_, all), g_.edge_src, g_.n);
        }
    }

    for (int t = 0; t < T; ++t) {
        const bool update = !flow || t + 1 < T;
        if (opt_.trace && H.defined()) record_states(t, H);
        TT G;
        if (W_big_.defined() && H.defined()) G = matmul(H, W_big_);

        TT flowing;
        if (flow) {
            const FlowPlan& fp = plan_.flows[static_cast<std::size_t>(t)];
            const Layout& now = plan_.layouts[static_cast<std::size_t>(t)];
            const Layout& next = plan_.layouts[static_cast<std::size_t>(t) + 1];
            const TT transition = core == Core::RWStationary
                                      ? gather_rows(T_stationary, fp.edge)
                                      : segment_softmax(transition_from(G, H, fp), fp.sender_ex, now.num_examples());
            flowing = mul(transition, gather_rows(a, fp.sender_ex));
            if (opt_.trace) record_flow(t, a, &transition, &flowing);
            const TT a_prev = a;
            a = segment_sum(flowing, fp.next_ex, next.num_examples());
            if (core == Core::RWDynamic && update) step_rwdynamic(t, H, g, a_prev);
        }
        if (update) {
            switch (core) {
                case Core::GGNN: step_ggnn(t, G, H, flowing); break;
                case Core::GAT: step_gat(t, G, H, flowing); break;
                case Core::FullGN: step_fullgn(t, G, H, g, flowing); break;
                default: break;
            }
        }
        if (H.defined() && !H.value().allFinite()) {
            throw std::runtime_error("non-finite node state after step " + std::to_string(t + 1));
        }
    }

    ForwardOutput<Real> out;
    if (!plan_.loss_only) {
        out.scores.assign(static_cast<std::size_t>(S), std::vector<double>(static_cast<std::size_t>(g_.n), 0.0));
    }
    const Layout& last = plan_.layouts.back();
    std::vector<int> zeros(static_cast<std::size_t>(S), 0);
    if (flow) {
        if (opt_.trace) record_flow(T, a, nullptr, nullptr);
        std::vector<int> dst_ex(static_cast<std::size_t>(S));
        for (int s = 0; s < S; ++s) dst_ex[static_cast<std::size_t>(s)] = last.example_index(s, plan_.dst[static_cast<std::size_t>(s)]);
        out.loss = scale(mean(log(pick(a, dst_ex, zeros))), Real(-1));
        for (int x = 0; x < last.num_examples() && !plan_.loss_only; ++x) {
            out.scores[static_cast<std::size_t>(last.ex_slot[static_cast<std::size_t>(x)])]
                      [static_cast<std::size_t>(last.ex_node[static_cast<std::size_t>(x)])] = static_cast<double>(a.value()(x, 0));
        }
    } else {
        if (opt_.trace) record_states(T, H);
        const TT one = TT::constant(M::Constant(dp_, 1, Real(1) / std::sqrt(static_cast<Real>(dp_))));
        const TT channel = matmul(slice_cols(H, 0, dp_), one);
        std::vector<int> rows(static_cast<std::size_t>(S) * g_.n);
        for (int s = 0; s < S; ++s) {
            for (int i = 0; i < g_.n; ++i) rows[static_cast<std::size_t>(s) * g_.n + i] = last.lookup(s, i);
        }
        const TT probs = softmax_rows(reshape(gather_rows(channel, rows), S, g_.n));
        std::vector<int> slot_ids(static_cast<std::size_t>(S));
        for (int s = 0; s < S; ++s) slot_ids[static_cast<std::size_t>(s)] = s;
        out.loss = scale(mean(log(pick(probs, slot_ids, plan_.dst))), Real(-1));
        for (int s = 0; s < S; ++s) {
            for (int i = 0; i < g_.n; ++i) {
                out.scores[static_cast<std::size_t>(s)][static_cast<std::size_t>(i)] = static_cast<double>(probs.value()(s, i));
            }
        }
    }
    out.trace = std::move(trace_);
    return out;
}

}  // namespace

template <typename Real>
ForwardOutput<Real> Model<Real>::forward(const GraphIndex& graph, std::span<const int> src, std::span<const int> dst,
                                         const ForwardOptions& options) const {
    if (graph.n != num_nodes_) {
        throw std::invalid_argument("model was built for " + std::to_string(num_nodes_) + " nodes, graph has " +
                                    std::to_string(graph.n));
    }
    if (src.empty()) {
        throw std::invalid_argument("forward: empty batch");
    }
    const LayoutMode mode = options.mode.value_or(default_mode());
    if (mode == LayoutMode::Windowed && default_mode() == LayoutMode::Dense) {
        throw std::invalid_argument("forward: " + variant_name(config_.variant) +
                                    " mixes all nodes through its global state and needs the dense layout");
    }
    const bool prune = options.loss_only && mode == LayoutMode::Windowed && config_.variant.explicit_flow();
    if (prune && options.trace) {
        throw std::invalid_argument("forward: a loss-only pass cannot be traced");
    }
    const BatchPlan plan = make_batch_plan(graph, src, dst, config_.steps, mode, prune);
    return Forward<Real>(config_, params_, graph, plan, options).run();
}

template ForwardOutput<float> Model<float>::forward(const GraphIndex&, std::span<const int>, std::span<const int>,
                                                    const ForwardOptions&) const;
template ForwardOutput<double> Model<double>::forward(const GraphIndex&, std::span<const int>, std::span<const int>,
                                                      const ForwardOptions&) const;

}  // namespace gridflow
