#include "gridflow/plan.hpp"

#include <stdexcept>
#include <string>

namespace gridflow {

GraphIndex::GraphIndex(const GridGraph& graph) : n(static_cast<int>(graph.num_nodes())), n_side(graph.n_side()) {
    node_id.reserve(graph.num_nodes());
    for (const GridNode& v : graph.nodes()) {
        node_id.push_back(v.id);
        x.push_back(v.x);
        y.push_back(v.y);
    }
    out.assign(static_cast<std::size_t>(n), {});
    in.assign(static_cast<std::size_t>(n), {});
    out_pos.reserve(graph.num_edges());
    for (const GridEdge& e : graph.edges()) {
        const int s = graph.index_of(e.src);
        const int d = graph.index_of(e.dst);
        const int k = static_cast<int>(edge_src.size());
        edge_src.push_back(s);
        edge_dst.push_back(d);
        edge_type.push_back(type_code(e.type));
        out_pos.push_back(static_cast<int>(out[static_cast<std::size_t>(s)].size()));
        out[static_cast<std::size_t>(s)].push_back(k);
        in[static_cast<std::size_t>(d)].push_back(k);
    }
    for (int i = 0; i < n; ++i) {
        if (out[static_cast<std::size_t>(i)].empty()) {
            throw std::logic_error("node " + std::to_string(node_id[static_cast<std::size_t>(i)]) +
                                   " has no outgoing edge; selfloop augmentation missing");
        }
    }
}

namespace {

Layout make_layout(const GraphIndex& g, const std::vector<std::vector<char>>& member, bool dense) {
    Layout l;
    l.n = g.n;
    l.slots = static_cast<int>(member.size());
    l.base_rows = dense ? 0 : g.n;
    l.ex_of.assign(static_cast<std::size_t>(l.slots) * g.n, -1);
    for (int s = 0; s < l.slots; ++s) {
        for (int i = 0; i < g.n; ++i) {
            if (member[static_cast<std::size_t>(s)][static_cast<std::size_t>(i)]) {
                l.ex_of[static_cast<std::size_t>(s) * g.n + i] = static_cast<int>(l.ex_node.size());
                l.ex_node.push_back(i);
                l.ex_slot.push_back(s);
            }
        }
    }
    return l;
}

FlowPlan make_flow_plan(const GraphIndex& g, const Layout& now, const Layout& next) {
    FlowPlan p;
    for (int x = 0; x < now.num_examples(); ++x) {
        const int i = now.ex_node[static_cast<std::size_t>(x)];
        const int s = now.ex_slot[static_cast<std::size_t>(x)];
        for (const int k : g.out[static_cast<std::size_t>(i)]) {
            const int j = g.edge_dst[static_cast<std::size_t>(k)];
            p.sender_ex.push_back(x);
            p.sender_row.push_back(now.base_rows + x);
            p.nbr_row.push_back(now.lookup(s, j));
            p.next_ex.push_back(next.example_index(s, j));
            p.type.push_back(g.edge_type[static_cast<std::size_t>(k)]);
            p.edge.push_back(k);
        }
    }
    return p;
}

MessagePlan make_message_plan(const GraphIndex& g, const Layout& now, const Layout& next, const FlowPlan& flow) {
    // First flow entry of every example row of `now`.
    std::vector<int> flow_begin(static_cast<std::size_t>(now.num_examples()) + 1, 0);
    for (const int x : flow.sender_ex) {
        ++flow_begin[static_cast<std::size_t>(x) + 1];
    }
    for (std::size_t x = 1; x < flow_begin.size(); ++x) {
        flow_begin[x] += flow_begin[x - 1];
    }

    MessagePlan p;
    p.prev_row.resize(static_cast<std::size_t>(next.rows()));
    for (int r = 0; r < next.rows(); ++r) {
        const int j = next.row_node(r);
        const int s = next.row_slot(r);
        const int prev = s < 0 ? j : now.lookup(s, j);
        p.prev_row[static_cast<std::size_t>(r)] = prev;
        for (const int k : g.in[static_cast<std::size_t>(j)]) {
            const int i = g.edge_src[static_cast<std::size_t>(k)];
            const int sx = s < 0 ? -1 : now.example_index(s, i);
            p.sender_row.push_back(s < 0 ? i : now.lookup(s, i));
            p.receiver.push_back(r);
            p.receiver_prev.push_back(prev);
            p.type.push_back(g.edge_type[static_cast<std::size_t>(k)]);
            p.flow_index.push_back(sx < 0 ? -1 : flow_begin[static_cast<std::size_t>(sx)] + g.out_pos[static_cast<std::size_t>(k)]);
            p.edge.push_back(k);
        }
    }
    return p;
}

}  // namespace

BatchPlan make_batch_plan(const GraphIndex& graph, std::span<const int> src, std::span<const int> dst, int steps,
                          LayoutMode mode, bool loss_only) {
    if (src.size() != dst.size()) {
        throw std::invalid_argument("make_batch_plan: " + std::to_string(src.size()) + " sources but " +
                                    std::to_string(dst.size()) + " destinations");
    }
    if (steps < 0) {
        throw std::invalid_argument("make_batch_plan: negative step count");
    }
    if (loss_only && mode == LayoutMode::Dense) {
        throw std::invalid_argument("make_batch_plan: loss-only pruning needs the windowed layout");
    }
    for (std::size_t b = 0; b < src.size(); ++b) {
        if (src[b] < 0 || src[b] >= graph.n || dst[b] < 0 || dst[b] >= graph.n) {
            throw std::invalid_argument("make_batch_plan: node index out of range in example " + std::to_string(b));
        }
    }
    BatchPlan plan;
    plan.mode = mode;
    plan.steps = steps;
    plan.loss_only = loss_only;
    plan.src.assign(src.begin(), src.end());
    plan.dst.assign(dst.begin(), dst.end());

    const bool dense = mode == LayoutMode::Dense;
    const std::size_t slots = src.size();
    const auto n = static_cast<std::size_t>(graph.n);
    using Sets = std::vector<std::vector<char>>;
    // member[t][b][i]: node i of example b has its own row at step t.
    std::vector<Sets> member(static_cast<std::size_t>(steps) + 1, Sets(slots, std::vector<char>(n, dense ? 1 : 0)));
    if (!dense) {
        for (std::size_t b = 0; b < slots; ++b) member[0][b][static_cast<std::size_t>(src[b])] = 1;
        for (int t = 0; t < steps; ++t) {
            for (std::size_t b = 0; b < slots; ++b) {
                const auto& now = member[static_cast<std::size_t>(t)][b];
                auto& next = member[static_cast<std::size_t>(t) + 1][b];
                next = now;
                for (std::size_t i = 0; i < n; ++i) {
                    if (!now[i]) continue;
                    for (const int k : graph.out[i]) next[static_cast<std::size_t>(graph.edge_dst[static_cast<std::size_t>(k)])] = 1;
                }
            }
        }
    }
    if (loss_only) {
        // Walk back from a^T(dst): a sender whose flow reaches a needed
        // attention or state value needs its own state and all its
        // out-neighbours (the softmax normalizer); a needed state needs its
        // previous row and its in-neighbours. Rows outside the cone cannot
        // reach the loss.
        for (std::size_t b = 0; b < slots; ++b) {
            std::vector<char> need_a(n, 0);
            std::vector<char> need_h(n, 0);
            need_a[static_cast<std::size_t>(dst[b])] = 1;
            for (int t = steps - 1; t >= 0; --t) {
                const auto& win = member[static_cast<std::size_t>(t)][b];
                const auto& win_next = member[static_cast<std::size_t>(t) + 1][b];
                std::vector<char> a_t(n, 0);
                std::vector<char> h_t(n, 0);
                auto sender = [&](int u) {
                    const auto uu = static_cast<std::size_t>(u);
                    if (!win[uu] || a_t[uu]) return;
                    a_t[uu] = 1;
                    h_t[uu] = 1;
                    for (const int k : graph.out[uu]) h_t[static_cast<std::size_t>(graph.edge_dst[static_cast<std::size_t>(k)])] = 1;
                };
                for (std::size_t v = 0; v < n; ++v) {
                    if (!win_next[v]) continue;
                    if (need_a[v] || need_h[v]) {
                        for (const int k : graph.in[v]) sender(graph.edge_src[static_cast<std::size_t>(k)]);
                    }
                    if (need_h[v]) {
                        h_t[v] = 1;
                        for (const int k : graph.in[v]) h_t[static_cast<std::size_t>(graph.edge_src[static_cast<std::size_t>(k)])] = 1;
                    }
                }
                auto& next = member[static_cast<std::size_t>(t) + 1][b];
                for (std::size_t v = 0; v < n; ++v) next[v] = win_next[v] && (need_a[v] || need_h[v]);
                need_a = std::move(a_t);
                need_h = std::move(h_t);
            }
            auto& first = member[0][b];
            for (std::size_t v = 0; v < n; ++v) first[v] = first[v] && (need_a[v] || need_h[v]);
            first[static_cast<std::size_t>(src[b])] = 1;
        }
    }
    for (const Sets& m : member) plan.layouts.push_back(make_layout(graph, m, dense));
    for (int t = 0; t < steps; ++t) {
        const Layout& now = plan.layouts[static_cast<std::size_t>(t)];
        const Layout& next = plan.layouts[static_cast<std::size_t>(t) + 1];
        plan.flows.push_back(make_flow_plan(graph, now, next));
        plan.messages.push_back(make_message_plan(graph, now, next, plan.flows.back()));
    }
    return plan;
}

}  // namespace gridflow
