#pragma once

#include <span>
#include <vector>

#include "gridflow/grid.hpp"

namespace gridflow {

/// Index-based view of a selfloop-augmented graph. Node indices are positions
/// in GridGraph::nodes(); edge indices are positions in GridGraph::edges().
struct GraphIndex {
    int n = 0;
    int n_side = 0;
    std::vector<int> node_id;
    std::vector<int> x;
    std::vector<int> y;
    std::vector<int> edge_src;
    std::vector<int> edge_dst;
    std::vector<int> edge_type;
    std::vector<std::vector<int>> out;
    std::vector<std::vector<int>> in;
    /// Position of each edge inside the out-list of its sender.
    std::vector<int> out_pos;

    /// Throws std::logic_error if a node has no outgoing edge (selfloops missing).
    explicit GraphIndex(const GridGraph& graph);

    int num_edges() const { return static_cast<int>(edge_src.size()); }
};

/// Dense runs give every example its own copy of all n nodes. Windowed runs
/// share one baseline copy (rows 0..n-1, computed without a source and with
/// zero flowing attention) and give example b only the nodes within t hops of
/// its source at step t; every other node of b is read from the baseline.
/// Both yield identical values for models whose node updates are local.
enum class LayoutMode { Windowed, Dense };

/// Row layout of the batched node-state matrix at one step.
struct Layout {
    int n = 0;
    int slots = 0;
    int base_rows = 0;          // n when windowed, 0 when dense
    std::vector<int> ex_node;   // graph node of each example row
    std::vector<int> ex_slot;   // example slot of each example row
    std::vector<int> ex_of;     // slots * n: example index or -1

    int num_examples() const { return static_cast<int>(ex_node.size()); }
    int rows() const { return base_rows + num_examples(); }
    int example_index(int slot, int node) const { return ex_of[static_cast<std::size_t>(slot) * n + node]; }
    /// State row holding (slot, node).
    int lookup(int slot, int node) const {
        const int e = example_index(slot, node);
        return e < 0 ? node : base_rows + e;
    }
    int row_node(int row) const { return row < base_rows ? row : ex_node[static_cast<std::size_t>(row - base_rows)]; }
    /// -1 for baseline rows.
    int row_slot(int row) const { return row < base_rows ? -1 : ex_slot[static_cast<std::size_t>(row - base_rows)]; }
};

/// Out-edges of every example row at step t, grouped by sender.
struct FlowPlan {
    std::vector<int> sender_ex;  // example index in layout t
    std::vector<int> sender_row;
    std::vector<int> nbr_row;    // state row of the receiving node in layout t
    std::vector<int> next_ex;    // example index of the receiver in layout t+1; -1 when pruned
    std::vector<int> type;
    std::vector<int> edge;       // graph edge index
};

/// Messages feeding every row of layout t+1, grouped by receiver.
struct MessagePlan {
    std::vector<int> sender_row;    // row in layout t
    std::vector<int> receiver;      // row in layout t+1
    std::vector<int> receiver_prev; // receiver's own row in layout t
    std::vector<int> type;
    std::vector<int> flow_index;    // entry of FlowPlan t, or -1 when the flow is zero
    std::vector<int> edge;
    /// Per row of layout t+1: the same node's row in layout t.
    std::vector<int> prev_row;
};

struct BatchPlan {
    LayoutMode mode = LayoutMode::Windowed;
    int steps = 0;
    bool loss_only = false;
    std::vector<int> src;       // node indices, one per slot
    std::vector<int> dst;
    std::vector<Layout> layouts;        // steps + 1
    std::vector<FlowPlan> flows;        // steps
    std::vector<MessagePlan> messages;  // steps (t -> t+1)

    int slots() const { return static_cast<int>(src.size()); }
};

/// Plans `steps` propagation steps for the given source/destination node
/// indices. Throws std::invalid_argument on out-of-range nodes or mismatched
/// lengths.
///
/// With `loss_only` (windowed flow models) example rows are further cut to
/// those that can influence a^T(dst): the loss and its gradients are
/// unchanged, but attention elsewhere is not meaningful.
BatchPlan make_batch_plan(const GraphIndex& graph, std::span<const int> src, std::span<const int> dst, int steps,
                          LayoutMode mode, bool loss_only = false);

}  // namespace gridflow
