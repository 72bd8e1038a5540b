#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "gridflow/grid.hpp"
#include "gridflow/model.hpp"

// Attention-flow export: per-step traces, max-aggregated heatmaps, SVG.
namespace gridflow::viz {

/// Thrown when a flow trace is requested from a regular model.
class FlowUnavailable : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// One example's per-step distributions over graph.nodes() (and, for flow
/// models, the flowing attention over graph.edges()).
struct AttentionTrace {
    int src_id = 0;
    int dst_id = 0;
    /// True when `nodes` holds the implicit channel readout of a regular model.
    bool readout = false;
    std::vector<std::vector<double>> nodes;  // [t][node index], t = 0..T
    std::vector<std::vector<double>> edges;  // [t][edge index], t < T; empty for readout
};

/// Runs the model once in double precision for (src_id, dst_id) and records
/// a^t and the flowing attention. Throws FlowUnavailable for regular variants.
AttentionTrace trace_flow(const Model<float>& model, const GridGraph& graph, int src_id, int dst_id);
/// Same pass, recording the per-step channel readout; works for every variant.
AttentionTrace trace_readout(const Model<float>& model, const GridGraph& graph, int src_id, int dst_id);

/// max over t of (p^t_i / max_j p^t_j). Steps whose maximum is not positive
/// are skipped.
std::vector<double> max_normalized(const std::vector<std::vector<double>>& steps);

/// N x N heatmap, north up. Cells of removed nodes and links of removed
/// edges are left blank; src gets a circle and dst a square marker.
std::string heatmap_svg(const GridGraph& graph, std::span<const double> values, int src_id, int dst_id,
                        std::string_view title = {});

/// node_id, x, y, value
std::string heatmap_csv(const GridGraph& graph, std::span<const double> values);
/// Wide table: one row per step, one column per node id.
std::string attention_csv(const GridGraph& graph, const AttentionTrace& trace);
/// step, node_id, a (tab-separated)
std::string focused_tsv(const GridGraph& graph, const AttentionTrace& trace);
/// step, src_id, dst_id, edge_type, flowing (tab-separated)
std::string flowing_tsv(const GridGraph& graph, const AttentionTrace& trace);

}  // namespace gridflow::viz
