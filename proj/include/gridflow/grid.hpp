#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

namespace gridflow {

/// Directed edge types of the 8-neighbour grid, plus the selfloop added for
/// training. The numeric values are the on-disk type codes.
enum class EdgeType : std::uint8_t { E = 0, NE, N, NW, W, SW, S, SE, SelfLoop };

inline constexpr int kNumDirections = 8;
inline constexpr int kNumEdgeTypes = 9;

struct Vec2 {
    double x = 0.0;
    double y = 0.0;
};

struct Offset {
    int dx = 0;
    int dy = 0;
};

constexpr int type_code(EdgeType e) noexcept { return static_cast<int>(e); }
EdgeType edge_type_from_code(int code);
std::string_view edge_type_name(EdgeType e) noexcept;

/// Integer grid offset of a directional type; SelfLoop maps to (0, 0).
Offset edge_offset(EdgeType e) noexcept;

/// Normalized direction vector; throws std::invalid_argument for SelfLoop.
Vec2 edge_unit_vector(EdgeType e);

/// E<->W, N<->S, NE<->SW, NW<->SE; SelfLoop is its own reverse.
EdgeType reverse(EdgeType e) noexcept;

struct GridNode {
    int id = 0;
    int x = 0;
    int y = 0;
    friend bool operator==(const GridNode&, const GridNode&) = default;
};

struct GridEdge {
    int src = 0;
    int dst = 0;
    EdgeType type = EdgeType::E;
    friend bool operator==(const GridEdge&, const GridEdge&) = default;
    friend auto operator<=>(const GridEdge& a, const GridEdge& b) {
        if (a.src != b.src) return a.src <=> b.src;
        if (a.dst != b.dst) return a.dst <=> b.dst;
        return type_code(a.type) <=> type_code(b.type);
    }
};

/// Corrupted N x N grid. Node ids are y * N + x of the uncorrupted grid and
/// stay stable through corruption. Nodes are kept sorted by id and edges in
/// canonical (src, dst, type) order. Immutable after construction.
class GridGraph {
public:
    GridGraph() = default;

    /// Validates the node/edge lists (coordinates, endpoints, offsets) and
    /// builds the adjacency index. Inputs need not be sorted.
    GridGraph(int n_side, std::vector<GridNode> nodes, std::vector<GridEdge> edges);

    int n_side() const noexcept { return n_side_; }
    const std::vector<GridNode>& nodes() const noexcept { return nodes_; }
    const std::vector<GridEdge>& edges() const noexcept { return edges_; }
    std::size_t num_nodes() const noexcept { return nodes_.size(); }
    std::size_t num_edges() const noexcept { return edges_.size(); }
    std::size_t num_directional_edges() const noexcept;
    std::size_t num_selfloops() const noexcept { return edges_.size() - num_directional_edges(); }

    bool has_node(int id) const noexcept;
    /// Position of node `id` in nodes(); throws std::invalid_argument if absent.
    int index_of(int id) const;
    const GridNode& node(int id) const { return nodes_[static_cast<std::size_t>(index_of(id))]; }

    /// Edge indices (into edges()) leaving / entering the node at `index`.
    const std::vector<int>& out_edges(int index) const { return out_[static_cast<std::size_t>(index)]; }
    const std::vector<int>& in_edges(int index) const { return in_[static_cast<std::size_t>(index)]; }

    /// Destination id of the edge of type `e` leaving node `id`, if present.
    std::optional<int> neighbor(int id, EdgeType e) const;

    friend bool operator==(const GridGraph& a, const GridGraph& b) {
        return a.n_side_ == b.n_side_ && a.nodes_ == b.nodes_ && a.edges_ == b.edges_;
    }

private:
    int n_side_ = 0;
    std::vector<GridNode> nodes_;
    std::vector<GridEdge> edges_;
    std::vector<int> index_by_id_;
    std::vector<std::vector<int>> out_;
    std::vector<std::vector<int>> in_;
    std::vector<std::array<int, kNumEdgeTypes>> neighbor_by_type_;
};

struct CorruptionParams {
    double p_node_drop = 0.0;
    double p_edge_drop = 0.0;
    std::uint64_t seed = 0;

    static CorruptionParams node_drop(std::uint64_t seed) { return {0.1, 0.0, seed}; }
    static CorruptionParams edge_drop(std::uint64_t seed) { return {0.0, 0.2, seed}; }
};

/// Full N x N grid with all 8-neighbour directional edges and no selfloops.
GridGraph build_grid(int n_side);

/// Drops nodes, then undirected edge pairs, then nodes left without edges.
/// Deterministic in params.seed.
GridGraph corrupt(const GridGraph& graph, const CorruptionParams& params);

/// Adds one SelfLoop per node; idempotent.
GridGraph add_selfloops(const GridGraph& graph);

}  // namespace gridflow
