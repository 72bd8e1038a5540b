#include "gridflow/grid.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "gridflow/rng.hpp"

namespace gridflow {

namespace {

constexpr std::array<Offset, kNumEdgeTypes> kOffsets{{
    {1, 0}, {1, 1}, {0, 1}, {-1, 1}, {-1, 0}, {-1, -1}, {0, -1}, {1, -1}, {0, 0},
}};

constexpr std::array<std::string_view, kNumEdgeTypes> kNames{
    "E", "NE", "N", "NW", "W", "SW", "S", "SE", "SelfLoop",
};

}  // namespace

EdgeType edge_type_from_code(int code) {
    if (code < 0 || code >= kNumEdgeTypes) {
        throw std::invalid_argument("edge type code out of range: " + std::to_string(code));
    }
    return static_cast<EdgeType>(code);
}

std::string_view edge_type_name(EdgeType e) noexcept { return kNames[static_cast<std::size_t>(e)]; }

Offset edge_offset(EdgeType e) noexcept { return kOffsets[static_cast<std::size_t>(e)]; }

Vec2 edge_unit_vector(EdgeType e) {
    if (e == EdgeType::SelfLoop) {
        throw std::invalid_argument("edge_unit_vector: SelfLoop has no direction");
    }
    const Offset o = edge_offset(e);
    const double norm = std::hypot(static_cast<double>(o.dx), static_cast<double>(o.dy));
    return {o.dx / norm, o.dy / norm};
}

EdgeType reverse(EdgeType e) noexcept {
    if (e == EdgeType::SelfLoop) {
        return e;
    }
    return static_cast<EdgeType>((type_code(e) + 4) % kNumDirections);
}

GridGraph::GridGraph(int n_side, std::vector<GridNode> nodes, std::vector<GridEdge> edges)
    : n_side_(n_side), nodes_(std::move(nodes)), edges_(std::move(edges)) {
    if (n_side < 1) {
        throw std::invalid_argument("GridGraph: n_side must be positive");
    }
    std::sort(nodes_.begin(), nodes_.end(), [](const GridNode& a, const GridNode& b) { return a.id < b.id; });
    std::sort(edges_.begin(), edges_.end());

    const auto cells = static_cast<std::size_t>(n_side) * static_cast<std::size_t>(n_side);
    index_by_id_.assign(cells, -1);
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        const GridNode& n = nodes_[i];
        if (n.x < 0 || n.y < 0 || n.x >= n_side || n.y >= n_side || n.id != n.y * n_side + n.x) {
            throw std::invalid_argument("GridGraph: node " + std::to_string(n.id) + " has inconsistent coordinates");
        }
        if (index_by_id_[static_cast<std::size_t>(n.id)] != -1) {
            throw std::invalid_argument("GridGraph: duplicate node " + std::to_string(n.id));
        }
        index_by_id_[static_cast<std::size_t>(n.id)] = static_cast<int>(i);
    }

    out_.assign(nodes_.size(), {});
    in_.assign(nodes_.size(), {});
    std::array<int, kNumEdgeTypes> none{};
    none.fill(-1);
    neighbor_by_type_.assign(nodes_.size(), none);
    for (std::size_t k = 0; k < edges_.size(); ++k) {
        const GridEdge& e = edges_[k];
        if (!has_node(e.src) || !has_node(e.dst)) {
            throw std::invalid_argument("GridGraph: edge (" + std::to_string(e.src) + ", " + std::to_string(e.dst) +
                                        ") references a missing node");
        }
        const GridNode& a = node(e.src);
        const GridNode& b = node(e.dst);
        const Offset o = edge_offset(e.type);
        if (b.x - a.x != o.dx || b.y - a.y != o.dy) {
            throw std::invalid_argument("GridGraph: edge (" + std::to_string(e.src) + ", " + std::to_string(e.dst) +
                                        ") does not match type " + std::string(edge_type_name(e.type)));
        }
        const auto si = static_cast<std::size_t>(index_of(e.src));
        const auto di = static_cast<std::size_t>(index_of(e.dst));
        auto& slot = neighbor_by_type_[si][static_cast<std::size_t>(type_code(e.type))];
        if (slot != -1) {
            throw std::invalid_argument("GridGraph: duplicate edge (" + std::to_string(e.src) + ", " +
                                        std::to_string(e.dst) + ")");
        }
        slot = e.dst;
        out_[si].push_back(static_cast<int>(k));
        in_[di].push_back(static_cast<int>(k));
    }
}

std::size_t GridGraph::num_directional_edges() const noexcept {
    return static_cast<std::size_t>(std::count_if(edges_.begin(), edges_.end(),
                                                  [](const GridEdge& e) { return e.type != EdgeType::SelfLoop; }));
}

bool GridGraph::has_node(int id) const noexcept {
    return id >= 0 && static_cast<std::size_t>(id) < index_by_id_.size() &&
           index_by_id_[static_cast<std::size_t>(id)] != -1;
}

int GridGraph::index_of(int id) const {
    if (!has_node(id)) {
        throw std::invalid_argument("unknown node id " + std::to_string(id));
    }
    return index_by_id_[static_cast<std::size_t>(id)];
}

std::optional<int> GridGraph::neighbor(int id, EdgeType e) const {
    const int dst = neighbor_by_type_[static_cast<std::size_t>(index_of(id))][static_cast<std::size_t>(type_code(e))];
    if (dst < 0) {
        return std::nullopt;
    }
    return dst;
}

GridGraph build_grid(int n_side) {
    if (n_side < 2) {
        throw std::invalid_argument("build_grid: n_side must be >= 2, got " + std::to_string(n_side));
    }
    std::vector<GridNode> nodes;
    nodes.reserve(static_cast<std::size_t>(n_side * n_side));
    std::vector<GridEdge> edges;
    edges.reserve(static_cast<std::size_t>(8 * n_side * n_side));
    for (int y = 0; y < n_side; ++y) {
        for (int x = 0; x < n_side; ++x) {
            const int id = y * n_side + x;
            nodes.push_back({id, x, y});
            for (int t = 0; t < kNumDirections; ++t) {
                const Offset o = kOffsets[static_cast<std::size_t>(t)];
                const int nx = x + o.dx;
                const int ny = y + o.dy;
                if (nx >= 0 && ny >= 0 && nx < n_side && ny < n_side) {
                    edges.push_back({id, ny * n_side + nx, static_cast<EdgeType>(t)});
                }
            }
        }
    }
    return GridGraph(n_side, std::move(nodes), std::move(edges));
}

GridGraph corrupt(const GridGraph& graph, const CorruptionParams& params) {
    if (params.p_node_drop < 0.0 || params.p_node_drop > 1.0 || params.p_edge_drop < 0.0 || params.p_edge_drop > 1.0) {
        throw std::invalid_argument("corrupt: drop probabilities must lie in [0, 1]");
    }
    for (const GridEdge& e : graph.edges()) {
        if (e.type == EdgeType::SelfLoop) {
            throw std::invalid_argument("corrupt: input graph must not contain selfloops");
        }
    }
    Rng rng(derive_seed(params.seed, 0xC0FFEE));

    const auto n_cells = static_cast<std::size_t>(graph.n_side()) * static_cast<std::size_t>(graph.n_side());
    std::vector<char> alive(n_cells, 0);
    for (const GridNode& n : graph.nodes()) {
        alive[static_cast<std::size_t>(n.id)] = rng.uniform() >= params.p_node_drop ? 1 : 0;
    }

    // One draw per undirected pair, visited through its (src < dst) edge.
    std::vector<GridEdge> kept;
    kept.reserve(graph.num_edges());
    for (const GridEdge& e : graph.edges()) {
        if (e.src >= e.dst) {
            continue;
        }
        const bool drop_pair = rng.uniform() < params.p_edge_drop;
        if (drop_pair || !alive[static_cast<std::size_t>(e.src)] || !alive[static_cast<std::size_t>(e.dst)]) {
            continue;
        }
        kept.push_back(e);
        if (auto back = graph.neighbor(e.dst, reverse(e.type)); back && *back == e.src) {
            kept.push_back({e.dst, e.src, reverse(e.type)});
        }
    }

    std::vector<char> has_edge(n_cells, 0);
    for (const GridEdge& e : kept) {
        has_edge[static_cast<std::size_t>(e.src)] = 1;
        has_edge[static_cast<std::size_t>(e.dst)] = 1;
    }
    std::vector<GridNode> nodes;
    nodes.reserve(graph.num_nodes());
    for (const GridNode& n : graph.nodes()) {
        if (alive[static_cast<std::size_t>(n.id)] && has_edge[static_cast<std::size_t>(n.id)]) {
            nodes.push_back(n);
        }
    }
    return GridGraph(graph.n_side(), std::move(nodes), std::move(kept));
}

GridGraph add_selfloops(const GridGraph& graph) {
    std::vector<GridEdge> edges;
    edges.reserve(graph.num_edges() + graph.num_nodes());
    for (const GridEdge& e : graph.edges()) {
        if (e.type != EdgeType::SelfLoop) {
            edges.push_back(e);
        }
    }
    for (const GridNode& n : graph.nodes()) {
        edges.push_back({n.id, n.id, EdgeType::SelfLoop});
    }
    return GridGraph(graph.n_side(), graph.nodes(), std::move(edges));
}

}  // namespace gridflow
