#include "gridflow/viz.hpp"

#include <algorithm>
#include <cstdio>
#include <set>
#include <utility>

#include "gridflow/plan.hpp"

namespace gridflow::viz {

namespace {

constexpr int kCell = 20;
constexpr int kInset = 3;
constexpr int kMargin = 10;
constexpr int kTitle = 18;

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string short_num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

std::string fmt(const char* f, double a, double b) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, a, b);
    return buf;
}

std::string escape(std::string_view s) {
    std::string out;
    for (const char c : s) {
        switch (c) {
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '&': out += "&amp;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

// White to dark red.
std::string color(double v) {
    v = std::clamp(v, 0.0, 1.0);
    const int r = static_cast<int>(255 - 75 * v);
    const int gb = static_cast<int>(255 * (1.0 - v));
    char buf[16];
    std::snprintf(buf, sizeof buf, "#%02x%02x%02x", r, gb, gb);
    return buf;
}

AttentionTrace run_traced(const Model<float>& model, const GridGraph& graph, int src_id, int dst_id, bool readout) {
    if (model.num_nodes() != static_cast<int>(graph.num_nodes())) {
        throw std::invalid_argument("trace: model has " + std::to_string(model.num_nodes()) + " node embeddings, graph has " +
                                    std::to_string(graph.num_nodes()) + " nodes");
    }
    const GraphIndex gi(graph);
    const int src[] = {graph.index_of(src_id)};
    const int dst[] = {graph.index_of(dst_id)};
    const Model<double> exact(model.config(), model.num_nodes(), convert_params<double>(model.params()));
    ad::NoGradGuard guard;
    ForwardOptions fo;
    fo.trace = true;
    ForwardOutput<double> out = exact.forward(gi, src, dst, fo);
    Trace& tr = *out.trace;
    AttentionTrace t;
    t.src_id = src_id;
    t.dst_id = dst_id;
    t.readout = readout;
    if (readout) {
        t.nodes = std::move(tr.readout[0]);
    } else {
        t.nodes = std::move(tr.focused[0]);
        t.edges = std::move(tr.flowing[0]);
    }
    return t;
}

void check_values(const GridGraph& graph, std::span<const double> values) {
    if (values.size() != graph.num_nodes()) {
        throw std::invalid_argument("heatmap: " + std::to_string(values.size()) + " values for " +
                                    std::to_string(graph.num_nodes()) + " nodes");
    }
}

}  // namespace

AttentionTrace trace_flow(const Model<float>& model, const GridGraph& graph, int src_id, int dst_id) {
    if (!model.config().variant.explicit_flow()) {
        throw FlowUnavailable("model " + variant_name(model.config().variant) +
                              " has no attention flow; use the implicit readout heatmap instead");
    }
    return run_traced(model, graph, src_id, dst_id, false);
}

AttentionTrace trace_readout(const Model<float>& model, const GridGraph& graph, int src_id, int dst_id) {
    return run_traced(model, graph, src_id, dst_id, true);
}

std::vector<double> max_normalized(const std::vector<std::vector<double>>& steps) {
    std::vector<double> out(steps.empty() ? 0 : steps.front().size(), 0.0);
    for (const auto& p : steps) {
        if (p.size() != out.size()) {
            throw std::invalid_argument("max_normalized: steps differ in length");
        }
        const double top = p.empty() ? 0.0 : *std::max_element(p.begin(), p.end());
        if (!(top > 0.0)) continue;
        for (std::size_t i = 0; i < p.size(); ++i) out[i] = std::max(out[i], p[i] / top);
    }
    return out;
}

std::string heatmap_svg(const GridGraph& graph, std::span<const double> values, int src_id, int dst_id,
                        std::string_view title) {
    check_values(graph, values);
    const int n = graph.n_side();
    const int top = kMargin + (title.empty() ? 0 : kTitle);
    const int width = 2 * kMargin + n * kCell;
    const int height = top + kMargin + n * kCell;
    auto cx = [&](int x) { return kMargin + x * kCell + kCell / 2.0; };
    auto cy = [&](int y) { return top + (n - 1 - y) * kCell + kCell / 2.0; };

    std::string s;
    s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(width) + "\" height=\"" +
         std::to_string(height) + "\" viewBox=\"0 0 " + std::to_string(width) + " " + std::to_string(height) + "\">\n";
    s += "<rect width=\"100%\" height=\"100%\" fill=\"#f4f4f4\"/>\n";
    if (!title.empty()) {
        s += "<text x=\"" + std::to_string(kMargin) + "\" y=\"" + std::to_string(kMargin + 10) +
             "\" font-family=\"sans-serif\" font-size=\"12\">" + escape(title) + "</text>\n";
    }

    std::set<std::pair<int, int>> links;
    for (const GridEdge& e : graph.edges()) {
        if (e.type != EdgeType::SelfLoop) links.emplace(std::min(e.src, e.dst), std::max(e.src, e.dst));
    }
    s += "<g stroke=\"#b0b0b0\" stroke-width=\"1.5\">\n";
    for (const auto& [a, b] : links) {
        const GridNode& u = graph.node(a);
        const GridNode& v = graph.node(b);
        s += "<line class=\"link\" x1=\"" + fmt("%g\" y1=\"%g", cx(u.x), cy(u.y)) + "\" x2=\"" +
             fmt("%g\" y2=\"%g", cx(v.x), cy(v.y)) + "\"/>\n";
    }
    s += "</g>\n";

    const int side = kCell - 2 * kInset;
    for (std::size_t i = 0; i < graph.num_nodes(); ++i) {
        const GridNode& v = graph.nodes()[i];
        s += "<rect class=\"cell\" x=\"" + fmt("%g\" y=\"%g", cx(v.x) - side / 2.0, cy(v.y) - side / 2.0) +
             "\" width=\"" + std::to_string(side) + "\" height=\"" + std::to_string(side) + "\" fill=\"" +
             color(values[i]) + "\" stroke=\"#808080\" stroke-width=\"0.5\"><title>" + std::to_string(v.id) + ": " +
             short_num(values[i]) + "</title></rect>\n";
    }

    const GridNode& src = graph.node(src_id);
    const GridNode& dst = graph.node(dst_id);
    s += "<circle class=\"src\" cx=\"" + fmt("%g\" cy=\"%g", cx(src.x), cy(src.y)) + "\" r=\"" +
         std::to_string(kCell / 2 - 1) + "\" fill=\"none\" stroke=\"#008800\" stroke-width=\"2\"/>\n";
    s += "<rect class=\"dst\" x=\"" + fmt("%g\" y=\"%g", cx(dst.x) - kCell / 2.0 + 1, cy(dst.y) - kCell / 2.0 + 1) +
         "\" width=\"" + std::to_string(kCell - 2) + "\" height=\"" + std::to_string(kCell - 2) +
         "\" fill=\"none\" stroke=\"#0033cc\" stroke-width=\"2\"/>\n";
    s += "</svg>\n";
    return s;
}

std::string heatmap_csv(const GridGraph& graph, std::span<const double> values) {
    check_values(graph, values);
    std::string s = "node_id,x,y,value\n";
    for (std::size_t i = 0; i < graph.num_nodes(); ++i) {
        const GridNode& v = graph.nodes()[i];
        s += std::to_string(v.id) + "," + std::to_string(v.x) + "," + std::to_string(v.y) + "," + num(values[i]) + "\n";
    }
    return s;
}

std::string attention_csv(const GridGraph& graph, const AttentionTrace& trace) {
    std::string s = "step";
    for (const GridNode& v : graph.nodes()) s += "," + std::to_string(v.id);
    s += "\n";
    for (std::size_t t = 0; t < trace.nodes.size(); ++t) {
        s += std::to_string(t);
        for (const double a : trace.nodes[t]) s += "," + num(a);
        s += "\n";
    }
    return s;
}

std::string focused_tsv(const GridGraph& graph, const AttentionTrace& trace) {
    std::string s = "step\tnode_id\ta\n";
    for (std::size_t t = 0; t < trace.nodes.size(); ++t) {
        for (std::size_t i = 0; i < trace.nodes[t].size(); ++i) {
            s += std::to_string(t) + "\t" + std::to_string(graph.nodes()[i].id) + "\t" + num(trace.nodes[t][i]) + "\n";
        }
    }
    return s;
}

std::string flowing_tsv(const GridGraph& graph, const AttentionTrace& trace) {
    std::string s = "step\tsrc_id\tdst_id\tedge_type\tflowing\n";
    for (std::size_t t = 0; t < trace.edges.size(); ++t) {
        for (std::size_t k = 0; k < trace.edges[t].size(); ++k) {
            const GridEdge& e = graph.edges()[k];
            s += std::to_string(t) + "\t" + std::to_string(e.src) + "\t" + std::to_string(e.dst) + "\t" +
                 std::string(edge_type_name(e.type)) + "\t" + num(trace.edges[t][k]) + "\n";
        }
    }
    return s;
}

}  // namespace gridflow::viz
