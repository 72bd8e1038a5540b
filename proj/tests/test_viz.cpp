#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <string>

#include "doctest.h"
#include "gridflow/viz.hpp"

using namespace gridflow;

namespace {

std::size_t count(const std::string& text, const std::string& needle) {
    std::size_t n = 0;
    for (std::size_t p = text.find(needle); p != std::string::npos; p = text.find(needle, p + 1)) ++n;
    return n;
}

std::size_t lines(const std::string& text) { return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')); }

ModelConfig tiny(const char* variant) {
    ModelConfig c;
    c.dims = 8;
    c.attn_dims = 2;
    c.heads = 2;
    c.steps = 4;
    c.variant = parse_variant(variant);
    return c;
}

// Bottom row of a 5x5 grid only: every walk stays on y = 0.
GridGraph corridor() {
    std::vector<GridNode> nodes;
    std::vector<GridEdge> edges;
    for (int x = 0; x < 5; ++x) {
        nodes.push_back({x, x, 0});
        if (x > 0) {
            edges.push_back({x - 1, x, EdgeType::E});
            edges.push_back({x, x - 1, EdgeType::W});
        }
    }
    return add_selfloops(GridGraph(5, nodes, edges));
}

}  // namespace

TEST_CASE("max-normalized aggregation") {
    const std::vector<std::vector<double>> steps{{1, 0, 0}, {0.5, 0.5, 0}, {0.2, 0.2, 0.6}};
    const std::vector<double> h = viz::max_normalized(steps);
    CHECK(h[0] == doctest::Approx(1.0));
    CHECK(h[1] == doctest::Approx(1.0));
    CHECK(h[2] == doctest::Approx(1.0));

    const std::vector<double> g = viz::max_normalized({{1, 0, 0}, {0.25, 0.5, 0.25}});
    CHECK(g == std::vector<double>{1.0, 1.0, 0.5});
    const std::vector<double> z = viz::max_normalized({{0, 0}, {0.1, 0.3}});  // all-zero step skipped
    CHECK(z[0] == doctest::Approx(1.0 / 3.0));
    CHECK(z[1] == 1.0);
    CHECK(viz::max_normalized({}).empty());
    CHECK_THROWS_AS(viz::max_normalized({{1, 0}, {1}}), std::invalid_argument);
}

TEST_CASE("flow trace starts at src and conserves mass") {
    for (const char* name : {"ggnn-mulmlp", "gat-mul", "fullgn-noact", "rw-stationary", "rw-dynamic"}) {
        CAPTURE(name);
        for (std::uint64_t seed = 1; seed <= 3; ++seed) {
            const GridGraph g = add_selfloops(corrupt(build_grid(5), {0.15, 0.1, seed}));
            const Model<float> model(tiny(name), static_cast<int>(g.num_nodes()), seed);
            const int src = g.nodes().front().id;
            const int dst = g.nodes().back().id;
            const viz::AttentionTrace t = viz::trace_flow(model, g, src, dst);
            REQUIRE(t.nodes.size() == 5);
            REQUIRE(t.edges.size() == 4);
            for (std::size_t i = 0; i < g.num_nodes(); ++i) CHECK(t.nodes[0][i] == (g.nodes()[i].id == src ? 1.0 : 0.0));
            for (const auto& row : t.nodes) CHECK(std::abs(std::accumulate(row.begin(), row.end(), 0.0) - 1.0) < 1e-9);
            for (const auto& row : t.edges) CHECK(std::abs(std::accumulate(row.begin(), row.end(), 0.0) - 1.0) < 1e-9);
            const std::vector<double> h = viz::max_normalized(t.nodes);
            CHECK(h[static_cast<std::size_t>(g.index_of(src))] == 1.0);
            for (const double v : h) CHECK((v >= 0.0 && v <= 1.0));
        }
    }
}

TEST_CASE("a corridor graph gives a one-wide belt") {
    const GridGraph g = corridor();
    const Model<float> model(tiny("ggnn-mulmlp"), static_cast<int>(g.num_nodes()), 3);
    const viz::AttentionTrace t = viz::trace_flow(model, g, 0, 4);
    const std::vector<double> h = viz::max_normalized(t.nodes);
    const std::string csv = viz::heatmap_csv(g, h);
    std::istringstream in(csv);
    std::string line;
    std::getline(in, line);
    CHECK(line == "node_id,x,y,value");
    int rows = 0;
    while (std::getline(in, line)) {
        int id = 0, x = 0, y = 0;
        double v = 0;
        REQUIRE(std::sscanf(line.c_str(), "%d,%d,%d,%lf", &id, &x, &y, &v) == 4);
        CHECK(y == 0);
        CHECK(v > 0.0);
        ++rows;
    }
    CHECK(rows == 5);
    const std::string svg = viz::heatmap_svg(g, h, 0, 4);
    CHECK(count(svg, "class=\"cell\"") == 5);
    CHECK(count(svg, "class=\"link\"") == 4);
}

TEST_CASE("heatmap SVG leaves gaps for removed nodes and edges") {
    const GridGraph g = add_selfloops(corrupt(build_grid(6), {0.2, 0.2, 7}));
    REQUIRE(g.num_nodes() < 36);
    std::vector<double> values(g.num_nodes());
    for (std::size_t i = 0; i < values.size(); ++i) values[i] = static_cast<double>(i) / static_cast<double>(values.size());
    const int src = g.nodes().front().id;
    const int dst = g.nodes().back().id;
    const std::string svg = viz::heatmap_svg(g, values, src, dst, "a < b & c");
    CHECK(svg.rfind("<svg", 0) == 0);
    CHECK(svg.substr(svg.size() - 7) == "</svg>\n");
    CHECK(count(svg, "class=\"cell\"") == g.num_nodes());
    CHECK(count(svg, "class=\"link\"") == g.num_directional_edges() / 2);
    CHECK(count(svg, "class=\"src\"") == 1);
    CHECK(count(svg, "class=\"dst\"") == 1);
    CHECK(svg.find("a &lt; b &amp; c") != std::string::npos);
    CHECK_THROWS_AS(viz::heatmap_svg(g, std::vector<double>(3), src, dst), std::invalid_argument);
}

TEST_CASE("trace tables") {
    const GridGraph g = add_selfloops(corrupt(build_grid(4), {0.1, 0.0, 2}));
    const Model<float> model(tiny("ggnn-mul"), static_cast<int>(g.num_nodes()), 2);
    const int src = g.nodes()[1].id;
    const viz::AttentionTrace t = viz::trace_flow(model, g, src, g.nodes()[2].id);
    const std::string wide = viz::attention_csv(g, t);
    CHECK(lines(wide) == 6);
    CHECK(wide.rfind("step," + std::to_string(g.nodes()[0].id) + ",", 0) == 0);
    const std::string focused = viz::focused_tsv(g, t);
    CHECK(lines(focused) == 1 + 5 * g.num_nodes());
    CHECK(focused.rfind("step\tnode_id\ta\n", 0) == 0);
    CHECK(focused.find("0\t" + std::to_string(src) + "\t1\n") != std::string::npos);
    const std::string flowing = viz::flowing_tsv(g, t);
    CHECK(lines(flowing) == 1 + 4 * g.num_edges());
    CHECK(flowing.rfind("step\tsrc_id\tdst_id\tedge_type\tflowing\n", 0) == 0);
}

TEST_CASE("regular models offer the readout heatmap") {
    const GridGraph g = add_selfloops(build_grid(4));
    const Model<float> model(tiny("ggnn"), static_cast<int>(g.num_nodes()), 4);
    CHECK_THROWS_AS(viz::trace_flow(model, g, 0, 5), viz::FlowUnavailable);
    try {
        viz::trace_flow(model, g, 0, 5);
    } catch (const viz::FlowUnavailable& e) {
        CHECK(std::string(e.what()).find("readout") != std::string::npos);
    }
    const viz::AttentionTrace t = viz::trace_readout(model, g, 0, 5);
    CHECK(t.readout);
    CHECK(t.edges.empty());
    REQUIRE(t.nodes.size() == 5);
    for (const auto& row : t.nodes) CHECK(std::abs(std::accumulate(row.begin(), row.end(), 0.0) - 1.0) < 1e-9);
    const Model<float> wrong(tiny("ggnn-mul"), 3, 4);
    CHECK_THROWS_AS(viz::trace_flow(wrong, g, 0, 5), std::invalid_argument);
}
