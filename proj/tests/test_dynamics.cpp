#include <cmath>
#include <stdexcept>
#include <map>
#include <numeric>
#include <set>

#include "doctest.h"
#include "gridflow/dynamics.hpp"

using namespace gridflow;

namespace {

// Direct evaluation of the sampling law in extended precision, without the
// max-shift used by the library.
std::array<long double, 8> reference_distribution(Vec2 d, double sigma) {
    static const long double r = std::sqrt(0.5L);
    const long double ux[8] = {1, r, 0, -r, -1, -r, 0, r};
    const long double uy[8] = {0, r, 1, r, 0, -r, -1, -r};
    const long double norm = std::sqrt(static_cast<long double>(d.x) * d.x + static_cast<long double>(d.y) * d.y);
    std::array<long double, 8> p{};
    long double z = 0;
    for (int k = 0; k < 8; ++k) {
        p[k] = std::exp((ux[k] * d.x + uy[k] * d.y) / norm / (static_cast<long double>(sigma) * sigma));
        z += p[k];
    }
    for (auto& v : p) v /= z;
    return p;
}

}  // namespace

TEST_CASE("latent direction presets") {
    const std::vector<Coord> h{{3, 5}};
    const Vec2 line = latent_direction(DirectionFunction::line(), 7, h);
    CHECK(line.x == doctest::Approx(1.0));
    CHECK(line.y == doctest::Approx(0.4));

    const Vec2 sine = latent_direction(DirectionFunction::sine(), 0, h);
    CHECK(sine.x == doctest::Approx(1.0));
    CHECK(sine.y == doctest::Approx(std::sin(1.6)).epsilon(1e-14));
    CHECK(sine.y == doctest::Approx(0.99957).epsilon(1e-5));
    const Vec2 sine3 = latent_direction(DirectionFunction::sine(), 3, h);
    CHECK(sine3.y == doctest::Approx(std::sin(0.4 * 3 + 1.6)));

    const std::vector<Coord> origin{{0, 0}};
    const Vec2 loc = latent_direction(DirectionFunction::location(), 4, origin);
    CHECK(loc.x == doctest::Approx(1.0));
    CHECK(loc.y == doctest::Approx(0.0));
    const Vec2 loc2 = latent_direction(DirectionFunction::location(), 0, h);
    CHECK(loc2.x == doctest::Approx(std::cos(1.6)));
    CHECK(loc2.y == doctest::Approx(std::sin(1.6)));

    const std::vector<Coord> path{{9, 1}, {4, 6}, {2, 2}};
    const Vec2 hist = latent_direction(DirectionFunction::history(), 2, path);
    CHECK(hist.x == doctest::Approx(std::cos(0.2 * 9 + 0.2 * 6)));
    CHECK(hist.y == doctest::Approx(std::sin(0.2 * 9 + 0.2 * 6)));

    CHECK_THROWS_AS(latent_direction(DirectionFunction::line(), 0, std::vector<Coord>{}), std::invalid_argument);
}

TEST_CASE("edge_distribution against extended-precision evaluation") {
    Rng rng(11);
    for (int trial = 0; trial < 200; ++trial) {
        const Vec2 d{rng.uniform(-3, 3), rng.uniform(-3, 3)};
        const double sigma = rng.uniform(0.15, 2.0);
        const auto p = edge_distribution(d, sigma);
        const auto ref = reference_distribution(d, sigma);
        double total = 0.0;
        for (int k = 0; k < 8; ++k) {
            CHECK(p[k] > 0.0);
            CHECK(std::abs(p[k] - static_cast<double>(ref[k])) < 1e-13);
            total += p[k];
        }
        CHECK(std::abs(total - 1.0) < 1e-12);

        const double scale = rng.uniform(0.01, 100.0);
        const auto q = edge_distribution({d.x * scale, d.y * scale}, sigma);
        for (int k = 0; k < 8; ++k) {
            CHECK(std::abs(p[k] - q[k]) < 1e-14);
        }
    }
}

TEST_CASE("edge_distribution examples") {
    const auto flat = edge_distribution({1, 0}, 100.0);
    for (double v : flat) {
        CHECK(v >= 0.1249);
        CHECK(v <= 0.1251);
    }

    const auto line = edge_distribution({1, 0.4}, 0.2);
    std::array<int, 8> order{};
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) { return line[a] > line[b]; });
    CHECK(((order[0] == 0 && order[1] == 1) || (order[0] == 1 && order[1] == 0)));
    const double deg = std::acos(-1.0) / 180.0;
    CHECK(line[0] / line[1] ==
          doctest::Approx(std::exp((std::cos(21.801 * deg) - std::cos(23.199 * deg)) / 0.04)).epsilon(1e-4));

    const auto north = edge_distribution({0, 1}, 0.5);
    CHECK(north[2] == *std::max_element(north.begin(), north.end()));
    CHECK(north[1] == north[3]);
    CHECK(north[1] < north[2]);

    CHECK_THROWS_AS(edge_distribution({0, 0}, 0.2), std::invalid_argument);
    CHECK_THROWS_AS(edge_distribution({1, 0}, 0.0), std::invalid_argument);
}

TEST_CASE("rollout follows existing edges") {
    const GridGraph g = corrupt(build_grid(16), {0.1, 0.1, 5});
    GenParams params;
    params.n_side = 16;
    params.sigma = 0.5;
    params.direction = DirectionFunction::history();
    Rng rng(3);
    for (const GridNode& n : g.nodes()) {
        const Trajectory t = rollout(g, n.id, params, rng);
        CHECK(t.source() == n.id);
        CHECK(t.nodes.size() <= static_cast<std::size_t>(params.max_steps) + 1);
        if (t.terminated_by == Termination::MaxSteps) {
            CHECK(t.transitions() == params.max_steps);
        }
        for (std::size_t i = 1; i < t.nodes.size(); ++i) {
            bool found = false;
            for (int k = 0; k < kNumDirections; ++k) {
                const auto next = g.neighbor(t.nodes[i - 1], static_cast<EdgeType>(k));
                found = found || (next && *next == t.nodes[i]);
            }
            CHECK(found);
        }
    }
    CHECK_THROWS_AS(rollout(g, -1, params, rng), std::invalid_argument);
}

TEST_CASE("rollout on uncorrupted grid drifts east-northeast") {
    const GridGraph g = build_grid(32);
    GenParams params;
    const int src = g.node(8 * 32 + 4).id;
    Rng rng(17);
    double dx = 0.0, dy = 0.0;
    for (int i = 0; i < 1000; ++i) {
        const Trajectory t = rollout(g, src, params, rng);
        CHECK(t.nodes.size() == 17);
        dx += g.node(t.destination()).x - 4;
        dy += g.node(t.destination()).y - 8;
    }
    CHECK(dx / 1000 >= 14.0);
    CHECK(dx / 1000 <= 16.0);
    CHECK(dy / 1000 >= 4.0);
    CHECK(dy / 1000 <= 8.0);
}

TEST_CASE("immediately blocked rollout") {
    // A single node has no directional edges, so every first draw is blocked.
    const GridGraph g(4, {{5, 1, 1}}, {});
    GenParams params;
    params.n_side = 4;
    Rng rng(1);
    const Trajectory t = rollout(g, 5, params, rng);
    CHECK(t.nodes == std::vector<int>{5});
    CHECK(t.destination() == 5);
    CHECK(t.terminated_by == Termination::BlockedEdge);
}

TEST_CASE("dataset dedup and split partition") {
    GenParams params;
    params.n_side = 12;
    params.max_steps = 6;
    params.sigma = 0.5;
    params = params.with_seed(9);
    const DatasetBuild build = build_dataset_with_rollouts(params, 1);

    std::set<std::pair<int, int>> distinct;
    for (const Trajectory& t : build.trajectories) {
        distinct.insert({t.source(), t.destination()});
    }
    CHECK(build.dataset.pairs.size() == distinct.size());

    std::map<int, Split> split_of;
    std::set<int> sources;
    for (const PairRecord& p : build.dataset.pairs) {
        CHECK(distinct.count({p.src, p.dst}) == 1);
        const auto [it, inserted] = split_of.emplace(p.src, p.split);
        CHECK(it->second == p.split);
        sources.insert(p.src);
    }
    std::size_t counts[3] = {0, 0, 0};
    for (const auto& [src, s] : split_of) {
        ++counts[static_cast<int>(s)];
    }
    const std::size_t n = sources.size();
    CHECK(counts[0] == n * 8 / 10);
    CHECK(counts[1] == n / 10);
    CHECK(counts[0] + counts[1] + counts[2] == n);
    CHECK(build.dataset.graph.num_selfloops() == build.dataset.graph.num_nodes());
}

TEST_CASE("parallel generation matches sequential") {
    const GenParams params = preset_params("HISTORY-SZ32-STP16-EDRP-STD0.5", 4);
    const DatasetBuild a = build_dataset_with_rollouts(params, 1);
    const DatasetBuild b = build_dataset_with_rollouts(params, 4);
    CHECK(a.dataset.pairs == b.dataset.pairs);
    CHECK(a.dataset.graph == b.dataset.graph);
    REQUIRE(a.trajectories.size() == b.trajectories.size());
    for (std::size_t i = 0; i < a.trajectories.size(); ++i) {
        CHECK(a.trajectories[i].nodes == b.trajectories[i].nodes);
    }
}

TEST_CASE("single rollout bounds pair count") {
    GenParams params = preset_params("LINE-SZ32-STP16-NDRP-STD0.2", 2);
    params.n_rollout = 1;
    const DatasetBuild b = build_dataset_with_rollouts(params, 1);
    CHECK(b.dataset.pairs.size() <= b.dataset.graph.num_nodes());
}

TEST_CASE("dataset_stats") {
    Dataset d{add_selfloops(build_grid(32)), {}};
    const DatasetStats s = dataset_stats(d, {});
    CHECK(s.nodes == 1024);
    CHECK(s.edges == 7812);
    CHECK(s.pairs == 0);
    CHECK(s.mean_traj_length == 0.0);
}

TEST_CASE("presets") {
    CHECK(preset_names().size() == 24);
    const GenParams p = preset_params("SINE-SZ64-STP32-NDRP-STD0.5", 3);
    CHECK(p.n_side == 64);
    CHECK(p.max_steps == 32);
    CHECK(p.sigma == 0.5);
    CHECK(p.corruption.p_node_drop == 0.1);
    CHECK(p.direction.kind == DirectionKind::Sine);
    CHECK_THROWS_AS(preset_params("LINE-SZ16"), std::invalid_argument);
    CHECK(parse_direction_kind("History") == DirectionKind::History);
    CHECK(parse_split("valid") == Split::Valid);
    CHECK_THROWS_AS(parse_split("dev"), std::invalid_argument);
}

TEST_CASE("dataset_stats length measures against a direct recount") {
    const DatasetBuild b = build_dataset_with_rollouts(preset_params("LOCATION-SZ32-STP16-EDRP-STD0.5", 1), 1);
    const DatasetStats s = dataset_stats(b.dataset, b.trajectories);

    double transitions = 0.0;
    std::map<std::pair<int, int>, std::vector<double>> by_pair;
    for (const Trajectory& t : b.trajectories) {
        transitions += static_cast<double>(t.nodes.size() - 1);
        const double cells = static_cast<double>(t.nodes.size()) + (t.terminated_by == Termination::BlockedEdge);
        by_pair[{t.source(), t.destination()}].push_back(cells);
    }
    double per_pair = 0.0;
    for (const auto& [key, v] : by_pair) {
        per_pair += std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    }
    CHECK(s.mean_transitions == doctest::Approx(transitions / static_cast<double>(b.trajectories.size())));
    CHECK(s.mean_traj_length == doctest::Approx(per_pair / static_cast<double>(by_pair.size())));
    CHECK(s.pairs == by_pair.size());
}

TEST_CASE("sharper kernel deduplicates more") {
    double literal = 0.0, sharp = 0.0;
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        GenParams p = preset_params("SINE-SZ32-STP16-NDRP-STD0.2", seed);
        literal += static_cast<double>(build_dataset(p).pairs.size());
        p.sharpness = 2.0;
        sharp += static_cast<double>(build_dataset(p).pairs.size());
    }
    literal /= 3.0;
    sharp /= 3.0;
    CHECK(sharp < literal);
    CHECK(sharp >= 1450.0);
    CHECK(sharp <= 1700.0);

    GenParams bad = preset_params("LINE-SZ32-STP16-NDRP-STD0.2", 0);
    bad.sharpness = 0.0;
    CHECK_THROWS_AS(build_dataset(bad), std::invalid_argument);
}
