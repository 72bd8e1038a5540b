#include "gridflow/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <numeric>
#include <stdexcept>
#include <string>
#include <thread>
#include <tuple>

namespace gridflow {

std::string_view direction_kind_name(DirectionKind k) noexcept {
    switch (k) {
        case DirectionKind::Line: return "line";
        case DirectionKind::Sine: return "sine";
        case DirectionKind::Location: return "location";
        case DirectionKind::History: return "history";
    }
    return "line";
}

DirectionKind parse_direction_kind(std::string_view name) {
    std::string lower(name);
    std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
    if (lower == "line") return DirectionKind::Line;
    if (lower == "sine") return DirectionKind::Sine;
    if (lower == "location") return DirectionKind::Location;
    if (lower == "history") return DirectionKind::History;
    throw std::invalid_argument("unknown direction function '" + std::string(name) +
                                "' (expected line, sine, location or history)");
}

DirectionFunction DirectionFunction::line() { return {DirectionKind::Line, 0.0, 1.0, 0.0, 0.4, 0.0, 0.0, 0.0, 0.0}; }

DirectionFunction DirectionFunction::sine() { return {DirectionKind::Sine, 0.0, 1.0, 1.0, 0.0, 0.4, 0.0, 0.0, 1.6}; }

DirectionFunction DirectionFunction::location() {
    return {DirectionKind::Location, 1.0, 0.0, 1.0, 0.0, 0.0, 0.2, 0.2, 0.0};
}

DirectionFunction DirectionFunction::history() {
    return {DirectionKind::History, 1.0, 0.0, 1.0, 0.0, 0.0, 0.2, 0.2, 0.0};
}

DirectionFunction DirectionFunction::preset(DirectionKind kind) {
    switch (kind) {
        case DirectionKind::Line: return line();
        case DirectionKind::Sine: return sine();
        case DirectionKind::Location: return location();
        case DirectionKind::History: return history();
    }
    return line();
}

Vec2 latent_direction(const DirectionFunction& fn, int t, std::span<const Coord> history) {
    if (history.empty()) {
        throw std::invalid_argument("latent_direction: history must contain the current position");
    }
    double x = history.back().x;
    double y = history.back().y;
    if (fn.kind == DirectionKind::History) {
        x = history.front().x;
        y = history.front().y;
        for (const Coord& c : history) {
            x = std::max(x, static_cast<double>(c.x));
            y = std::max(y, static_cast<double>(c.y));
        }
    }
    const double theta = fn.omega * t + fn.lambda1 * x + fn.lambda2 * y + fn.phi;
    return {fn.a1 * std::cos(theta) + fn.b1, fn.a2 * std::sin(theta) + fn.b2};
}

std::array<double, kNumDirections> edge_distribution(Vec2 direction, double sigma) {
    const double norm = std::hypot(direction.x, direction.y);
    if (!(norm > 0.0) || !std::isfinite(norm)) {
        throw std::invalid_argument("edge_distribution: direction must be a finite non-zero vector");
    }
    if (!(sigma > 0.0)) {
        throw std::invalid_argument("edge_distribution: sigma must be positive");
    }
    const double inv_var = 1.0 / (sigma * sigma);
    std::array<double, kNumDirections> logits{};
    for (int k = 0; k < kNumDirections; ++k) {
        const Vec2 u = edge_unit_vector(static_cast<EdgeType>(k));
        logits[static_cast<std::size_t>(k)] = (u.x * direction.x + u.y * direction.y) / norm * inv_var;
    }
    const double peak = *std::max_element(logits.begin(), logits.end());
    double total = 0.0;
    for (double& v : logits) {
        v = std::exp(v - peak);
        total += v;
    }
    for (double& v : logits) {
        v /= total;
    }
    return logits;
}

GenParams GenParams::with_seed(std::uint64_t s) const {
    GenParams p = *this;
    p.seed = s;
    p.corruption.seed = s;
    return p;
}

namespace {

struct PresetRow {
    const char* name;
    DirectionKind kind;
    int n_side;
    int steps;
    double sigma;
    double p_node;
    double p_edge;
};

constexpr PresetRow kPresets[] = {
    {"LINE-SZ32-STP16-NDRP-STD0.2", DirectionKind::Line, 32, 16, 0.2, 0.1, 0.0},
    {"LINE-SZ32-STP16-NDRP-STD0.5", DirectionKind::Line, 32, 16, 0.5, 0.1, 0.0},
    {"SINE-SZ32-STP16-NDRP-STD0.2", DirectionKind::Sine, 32, 16, 0.2, 0.1, 0.0},
    {"SINE-SZ32-STP16-NDRP-STD0.5", DirectionKind::Sine, 32, 16, 0.5, 0.1, 0.0},
    {"LOCATION-SZ32-STP16-NDRP-STD0.2", DirectionKind::Location, 32, 16, 0.2, 0.1, 0.0},
    {"LOCATION-SZ32-STP16-NDRP-STD0.5", DirectionKind::Location, 32, 16, 0.5, 0.1, 0.0},
    {"HISTORY-SZ32-STP16-NDRP-STD0.2", DirectionKind::History, 32, 16, 0.2, 0.1, 0.0},
    {"HISTORY-SZ32-STP16-NDRP-STD0.5", DirectionKind::History, 32, 16, 0.5, 0.1, 0.0},
    {"LINE-SZ32-STP16-EDRP-STD0.2", DirectionKind::Line, 32, 16, 0.2, 0.0, 0.2},
    {"LINE-SZ32-STP16-EDRP-STD0.5", DirectionKind::Line, 32, 16, 0.5, 0.0, 0.2},
    {"SINE-SZ32-STP16-EDRP-STD0.2", DirectionKind::Sine, 32, 16, 0.2, 0.0, 0.2},
    {"SINE-SZ32-STP16-EDRP-STD0.5", DirectionKind::Sine, 32, 16, 0.5, 0.0, 0.2},
    {"LOCATION-SZ32-STP16-EDRP-STD0.2", DirectionKind::Location, 32, 16, 0.2, 0.0, 0.2},
    {"LOCATION-SZ32-STP16-EDRP-STD0.5", DirectionKind::Location, 32, 16, 0.5, 0.0, 0.2},
    {"HISTORY-SZ32-STP16-EDRP-STD0.2", DirectionKind::History, 32, 16, 0.2, 0.0, 0.2},
    {"HISTORY-SZ32-STP16-EDRP-STD0.5", DirectionKind::History, 32, 16, 0.5, 0.0, 0.2},
    {"LINE-SZ64-STP32-NDRP-STD0.2", DirectionKind::Line, 64, 32, 0.2, 0.1, 0.0},
    {"LINE-SZ64-STP32-NDRP-STD0.5", DirectionKind::Line, 64, 32, 0.5, 0.1, 0.0},
    {"SINE-SZ64-STP32-NDRP-STD0.2", DirectionKind::Sine, 64, 32, 0.2, 0.1, 0.0},
    {"SINE-SZ64-STP32-NDRP-STD0.5", DirectionKind::Sine, 64, 32, 0.5, 0.1, 0.0},
    {"LOCATION-SZ64-STP32-NDRP-STD0.2", DirectionKind::Location, 64, 32, 0.2, 0.1, 0.0},
    {"LOCATION-SZ64-STP32-NDRP-STD0.5", DirectionKind::Location, 64, 32, 0.5, 0.1, 0.0},
    {"HISTORY-SZ64-STP32-NDRP-STD0.2", DirectionKind::History, 64, 32, 0.2, 0.1, 0.0},
    {"HISTORY-SZ64-STP32-NDRP-STD0.5", DirectionKind::History, 64, 32, 0.5, 0.1, 0.0},
};

}  // namespace

const std::vector<std::string>& preset_names() {
    static const std::vector<std::string> names = [] {
        std::vector<std::string> out;
        for (const PresetRow& row : kPresets) {
            out.emplace_back(row.name);
        }
        return out;
    }();
    return names;
}

GenParams preset_params(std::string_view name, std::uint64_t seed) {
    for (const PresetRow& row : kPresets) {
        if (name == row.name) {
            GenParams p;
            p.n_side = row.n_side;
            p.max_steps = row.steps;
            p.sigma = row.sigma;
            p.corruption = {row.p_node, row.p_edge, seed};
            p.n_rollout = 10;
            p.direction = DirectionFunction::preset(row.kind);
            p.seed = seed;
            return p;
        }
    }
    std::string msg = "unknown preset '" + std::string(name) + "'; valid presets:";
    for (const PresetRow& row : kPresets) {
        msg += "\n  ";
        msg += row.name;
    }
    throw std::invalid_argument(msg);
}

Trajectory rollout(const GridGraph& graph, int src, const GenParams& params, Rng& rng) {
    if (!graph.has_node(src)) {
        throw std::invalid_argument("rollout: unknown source node " + std::to_string(src));
    }
    Trajectory traj;
    traj.nodes.push_back(src);
    std::vector<Coord> history;
    history.reserve(static_cast<std::size_t>(params.max_steps) + 1);
    {
        const GridNode& n = graph.node(src);
        history.push_back({n.x, n.y});
    }
    if (!(params.sharpness > 0.0)) {
        throw std::invalid_argument("rollout: sharpness must be positive");
    }
    const double sigma = params.sharpness == 1.0 ? params.sigma : params.sigma / std::sqrt(params.sharpness);
    int current = src;
    for (int t = 0; t < params.max_steps; ++t) {
        const auto probs = edge_distribution(latent_direction(params.direction, t, history), sigma);
        const double u = rng.uniform();
        int chosen = kNumDirections - 1;
        double cumulative = 0.0;
        for (int k = 0; k < kNumDirections; ++k) {
            cumulative += probs[static_cast<std::size_t>(k)];
            if (u < cumulative) {
                chosen = k;
                break;
            }
        }
        const auto next = graph.neighbor(current, static_cast<EdgeType>(chosen));
        if (!next) {
            traj.terminated_by = Termination::BlockedEdge;
            return traj;
        }
        current = *next;
        traj.nodes.push_back(current);
        const GridNode& n = graph.node(current);
        history.push_back({n.x, n.y});
    }
    traj.terminated_by = Termination::MaxSteps;
    return traj;
}

std::string_view split_name(Split s) noexcept {
    switch (s) {
        case Split::Train: return "train";
        case Split::Valid: return "valid";
        case Split::Test: return "test";
    }
    return "train";
}

Split parse_split(std::string_view name) {
    if (name == "train") return Split::Train;
    if (name == "valid") return Split::Valid;
    if (name == "test") return Split::Test;
    throw std::invalid_argument("unknown split '" + std::string(name) + "' (expected train, valid or test)");
}

std::vector<PairRecord> Dataset::pairs_in(Split s) const {
    std::vector<PairRecord> out;
    std::copy_if(pairs.begin(), pairs.end(), std::back_inserter(out), [s](const PairRecord& p) { return p.split == s; });
    return out;
}

std::vector<PairRecord> assign_splits(std::vector<PairRecord> pairs, std::uint64_t seed) {
    std::vector<int> sources;
    sources.reserve(pairs.size());
    for (const PairRecord& p : pairs) {
        sources.push_back(p.src);
    }
    std::sort(sources.begin(), sources.end());
    sources.erase(std::unique(sources.begin(), sources.end()), sources.end());

    Rng rng(derive_seed(seed, 0x5B117));
    rng.shuffle(sources);
    const std::size_t n = sources.size();
    const std::size_t n_train = n * 8 / 10;
    const std::size_t n_valid = n / 10;

    std::vector<std::pair<int, Split>> table;
    table.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const Split s = i < n_train ? Split::Train : (i < n_train + n_valid ? Split::Valid : Split::Test);
        table.emplace_back(sources[i], s);
    }
    std::sort(table.begin(), table.end());
    for (PairRecord& p : pairs) {
        const auto it = std::lower_bound(table.begin(), table.end(), std::make_pair(p.src, Split::Train));
        p.split = it->second;
    }
    return pairs;
}

int configured_threads() {
    int hw = static_cast<int>(std::thread::hardware_concurrency());
    if (hw <= 0) {
        hw = 1;
    }
    if (const char* env = std::getenv("GRIDFLOW_THREADS")) {
        const int cap = std::atoi(env);
        if (cap > 0) {
            return std::min(cap, hw);
        }
    }
    return hw;
}

DatasetBuild build_dataset_with_rollouts(const GenParams& params, int threads) {
    const GridGraph corrupted = corrupt(build_grid(params.n_side), params.corruption);
    const auto& nodes = corrupted.nodes();
    const std::size_t n = nodes.size();
    const auto per_source = static_cast<std::size_t>(std::max(params.n_rollout, 0));

    // Each source owns a derived stream, so the worker count cannot change results.
    std::vector<Trajectory> trajectories(n * per_source);
    auto work = [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            const int src = nodes[i].id;
            Rng rng(derive_seed(params.seed, static_cast<std::uint64_t>(src) + 1));
            for (std::size_t r = 0; r < per_source; ++r) {
                trajectories[i * per_source + r] = rollout(corrupted, src, params, rng);
            }
        }
    };
    const auto workers = static_cast<std::size_t>(std::clamp(threads, 1, static_cast<int>(std::max<std::size_t>(n, 1))));
    if (workers <= 1) {
        work(0, n);
    } else {
        std::vector<std::jthread> pool;
        const std::size_t chunk = (n + workers - 1) / workers;
        for (std::size_t w = 0; w < workers; ++w) {
            const std::size_t begin = w * chunk;
            const std::size_t end = std::min(n, begin + chunk);
            if (begin < end) {
                pool.emplace_back(work, begin, end);
            }
        }
    }

    std::vector<PairRecord> pairs;
    pairs.reserve(trajectories.size());
    for (const Trajectory& t : trajectories) {
        pairs.push_back({t.source(), t.destination(), Split::Train});
    }
    auto key = [](const PairRecord& p) { return std::make_pair(p.src, p.dst); };
    std::sort(pairs.begin(), pairs.end(), [&](const PairRecord& a, const PairRecord& b) { return key(a) < key(b); });
    pairs.erase(std::unique(pairs.begin(), pairs.end(),
                            [&](const PairRecord& a, const PairRecord& b) { return key(a) == key(b); }),
                pairs.end());

    DatasetBuild out;
    out.dataset.graph = add_selfloops(corrupted);
    out.dataset.pairs = assign_splits(std::move(pairs), params.seed);
    out.trajectories = std::move(trajectories);
    return out;
}

Dataset build_dataset(const GenParams& params) { return build_dataset_with_rollouts(params, 1).dataset; }

DatasetStats dataset_stats(const Dataset& dataset, std::span<const Trajectory> trajectories) {
    DatasetStats s;
    s.nodes = dataset.graph.num_nodes();
    s.edges = dataset.graph.num_directional_edges();
    s.pairs = dataset.pairs.size();
    s.pairs_per_node = s.nodes == 0 ? 0.0 : static_cast<double>(s.pairs) / static_cast<double>(s.nodes);
    if (trajectories.empty()) {
        return s;
    }

    struct Visit {
        int src;
        int dst;
        int cells;
    };
    std::vector<Visit> visits;
    visits.reserve(trajectories.size());
    double transitions = 0.0;
    for (const Trajectory& t : trajectories) {
        transitions += t.transitions();
        const int blocked = t.terminated_by == Termination::BlockedEdge ? 1 : 0;
        visits.push_back({t.source(), t.destination(), static_cast<int>(t.nodes.size()) + blocked});
    }
    s.mean_transitions = transitions / static_cast<double>(trajectories.size());

    std::sort(visits.begin(), visits.end(), [](const Visit& a, const Visit& b) {
        return std::tie(a.src, a.dst) < std::tie(b.src, b.dst);
    });
    double total = 0.0;
    std::size_t groups = 0;
    for (std::size_t i = 0; i < visits.size();) {
        std::size_t j = i;
        double sum = 0.0;
        while (j < visits.size() && visits[j].src == visits[i].src && visits[j].dst == visits[i].dst) {
            sum += visits[j].cells;
            ++j;
        }
        total += sum / static_cast<double>(j - i);
        ++groups;
        i = j;
    }
    s.mean_traj_length = total / static_cast<double>(groups);
    return s;
}

}  // namespace gridflow
