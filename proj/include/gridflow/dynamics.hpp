#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gridflow/grid.hpp"
#include "gridflow/rng.hpp"

namespace gridflow {

enum class DirectionKind : std::uint8_t { Line, Sine, Location, History };

std::string_view direction_kind_name(DirectionKind k) noexcept;
DirectionKind parse_direction_kind(std::string_view name);

/// Latent direction d(t, x, y) = (a1 cos(theta) + b1, a2 sin(theta) + b2)
/// with theta = omega t + lambda1 x + lambda2 y + phi. The History kind feeds
/// (max x_i, max y_i) over the trajectory so far instead of the current cell.
struct DirectionFunction {
    DirectionKind kind = DirectionKind::Line;
    double a1 = 0.0;
    double b1 = 1.0;
    double a2 = 0.0;
    double b2 = 0.4;
    double omega = 0.0;
    double lambda1 = 0.0;
    double lambda2 = 0.0;
    double phi = 0.0;

    static DirectionFunction line();
    static DirectionFunction sine();
    static DirectionFunction location();
    static DirectionFunction history();
    static DirectionFunction preset(DirectionKind kind);
};

struct Coord {
    int x = 0;
    int y = 0;
};

/// Unnormalized latent direction at step t; `history` ends at the current
/// position. Throws std::invalid_argument on an empty history.
Vec2 latent_direction(const DirectionFunction& fn, int t, std::span<const Coord> history);

/// P(e) over the 8 directional types, indexed by type code.
std::array<double, kNumDirections> edge_distribution(Vec2 direction, double sigma);

struct GenParams {
    int n_side = 32;
    int max_steps = 16;
    double sigma = 0.2;
    CorruptionParams corruption = CorruptionParams::node_drop(0);
    int n_rollout = 10;
    DirectionFunction direction = DirectionFunction::line();
    std::uint64_t seed = 0;
    /// Multiplies the sampling exponent; 1 samples the law as written, 2 gives
    /// the sharper kernel exp(-|d_e - d|^2 / sigma^2) on unit vectors.
    double sharpness = 1.0;

    /// Copy with both the dataset seed and the corruption seed set to `s`.
    GenParams with_seed(std::uint64_t s) const;
};

/// One of the 24 named dataset groups, e.g. "LINE-SZ32-STP16-NDRP-STD0.2".
GenParams preset_params(std::string_view name, std::uint64_t seed = 0);
const std::vector<std::string>& preset_names();

enum class Termination : std::uint8_t { MaxSteps, BlockedEdge };

struct Trajectory {
    std::vector<int> nodes;
    Termination terminated_by = Termination::MaxSteps;

    int source() const { return nodes.front(); }
    int destination() const { return nodes.back(); }
    int transitions() const { return static_cast<int>(nodes.size()) - 1; }
};

/// Samples one trajectory from `src`. Edge types are drawn over all eight
/// directions; a draw whose edge is absent ends the walk.
Trajectory rollout(const GridGraph& graph, int src, const GenParams& params, Rng& rng);

enum class Split : std::uint8_t { Train, Valid, Test };
std::string_view split_name(Split s) noexcept;
Split parse_split(std::string_view name);

struct PairRecord {
    int src = 0;
    int dst = 0;
    Split split = Split::Train;
    friend bool operator==(const PairRecord&, const PairRecord&) = default;
};

struct Dataset {
    GridGraph graph;  // corrupted and selfloop-augmented
    std::vector<PairRecord> pairs;

    std::vector<PairRecord> pairs_in(Split s) const;
};

struct DatasetBuild {
    Dataset dataset;
    std::vector<Trajectory> trajectories;  // before deduplication
};

/// Generation with an explicit worker count; results do not depend on it.
DatasetBuild build_dataset_with_rollouts(const GenParams& params, int threads = 1);
Dataset build_dataset(const GenParams& params);

/// 80/10/10 split of the sorted source list after a seeded shuffle.
std::vector<PairRecord> assign_splits(std::vector<PairRecord> pairs, std::uint64_t seed);

struct DatasetStats {
    std::size_t nodes = 0;
    std::size_t edges = 0;  // selfloops excluded
    std::size_t pairs = 0;
    double pairs_per_node = 0.0;
    /// Cells a walk occupied or tried to enter (1 + edge draws), averaged per
    /// distinct pair and then over pairs.
    double mean_traj_length = 0.0;
    /// Transitions averaged over all rollouts before deduplication.
    double mean_transitions = 0.0;
};

DatasetStats dataset_stats(const Dataset& dataset, std::span<const Trajectory> trajectories);

/// Worker cap from GRIDFLOW_THREADS (default: hardware concurrency).
int configured_threads();

}  // namespace gridflow
