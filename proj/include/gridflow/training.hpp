#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "gridflow/dynamics.hpp"
#include "gridflow/metrics.hpp"
#include "gridflow/model.hpp"

namespace gridflow {

struct TrainConfig {
    int batch_size = 16;
    int epochs = 50;
    double lr_start = 5e-4;
    double lr_end = 1e-4;
    double lr_step = 1e-4;
    int lr_every = 10;
    double weight_decay = 1e-5;  // embeddings only
    int snapshot_top_k = 3;
    std::uint64_t model_seed = 0;
    std::uint64_t shuffle_seed = 0;
    /// Batch size for no-grad evaluation passes.
    int eval_batch_size = 32;

    /// Throws std::invalid_argument on non-positive sizes, a rising schedule
    /// or snapshot_top_k > epochs (when epochs > 0).
    void validate() const;
};

/// max(lr_end, lr_start - lr_step * floor(epoch / lr_every)).
double lr_schedule(int epoch, const TrainConfig& config = {});

/// Owned copy of model parameters; independent of any live tensor.
struct Checkpoint {
    ModelConfig config;
    int num_nodes = 0;
    std::vector<std::string> names;
    std::vector<ad::Matrix<float>> values;

    static Checkpoint capture(const Model<float>& model);
    Model<float> restore() const;
    friend bool operator==(const Checkpoint& a, const Checkpoint& b);
};

struct Snapshot {
    int epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    MetricsReport valid;
    Checkpoint checkpoint;
};

struct RunResult {
    ModelConfig model;
    TrainConfig train;
    std::vector<Snapshot> snapshots;  // one per epoch
    std::vector<double> batch_losses;
};

/// Raised when a loss or node state stops being finite.
class TrainingDiverged : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct TrainHooks {
    std::function<void(const Snapshot&)> on_epoch;
    std::function<void(int epoch, int batch, double loss)> on_batch;
};

/// Node indices (not ids) of a pair list on `graph`.
struct IndexedPairs {
    std::vector<int> src;
    std::vector<int> dst;
};
IndexedPairs index_pairs(const GridGraph& graph, std::span<const PairRecord> pairs);

/// Scores every pair without recording gradients; ranks use rank_of.
std::vector<std::size_t> rank_pairs(const Model<float>& model, const GraphIndex& graph, const IndexedPairs& pairs,
                                    int batch_size);
MetricsReport evaluate(const Model<float>& model, const GraphIndex& graph, const IndexedPairs& pairs,
                       int batch_size);

/// Epoch loop: seeded shuffle of the train split, Adam with the schedule,
/// a snapshot plus Valid metrics after every epoch. The final partial batch
/// is kept. Throws TrainingDiverged with epoch, batch and parameter norms.
RunResult train(const ModelConfig& model_config, const TrainConfig& train_config, const Dataset& dataset,
                const TrainHooks& hooks = {});

/// The only route to Test-split evaluation: a set of snapshots chosen on
/// Valid metrics alone.
class Selection {
public:
    const std::vector<Snapshot>& snapshots() const { return snapshots_; }
    std::vector<int> epochs() const;
    /// True when fewer snapshots than requested were available.
    bool short_of_k() const { return short_; }

private:
    friend Selection select_snapshots(const RunResult& run, int k);
    friend Selection selection_from(std::vector<Snapshot> chosen, bool short_of_k);
    std::vector<Snapshot> snapshots_;
    bool short_ = false;
};

/// Top k by Valid MRR, then higher Hits@1, then earlier epoch. Uses every
/// snapshot (and flags short_of_k) when fewer than k exist.
Selection select_snapshots(const RunResult& run, int k);
/// Rebuilds a selection from a saved manifest.
Selection selection_from(std::vector<Snapshot> chosen, bool short_of_k);

struct MetricsSummary {
    MetricsReport mean;
    MetricsReport std;  // population standard deviation
    std::size_t samples = 0;
};

/// Per-snapshot metrics of a selection on one split.
std::vector<MetricsReport> evaluate_selection(const Selection& selection, const Dataset& dataset, Split split,
                                              int batch_size = 32);

/// Mean and population std of each metric over pooled samples.
MetricsSummary summarize(std::span<const MetricsReport> samples);
/// Pools per-snapshot metrics across runs, then summarizes.
MetricsSummary aggregate_runs(std::span<const std::vector<MetricsReport>> runs);

}  // namespace gridflow
