#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "gridflow/io.hpp"
#include "gridflow/training.hpp"

// Multi-step pipelines shared by the command line tool and the acceptance
// runner: dataset generation on disk, a training run directory, and a full
// generate -> train -> test evaluation for one dataset group and model.
namespace gridflow {

/// GRIDFLOW_THREADS when set to a positive integer, otherwise the hardware
/// concurrency (at least 1).
int worker_threads();

/// Generates `seeds` datasets (seeds 0..seeds-1) into dir/seed_K and returns
/// their statistics in seed order.
std::vector<DatasetStats> generate_datasets(const GenParams& params, int seeds, const std::filesystem::path& dir,
                                            int threads);

/// Tab-separated per-seed statistics with a mean row.
std::string stats_table(const std::vector<DatasetStats>& stats);

/// Trains on `dataset` and fills a run directory: run.json up front, one
/// log.tsv line per epoch, then the top-k checkpoints and selection.json.
/// `progress` (optional) receives one line per epoch; it may be called
/// from worker threads but never concurrently.
using ProgressFn = std::function<void(const std::string& line)>;
Selection train_run(const Dataset& dataset, const ModelConfig& model, const TrainConfig& train,
                    const io::RunPaths& run, const std::filesystem::path& data_dir, const ProgressFn& progress = {});

/// Model and training configuration stored in run.json.
struct RunInfo {
    ModelConfig model;
    TrainConfig train;
    std::filesystem::path data_dir;
};
RunInfo load_run_info(const io::RunPaths& run);

struct CellRun {
    std::uint64_t data_seed = 0;
    std::uint64_t shuffle_seed = 0;
    std::vector<MetricsReport> test;  // one per selected snapshot
};

struct CellResult {
    std::vector<CellRun> runs;
    MetricsSummary test;
    double cpu_seconds = 0.0;  // process CPU time spent in the cell
};

/// Generates `seeds` datasets of `preset` under out/data, trains
/// `shuffles` runs per dataset (shuffle seeds 0..shuffles-1) under out/runs
/// and pools Test metrics of the selected snapshots. Runs go to up to
/// `threads` workers. `model.steps` is taken from the preset.
CellResult reproduce_cell(const std::string& preset, ModelConfig model, const TrainConfig& train, int seeds,
                          int shuffles, const std::filesystem::path& out, int threads, const ProgressFn& progress = {});

}  // namespace gridflow
