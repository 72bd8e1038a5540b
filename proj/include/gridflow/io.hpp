#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "gridflow/dynamics.hpp"
#include "gridflow/metrics.hpp"
#include "gridflow/training.hpp"

// On-disk artifacts. Every loader throws std::runtime_error naming the file
// and the offending field.
namespace gridflow::io {

namespace fs = std::filesystem;

std::string graph_to_json(const GridGraph& graph);
GridGraph graph_from_json(const std::string& text);

std::string pairs_to_tsv(const std::vector<PairRecord>& pairs);
std::vector<PairRecord> pairs_from_tsv(const std::string& text);

std::string params_to_json(const GenParams& params);
GenParams params_from_json(const std::string& text);

std::string stats_to_json(const DatasetStats& stats);
DatasetStats stats_from_json(const std::string& text);

std::string metrics_to_json(const MetricsReport& m);
MetricsReport metrics_from_json(const std::string& text);
std::string summary_to_json(const MetricsSummary& s);

std::string model_config_to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const std::string& text);
std::string train_config_to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const std::string& text);

/// {"config": ..., "num_nodes": n, "params": {name: {"shape": [r, c], "values": [...]}}}
/// with row-major values; float values round-trip exactly.
std::string checkpoint_to_json(const Checkpoint& c);
Checkpoint checkpoint_from_json(const std::string& text);

std::string read_file(const fs::path& path);
void write_file(const fs::path& path, const std::string& text);

/// graph.json, pairs.tsv, params.json, stats.json.
void save_dataset(const fs::path& dir, const Dataset& dataset, const GenParams& params, const DatasetStats& stats);
Dataset load_dataset(const fs::path& dir);

/// Run directory: run.json, log.tsv, checkpoints/epoch_NNN.json, selection.json.
struct RunPaths {
    fs::path dir;
    fs::path config() const { return dir / "run.json"; }
    fs::path log() const { return dir / "log.tsv"; }
    fs::path checkpoint(int epoch) const;
    fs::path selection() const { return dir / "selection.json"; }
};

/// Header plus one line per epoch: epoch, lr, train_loss, valid hits1/5/10, mr, mrr.
std::string run_log_header();
std::string run_log_line(const Snapshot& s);

/// Writes the selected epochs and their Valid metrics.
void save_selection(const RunPaths& run, const Selection& selection);
/// Loads the manifest and the referenced checkpoints; throws when missing.
Selection load_selection(const RunPaths& run);

}  // namespace gridflow::io
