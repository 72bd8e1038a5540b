#include "gridflow/experiment.hpp"

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <exception>
#include <fstream>
#include <mutex>
#include <thread>

#include "json.hpp"

namespace gridflow {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::string fixed(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

// Runs job(0..n-1) on up to `threads` workers; rethrows the first failure.
template <typename Job>
void parallel_for(int n, int threads, Job job) {
    const int workers = std::max(1, std::min(threads, n));
    if (workers == 1) {
        for (int i = 0; i < n; ++i) job(i);
        return;
    }
    std::atomic<int> next{0};
    std::exception_ptr failure;
    std::mutex mu;
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (int i = next++; i < n; i = next++) {
                try {
                    job(i);
                } catch (...) {
                    const std::lock_guard lock(mu);
                    if (!failure) failure = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
}

}  // namespace

int worker_threads() {
    if (const char* env = std::getenv("GRIDFLOW_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end != env && *end == '\0' && v > 0) return static_cast<int>(v);
        std::fprintf(stderr, "warning: ignoring GRIDFLOW_THREADS=%s (expected a positive integer)\n", env);
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

std::vector<DatasetStats> generate_datasets(const GenParams& params, int seeds, const fs::path& dir, int threads) {
    if (seeds <= 0) {
        throw std::invalid_argument("generate: need at least one seed");
    }
    std::vector<DatasetStats> stats;
    for (int k = 0; k < seeds; ++k) {
        const GenParams p = params.with_seed(static_cast<std::uint64_t>(k));
        const DatasetBuild build = build_dataset_with_rollouts(p, threads);
        stats.push_back(dataset_stats(build.dataset, build.trajectories));
        io::save_dataset(dir / ("seed_" + std::to_string(k)), build.dataset, p, stats.back());
    }
    return stats;
}

std::string stats_table(const std::vector<DatasetStats>& stats) {
    std::string s = "seed\tnodes\tedges\tpairs\tpairs/node\ttraj_len\n";
    DatasetStats mean;
    double nodes = 0, edges = 0, pairs = 0;
    for (std::size_t k = 0; k < stats.size(); ++k) {
        const DatasetStats& d = stats[k];
        s += std::to_string(k) + "\t" + std::to_string(d.nodes) + "\t" + std::to_string(d.edges) + "\t" +
             std::to_string(d.pairs) + "\t" + fixed("%.2f", d.pairs_per_node) + "\t" + fixed("%.2f", d.mean_traj_length) +
             "\n";
        nodes += static_cast<double>(d.nodes);
        edges += static_cast<double>(d.edges);
        pairs += static_cast<double>(d.pairs);
        mean.pairs_per_node += d.pairs_per_node;
        mean.mean_traj_length += d.mean_traj_length;
    }
    if (!stats.empty()) {
        const double n = static_cast<double>(stats.size());
        s += "mean\t" + fixed("%.1f", nodes / n) + "\t" + fixed("%.1f", edges / n) + "\t" + fixed("%.1f", pairs / n) +
             "\t" + fixed("%.2f", mean.pairs_per_node / n) + "\t" + fixed("%.2f", mean.mean_traj_length / n) + "\n";
    }
    return s;
}

Selection train_run(const Dataset& dataset, const ModelConfig& model, const TrainConfig& train, const io::RunPaths& run,
                    const fs::path& data_dir, const ProgressFn& progress) {
    model.validate();
    train.validate();
    fs::create_directories(run.dir);
    const json info{{"model", json::parse(io::model_config_to_json(model))},
                    {"train", json::parse(io::train_config_to_json(train))},
                    {"data", fs::absolute(data_dir).lexically_normal().string()},
                    {"constant_transition", model.variant.core == Core::RWStationary}};
    io::write_file(run.config(), info.dump(2) + "\n");

    std::ofstream log(run.log(), std::ios::binary | std::ios::trunc);
    if (!log) {
        throw std::runtime_error("cannot write " + run.log().string());
    }
    log << io::run_log_header() << std::flush;
    TrainHooks hooks;
    hooks.on_epoch = [&](const Snapshot& s) {
        log << io::run_log_line(s) << std::flush;
        if (progress) {
            progress(run.dir.filename().string() + " epoch " + std::to_string(s.epoch) + " lr " + fixed("%g", s.lr) +
                     " loss " + fixed("%.4f", s.train_loss) + " valid hits1 " + fixed("%.4f", s.valid.hits1) + " mrr " +
                     fixed("%.4f", s.valid.mrr));
        }
    };
    const RunResult result = gridflow::train(model, train, dataset, hooks);
    if (result.snapshots.empty()) {
        return select_snapshots(result, train.snapshot_top_k);
    }
    Selection selection = select_snapshots(result, train.snapshot_top_k);
    for (const Snapshot& s : selection.snapshots()) {
        io::write_file(run.checkpoint(s.epoch), io::checkpoint_to_json(s.checkpoint));
    }
    io::save_selection(run, selection);
    return selection;
}

RunInfo load_run_info(const io::RunPaths& run) {
    if (!fs::exists(run.config())) {
        throw std::runtime_error("no run at " + run.dir.string() + " (missing run.json)");
    }
    json j;
    try {
        j = json::parse(io::read_file(run.config()));
        RunInfo info;
        info.model = io::model_config_from_json(j.at("model").dump());
        info.train = io::train_config_from_json(j.at("train").dump());
        info.data_dir = j.at("data").get<std::string>();
        return info;
    } catch (const json::exception& e) {
        throw std::runtime_error("run.json: " + std::string(e.what()));
    }
}

CellResult reproduce_cell(const std::string& preset, ModelConfig model, const TrainConfig& train, int seeds,
                          int shuffles, const fs::path& out, int threads, const ProgressFn& progress) {
    if (shuffles <= 0) {
        throw std::invalid_argument("reproduce: need at least one shuffling per seed");
    }
    const std::clock_t cpu0 = std::clock();
    const GenParams params = preset_params(preset);
    model.steps = params.max_steps;
    generate_datasets(params, seeds, out / "data", 1);

    CellResult cell;
    cell.runs.resize(static_cast<std::size_t>(seeds * shuffles));
    std::mutex mu;
    ProgressFn locked;
    if (progress) {
        locked = [&](const std::string& line) {
            const std::lock_guard lock(mu);
            progress(line);
        };
    }
    parallel_for(seeds * shuffles, threads, [&](int i) {
        const int seed = i / shuffles;
        const int shuffle = i % shuffles;
        const fs::path data_dir = out / "data" / ("seed_" + std::to_string(seed));
        const Dataset ds = io::load_dataset(data_dir);
        TrainConfig tc = train;
        tc.shuffle_seed = static_cast<std::uint64_t>(shuffle);
        tc.model_seed = derive_seed(static_cast<std::uint64_t>(seed), static_cast<std::uint64_t>(shuffle));
        const io::RunPaths run{out / "runs" / ("seed_" + std::to_string(seed) + "_shuffle_" + std::to_string(shuffle))};
        const Selection sel = train_run(ds, model, tc, run, data_dir, locked);
        CellRun r;
        r.data_seed = static_cast<std::uint64_t>(seed);
        r.shuffle_seed = tc.shuffle_seed;
        if (!sel.snapshots().empty()) r.test = evaluate_selection(sel, ds, Split::Test, tc.eval_batch_size);
        cell.runs[static_cast<std::size_t>(i)] = std::move(r);
    });

    std::vector<std::vector<MetricsReport>> pooled;
    for (const CellRun& r : cell.runs) {
        if (!r.test.empty()) pooled.push_back(r.test);
    }
    if (!pooled.empty()) cell.test = aggregate_runs(pooled);
    cell.cpu_seconds = static_cast<double>(std::clock() - cpu0) / CLOCKS_PER_SEC;
    return cell;
}

}  // namespace gridflow
