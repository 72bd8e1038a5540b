#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "gridflow/experiment.hpp"
#include "gridflow/fpenv.hpp"
#include "gridflow/io.hpp"
#include "gridflow/viz.hpp"

using namespace gridflow;
namespace fs = std::filesystem;

namespace {

// Exit code for a request the tool understands but cannot serve.
constexpr int kUnsupported = 2;

std::string pct(double mean, double sd) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%6.2f +- %.2f", 100.0 * mean, 100.0 * sd);
    return buf;
}

std::string frac(double mean, double sd) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.4f +- %.4f", mean, sd);
    return buf;
}

void print_summary(const MetricsSummary& s) {
    std::printf("samples %zu\n", s.samples);
    std::printf("hits@1  %s\n", pct(s.mean.hits1, s.std.hits1).c_str());
    std::printf("hits@5  %s\n", pct(s.mean.hits5, s.std.hits5).c_str());
    std::printf("hits@10 %s\n", pct(s.mean.hits10, s.std.hits10).c_str());
    std::printf("mr      %s\n", frac(s.mean.mr, s.std.mr).c_str());
    std::printf("mrr     %s\n", frac(s.mean.mrr, s.std.mrr).c_str());
}

struct ModelFlags {
    std::string model = "ggnn-mulmlp";
    int dims = 40;
    int attn_dims = 8;
    int heads = 5;
    std::optional<int> steps;
    CLI::Option* dims_opt = nullptr;

    void add(CLI::App* cmd, bool with_steps) {
        cmd->add_option("--model", model,
                        "{fullgn,ggnn,gat}[-noact|-mul|-mulmlp] | rw-stationary | rw-dynamic")
            ->capture_default_str();
        dims_opt = cmd->add_option("--dims", dims, "node state size (default 30 on 64x64 grids)")->capture_default_str();
        cmd->add_option("--attn-dims", attn_dims, "attention channels")->capture_default_str();
        cmd->add_option("--heads", heads, "GAT heads")->capture_default_str();
        if (with_steps) cmd->add_option("--steps", steps, "propagation steps (default: the dataset's max steps)");
    }

    ModelConfig config(int default_steps) const {
        ModelConfig c;
        c.variant = parse_variant(model);
        c.dims = dims;
        c.attn_dims = attn_dims;
        c.heads = heads;
        c.steps = steps.value_or(default_steps);
        c.validate();
        return c;
    }
};

struct TrainFlags {
    TrainConfig config;
    CLI::Option* batch_opt = nullptr;

    void add(CLI::App* cmd) {
        cmd->add_option("--epochs", config.epochs, "training epochs")->capture_default_str();
        batch_opt = cmd->add_option("--batch", config.batch_size, "batch size (default 4 on 64x64 grids)")->capture_default_str();
        cmd->add_option("--top-k", config.snapshot_top_k, "snapshots kept for evaluation")->capture_default_str();
    }
};

// Large grids train with smaller states and batches unless told otherwise.
void size_defaults(int n_side, ModelFlags& mf, TrainFlags& tf) {
    if (n_side < 64) return;
    if (mf.dims_opt->count() == 0) mf.dims = 30;
    if (tf.batch_opt->count() == 0) tf.config.batch_size = 4;
}

void print_line(const std::string& line) {
    std::cout << line << std::endl;
}

int cmd_generate(const std::optional<std::string>& preset, int seeds, const std::optional<fs::path>& out,
                 const std::optional<int>& n, const std::optional<int>& t, const std::optional<double>& sigma,
                 const std::string& direction, const std::string& drop, int rollouts, double sharpness) {
    GenParams p;
    std::string label;
    if (preset) {
        if (n || t || sigma) {
            throw CLI::ValidationError("--preset cannot be combined with --n, --t or --sigma");
        }
        p = preset_params(*preset);
        label = *preset;
    } else {
        if (!n || !t || !sigma) {
            throw CLI::ValidationError("give --preset, or all of --n, --t and --sigma");
        }
        p.n_side = *n;
        p.max_steps = *t;
        p.sigma = *sigma;
        p.direction = DirectionFunction::preset(parse_direction_kind(direction));
        p.n_rollout = rollouts;
        if (drop == "node") {
            p.corruption = CorruptionParams::node_drop(0);
        } else if (drop == "edge") {
            p.corruption = CorruptionParams::edge_drop(0);
        } else {
            p.corruption = {};
        }
        label = "custom";
    }
    p.sharpness = sharpness;
    const fs::path dir = out.value_or(fs::path("data") / label);
    const std::vector<DatasetStats> stats = generate_datasets(p, seeds, dir, worker_threads());
    std::cout << stats_table(stats);
    std::cout << "wrote " << seeds << " dataset(s) under " << dir.string() << "\n";
    return 0;
}

int cmd_train(const fs::path& data, const fs::path& out, ModelFlags mf, TrainFlags tf, std::uint64_t seed,
              std::uint64_t shuffle) {
    const Dataset ds = io::load_dataset(data);
    int default_steps = ModelConfig{}.steps;
    if (fs::exists(data / "params.json")) default_steps = io::params_from_json(io::read_file(data / "params.json")).max_steps;
    size_defaults(ds.graph.n_side(), mf, tf);
    const ModelConfig mc = mf.config(default_steps);
    tf.config.model_seed = seed;
    tf.config.shuffle_seed = shuffle;
    tf.config.validate();
    if (mc.variant.core == Core::RWStationary) std::cout << "constant transition: yes\n";
    const io::RunPaths run{out};
    const Selection sel = train_run(ds, mc, tf.config, run, data, print_line);
    if (sel.snapshots().empty()) {
        std::cout << "no epochs run; no snapshots written\n";
        return 0;
    }
    std::cout << "selected epochs:";
    for (const int e : sel.epochs()) std::cout << " " << e;
    std::cout << "\nrun written to " << out.string() << "\n";
    return 0;
}

int cmd_eval(const fs::path& run_dir, const std::string& split_name, const std::optional<fs::path>& data) {
    const io::RunPaths run{run_dir};
    const RunInfo info = load_run_info(run);
    const Split split = parse_split(split_name);
    const Selection sel = io::load_selection(run);
    const Dataset ds = io::load_dataset(data.value_or(info.data_dir));
    const std::vector<MetricsReport> per = evaluate_selection(sel, ds, split, info.train.eval_batch_size);
    for (std::size_t i = 0; i < per.size(); ++i) {
        std::printf("epoch %d: hits@1 %.4f mrr %.4f\n", sel.snapshots()[i].epoch, per[i].hits1, per[i].mrr);
    }
    const MetricsSummary s = summarize(per);
    std::printf("%s split, %s\n", split_name.c_str(), variant_name(info.model.variant).c_str());
    print_summary(s);
    io::write_file(run.dir / ("eval_" + split_name + ".json"), io::summary_to_json(s) + "\n");
    return 0;
}

int cmd_visualize(const fs::path& run_dir, int src, int dst, const std::optional<fs::path>& out,
                  const std::optional<int>& epoch, bool readout) {
    const io::RunPaths run{run_dir};
    const RunInfo info = load_run_info(run);
    const Selection sel = io::load_selection(run);
    if (sel.snapshots().empty()) throw std::runtime_error("run has no selected snapshots");
    const Snapshot* snap = &sel.snapshots().front();
    if (epoch) {
        snap = nullptr;
        for (const Snapshot& s : sel.snapshots()) {
            if (s.epoch == *epoch) snap = &s;
        }
        if (!snap) throw std::runtime_error("epoch " + std::to_string(*epoch) + " is not among the selected snapshots");
    }
    const Dataset ds = io::load_dataset(info.data_dir);
    const Model<float> model = snap->checkpoint.restore();
    viz::AttentionTrace trace;
    try {
        trace = readout ? viz::trace_readout(model, ds.graph, src, dst) : viz::trace_flow(model, ds.graph, src, dst);
    } catch (const viz::FlowUnavailable& e) {
        std::cerr << "error: " << e.what() << " (pass --readout)\n";
        return kUnsupported;
    }
    const fs::path dir = out.value_or(run.dir / ("viz_" + std::to_string(src) + "_" + std::to_string(dst)));
    const std::vector<double> heat = viz::max_normalized(trace.nodes);
    const std::string title = variant_name(info.model.variant) + " epoch " + std::to_string(snap->epoch) + ", " +
                              (readout ? "implicit readout" : "attention flow") + " " + std::to_string(src) + " -> " +
                              std::to_string(dst);
    io::write_file(dir / "heatmap.svg", viz::heatmap_svg(ds.graph, heat, src, dst, title));
    io::write_file(dir / "heatmap.csv", viz::heatmap_csv(ds.graph, heat));
    io::write_file(dir / "attention.csv", viz::attention_csv(ds.graph, trace));
    io::write_file(dir / "focused.tsv", viz::focused_tsv(ds.graph, trace));
    if (!trace.readout) io::write_file(dir / "flowing.tsv", viz::flowing_tsv(ds.graph, trace));
    std::cout << "wrote " << dir.string() << "\n";
    return 0;
}

int cmd_reproduce(const std::string& preset, ModelFlags mf, TrainFlags tf, int seeds, int shuffles,
                  const std::optional<fs::path>& out) {
    const GenParams params = preset_params(preset);
    size_defaults(params.n_side, mf, tf);
    const ModelConfig mc = mf.config(params.max_steps);
    const fs::path dir = out.value_or(fs::path("reproduce") / preset / variant_name(mc.variant));
    const CellResult cell = reproduce_cell(preset, mc, tf.config, seeds, shuffles, dir, worker_threads(), print_line);
    std::printf("%s on %s, test split, %d seed(s) x %d shuffling(s)\n", variant_name(mc.variant).c_str(),
                preset.c_str(), seeds, shuffles);
    if (cell.test.samples == 0) {
        std::cout << "no snapshots to evaluate\n";
        return 0;
    }
    print_summary(cell.test);
    std::printf("cpu %.0f s\n", cell.cpu_seconds);
    io::write_file(dir / "summary.json", io::summary_to_json(cell.test) + "\n");
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    tune_allocator();
    CLI::App app{"Attention-flow graph networks on corrupted grid worlds"};
    app.require_subcommand(1);

    // generate
    auto* gen = app.add_subcommand("generate", "generate datasets for a preset or explicit parameters");
    std::optional<std::string> preset;
    int seeds = 1;
    std::optional<fs::path> out;
    std::optional<int> n_side, steps;
    std::optional<double> sigma;
    std::string direction = "line";
    std::string drop = "node";
    int rollouts = 10;
    double sharpness = 1.0;
    gen->add_option("--preset", preset, "dataset group, e.g. LINE-SZ32-STP16-NDRP-STD0.2");
    gen->add_option("--seeds", seeds, "number of dataset seeds")->capture_default_str()->check(CLI::PositiveNumber);
    gen->add_option("--out", out, "output directory (default data/<preset>)");
    gen->add_option("--n", n_side, "grid side")->check(CLI::PositiveNumber);
    gen->add_option("--t", steps, "max trajectory steps")->check(CLI::NonNegativeNumber);
    gen->add_option("--sigma", sigma, "sampling temperature")->check(CLI::PositiveNumber);
    gen->add_option("--preset-dir", direction, "direction function: line, sine, location, history")
        ->capture_default_str();
    gen->add_option("--drop", drop, "corruption: node, edge or none")
        ->capture_default_str()
        ->check(CLI::IsMember({"node", "edge", "none"}));
    gen->add_option("--rollouts", rollouts, "walks per source node")->capture_default_str();
    gen->add_option("--sharpness", sharpness, "kernel exponent multiplier (2 gives exp(-|d_e - d|^2 / sigma^2))")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);

    // train
    auto* tr = app.add_subcommand("train", "train one model on a generated dataset");
    fs::path data;
    fs::path run_out;
    ModelFlags train_model;
    TrainFlags train_flags;
    std::uint64_t seed = 0;
    std::uint64_t shuffle = 0;
    tr->add_option("--data", data, "dataset directory")->required();
    tr->add_option("--out", run_out, "run directory")->required();
    train_model.add(tr, true);
    train_flags.add(tr);
    tr->add_option("--seed", seed, "model initialization seed")->capture_default_str();
    tr->add_option("--shuffle-seed", shuffle, "input shuffling seed")->capture_default_str();

    // eval
    auto* ev = app.add_subcommand("eval", "evaluate the selected snapshots of a run");
    fs::path run_dir;
    std::string split = "test";
    std::optional<fs::path> eval_data;
    ev->add_option("--run", run_dir, "run directory")->required();
    ev->add_option("--split", split, "train, valid or test")
        ->capture_default_str()
        ->check(CLI::IsMember({"train", "valid", "test"}));
    ev->add_option("--data", eval_data, "dataset directory (default: the one recorded in run.json)");

    // visualize
    auto* vz = app.add_subcommand("visualize", "export the attention flow of one example");
    int src = 0;
    int dst = 0;
    std::optional<fs::path> viz_out;
    std::optional<int> epoch;
    bool readout = false;
    vz->add_option("--run", run_dir, "run directory")->required();
    vz->add_option("--src", src, "source node id")->required();
    vz->add_option("--dst", dst, "destination node id")->required();
    vz->add_option("--out", viz_out, "output directory (default <run>/viz_<src>_<dst>)");
    vz->add_option("--epoch", epoch, "selected snapshot to use (default: the best)");
    vz->add_flag("--readout", readout, "plot the implicit per-step readout instead of the flow");

    // reproduce
    auto* rp = app.add_subcommand("reproduce", "generate, train and test one dataset group / model cell");
    std::string cell_preset;
    ModelFlags rep_model;
    TrainFlags rep_flags;
    int rep_seeds = 1;
    int shuffles = 1;
    std::optional<fs::path> rep_out;
    rp->add_option("--preset", cell_preset, "dataset group")->required();
    rep_model.add(rp, false);
    rep_flags.add(rp);
    rp->add_option("--seeds", rep_seeds, "dataset seeds")->capture_default_str()->check(CLI::PositiveNumber);
    rp->add_option("--shuffles", shuffles, "input shufflings per seed")->capture_default_str()->check(CLI::PositiveNumber);
    rp->add_option("--out", rep_out, "output directory (default reproduce/<preset>/<model>)");

    CLI11_PARSE(app, argc, argv);
    try {
        if (gen->parsed()) return cmd_generate(preset, seeds, out, n_side, steps, sigma, direction, drop, rollouts, sharpness);
        if (tr->parsed()) return cmd_train(data, run_out, train_model, train_flags, seed, shuffle);
        if (ev->parsed()) return cmd_eval(run_dir, split, eval_data);
        if (vz->parsed()) return cmd_visualize(run_dir, src, dst, viz_out, epoch, readout);
        if (rp->parsed()) return cmd_reproduce(cell_preset, rep_model, rep_flags, rep_seeds, shuffles, rep_out);
    } catch (const CLI::Error& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
