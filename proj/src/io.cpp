#include "gridflow/io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace gridflow::io {

using nlohmann::json;

namespace {

json parse(const std::string& text, const char* what) {
    try {
        return json::parse(text);
    } catch (const json::exception& e) {
        throw std::runtime_error(std::string(what) + ": malformed JSON: " + e.what());
    }
}

template <typename T>
T field(const json& j, const char* key, const char* what) {
    if (!j.contains(key)) {
        throw std::runtime_error(std::string(what) + ": missing field '" + key + "'");
    }
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw std::runtime_error(std::string(what) + ": bad field '" + key + "': " + e.what());
    }
}

json metrics_json(const MetricsReport& m) {
    return json{{"hits1", m.hits1}, {"hits5", m.hits5}, {"hits10", m.hits10}, {"mr", m.mr},
                {"mrr", m.mrr},     {"n", m.n},         {"tie_policy", kTiePolicy}};
}

MetricsReport metrics_of(const json& j) {
    const char* what = "metrics";
    MetricsReport m;
    m.hits1 = field<double>(j, "hits1", what);
    m.hits5 = field<double>(j, "hits5", what);
    m.hits10 = field<double>(j, "hits10", what);
    m.mr = field<double>(j, "mr", what);
    m.mrr = field<double>(j, "mrr", what);
    m.n = field<std::size_t>(j, "n", what);
    if (j.contains("tie_policy") && j.at("tie_policy") != kTiePolicy) {
        throw std::runtime_error("metrics: tie policy '" + j.at("tie_policy").get<std::string>() +
                                 "' differs from this build's '" + kTiePolicy + "'");
    }
    return m;
}

json model_config_json(const ModelConfig& c) {
    return json{{"variant", variant_name(c.variant)}, {"dims", c.dims},   {"attn_dims", c.attn_dims},
                {"heads", c.heads},                   {"steps", c.steps}, {"leaky_slope", c.leaky_slope}};
}

ModelConfig model_config_of(const json& j) {
    const char* what = "model config";
    ModelConfig c;
    c.variant = parse_variant(field<std::string>(j, "variant", what));
    c.dims = field<int>(j, "dims", what);
    c.attn_dims = field<int>(j, "attn_dims", what);
    c.heads = field<int>(j, "heads", what);
    c.steps = field<int>(j, "steps", what);
    c.leaky_slope = field<double>(j, "leaky_slope", what);
    return c;
}

}  // namespace

std::string graph_to_json(const GridGraph& graph) {
    json nodes = json::array();
    for (const GridNode& v : graph.nodes()) nodes.push_back({{"id", v.id}, {"x", v.x}, {"y", v.y}});
    json edges = json::array();
    for (const GridEdge& e : graph.edges()) edges.push_back({e.src, e.dst, type_code(e.type)});
    return json{{"n_side", graph.n_side()}, {"nodes", std::move(nodes)}, {"edges", std::move(edges)}}.dump();
}

GridGraph graph_from_json(const std::string& text) {
    const char* what = "graph.json";
    const json j = parse(text, what);
    const int n_side = field<int>(j, "n_side", what);
    std::vector<GridNode> nodes;
    for (const json& v : field<json>(j, "nodes", what)) {
        nodes.push_back({field<int>(v, "id", what), field<int>(v, "x", what), field<int>(v, "y", what)});
    }
    std::vector<GridEdge> edges;
    for (const json& e : field<json>(j, "edges", what)) {
        if (!e.is_array() || e.size() != 3) {
            throw std::runtime_error("graph.json: each edge must be [src, dst, type_code]");
        }
        edges.push_back({e[0].get<int>(), e[1].get<int>(), edge_type_from_code(e[2].get<int>())});
    }
    try {
        return GridGraph(n_side, std::move(nodes), std::move(edges));
    } catch (const std::invalid_argument& e) {
        throw std::runtime_error(std::string("graph.json: ") + e.what());
    }
}

std::string pairs_to_tsv(const std::vector<PairRecord>& pairs) {
    std::string out;
    for (const PairRecord& p : pairs) {
        out += std::to_string(p.src) + '\t' + std::to_string(p.dst) + '\t' + std::string(split_name(p.split)) + '\n';
    }
    return out;
}

std::vector<PairRecord> pairs_from_tsv(const std::string& text) {
    std::vector<PairRecord> out;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ls(line);
        PairRecord p;
        std::string split;
        if (!(ls >> p.src >> p.dst >> split)) {
            throw std::runtime_error("pairs.tsv:" + std::to_string(lineno) + ": expected src<TAB>dst<TAB>split");
        }
        try {
            p.split = parse_split(split);
        } catch (const std::invalid_argument& e) {
            throw std::runtime_error("pairs.tsv:" + std::to_string(lineno) + ": " + e.what());
        }
        out.push_back(p);
    }
    return out;
}

std::string params_to_json(const GenParams& p) {
    const DirectionFunction& d = p.direction;
    const json dir{{"kind", direction_kind_name(d.kind)}, {"a1", d.a1}, {"b1", d.b1}, {"a2", d.a2}, {"b2", d.b2},
                   {"omega", d.omega}, {"lambda1", d.lambda1}, {"lambda2", d.lambda2}, {"phi", d.phi}};
    const json cor{{"p_node_drop", p.corruption.p_node_drop},
                   {"p_edge_drop", p.corruption.p_edge_drop},
                   {"seed", p.corruption.seed}};
    return json{{"n_side", p.n_side},   {"max_steps", p.max_steps}, {"sigma", p.sigma},
                {"corruption", cor},    {"n_rollout", p.n_rollout}, {"direction", dir},
                {"seed", p.seed},       {"sharpness", p.sharpness}}
        .dump(2);
}

GenParams params_from_json(const std::string& text) {
    const char* what = "params.json";
    const json j = parse(text, what);
    GenParams p;
    p.n_side = field<int>(j, "n_side", what);
    p.max_steps = field<int>(j, "max_steps", what);
    p.sigma = field<double>(j, "sigma", what);
    const json cor = field<json>(j, "corruption", what);
    p.corruption.p_node_drop = field<double>(cor, "p_node_drop", what);
    p.corruption.p_edge_drop = field<double>(cor, "p_edge_drop", what);
    p.corruption.seed = field<std::uint64_t>(cor, "seed", what);
    p.n_rollout = field<int>(j, "n_rollout", what);
    const json d = field<json>(j, "direction", what);
    p.direction.kind = parse_direction_kind(field<std::string>(d, "kind", what));
    p.direction.a1 = field<double>(d, "a1", what);
    p.direction.b1 = field<double>(d, "b1", what);
    p.direction.a2 = field<double>(d, "a2", what);
    p.direction.b2 = field<double>(d, "b2", what);
    p.direction.omega = field<double>(d, "omega", what);
    p.direction.lambda1 = field<double>(d, "lambda1", what);
    p.direction.lambda2 = field<double>(d, "lambda2", what);
    p.direction.phi = field<double>(d, "phi", what);
    p.seed = field<std::uint64_t>(j, "seed", what);
    p.sharpness = j.contains("sharpness") ? field<double>(j, "sharpness", what) : 1.0;
    return p;
}

std::string stats_to_json(const DatasetStats& s) {
    return json{{"nodes", s.nodes},
                {"edges", s.edges},
                {"pairs", s.pairs},
                {"pairs_per_node", s.pairs_per_node},
                {"mean_traj_length", s.mean_traj_length},
                {"mean_transitions", s.mean_transitions}}
        .dump(2);
}

DatasetStats stats_from_json(const std::string& text) {
    const char* what = "stats.json";
    const json j = parse(text, what);
    DatasetStats s;
    s.nodes = field<std::size_t>(j, "nodes", what);
    s.edges = field<std::size_t>(j, "edges", what);
    s.pairs = field<std::size_t>(j, "pairs", what);
    s.pairs_per_node = field<double>(j, "pairs_per_node", what);
    s.mean_traj_length = field<double>(j, "mean_traj_length", what);
    s.mean_transitions = field<double>(j, "mean_transitions", what);
    return s;
}

std::string metrics_to_json(const MetricsReport& m) { return metrics_json(m).dump(2); }

MetricsReport metrics_from_json(const std::string& text) { return metrics_of(parse(text, "metrics")); }

std::string summary_to_json(const MetricsSummary& s) {
    json mean = metrics_json(s.mean);
    json std = metrics_json(s.std);
    std.erase("n");
    return json{{"mean", mean}, {"std", std}, {"samples", s.samples}, {"tie_policy", kTiePolicy}}.dump(2);
}

std::string model_config_to_json(const ModelConfig& c) { return model_config_json(c).dump(2); }

ModelConfig model_config_from_json(const std::string& text) { return model_config_of(parse(text, "model config")); }

std::string train_config_to_json(const TrainConfig& c) {
    return json{{"batch_size", c.batch_size},
                {"epochs", c.epochs},
                {"lr_start", c.lr_start},
                {"lr_end", c.lr_end},
                {"lr_step", c.lr_step},
                {"lr_every", c.lr_every},
                {"weight_decay", c.weight_decay},
                {"snapshot_top_k", c.snapshot_top_k},
                {"model_seed", c.model_seed},
                {"shuffle_seed", c.shuffle_seed},
                {"eval_batch_size", c.eval_batch_size}}
        .dump(2);
}

TrainConfig train_config_from_json(const std::string& text) {
    const char* what = "train config";
    const json j = parse(text, what);
    TrainConfig c;
    c.batch_size = field<int>(j, "batch_size", what);
    c.epochs = field<int>(j, "epochs", what);
    c.lr_start = field<double>(j, "lr_start", what);
    c.lr_end = field<double>(j, "lr_end", what);
    c.lr_step = field<double>(j, "lr_step", what);
    c.lr_every = field<int>(j, "lr_every", what);
    c.weight_decay = field<double>(j, "weight_decay", what);
    c.snapshot_top_k = field<int>(j, "snapshot_top_k", what);
    c.model_seed = field<std::uint64_t>(j, "model_seed", what);
    c.shuffle_seed = field<std::uint64_t>(j, "shuffle_seed", what);
    c.eval_batch_size = field<int>(j, "eval_batch_size", what);
    return c;
}

std::string checkpoint_to_json(const Checkpoint& c) {
    json params = json::object();
    for (std::size_t i = 0; i < c.names.size(); ++i) {
        const auto& v = c.values[i];
        params[c.names[i]] = json{{"shape", {v.rows(), v.cols()}},
                                  {"values", std::vector<float>(v.data(), v.data() + v.size())}};
    }
    return json{{"config", model_config_json(c.config)}, {"num_nodes", c.num_nodes}, {"params", std::move(params)}}
        .dump();
}

Checkpoint checkpoint_from_json(const std::string& text) {
    const char* what = "checkpoint";
    const json j = parse(text, what);
    Checkpoint c;
    c.config = model_config_of(field<json>(j, "config", what));
    c.num_nodes = field<int>(j, "num_nodes", what);
    const json params = field<json>(j, "params", what);
    // Keep the canonical creation order rather than the JSON key order.
    for (const std::string& name : parameter_names(c.config)) {
        if (!params.contains(name)) {
            throw std::runtime_error("checkpoint: missing parameter '" + name + "'");
        }
        const json& p = params.at(name);
        const auto shape = field<std::vector<Eigen::Index>>(p, "shape", what);
        const auto values = field<std::vector<float>>(p, "values", what);
        if (shape.size() != 2 || shape[0] * shape[1] != static_cast<Eigen::Index>(values.size())) {
            throw std::runtime_error("checkpoint: parameter '" + name + "' has inconsistent shape and values");
        }
        ad::Matrix<float> m(shape[0], shape[1]);
        std::copy(values.begin(), values.end(), m.data());
        c.names.push_back(name);
        c.values.push_back(std::move(m));
    }
    if (params.size() != c.names.size()) {
        throw std::runtime_error("checkpoint: unexpected parameters for variant " + variant_name(c.config.variant));
    }
    return c;
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot read " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
}

void save_dataset(const fs::path& dir, const Dataset& dataset, const GenParams& params, const DatasetStats& stats) {
    write_file(dir / "graph.json", graph_to_json(dataset.graph));
    write_file(dir / "pairs.tsv", pairs_to_tsv(dataset.pairs));
    write_file(dir / "params.json", params_to_json(params));
    write_file(dir / "stats.json", stats_to_json(stats));
}

Dataset load_dataset(const fs::path& dir) {
    if (!fs::exists(dir / "graph.json") || !fs::exists(dir / "pairs.tsv")) {
        throw std::runtime_error("no dataset at " + dir.string() + " (expected graph.json and pairs.tsv)");
    }
    Dataset ds;
    ds.graph = graph_from_json(read_file(dir / "graph.json"));
    ds.pairs = pairs_from_tsv(read_file(dir / "pairs.tsv"));
    for (const PairRecord& p : ds.pairs) {
        if (!ds.graph.has_node(p.src) || !ds.graph.has_node(p.dst)) {
            throw std::runtime_error("pairs.tsv: pair (" + std::to_string(p.src) + ", " + std::to_string(p.dst) +
                                     ") references a node missing from graph.json");
        }
    }
    return ds;
}

fs::path RunPaths::checkpoint(int epoch) const {
    char name[32];
    std::snprintf(name, sizeof name, "epoch_%03d.json", epoch);
    return dir / "checkpoints" / name;
}

std::string run_log_header() { return "epoch\tlr\ttrain_loss\tvalid_hits1\tvalid_hits5\tvalid_hits10\tvalid_mr\tvalid_mrr\n"; }

std::string run_log_line(const Snapshot& s) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%d\t%.6g\t%.6f\t%.6f\t%.6f\t%.6f\t%.4f\t%.6f\n", s.epoch, s.lr, s.train_loss,
                  s.valid.hits1, s.valid.hits5, s.valid.hits10, s.valid.mr, s.valid.mrr);
    return buf;
}

void save_selection(const RunPaths& run, const Selection& selection) {
    json chosen = json::array();
    for (const Snapshot& s : selection.snapshots()) {
        chosen.push_back({{"epoch", s.epoch},
                          {"lr", s.lr},
                          {"train_loss", s.train_loss},
                          {"valid", metrics_json(s.valid)},
                          {"checkpoint", fs::relative(run.checkpoint(s.epoch), run.dir).string()}});
    }
    write_file(run.selection(),
               json{{"criterion", "valid_mrr"}, {"short_of_k", selection.short_of_k()}, {"selected", chosen}}.dump(2));
}

Selection load_selection(const RunPaths& run) {
    if (!fs::exists(run.selection())) {
        throw std::runtime_error("no selection manifest at " + run.selection().string() +
                                 "; test evaluation needs the snapshots chosen on Valid");
    }
    const char* what = "selection.json";
    const json j = parse(read_file(run.selection()), what);
    std::vector<Snapshot> chosen;
    for (const json& s : field<json>(j, "selected", what)) {
        Snapshot snap;
        snap.epoch = field<int>(s, "epoch", what);
        snap.lr = field<double>(s, "lr", what);
        snap.train_loss = field<double>(s, "train_loss", what);
        snap.valid = metrics_of(field<json>(s, "valid", what));
        snap.checkpoint = checkpoint_from_json(read_file(run.dir / field<std::string>(s, "checkpoint", what)));
        chosen.push_back(std::move(snap));
    }
    return selection_from(std::move(chosen), field<bool>(j, "short_of_k", what));
}

}  // namespace gridflow::io
