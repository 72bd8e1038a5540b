#include "gridflow/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "gridflow/autodiff/adam.hpp"
#include "gridflow/fpenv.hpp"

namespace gridflow {

void TrainConfig::validate() const {
    if (batch_size <= 0 || eval_batch_size <= 0) {
        throw std::invalid_argument("batch sizes must be positive");
    }
    if (epochs < 0) {
        throw std::invalid_argument("epochs must be non-negative");
    }
    if (!std::isfinite(lr_start) || !std::isfinite(lr_step) || lr_end <= 0.0 || lr_start < lr_end || lr_step < 0.0 || lr_every <= 0) {
        throw std::invalid_argument("learning-rate schedule must be positive and non-increasing");
    }
    if (weight_decay < 0.0) {
        throw std::invalid_argument("weight decay must be non-negative");
    }
    if (snapshot_top_k <= 0 || (epochs > 0 && snapshot_top_k > epochs)) {
        throw std::invalid_argument("snapshot_top_k must be in [1, epochs], got " + std::to_string(snapshot_top_k));
    }
}

double lr_schedule(int epoch, const TrainConfig& config) {
    if (epoch < 0) {
        throw std::invalid_argument("lr_schedule: negative epoch");
    }
    const double drops = static_cast<double>(epoch / config.lr_every);
    // Round to the step grid so 0.0005 - 0.0001 * k lands on exact decimals.
    const double lr = config.lr_start - config.lr_step * drops;
    const double snapped = std::round(lr * 1e12) / 1e12;
    return std::max(config.lr_end, snapped);
}

Checkpoint Checkpoint::capture(const Model<float>& model) {
    Checkpoint c;
    c.config = model.config();
    c.num_nodes = model.num_nodes();
    c.names = model.params().names;
    c.values.reserve(model.params().size());
    for (const auto& t : model.params().tensors) c.values.push_back(t.value());
    return c;
}

Model<float> Checkpoint::restore() const {
    if (names.size() != values.size()) {
        throw std::invalid_argument("checkpoint has " + std::to_string(names.size()) + " names but " +
                                    std::to_string(values.size()) + " tensors");
    }
    ParamStore<float> ps;
    for (std::size_t i = 0; i < names.size(); ++i) ps.add(names[i], values[i]);
    return Model<float>(config, num_nodes, std::move(ps));
}

bool operator==(const Checkpoint& a, const Checkpoint& b) {
    if (!(a.config == b.config) || a.num_nodes != b.num_nodes || a.names != b.names ||
        a.values.size() != b.values.size()) {
        return false;
    }
    for (std::size_t i = 0; i < a.values.size(); ++i) {
        const auto& x = a.values[i];
        const auto& y = b.values[i];
        if (x.rows() != y.rows() || x.cols() != y.cols() || !(x.array() == y.array()).all()) return false;
    }
    return true;
}

IndexedPairs index_pairs(const GridGraph& graph, std::span<const PairRecord> pairs) {
    IndexedPairs out;
    out.src.reserve(pairs.size());
    out.dst.reserve(pairs.size());
    for (const PairRecord& p : pairs) {
        out.src.push_back(graph.index_of(p.src));
        out.dst.push_back(graph.index_of(p.dst));
    }
    return out;
}

std::vector<std::size_t> rank_pairs(const Model<float>& model, const GraphIndex& graph, const IndexedPairs& pairs,
                                    int batch_size) {
    ad::NoGradGuard guard;
    const FlushDenormals ftz;
    std::vector<std::size_t> ranks;
    ranks.reserve(pairs.src.size());
    const std::size_t n = pairs.src.size();
    const auto step = static_cast<std::size_t>(batch_size);
    for (std::size_t lo = 0; lo < n; lo += step) {
        const std::size_t hi = std::min(n, lo + step);
        const std::span<const int> src(pairs.src.data() + lo, hi - lo);
        const std::span<const int> dst(pairs.dst.data() + lo, hi - lo);
        const ForwardOutput<float> out = model.forward(graph, src, dst);
        for (std::size_t k = 0; k < hi - lo; ++k) {
            ranks.push_back(rank_of(out.scores[k], static_cast<std::size_t>(dst[k])));
        }
    }
    return ranks;
}

MetricsReport evaluate(const Model<float>& model, const GraphIndex& graph, const IndexedPairs& pairs,
                       int batch_size) {
    const std::vector<std::size_t> ranks = rank_pairs(model, graph, pairs, batch_size);
    return metrics(ranks);
}

namespace {

std::string norm_report(const ParamStore<float>& ps) {
    std::ostringstream os;
    for (std::size_t i = 0; i < ps.size(); ++i) {
        const auto& v = ps.tensors[i].value();
        const auto& g = ps.tensors[i].grad();
        os << "\n  " << ps.names[i] << ": |w|=" << v.norm() << " |g|=" << (g.size() ? g.norm() : 0.0f);
    }
    return os.str();
}

}  // namespace

RunResult train(const ModelConfig& model_config, const TrainConfig& train_config, const Dataset& dataset,
                const TrainHooks& hooks) {
    model_config.validate();
    train_config.validate();
    const FlushDenormals ftz;
    const std::vector<PairRecord> train_pairs = dataset.pairs_in(Split::Train);
    const std::vector<PairRecord> valid_pairs = dataset.pairs_in(Split::Valid);
    if (train_pairs.empty() || valid_pairs.empty()) {
        throw std::invalid_argument("train: the Train and Valid splits must be non-empty");
    }
    const GraphIndex graph(dataset.graph);
    const IndexedPairs train_idx = index_pairs(dataset.graph, train_pairs);
    const IndexedPairs valid_idx = index_pairs(dataset.graph, valid_pairs);

    RunResult result;
    result.model = model_config;
    result.train = train_config;
    Model<float> model(model_config, graph.n, train_config.model_seed);
    ad::AdamState<float> adam;
    auto& params = model.params();

    std::vector<std::size_t> order(train_idx.src.size());
    std::vector<int> src;
    std::vector<int> dst;
    for (int epoch = 0; epoch < train_config.epochs; ++epoch) {
        const double lr = lr_schedule(epoch, train_config);
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng rng(derive_seed(train_config.shuffle_seed, static_cast<std::uint64_t>(epoch)));
        rng.shuffle(order);

        double loss_sum = 0.0;
        int batch = 0;
        for (std::size_t lo = 0; lo < order.size(); lo += static_cast<std::size_t>(train_config.batch_size), ++batch) {
            const std::size_t hi = std::min(order.size(), lo + static_cast<std::size_t>(train_config.batch_size));
            src.clear();
            dst.clear();
            for (std::size_t k = lo; k < hi; ++k) {
                src.push_back(train_idx.src[order[k]]);
                dst.push_back(train_idx.dst[order[k]]);
            }
            for (const auto& t : params.tensors) t.zero_grad();
            double loss = 0.0;
            try {
                ForwardOptions fo;
                fo.loss_only = true;
                const ForwardOutput<float> out = model.forward(graph, src, dst, fo);
                loss = out.loss.item();
                if (!std::isfinite(loss)) throw std::runtime_error("non-finite loss");
                ad::backward(out.loss);
            } catch (const std::runtime_error& e) {
                throw TrainingDiverged("training diverged at epoch " + std::to_string(epoch) + ", batch " +
                                       std::to_string(batch) + ": " + e.what() + norm_report(params));
            }
            ad::adam_step(params.tensors, adam, lr, train_config.weight_decay, params.decay);
            loss_sum += loss * static_cast<double>(hi - lo);
            result.batch_losses.push_back(loss);
            if (hooks.on_batch) hooks.on_batch(epoch, batch, loss);
        }

        Snapshot snap;
        snap.epoch = epoch;
        snap.lr = lr;
        snap.train_loss = loss_sum / static_cast<double>(order.size());
        snap.valid = evaluate(model, graph, valid_idx, train_config.eval_batch_size);
        snap.checkpoint = Checkpoint::capture(model);
        if (hooks.on_epoch) hooks.on_epoch(snap);
        result.snapshots.push_back(std::move(snap));
    }
    return result;
}

std::vector<int> Selection::epochs() const {
    std::vector<int> out;
    for (const Snapshot& s : snapshots_) out.push_back(s.epoch);
    return out;
}

Selection select_snapshots(const RunResult& run, int k) {
    if (k <= 0) {
        throw std::invalid_argument("select_snapshots: k must be positive");
    }
    std::vector<const Snapshot*> order;
    for (const Snapshot& s : run.snapshots) order.push_back(&s);
    std::stable_sort(order.begin(), order.end(), [](const Snapshot* a, const Snapshot* b) {
        if (a->valid.mrr != b->valid.mrr) return a->valid.mrr > b->valid.mrr;
        if (a->valid.hits1 != b->valid.hits1) return a->valid.hits1 > b->valid.hits1;
        return a->epoch < b->epoch;
    });
    Selection sel;
    sel.short_ = order.size() < static_cast<std::size_t>(k);
    if (sel.short_ && !order.empty()) {
        std::fprintf(stderr, "warning: only %zu snapshots available, selecting all of them instead of %d\n",
                     order.size(), k);
    }
    const std::size_t take = std::min(order.size(), static_cast<std::size_t>(k));
    for (std::size_t i = 0; i < take; ++i) sel.snapshots_.push_back(*order[i]);
    return sel;
}

Selection selection_from(std::vector<Snapshot> chosen, bool short_of_k) {
    Selection sel;
    sel.snapshots_ = std::move(chosen);
    sel.short_ = short_of_k;
    return sel;
}

std::vector<MetricsReport> evaluate_selection(const Selection& selection, const Dataset& dataset, Split split,
                                              int batch_size) {
    const std::vector<PairRecord> pairs = dataset.pairs_in(split);
    if (pairs.empty()) {
        throw std::invalid_argument("evaluate_selection: the " + std::string(split_name(split)) + " split is empty");
    }
    const GraphIndex graph(dataset.graph);
    const IndexedPairs idx = index_pairs(dataset.graph, pairs);
    std::vector<MetricsReport> out;
    for (const Snapshot& s : selection.snapshots()) {
        out.push_back(evaluate(s.checkpoint.restore(), graph, idx, batch_size));
    }
    return out;
}

MetricsSummary summarize(std::span<const MetricsReport> samples) {
    if (samples.empty()) {
        throw std::invalid_argument("summarize: no samples");
    }
    MetricsSummary s;
    s.samples = samples.size();
    const double n = static_cast<double>(samples.size());
    auto field = [&](double MetricsReport::*f) {
        double mean = 0.0;
        for (const MetricsReport& r : samples) mean += r.*f;
        mean /= n;
        double var = 0.0;
        for (const MetricsReport& r : samples) var += (r.*f - mean) * (r.*f - mean);
        s.mean.*f = mean;
        s.std.*f = std::sqrt(var / n);
    };
    field(&MetricsReport::hits1);
    field(&MetricsReport::hits5);
    field(&MetricsReport::hits10);
    field(&MetricsReport::mr);
    field(&MetricsReport::mrr);
    std::size_t total = 0;
    for (const MetricsReport& r : samples) total += r.n;
    s.mean.n = total / samples.size();
    return s;
}

MetricsSummary aggregate_runs(std::span<const std::vector<MetricsReport>> runs) {
    std::vector<MetricsReport> pooled;
    for (const auto& r : runs) pooled.insert(pooled.end(), r.begin(), r.end());
    return summarize(pooled);
}

}  // namespace gridflow
