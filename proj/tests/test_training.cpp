#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "doctest.h"
#include "gridflow/fpenv.hpp"
#include "gridflow/training.hpp"

using namespace gridflow;

namespace {

Snapshot snap(int epoch, double mrr, double hits1 = 0.0) {
    Snapshot s;
    s.epoch = epoch;
    s.valid.mrr = mrr;
    s.valid.hits1 = hits1;
    return s;
}

RunResult run_of(std::vector<Snapshot> snaps) {
    RunResult r;
    r.snapshots = std::move(snaps);
    return r;
}

}  // namespace

/// Ten pairs with distinct sources on a small grid, each in Train and Valid.
/// Distinct sources make a perfect fit possible.
Dataset memorization_dataset() {
    GenParams p;
    p.n_side = 4;
    p.max_steps = 4;
    p.n_rollout = 3;
    p.corruption = {0.0, 0.0, 0};
    p.seed = 11;
    Dataset ds = build_dataset(p);
    std::vector<PairRecord> pairs;
    std::vector<int> used;
    for (const PairRecord& r : ds.pairs) {
        if (r.src == r.dst || std::find(used.begin(), used.end(), r.src) != used.end()) continue;
        used.push_back(r.src);
        if (pairs.size() == 10) break;
        pairs.push_back({r.src, r.dst, Split::Train});
    }
    const std::size_t n = pairs.size();
    for (std::size_t i = 0; i < n; ++i) pairs.push_back({pairs[i].src, pairs[i].dst, Split::Valid});
    ds.pairs = pairs;
    return ds;
}

TEST_CASE("learning-rate schedule") {
    CHECK(lr_schedule(0) == 0.0005);
    CHECK(lr_schedule(9) == 0.0005);
    CHECK(lr_schedule(10) == 0.0004);
    CHECK(lr_schedule(20) == 0.0003);
    CHECK(lr_schedule(30) == 0.0002);
    CHECK(lr_schedule(40) == 0.0001);
    CHECK(lr_schedule(49) == 0.0001);
    CHECK(lr_schedule(499) == 0.0001);
    for (int e = 1; e < 200; ++e) CHECK(lr_schedule(e) <= lr_schedule(e - 1));
    CHECK_THROWS_AS(lr_schedule(-1), std::invalid_argument);
}

TEST_CASE("train config validation") {
    TrainConfig c;
    CHECK_NOTHROW(c.validate());
    c.snapshot_top_k = 60;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = TrainConfig{};
    c.lr_start = 1e-5;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = TrainConfig{};
    c.epochs = 0;
    CHECK_NOTHROW(c.validate());
}

TEST_CASE("snapshot selection") {
    SUBCASE("k=1 picks the best MRR") {
        const Selection s = select_snapshots(run_of({snap(0, 0.1), snap(1, 0.4), snap(2, 0.2)}), 1);
        CHECK(s.epochs() == std::vector<int>{1});
    }
    SUBCASE("top three by MRR") {
        const Selection s = select_snapshots(run_of({snap(0, 0.1), snap(1, 0.3), snap(2, 0.2), snap(3, 0.25)}), 3);
        CHECK(s.epochs() == std::vector<int>{1, 3, 2});
        CHECK_FALSE(s.short_of_k());
    }
    SUBCASE("identical metrics keep the earliest epochs") {
        const Selection s = select_snapshots(run_of({snap(0, 0.2), snap(1, 0.2), snap(2, 0.2), snap(3, 0.2)}), 3);
        CHECK(s.epochs() == std::vector<int>{0, 1, 2});
    }
    SUBCASE("Hits@1 breaks MRR ties") {
        const Selection s = select_snapshots(run_of({snap(0, 0.2, 0.1), snap(1, 0.2, 0.3), snap(2, 0.1, 0.9)}), 1);
        CHECK(s.epochs() == std::vector<int>{1});
    }
    SUBCASE("fewer than k uses all") {
        const Selection s = select_snapshots(run_of({snap(0, 0.2), snap(1, 0.3)}), 3);
        CHECK(s.epochs() == std::vector<int>{1, 0});
        CHECK(s.short_of_k());
    }
}

TEST_CASE("aggregation uses the population deviation") {
    MetricsReport a;
    a.hits1 = 0.3;
    a.mrr = 0.5;
    MetricsReport b;
    b.hits1 = 0.5;
    b.mrr = 0.5;
    const std::vector<std::vector<MetricsReport>> runs{{a}, {b}};
    const MetricsSummary s = aggregate_runs(runs);
    CHECK(s.mean.hits1 == doctest::Approx(0.4));
    CHECK(s.std.hits1 == doctest::Approx(0.1));
    CHECK(s.std.mrr == 0.0);
    CHECK(s.samples == 2);

    std::vector<std::vector<MetricsReport>> many(10, std::vector<MetricsReport>(3, a));
    CHECK(aggregate_runs(many).samples == 30);
    CHECK(aggregate_runs(many).std.hits1 == 0.0);
    CHECK_THROWS_AS(summarize({}), std::invalid_argument);
}

TEST_CASE("zero epochs yields no snapshots") {
    const Dataset ds = memorization_dataset();
    ModelConfig mc;
    mc.dims = 8;
    mc.attn_dims = 2;
    mc.steps = 4;
    TrainConfig tc;
    tc.epochs = 0;
    const RunResult r = train(mc, tc, ds);
    CHECK(r.snapshots.empty());
    CHECK(select_snapshots(r, 3).snapshots().empty());
}

TEST_CASE("training is deterministic and checkpoints restore") {
    const Dataset ds = memorization_dataset();
    for (const char* name : {"ggnn-mulmlp", "gat", "rw-dynamic"}) {
        CAPTURE(name);
        ModelConfig mc;
        mc.dims = 8;
        mc.attn_dims = 2;
        mc.heads = 2;
        mc.steps = 4;
        mc.variant = parse_variant(name);
        TrainConfig tc;
        tc.epochs = 3;
        tc.batch_size = 4;
        tc.snapshot_top_k = 1;
        tc.model_seed = 5;
        tc.shuffle_seed = 6;
        const RunResult a = train(mc, tc, ds);
        const RunResult b = train(mc, tc, ds);
        REQUIRE(a.batch_losses.size() == 9);  // 10 pairs, batches of 4: the partial batch is kept
        for (std::size_t i = 0; i < a.batch_losses.size(); ++i) {
            CHECK(std::abs(a.batch_losses[i] - b.batch_losses[i]) <= 1e-10);
        }
        CHECK(a.snapshots.back().checkpoint == b.snapshots.back().checkpoint);

        const Model<float> restored = a.snapshots.back().checkpoint.restore();
        const GraphIndex gi(ds.graph);
        const IndexedPairs valid = index_pairs(ds.graph, ds.pairs_in(Split::Valid));
        const MetricsReport again = evaluate(restored, gi, valid, 3);
        CHECK(again.mrr == a.snapshots.back().valid.mrr);
        CHECK(again.hits1 == a.snapshots.back().valid.hits1);
    }
}

TEST_CASE("divergence aborts with diagnostics") {
    const Dataset ds = memorization_dataset();
    ModelConfig mc;
    mc.dims = 8;
    mc.attn_dims = 2;
    mc.steps = 4;
    mc.variant = parse_variant("ggnn-mul");
    TrainConfig tc;
    tc.epochs = 5;
    tc.batch_size = 2;
    tc.snapshot_top_k = 1;
    tc.lr_start = 1e30;
    tc.lr_end = 1e30;
    bool thrown = false;
    try {
        train(mc, tc, ds);
    } catch (const TrainingDiverged& e) {
        thrown = true;
        const std::string what = e.what();
        CHECK(what.find("epoch") != std::string::npos);
        CHECK(what.find("batch") != std::string::npos);
        CHECK(what.find("embed.u: |w|=") != std::string::npos);
    }
    CHECK(thrown);

    tc.lr_start = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(tc.validate(), std::invalid_argument);
}

TEST_CASE("memorizes ten pairs") {
    const Dataset ds = memorization_dataset();
    REQUIRE(ds.pairs_in(Split::Train).size() == 10);
    ModelConfig mc;
    mc.variant = parse_variant("ggnn-mulmlp");
    mc.steps = 4;
    TrainConfig tc;
    tc.epochs = 500;
    tc.snapshot_top_k = 1;
    int reached = -1;
    TrainHooks hooks;
    hooks.on_epoch = [&](const Snapshot& s) {
        if (reached < 0 && s.valid.hits1 == 1.0) reached = s.epoch;
    };
    const auto t0 = std::chrono::steady_clock::now();
    const RunResult r = train(mc, tc, ds, hooks);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    MESSAGE("first epoch at Hits@1 = 1: " << reached << ", " << secs << " s");
    CHECK(reached >= 0);
    CHECK(r.snapshots.back().valid.hits1 == 1.0);
}

TEST_CASE("denormal flushing is scoped") {
    volatile float tiny = std::numeric_limits<float>::min();
    volatile float half = 0.5f;
    CHECK(tiny * half > 0.0f);
    {
        const FlushDenormals ftz;
#if defined(__SSE__)
        CHECK(tiny * half == 0.0f);
#endif
    }
    CHECK(tiny * half > 0.0f);
}
