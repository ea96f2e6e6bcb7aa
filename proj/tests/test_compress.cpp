#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "suds/compress.hpp"

using namespace suds;
using namespace suds::model;
using namespace suds::compress;

namespace {

ModelSpec toy_spec() {
    ModelSpec sp;
    sp.feature_dim = 4;
    sp.conv = {{3, 2}};
    sp.se_reduction = 2;
    sp.lstm_cells = 2;
    sp.dense = {3};
    sp.num_classes = 2;
    sp.normalize();
    return sp;
}

TrainingBatch random_batch(const ModelSpec& sp, std::uint64_t seed, int seqs = 2,
                           int windows = 3) {
    Rng rng(seed);
    TrainingBatch batch;
    for (int s = 0; s < seqs; ++s) {
        LabeledSequence seq;
        for (int w = 0; w < windows; ++w) {
            signal::FeatureVector f;
            f.values.resize(static_cast<std::size_t>(sp.feature_dim));
            for (Real& v : f.values) v = rng.uniform(-1.0, 1.0);
            seq.x.push_back(std::move(f));
            seq.y.push_back(static_cast<int>(rng.index(static_cast<std::size_t>(sp.num_classes))));
        }
        batch.push_back(std::move(seq));
    }
    return batch;
}

bool params_bit_equal(const ModelParams& a, const ModelParams& b) {
    if (!(a.spec == b.spec) || a.w.items.size() != b.w.items.size()) return false;
    for (std::size_t i = 0; i < a.w.items.size(); ++i) {
        if (a.w.items[i].name != b.w.items[i].name) return false;
        if (a.w.items[i].t.v != b.w.items[i].t.v) return false;
    }
    return true;
}

}  // namespace

TEST(Budget, ValidatesAlphaRange) {
    CompressionBudget b;
    b.baseline_flops = 1000;
    b.alpha = 0.0;
    EXPECT_THROW(b.validate(), std::invalid_argument);
    b.alpha = 1.0;
    EXPECT_THROW(b.validate(), std::invalid_argument);
    b.alpha = 0.5;
    EXPECT_NO_THROW(b.validate());
    EXPECT_DOUBLE_EQ(b.max_flops(), 500.0);
}

TEST(PruneLayer, ZeroSparsityIsIdentity) {
    const auto params = init_params(toy_spec(), 5);
    const auto pruned = prune_layer(params, 0, 0.0);
    EXPECT_TRUE(params_bit_equal(params, pruned));
}

TEST(PruneLayer, HalfOf128FiltersLeaves64) {
    ModelSpec sp = toy_spec();
    sp.conv = {{3, 128}};
    sp.se_hidden = 0;
    sp.normalize();
    const auto params = init_params(sp, 6);
    const auto pruned = prune_layer(params, 0, 0.5);
    EXPECT_EQ(pruned.spec.conv[0].filters, 64);
    EXPECT_EQ(pruned.w.at("conv0.w").shape[0], 64);
}

// Four filters with hand-planted distinct magnitudes: s = 0.5 removes exactly
// the two smallest-norm filters and the survivors keep their weights.
TEST(PruneLayer, RemovesSmallestNormUnits) {
    ModelSpec sp = toy_spec();
    sp.conv = {{3, 4}};
    sp.se_hidden = 0;
    sp.normalize();
    auto params = init_params(sp, 7);
    Tensor& w = params.w.at("conv0.w");  // {4, 1, 3}
    const Real mags[4] = {0.5, 0.1, 0.9, 0.3};
    for (int f = 0; f < 4; ++f) {
        for (int t = 0; t < 3; ++t) w.v[static_cast<std::size_t>(f) * 3 + t] = mags[f];
    }
    const auto pruned = prune_layer(params, 0, 0.5);
    ASSERT_EQ(pruned.spec.conv[0].filters, 2);
    // filters 1 (0.1) and 3 (0.3) go; survivors 0 and 2 in original order
    const Tensor& pw = pruned.w.at("conv0.w");
    EXPECT_DOUBLE_EQ(pw.v[0], 0.5);
    EXPECT_DOUBLE_EQ(pw.v[3], 0.9);
    const Tensor& pb = pruned.w.at("conv0.b");
    EXPECT_DOUBLE_EQ(pb.v[0], params.w.at("conv0.b").v[0]);
    EXPECT_DOUBLE_EQ(pb.v[1], params.w.at("conv0.b").v[2]);
}

TEST(PruneLayer, SparsityOutOfRangeIsError) {
    const auto params = init_params(toy_spec(), 8);
    EXPECT_THROW(prune_layer(params, 0, 1.0), std::invalid_argument);
    EXPECT_THROW(prune_layer(params, 0, -0.1), std::invalid_argument);
}

TEST(PruneLayer, IdempotentUnderZeroOnOwnOutput) {
    const auto params = init_params(toy_spec(), 9);
    const auto once = prune_layer(params, 1, 0.5);  // lstm
    const auto twice = prune_layer(once, 1, 0.0);
    EXPECT_TRUE(params_bit_equal(once, twice));
}

// Pruned models must still run and agree with the dimension-only spec prune.
TEST(PruneModel, ShapesStayConsistentAndForwardRuns) {
    ModelSpec sp;
    sp.feature_dim = 6;
    sp.conv = {{3, 4}, {3, 4}};
    sp.se_reduction = 2;
    sp.lstm_cells = 4;
    sp.dense = {5, 4};
    sp.num_classes = 3;
    sp.normalize();
    const auto params = init_params(sp, 11);
    SparsityVector sv;
    sv.s = {0.5, 0.3, 0.5, 0.4, 0.25};
    const auto pruned = prune_model(params, sv);
    EXPECT_TRUE(pruned.spec == prune_spec(sp, sv));
    signal::FeatureVector f;
    f.values.assign(static_cast<std::size_t>(sp.feature_dim), 0.4);
    const auto [probs, st] = forward(pruned, f, RecurrentState::initial(pruned.spec));
    EXPECT_EQ(probs.probs.size(), 3u);
    EXPECT_EQ(st.activation.size(), static_cast<std::size_t>(pruned.spec.activation_dim()));
}

TEST(Finalize, AllZerosKeepsParamsIdentical) {
    const auto params = init_params(toy_spec(), 12);
    SparsityVector sv;
    sv.s.assign(prunable_layers(params.spec).size(), 0.0);
    const auto out = finalize(params, sv, random_batch(params.spec, 1), 0);
    EXPECT_TRUE(params_bit_equal(params, out));
}

TEST(Finalize, FlopsMatchAnalyticTableOfPrunedSpec) {
    const auto params = init_params(toy_spec(), 13);
    SparsityVector sv;
    sv.s = {0.5, 0.5, 0.4};
    const auto out = finalize(params, sv, random_batch(params.spec, 2), 0);
    EXPECT_EQ(count_flops(out.spec).total, count_flops(prune_spec(params.spec, sv)).total);
}

TEST(Finalize, NoFineTuneKeepsSurvivingWeightsBitEqual) {
    ModelSpec sp = toy_spec();
    sp.conv = {{3, 4}};
    sp.se_hidden = 0;
    sp.normalize();
    const auto params = init_params(sp, 14);
    SparsityVector sv;
    sv.s = {0.5, 0.0, 0.0};
    const auto out = finalize(params, sv, random_batch(sp, 3), 0);
    // dense0 and head weights for the lstm block must be untouched copies
    const Tensor& w_old = params.w.at("lstm.wh");
    const Tensor& w_new = out.w.at("lstm.wh");
    EXPECT_EQ(w_old.v, w_new.v);
}

// Hand-computed embedding table for a one-conv / lstm / one-dense toy:
// D = 8, conv0 = 112, se = 45, pool = 18, attention = 472, lstm = 512,
// dense0 = 27, classifier = 20, total 1206.
TEST(LayerEmbedding, MatchesHandComputedTable) {
    const ModelSpec sp = toy_spec();
    const std::uint64_t N = count_flops(sp).total;
    ASSERT_EQ(N, 1206u);

    const auto e0 = layer_embedding(sp, 0, N, 0);
    EXPECT_DOUBLE_EQ(e0.layer_index, 0.0);
    EXPECT_DOUBLE_EQ(e0.layer_kind, 0.0);
    EXPECT_DOUBLE_EQ(e0.layer_flops, 112.0 / 1206.0);
    EXPECT_DOUBLE_EQ(e0.flops_reduced, 0.0);
    EXPECT_DOUBLE_EQ(e0.flops_remaining, 1094.0 / 1206.0);

    const auto e1 = layer_embedding(sp, 1, N, 100);
    EXPECT_DOUBLE_EQ(e1.layer_index, 0.5);
    EXPECT_DOUBLE_EQ(e1.layer_kind, 0.5);
    EXPECT_DOUBLE_EQ(e1.layer_flops, 512.0 / 1206.0);
    EXPECT_DOUBLE_EQ(e1.flops_reduced, 100.0 / 1206.0);
    EXPECT_DOUBLE_EQ(e1.flops_remaining, 47.0 / 1206.0);

    const auto e2 = layer_embedding(sp, 2, N, 0);
    EXPECT_DOUBLE_EQ(e2.layer_index, 1.0);
    EXPECT_DOUBLE_EQ(e2.layer_kind, 1.0);
    EXPECT_DOUBLE_EQ(e2.layer_flops, 27.0 / 1206.0);
    EXPECT_DOUBLE_EQ(e2.flops_remaining, 20.0 / 1206.0);
}

TEST(ActorForward, ZeroInitGivesHalf) {
    const auto agent = AgentParams::make(3, 0, /*zero_init=*/true, 16);
    LayerEmbedding e;
    e.layer_flops = 0.4;
    EXPECT_DOUBLE_EQ(actor_forward(agent, e), 0.5);
}

TEST(ActorForward, StaysWithinRangeOnRandomEmbeddings) {
    const auto agent = AgentParams::make(3, 99, false, 32);
    Rng rng(1234);
    for (int i = 0; i < 10'000; ++i) {
        LayerEmbedding e;
        e.layer_index = rng.uniform01();
        e.layer_kind = rng.uniform01();
        e.layer_flops = rng.uniform01();
        e.flops_reduced = rng.uniform01();
        e.flops_remaining = rng.uniform01();
        const Real s = actor_forward(agent, e, 0.8);
        EXPECT_GE(s, 0.0);
        EXPECT_LE(s, 0.8);
    }
}

TEST(ActorForward, MatchesDenseNetworkOracle) {
    const int hidden = 8;
    const auto agent = AgentParams::make(2, 7, false, hidden);
    LayerEmbedding e;
    e.layer_index = 0.25;
    e.layer_kind = 0.5;
    e.layer_flops = 0.1;
    e.flops_reduced = 0.05;
    e.flops_remaining = 0.6;
    const auto x = e.to_vector();

    const auto& p = agent.actor;
    std::vector<Real> a1(hidden), a2(hidden);
    for (int o = 0; o < hidden; ++o) {
        Real acc = p.at("b1").v[static_cast<std::size_t>(o)];
        for (int i = 0; i < 5; ++i) acc += p.at("w1").v[static_cast<std::size_t>(o) * 5 + i] * x[static_cast<std::size_t>(i)];
        a1[static_cast<std::size_t>(o)] = std::max(acc, 0.0);
    }
    for (int o = 0; o < hidden; ++o) {
        Real acc = p.at("b2").v[static_cast<std::size_t>(o)];
        for (int i = 0; i < hidden; ++i) acc += p.at("w2").v[static_cast<std::size_t>(o) * hidden + i] * a1[static_cast<std::size_t>(i)];
        a2[static_cast<std::size_t>(o)] = std::max(acc, 0.0);
    }
    Real out = p.at("b3").v[0];
    for (int i = 0; i < hidden; ++i) out += p.at("w3").v[static_cast<std::size_t>(i)] * a2[static_cast<std::size_t>(i)];
    const Real expect = std::min(1.0 / (1.0 + std::exp(-out)), 0.8);
    EXPECT_NEAR(actor_forward(agent, e, 0.8), expect, 1e-6);
}

TEST(CompressionLoss, ZeroErrorAnnihilates) {
    EXPECT_DOUBLE_EQ(compression_loss(0.7, 0.7, 1e9), 0.0);
}

TEST(CompressionLoss, UnitMseAtEulerFlops) {
    EXPECT_NEAR(compression_loss(1.0, 0.0, std::exp(1.0)), 1.0, 1e-12);
}

TEST(CompressionLoss, QuarterMseAtMillionFlops) {
    EXPECT_NEAR(compression_loss(0.5, 0.0, 1e6), 0.25 * std::log(1e6), 1e-9);
    EXPECT_NEAR(compression_loss(0.5, 0.0, 1e6), 3.4539, 1e-4);
}

TEST(CompressionLoss, MultiplicativeInMse) {
    const Real f = 5e4;
    const Real base = compression_loss(0.3, 0.1, f);
    EXPECT_NEAR(compression_loss(0.3 * 2.0 - 0.1, 0.1, f), 4.0 * base, 1e-9);
}

TEST(CompressionLoss, SubUnitFlopsIsError) {
    EXPECT_THROW(compression_loss(1.0, 0.0, 0.5), std::invalid_argument);
}

TEST(Search, SingleIterationZeroInitAllHalf) {
    const auto sp = toy_spec();
    const auto params = init_params(sp, 21);
    const auto val = random_batch(sp, 22);
    CompressionBudget budget{0.9, count_flops(sp).total};
    SearchConfig cfg;
    cfg.iters = 1;
    cfg.sigma0 = 0.0;
    cfg.zero_init_agent = true;
    cfg.agent_hidden = 16;
    const auto result = search(params, val, budget, cfg);
    ASSERT_EQ(result.best_s.s.size(), 3u);
    for (Real s : result.best_s.s) EXPECT_DOUBLE_EQ(s, 0.5);
    EXPECT_EQ(result.trace.size(), 1u);
}

TEST(Search, BudgetAlwaysRespected) {
    ModelSpec sp;
    sp.feature_dim = 6;
    sp.conv = {{3, 8}, {3, 8}};
    sp.se_reduction = 2;
    sp.lstm_cells = 8;
    sp.dense = {8};
    sp.num_classes = 3;
    sp.normalize();
    const auto params = init_params(sp, 30);
    const auto val = random_batch(sp, 31);
    const std::uint64_t N = count_flops(sp).total;
    for (Real alpha : {0.5, 0.7}) {
        for (std::uint64_t seed : {1ull, 2ull}) {
            SearchConfig cfg;
            cfg.iters = 4;
            cfg.seed = seed;
            cfg.agent_hidden = 16;
            const auto r = search(params, val, CompressionBudget{alpha, N}, cfg);
            EXPECT_LE(static_cast<Real>(count_flops(r.best_params.spec).total),
                      alpha * static_cast<Real>(N));
            EXPECT_LE(static_cast<Real>(r.best_flops), alpha * static_cast<Real>(N));
        }
    }
}

TEST(Search, DeterministicForFixedSeed) {
    const auto sp = toy_spec();
    const auto params = init_params(sp, 23);
    const auto val = random_batch(sp, 24);
    CompressionBudget budget{0.7, count_flops(sp).total};
    SearchConfig cfg;
    cfg.iters = 6;
    cfg.seed = 77;
    cfg.agent_hidden = 16;
    const auto a = search(params, val, budget, cfg);
    const auto b = search(params, val, budget, cfg);
    EXPECT_EQ(a.best_s.s, b.best_s.s);
    ASSERT_EQ(a.trace.size(), b.trace.size());
    for (std::size_t i = 0; i < a.trace.size(); ++i) {
        EXPECT_EQ(a.trace[i].loss, b.trace[i].loss);
        EXPECT_EQ(a.trace[i].val_accuracy, b.trace[i].val_accuracy);
        EXPECT_EQ(a.trace[i].flops, b.trace[i].flops);
        EXPECT_EQ(a.trace[i].feasible, b.trace[i].feasible);
    }
}

TEST(Search, InfeasibleBudgetIsError) {
    const auto sp = toy_spec();
    const auto params = init_params(sp, 25);
    const auto val = random_batch(sp, 26);
    // the flat axis keeps a floor of FLOPs, so a 1% budget cannot be met
    CompressionBudget budget{0.01, count_flops(sp).total};
    try {
        search(params, val, budget, {});
        FAIL() << "expected infeasible budget";
    } catch (const std::runtime_error& e) {
        EXPECT_STREQ(e.what(), "infeasible budget");
    }
}

// Two prunable layers, three discretized levels: the search must find the
// same optimum as brute-force enumeration over the feasible grid.
TEST(Search, ToyGridMatchesExhaustiveEnumeration) {
    ModelSpec sp;
    sp.feature_dim = 5;
    sp.conv = {{3, 6}};
    sp.se_reduction = 2;
    sp.lstm_cells = 4;
    sp.dense = {};
    sp.num_classes = 3;
    sp.normalize();
    const auto params = init_params(sp, 40);
    const auto val = random_batch(sp, 41, 3, 4);
    const std::uint64_t N = count_flops(sp).total;
    const CompressionBudget budget{0.9, N};
    const std::vector<Real> levels = {0.0, 0.4, 0.8};

    Real best_y = std::numeric_limits<Real>::infinity();
    std::uint64_t best_flops = 0;
    std::vector<Real> best_s;
    for (Real s0 : levels) {
        for (Real s1 : levels) {
            SparsityVector sv;
            sv.s = {s0, s1};
            const std::uint64_t flops = count_flops(prune_spec(sp, sv)).total;
            if (static_cast<Real>(flops) > budget.max_flops()) continue;
            const auto cand = prune_model(params, sv);
            const Real y = batch_loss(cand, val);
            if (y < best_y || (y == best_y && flops < best_flops)) {
                best_y = y;
                best_flops = flops;
                best_s = sv.s;
            }
        }
    }

    SearchConfig cfg;
    cfg.iters = 60;
    cfg.seed = 4242;
    cfg.sigma0 = 0.5;
    cfg.discrete_levels = levels;
    cfg.agent_hidden = 16;
    const auto result = search(params, val, budget, cfg);
    EXPECT_DOUBLE_EQ(result.best_val_ce, best_y);
    EXPECT_EQ(result.best_s.s, best_s);
}
