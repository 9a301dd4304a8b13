#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fixtures.hpp"
#include "mecch/bench.hpp"
#include "mecch/errors.hpp"
#include "mecch/train.hpp"

using namespace mecch;
using namespace mecch::testing;

namespace {

ContextStore store_for(const HeteroGraph& g, int K = 2) {
    std::vector<std::vector<Metapath>> by_type(g.schema.num_node_types());
    for (NodeTypeId t = 0; t < g.schema.num_node_types(); ++t)
        by_type[t] = enumerate_metapaths(g.schema, t, K, 1000);
    return build_all_contexts(g, by_type);
}

} // namespace

TEST_CASE("nc_loss values") {
    Tape tape;
    SUBCASE("uniform logits over 3 classes") {
        Tensor logits = tape.constant({2, 3}, {1, 1, 1, 0, 0, 0});
        Tensor loss = nc_loss(tape, logits, {{0, 0}, {1, 2}});
        CHECK(loss.scalar() == doctest::Approx(std::log(3.0)).epsilon(1e-12));
    }
    SUBCASE("confident correct predictions approach zero") {
        Tensor logits = tape.constant({2, 2}, {60, 0, 0, 60});
        Tensor loss = nc_loss(tape, logits, {{0, 0}, {1, 1}});
        CHECK(loss.scalar() < 1e-12);
    }
    SUBCASE("single node direct evaluation") {
        Tensor logits = tape.constant({1, 2}, {2, 0});
        Tensor loss = nc_loss(tape, logits, {{0, 0}});
        CHECK(loss.scalar() == doctest::Approx(std::log(1 + std::exp(-2.0))).epsilon(1e-12));
    }
}

TEST_CASE("sample_negatives") {
    auto dir = temp_dir("train_negs");
    HeteroGraph g = load_g1(dir);
    EdgeTypeId writes = *g.schema.find_edge_type("writes");
    EdgeTypeId publishes = *g.schema.find_edge_type("publishes");

    SUBCASE("single-candidate destination type is forced") {
        Rng rng(1);
        auto negs = sample_negatives(g, {{0, 0}, {1, 0}, {2, 0}}, publishes, 1, rng);
        REQUIRE(negs.size() == 3);
        for (const auto& [u, v] : negs) CHECK(v == 0); // only one venue
    }
    SUBCASE("seeded runs repeat exactly") {
        Rng rng1(9), rng2(9);
        auto a = sample_negatives(g, {{0, 0}, {1, 2}}, writes, 3, rng1);
        auto b = sample_negatives(g, {{0, 0}, {1, 2}}, writes, 3, rng2);
        CHECK(a == b);
    }
    SUBCASE("draws are uniform over destinations") {
        // 1e5 draws over 3 papers; each frequency within 4 sigma of 1/3
        Rng rng(17);
        std::vector<std::pair<int32_t, int32_t>> positives(100000, {0, 0});
        auto negs = sample_negatives(g, positives, writes, 1, rng);
        std::vector<int> counts(3, 0);
        for (const auto& [u, v] : negs) counts[v]++;
        const double p = 1.0 / 3.0;
        const double sigma = std::sqrt(p * (1 - p) / 100000.0);
        for (int c = 0; c < 3; ++c)
            CHECK(std::fabs(counts[c] / 100000.0 - p) < 4 * sigma);
    }
}

TEST_CASE("lp_loss values") {
    Tape tape;
    Tensor h_src = tape.constant({2, 2}, {1, 0, 0, 1});
    Tensor h_dst = tape.constant({2, 2}, {1, 0, 0, 1});
    SUBCASE("all-zero scores give 2 ln 2") {
        Tensor w = tape.constant({2}, {0, 0});
        Tensor loss = lp_loss(tape, h_src, h_dst, w, {{0, 1}}, {{1, 0}});
        CHECK(loss.scalar() == doctest::Approx(2 * std::log(2.0)).epsilon(1e-12));
    }
    SUBCASE("separable scores approach zero") {
        Tape tp;
        Tensor hs = tp.constant({1, 1}, {1});
        Tensor hd = tp.constant({2, 1}, {40, -40});
        Tensor w = tp.constant({1}, {1});
        Tensor loss = lp_loss(tp, hs, hd, w, {{0, 0}}, {{0, 1}});
        CHECK(loss.scalar() < 1e-12);
    }
    SUBCASE("direct evaluation at +-2") {
        Tape tp;
        Tensor hs = tp.constant({1, 1}, {1});
        Tensor hd = tp.constant({2, 1}, {2, -2});
        Tensor w = tp.constant({1}, {1});
        Tensor loss = lp_loss(tp, hs, hd, w, {{0, 0}}, {{0, 1}});
        CHECK(loss.scalar() == doctest::Approx(2 * std::log(1 + std::exp(-2.0))).epsilon(1e-12));
    }
    SUBCASE("empty positives rejected") {
        Tensor w = tape.constant({2}, {1, 1});
        CHECK_THROWS_AS((void)lp_loss(tape, h_src, h_dst, w, {}, {{0, 1}}), ContractError);
    }
}

TEST_CASE("adam_step") {
    TrainConfig cfg;
    cfg.learning_rate = 0.01;
    cfg.weight_decay = 0.0;

    SUBCASE("first step with constant gradient moves by about lr") {
        ParamStore params;
        params.add("w", {3}, {1.0, 1.0, 1.0});
        AdamState state = init_adam_state(params);
        adam_step(params, {{0.5, -2.0, 1e-3}}, state, cfg);
        for (int k = 0; k < 3; ++k) {
            double delta = 1.0 - params.values(0)[k];
            double expected_sign = k == 1 ? -1.0 : 1.0;
            CHECK(delta * expected_sign > 0);
            CHECK(std::fabs(std::fabs(delta) - cfg.learning_rate) < 1e-4);
        }
    }
    SUBCASE("zero gradients leave parameters unchanged") {
        ParamStore params;
        params.add("w", {2}, {0.7, -0.3});
        AdamState state = init_adam_state(params);
        adam_step(params, {{0.0, 0.0}}, state, cfg);
        CHECK(params.values(0) == std::vector<double>{0.7, -0.3});
    }
    SUBCASE("decoupled weight decay with zero gradients scales parameters") {
        ParamStore params;
        params.add("w", {2}, {1.0, -2.0});
        AdamState state = init_adam_state(params);
        cfg.weight_decay = 1e-3;
        adam_step(params, {{0.0, 0.0}}, state, cfg);
        CHECK(params.values(0)[0] == doctest::Approx(1.0 * (1 - 0.01 * 1e-3)).epsilon(1e-15));
        CHECK(params.values(0)[1] == doctest::Approx(-2.0 * (1 - 0.01 * 1e-3)).epsilon(1e-15));
    }
}

TEST_CASE("evaluate_f1") {
    SUBCASE("perfect predictions") {
        auto [macro, micro] = evaluate_f1({10, 0, 0, 10, 10, 0}, 2, {0, 1, 0});
        CHECK(macro == 1.0);
        CHECK(micro == 1.0);
    }
    SUBCASE("hand confusion matrix") {
        // truth [1,1,0,0], pred [1,0,0,0]
        std::vector<double> logits = {0, 1, 1, 0, 1, 0, 1, 0};
        auto [macro, micro] = evaluate_f1(logits, 2, {1, 1, 0, 0});
        CHECK(micro == doctest::Approx(0.75));
        CHECK(macro == doctest::Approx((0.8 + 2.0 / 3.0) / 2).epsilon(1e-12));
    }
    SUBCASE("all-one-class predictions on balanced data") {
        std::vector<double> logits = {0, 1, 0, 1, 0, 1, 0, 1};
        auto [macro, micro] = evaluate_f1(logits, 2, {0, 0, 1, 1});
        CHECK(micro == doctest::Approx(0.5));
    }
    SUBCASE("argmax ties break to the lowest class") {
        auto [macro, micro] = evaluate_f1({1, 1}, 2, {0});
        CHECK(micro == 1.0);
        (void)macro;
    }
    SUBCASE("absent classes contribute zero to macro") {
        // class 2 never predicted nor true
        auto [macro, micro] = evaluate_f1({1, 0, 0, 0, 1, 0}, 3, {0, 1});
        CHECK(micro == 1.0);
        CHECK(macro == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    }
}

TEST_CASE("evaluate_auc") {
    CHECK(evaluate_auc({5, 6}, {1, 2}) == 1.0);
    CHECK(evaluate_auc({1, 1}, {1, 1}) == 0.5);
    CHECK(evaluate_auc({3, 1}, {2, 0}) == 0.75);

    SUBCASE("matches brute-force pair counting exactly") {
        Rng rng(77);
        for (int trial = 0; trial < 30; ++trial) {
            std::vector<double> pos(1 + uniform_index(rng, 50));
            std::vector<double> neg(1 + uniform_index(rng, 50));
            // quantized scores to force plenty of ties
            for (double& x : pos) x = static_cast<double>(uniform_index(rng, 8));
            for (double& x : neg) x = static_cast<double>(uniform_index(rng, 8));
            double brute = 0.0;
            for (double p : pos)
                for (double n : neg) brute += p > n ? 1.0 : p == n ? 0.5 : 0.0;
            brute /= static_cast<double>(pos.size() * neg.size());
            CHECK(evaluate_auc(pos, neg) == brute);
        }
    }
}

TEST_CASE("training loop on a small planted fixture") {
    PlantedNcDataset dataset = make_planted_nc_dataset(3, 60, 3);
    ContextStore store = store_for(dataset.graph);

    ModelConfig mcfg;
    mcfg.hidden_dim = 16;
    mcfg.metapath_length = 2;
    mcfg.num_layers = 2;
    mcfg.variant = Variant::MECCH;
    mcfg.task = Task::NodeClassification;
    mcfg.output_dim = 3;
    mcfg.seed = 4;

    TrainConfig tcfg;
    tcfg.learning_rate = 5e-3;
    tcfg.max_epochs = 30;
    tcfg.patience = 30;
    tcfg.seed = 5;

    SUBCASE("zero learning rate freezes parameters and the history") {
        TrainConfig frozen = tcfg;
        frozen.learning_rate = 0.0;
        frozen.max_epochs = 5;
        frozen.patience = 5;
        TrainResult result = train(dataset.graph, store, dataset.splits, mcfg, frozen);
        REQUIRE(result.history.size() == 5);
        for (const auto& rec : result.history) {
            CHECK(rec.train_loss == result.history[0].train_loss);
            CHECK(rec.valid_metric == result.history[0].valid_metric);
        }
        CHECK(result.best_params == init_params(dataset.graph, store, mcfg));
    }
    SUBCASE("equal seeds give bit-identical histories") {
        TrainResult a = train(dataset.graph, store, dataset.splits, mcfg, tcfg);
        TrainResult b = train(dataset.graph, store, dataset.splits, mcfg, tcfg);
        REQUIRE(a.history.size() == b.history.size());
        for (size_t i = 0; i < a.history.size(); ++i) {
            CHECK(a.history[i].train_loss == b.history[i].train_loss);
            CHECK(a.history[i].valid_metric == b.history[i].valid_metric);
        }
        CHECK(a.best_params == b.best_params);
    }
    SUBCASE("returned checkpoint has the best validation metric in history") {
        TrainResult result = train(dataset.graph, store, dataset.splits, mcfg, tcfg);
        double best = -1;
        for (const auto& rec : result.history) best = std::max(best, rec.valid_metric);
        CHECK(result.best_valid_metric == best);
    }
    SUBCASE("first-epoch loss equals an independently scripted forward") {
        TrainResult result = train(dataset.graph, store, dataset.splits, mcfg, tcfg);
        ParamStore params = init_params(dataset.graph, store, mcfg);
        Tape tape;
        BoundParams bound = bind_params(tape, params, false);
        Rng rng(tcfg.seed); // dropout is 0, so no draws are consumed either way
        ForwardResult out = forward(tape, dataset.graph, store, params, bound, mcfg, true, rng);
        Tensor loss = nc_loss(tape, out.h_final[0], dataset.splits.nc.train);
        CHECK(std::fabs(loss.scalar() - result.history[0].train_loss) < 1e-12);
    }
    SUBCASE("training loss decreases over the first 10 epochs on average") {
        TrainResult result = train(dataset.graph, store, dataset.splits, mcfg, tcfg);
        REQUIRE(result.history.size() >= 10);
        double first = 0, last = 0;
        for (int i = 0; i < 5; ++i) {
            first += result.history[i].train_loss;
            last += result.history[5 + i].train_loss;
        }
        CHECK(last <= first);
    }
    SUBCASE("dropout training still converges deterministically") {
        ModelConfig dropped = mcfg;
        dropped.dropout = 0.5;
        TrainResult a = train(dataset.graph, store, dataset.splits, dropped, tcfg);
        TrainResult b = train(dataset.graph, store, dataset.splits, dropped, tcfg);
        CHECK(a.history.back().train_loss == b.history.back().train_loss);
    }
}

TEST_CASE("early stopping respects patience") {
    PlantedNcDataset dataset = make_planted_nc_dataset(3, 45, 3);
    ContextStore store = store_for(dataset.graph);
    ModelConfig mcfg;
    mcfg.hidden_dim = 8;
    mcfg.task = Task::NodeClassification;
    mcfg.output_dim = 3;
    mcfg.seed = 6;
    TrainConfig tcfg;
    tcfg.learning_rate = 0.0; // metric never improves after epoch 1
    tcfg.max_epochs = 100;
    tcfg.patience = 7;
    tcfg.seed = 6;
    TrainResult result = train(dataset.graph, store, dataset.splits, mcfg, tcfg);
    CHECK(result.epochs_run == 8); // epoch 1 sets the best, then 7 stale epochs
    CHECK(result.best_epoch == 1);
}

TEST_CASE("lp training loop runs and improves on a small planted fixture") {
    PlantedLpDataset dataset = make_planted_lp_dataset(8, 4, 12, 0.4, 0.005);
    ContextStore store = store_for(dataset.graph);
    ModelConfig mcfg;
    mcfg.hidden_dim = 16;
    mcfg.task = Task::LinkPrediction;
    mcfg.output_dim = 16;
    mcfg.seed = 7;
    TrainConfig tcfg;
    tcfg.learning_rate = 1e-2;
    tcfg.max_epochs = 40;
    tcfg.patience = 40;
    tcfg.seed = 8;
    TrainResult result = train(dataset.graph, store, dataset.splits, mcfg, tcfg);
    EvalMetrics metrics = evaluate(dataset.graph, store, dataset.splits, mcfg, result.best_params,
                                   dataset.splits.lp.test, dataset.splits.lp.neg_test);
    CHECK(metrics.roc_auc > 0.7);
    CHECK(result.best_valid_metric > 0.7);

    // averaged loss decrease over the first 10 epochs
    REQUIRE(result.history.size() >= 10);
    double first = 0, last = 0;
    for (int i = 0; i < 5; ++i) {
        first += result.history[i].train_loss;
        last += result.history[5 + i].train_loss;
    }
    CHECK(last <= first);
}

TEST_CASE("tuning-grid corners all run") {
    // spot-check the documented search space: metapath length and layer
    // count up to the deep end, both dropout settings, weight decay on,
    // every variant
    PlantedNcDataset dataset = make_planted_nc_dataset(3, 40, 2);
    for (int K : {1, 3}) {
        ContextStore store = store_for(dataset.graph, K);
        ContextStore khop_store = build_khop_store(dataset.graph, K);
        for (int L : {1, 3}) {
            for (double dropout : {0.0, 0.5}) {
                for (Variant variant : {Variant::MECCH, Variant::KHop, Variant::Ace, Variant::Mmf}) {
                    CAPTURE(K);
                    CAPTURE(L);
                    CAPTURE(dropout);
                    CAPTURE(variant_name(variant));
                    ModelConfig mcfg;
                    mcfg.hidden_dim = 8;
                    mcfg.metapath_length = K;
                    mcfg.num_layers = L;
                    mcfg.dropout = dropout;
                    mcfg.variant = variant;
                    mcfg.task = Task::NodeClassification;
                    mcfg.output_dim = 2;
                    mcfg.seed = 11;
                    TrainConfig tcfg;
                    tcfg.learning_rate = 1e-2;
                    tcfg.weight_decay = 1e-3;
                    tcfg.max_epochs = 2;
                    tcfg.patience = 2;
                    tcfg.seed = 12;
                    TrainResult result =
                        train(dataset.graph, variant == Variant::KHop ? khop_store : store,
                              dataset.splits, mcfg, tcfg);
                    CHECK(result.epochs_run == 2);
                    CHECK(std::isfinite(result.history.back().train_loss));
                }
            }
        }
    }
}

TEST_CASE("split validation") {
    auto dir = temp_dir("train_splits");
    HeteroGraph g = load_g1(dir);
    SplitSpec splits;
    splits.task = Task::NodeClassification;
    splits.nc.target_type = 0;
    splits.nc.num_classes = 2;
    splits.nc.train = {{0, 0}};
    splits.nc.valid = {{1, 1}};
    splits.nc.test = {{1, 0}}; // overlaps valid
    CHECK_THROWS_AS(splits.validate(g), IntegrityError);

    splits.nc.test = {{5, 0}}; // out of range for type A
    CHECK_THROWS_AS(splits.validate(g), IntegrityError);

    splits.nc.test = {{0, 0}}; // duplicate of train
    CHECK_THROWS_AS(splits.validate(g), IntegrityError);
}
