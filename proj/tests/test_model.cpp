#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "dense_oracle.hpp"
#include "fixtures.hpp"
#include "mecch/errors.hpp"
#include "mecch/model.hpp"
#include "mecch/train.hpp"

using namespace mecch;
using namespace mecch::testing;

namespace {

ContextStore g1_store(const HeteroGraph& g, int K = 2) {
    std::vector<std::vector<Metapath>> by_type(g.schema.num_node_types());
    for (NodeTypeId t = 0; t < g.schema.num_node_types(); ++t)
        by_type[t] = enumerate_metapaths(g.schema, t, K, 1000);
    return build_all_contexts(g, by_type);
}

ModelConfig small_config(Variant variant, Task task, int d = 5) {
    ModelConfig cfg;
    cfg.hidden_dim = d;
    cfg.metapath_length = 2;
    cfg.num_layers = 2;
    cfg.dropout = 0.0;
    cfg.variant = variant;
    cfg.task = task;
    cfg.output_dim = task == Task::NodeClassification ? 2 : d;
    cfg.seed = 12;
    return cfg;
}

std::vector<std::vector<double>> run_forward(const HeteroGraph& g, const ContextStore& store,
                                             const ParamStore& params, const ModelConfig& cfg) {
    Tape tape;
    BoundParams bound = bind_params(tape, params, false);
    Rng rng(0);
    ForwardResult out = forward(tape, g, store, params, bound, cfg, false, rng);
    std::vector<std::vector<double>> values;
    for (Tensor t : out.h_final) values.push_back(t.values());
    return values;
}

} // namespace

TEST_CASE("feature preprocessing") {
    auto dir = temp_dir("model_pre");
    HeteroGraph g = load_g1(dir);
    ContextStore store = g1_store(g);
    ModelConfig cfg = small_config(Variant::MECCH, Task::NodeClassification, 3);
    cfg.num_layers = 1;
    ParamStore params = init_params(g, store, cfg);

    SUBCASE("zero features give the bias row") {
        int wa = params.find("in/W/A");
        int ba = params.find("in/b/A");
        REQUIRE(wa >= 0);
        params.values(ba) = {0.25, -0.5, 1.0};
        auto& g2 = g;
        g2.features.per_type[0].data.assign(g2.features.per_type[0].data.size(), 0.0);
        Tape tape;
        BoundParams bound = bind_params(tape, params, false);
        Tensor x = tape.constant({2, 3}, g2.features.per_type[0].data);
        Tensor h0 = tape.linear(x, bound.leaves[wa], bound.leaves[ba]);
        CHECK(h0.values() == std::vector<double>{0.25, -0.5, 1.0, 0.25, -0.5, 1.0});
    }
    SUBCASE("identity projection passes features through") {
        int wa = params.find("in/W/A");
        int ba = params.find("in/b/A");
        params.values(wa) = {1, 0, 0, 0, 1, 0, 0, 0, 1};
        params.values(ba) = {0, 0, 0};
        Tape tape;
        BoundParams bound = bind_params(tape, params, false);
        Tensor x = tape.constant({2, 3}, g.features.per_type[0].data);
        Tensor h0 = tape.linear(x, bound.leaves[wa], bound.leaves[ba]);
        CHECK(h0.values() == g.features.per_type[0].data);
    }
    SUBCASE("featureless type uses its embedding table rows") {
        int ev = params.find("in/E/V");
        REQUIRE(ev >= 0);
        CHECK(params.shape(ev) == std::vector<int64_t>{1, 3});
    }
}

TEST_CASE("encode via segment mean matches the hand-computed G1 context mean") {
    auto dir = temp_dir("model_enc");
    HeteroGraph g = load_g1(dir);
    ContextStore store = g1_store(g);
    const int d = 3;
    ModelConfig cfg = small_config(Variant::MECCH, Task::NodeClassification, d);
    ParamStore params = init_params(g, store, cfg);

    // Distinct known rows for every node; the A-writes-P-writes_rev-A context
    // of a1 is {a1, a2, p1, p2}.
    std::vector<std::vector<double>> rows = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1},
                                             {2, 0, 0}, {0, 2, 0}, {0, 0, 2}};
    Tape tape;
    std::vector<double> flat;
    for (const auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
    Tensor h_global = tape.constant({6, d}, flat);

    const auto& entry = store.entries[store.by_type[0][0]];
    REQUIRE(entry.display == "A-writes-P-writes_rev-A");
    auto rows_view =
        std::make_shared<const std::vector<int32_t>>(entry.indices.begin(), entry.indices.end());
    auto offsets_view = std::make_shared<const std::vector<int64_t>>(entry.offsets);
    Tensor enc = tape.segment_mean(tape.gather_rows(h_global, rows_view), offsets_view);

    // mean of rows a1,a2,p1,p2 and of a1,a2,p2,p3 respectively
    std::vector<double> expected_a1 = {(1 + 0 + 0 + 2) / 4.0, (0 + 1 + 0 + 0) / 4.0,
                                       (0 + 0 + 1 + 0) / 4.0};
    for (int k = 0; k < d; ++k) CHECK(enc.values()[k] == doctest::Approx(expected_a1[k]).epsilon(1e-15));

    SUBCASE("identical rows collapse to that row") {
        Tensor same = tape.constant({6, d}, std::vector<double>(18, 0.5));
        Tensor enc2 = tape.segment_mean(tape.gather_rows(same, rows_view), offsets_view);
        for (double v : enc2.values()) CHECK(v == 0.5);
    }
}

TEST_CASE("attention encoder properties") {
    SUBCASE("two-member context with a 10-apart score gap") {
        Tape tape;
        auto offsets = std::make_shared<const std::vector<int64_t>>(std::vector<int64_t>{0, 2});
        Tensor values = tape.constant({2, 2}, {1, 0, 0, 1});
        Tensor logits = tape.constant({2}, {3.0, 13.0});
        Tensor out = tape.segment_softmax_sum(values, logits, offsets);
        const double alpha_small = 1.0 / (1.0 + std::exp(10.0));
        CHECK(out.values()[0] == doctest::Approx(alpha_small).epsilon(1e-9));
        CHECK(out.values()[1] == doctest::Approx(1.0 - alpha_small).epsilon(1e-9));
        CHECK(alpha_small == doctest::Approx(4.54e-5).epsilon(0.01));
    }
    SUBCASE("singleton context is the identity regardless of the query") {
        Tape tape;
        auto offsets = std::make_shared<const std::vector<int64_t>>(std::vector<int64_t>{0, 1});
        Tensor values = tape.constant({1, 3}, {7, 8, 9});
        Tensor logits = tape.constant({1}, {123.0});
        Tensor out = tape.segment_softmax_sum(values, logits, offsets);
        CHECK(out.values() == std::vector<double>{7, 8, 9});
    }
}

TEST_CASE("fuse behavior through forward") {
    auto dir = temp_dir("model_fuse");
    HeteroGraph g = load_g1(dir);
    ContextStore store = g1_store(g);

    SUBCASE("uniform fusion vectors make MECCH equal MMF bit for bit") {
        ModelConfig mecch = small_config(Variant::MECCH, Task::NodeClassification);
        ParamStore params = init_params(g, store, mecch); // a_P starts at 1/|P_A|
        ModelConfig mmf = mecch;
        mmf.variant = Variant::Mmf;
        auto out_mecch = run_forward(g, store, params, mecch);
        auto out_mmf = run_forward(g, store, params, mmf);
        CHECK(out_mecch == out_mmf);
    }
    SUBCASE("zero attention queries make ACE equal MECCH bit for bit") {
        ModelConfig ace = small_config(Variant::Ace, Task::NodeClassification);
        ParamStore params = init_params(g, store, ace);
        for (int i = 0; i < params.count(); ++i)
            if (params.name(i).find("/q/") != std::string::npos)
                params.values(i).assign(params.values(i).size(), 0.0);
        ModelConfig mecch = ace;
        mecch.variant = Variant::MECCH;
        auto out_ace = run_forward(g, store, params, ace);
        auto out_mecch = run_forward(g, store, params, mecch);
        CHECK(out_ace == out_mecch);
    }
}

TEST_CASE("forward matches the dense oracle to 1e-12 on G1 for all variants") {
    // plus an isolated author, which exercises the empty-context fallback
    // (the node pools only its own representation for every metapath)
    auto dir = temp_dir("model_oracle");
    write_g1(dir);
    std::ofstream nodes(dir + "/nodes.tsv", std::ios::app);
    nodes << "a3\tA\t0.2,0.4,0.8\n";
    nodes.close();
    Schema schema = load_schema(dir + "/schema.txt");
    HeteroGraph g = load_graph(schema, dir + "/nodes.tsv", dir + "/edges.tsv");
    ContextStore mc_store = g1_store(g);
    ContextStore khop_store = build_khop_store(g, 2);

    for (Variant variant : {Variant::MECCH, Variant::KHop, Variant::Ace, Variant::Mmf}) {
        CAPTURE(variant_name(variant));
        const ContextStore& store = variant == Variant::KHop ? khop_store : mc_store;
        ModelConfig cfg = small_config(variant, Task::NodeClassification);
        ParamStore params = init_params(g, store, cfg);
        auto fast = run_forward(g, store, params, cfg);
        for (NodeTypeId t = 0; t < g.schema.num_node_types(); ++t) {
            Matrix expected = dense_oracle_forward_type(g, store, params, cfg, t);
            REQUIRE(static_cast<int64_t>(expected.size()) == g.type_counts[t]);
            for (int32_t i = 0; i < g.type_counts[t]; ++i)
                for (int o = 0; o < cfg.output_dim; ++o)
                    CHECK(fast[t][static_cast<size_t>(i) * cfg.output_dim + o] ==
                          doctest::Approx(expected[i][o]).epsilon(1e-12));
        }
    }
}

TEST_CASE("permutation equivariance within a type") {
    auto dir = temp_dir("model_perm");
    HeteroGraph g = load_g1(dir);
    ContextStore store = g1_store(g);
    ModelConfig cfg = small_config(Variant::MECCH, Task::NodeClassification);
    ParamStore params = init_params(g, store, cfg);
    auto base = run_forward(g, store, params, cfg);

    // same fixture with the author rows swapped in nodes.tsv
    auto dir2 = temp_dir("model_perm2");
    write_g1(dir2);
    write_file(dir2 + "/nodes.tsv",
               "a2\tA\t0,1,-0.5\n"
               "a1\tA\t1,0,0.5\n"
               "p1\tP\t0.5,-0.5\n"
               "p2\tP\t1,1\n"
               "p3\tP\t-1,2\n"
               "v1\tV\t-\n");
    Schema schema = load_schema(dir2 + "/schema.txt");
    HeteroGraph g2 = load_graph(schema, dir2 + "/nodes.tsv", dir2 + "/edges.tsv");
    ContextStore store2 = g1_store(g2);
    auto permuted = run_forward(g2, store2, params, cfg);

    const int d = cfg.output_dim;
    for (const char* name : {"a1", "a2"}) {
        int32_t i1 = g.local_id(*g.find_external(name));
        int32_t i2 = g2.local_id(*g2.find_external(name));
        for (int o = 0; o < d; ++o)
            CHECK(base[0][static_cast<size_t>(i1) * d + o] ==
                  doctest::Approx(permuted[0][static_cast<size_t>(i2) * d + o]).epsilon(1e-12));
    }
}

TEST_CASE("locality: features outside the composed contexts cannot move the output") {
    // two disconnected components; perturbing one leaves the other unchanged
    auto dir = temp_dir("model_local");
    write_g1(dir);
    std::ofstream nodes(dir + "/nodes.tsv", std::ios::app);
    nodes << "a9\tA\t3,3,3\np9\tP\t5,5\nv9\tV\t-\n";
    nodes.close();
    std::ofstream edges(dir + "/edges.tsv", std::ios::app);
    edges << "a9\tp9\twrites\np9\ta9\twrites_rev\np9\tv9\tpublishes\nv9\tp9\tpublishes_rev\n";
    edges.close();
    Schema schema = load_schema(dir + "/schema.txt");
    HeteroGraph g = load_graph(schema, dir + "/nodes.tsv", dir + "/edges.tsv");
    ContextStore store = g1_store(g);
    ModelConfig cfg = small_config(Variant::MECCH, Task::NodeClassification);
    ParamStore params = init_params(g, store, cfg);
    auto base = run_forward(g, store, params, cfg);

    // perturb the detached paper's raw features
    int32_t p9 = g.local_id(*g.find_external("p9"));
    g.features.per_type[1].data[static_cast<size_t>(p9) * 2] += 10.0;
    auto moved = run_forward(g, store, params, cfg);

    const int d = cfg.output_dim;
    int32_t a1 = g.local_id(*g.find_external("a1"));
    int32_t a9 = g.local_id(*g.find_external("a9"));
    for (int o = 0; o < d; ++o) {
        CHECK(base[0][static_cast<size_t>(a1) * d + o] == moved[0][static_cast<size_t>(a1) * d + o]);
    }
    bool changed = false;
    for (int o = 0; o < d; ++o)
        changed = changed || base[0][static_cast<size_t>(a9) * d + o] !=
                                 moved[0][static_cast<size_t>(a9) * d + o];
    CHECK(changed);
}

TEST_CASE("end-to-end gradient check on G1, dropout off") {
    auto dir = temp_dir("model_grad");
    HeteroGraph g = load_g1(dir);
    ContextStore mc_store = g1_store(g);
    ContextStore khop_store = build_khop_store(g, 2);
    NodeId a1 = *g.find_external("a1");
    NodeId a2 = *g.find_external("a2");
    (void)a1;
    (void)a2;

    for (Variant variant : {Variant::MECCH, Variant::Ace}) {
        for (Task task : {Task::NodeClassification, Task::LinkPrediction}) {
            CAPTURE(variant_name(variant));
            CAPTURE(task_name(task));
            const ContextStore& store = variant == Variant::KHop ? khop_store : mc_store;
            ModelConfig cfg = small_config(variant, task, 4);
            ParamStore params = init_params(g, store, cfg);

            std::vector<std::vector<int64_t>> shapes;
            std::vector<std::vector<double>> values;
            for (int i = 0; i < params.count(); ++i) {
                shapes.push_back(params.shape(i));
                values.push_back(params.values(i));
            }
            auto program = [&](Tape& tape, const std::vector<Tensor>& leaves) {
                BoundParams bound{leaves};
                Rng rng(0);
                ForwardResult out = forward(tape, g, store, params, bound, cfg, false, rng);
                if (task == Task::NodeClassification)
                    return nc_loss(tape, out.h_final[0], {{0, 0}, {1, 1}});
                return lp_loss(tape, out.h_final[0], out.h_final[1],
                               leaves[params.find("lp/w")], {{0, 0}, {1, 2}}, {{0, 2}, {1, 0}});
            };
            CHECK(grad_check(program, shapes, values, 40) < 1e-4);
        }
    }
}

TEST_CASE("checkpoint round trip and corruption") {
    auto dir = temp_dir("model_ckpt");
    HeteroGraph g = load_g1(dir);
    ContextStore store = g1_store(g);
    ModelConfig cfg = small_config(Variant::MECCH, Task::LinkPrediction);
    ParamStore params = init_params(g, store, cfg);

    const std::string path = dir + "/ckpt.bin";
    save_checkpoint(path, cfg, params);
    Checkpoint loaded = load_checkpoint(path);
    CHECK(loaded.config.task == cfg.task);
    CHECK(loaded.config.variant == cfg.variant);
    CHECK(loaded.config.hidden_dim == cfg.hidden_dim);
    CHECK(loaded.params == params);

    SUBCASE("corrupted magic") {
        write_file(path, "NOTACKPTxxxxxxxxxxxx");
        try {
            (void)load_checkpoint(path);
            FAIL("expected checkpoint_format");
        } catch (const Error& e) {
            CHECK(e.category() == "checkpoint_format");
            CHECK(e.exit_code() == 2);
        }
    }
    SUBCASE("truncated file") {
        std::ifstream in(path, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(in)), {});
        write_file(path, bytes.substr(0, bytes.size() / 2));
        CHECK_THROWS_AS((void)load_checkpoint(path), Error);
    }
}

TEST_CASE("every metapath owns exactly one fusion vector per layer") {
    auto dir = temp_dir("model_params");
    HeteroGraph g = load_g1(dir);
    ContextStore store = g1_store(g);
    ModelConfig cfg = small_config(Variant::MECCH, Task::NodeClassification);
    ParamStore params = init_params(g, store, cfg);

    int a_count = 0;
    for (int i = 0; i < params.count(); ++i)
        if (params.name(i).find("/a/") != std::string::npos) ++a_count;
    CHECK(a_count == static_cast<int>(store.entries.size()) * cfg.num_layers);

    // no orphans for MMF
    ModelConfig mmf = cfg;
    mmf.variant = Variant::Mmf;
    ParamStore mmf_params = init_params(g, store, mmf);
    for (int i = 0; i < mmf_params.count(); ++i)
        CHECK(mmf_params.name(i).find("/a/") == std::string::npos);
}
