#include "mecch/cli.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>
#include <unordered_map>

#include <CLI11.hpp>
#include <json.hpp>

#include "mecch/bench.hpp"
#include "mecch/context.hpp"
#include "mecch/errors.hpp"

namespace mecch {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string fmt_double(double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

int32_t require_local(const HeteroGraph& g, const std::string& ext, NodeTypeId expected_type,
                      const std::string& where) {
    auto id = g.find_external(ext);
    if (!id) throw IntegrityError(where + ": unknown node id '" + ext + "'");
    if (g.type_of(*id) != expected_type)
        throw IntegrityError(where + ": node '" + ext + "' has type '" +
                             g.schema.node_type_names[g.type_of(*id)] + "', expected '" +
                             g.schema.node_type_names[expected_type] + "'");
    return g.local_id(*id);
}

SplitSpec load_nc_splits(const HeteroGraph& g, const RunConfig& cfg) {
    auto t = g.schema.find_node_type(cfg.target_type);
    if (!t) throw ConfigError("target_type '" + cfg.target_type + "' is not in the schema");

    std::unordered_map<std::string, int32_t> labels;
    {
        std::ifstream in(cfg.labels_path);
        if (!in) throw ParseError("cannot open labels file '" + cfg.labels_path + "'");
        std::string line;
        int line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty() || line[0] == '#') continue;
            size_t tab = line.find('\t');
            if (tab == std::string::npos)
                throw ParseError(cfg.labels_path + ":" + std::to_string(line_no) +
                                 ": expected <node>\\t<class>");
            labels[line.substr(0, tab)] = static_cast<int32_t>(std::stol(line.substr(tab + 1)));
        }
    }

    SplitSpec splits;
    splits.task = Task::NodeClassification;
    splits.nc.target_type = *t;
    int32_t max_label = 0;
    {
        std::ifstream in(cfg.splits_path);
        if (!in) throw ParseError("cannot open splits file '" + cfg.splits_path + "'");
        std::string line;
        int line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty() || line[0] == '#') continue;
            size_t tab = line.find('\t');
            if (tab == std::string::npos)
                throw ParseError(cfg.splits_path + ":" + std::to_string(line_no) +
                                 ": expected <node>\\t{train|valid|test}");
            std::string ext = line.substr(0, tab);
            std::string which = line.substr(tab + 1);
            auto label = labels.find(ext);
            if (label == labels.end())
                throw IntegrityError(cfg.splits_path + ":" + std::to_string(line_no) + ": node '" +
                                     ext + "' has no label");
            int32_t local = require_local(g, ext, *t, cfg.splits_path);
            max_label = std::max(max_label, label->second);
            if (which == "train") splits.nc.train.emplace_back(local, label->second);
            else if (which == "valid") splits.nc.valid.emplace_back(local, label->second);
            else if (which == "test") splits.nc.test.emplace_back(local, label->second);
            else
                throw ParseError(cfg.splits_path + ":" + std::to_string(line_no) +
                                 ": unknown split '" + which + "'");
        }
    }
    splits.nc.num_classes = max_label + 1;
    return splits;
}

std::vector<std::pair<int32_t, int32_t>> load_edge_pairs(const HeteroGraph& g,
                                                         const std::string& path,
                                                         NodeTypeId src_type, NodeTypeId dst_type) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open edge list '" + path + "'");
    std::vector<std::pair<int32_t, int32_t>> out;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        size_t tab = line.find('\t');
        if (tab == std::string::npos)
            throw ParseError(path + ":" + std::to_string(line_no) + ": expected <src>\\t<dst>");
        out.emplace_back(require_local(g, line.substr(0, tab), src_type, path),
                         require_local(g, line.substr(tab + 1), dst_type, path));
    }
    return out;
}

SplitSpec load_lp_splits(const HeteroGraph& g, const RunConfig& cfg) {
    auto r = g.schema.find_edge_type(cfg.target_relation);
    if (!r) throw ConfigError("target_relation '" + cfg.target_relation + "' is not in the schema");
    const EdgeType& et = g.schema.edge_types[*r];
    SplitSpec splits;
    splits.task = Task::LinkPrediction;
    splits.lp.target_relation = *r;
    splits.lp.train = load_edge_pairs(g, cfg.lp_train_path, et.src, et.dst);
    splits.lp.valid = load_edge_pairs(g, cfg.lp_valid_path, et.src, et.dst);
    splits.lp.test = load_edge_pairs(g, cfg.lp_test_path, et.src, et.dst);
    splits.lp.neg_valid = load_edge_pairs(g, cfg.lp_neg_valid_path, et.src, et.dst);
    splits.lp.neg_test = load_edge_pairs(g, cfg.lp_neg_test_path, et.src, et.dst);
    return splits;
}

struct LoadedRun {
    HeteroGraph graph;
    ContextStore store;
    SplitSpec splits;
    RunConfig config;
};

LoadedRun load_run(const CliOptions& options, bool need_splits) {
    RunConfig cfg = load_run_config(options.config_path);
    if (options.seed_override) {
        cfg.model.seed = options.seed;
        cfg.train.seed = options.seed + 1;
    }

    LoadedRun run;
    Schema schema = load_schema(cfg.schema_path);
    run.graph = load_graph(schema, cfg.nodes_path, cfg.edges_path);
    if (run.graph.duplicate_edges_dropped > 0)
        std::cerr << "note: dropped " << run.graph.duplicate_edges_dropped
                  << " duplicate edge rows\n";

    const int threads =
        options.threads > 0 ? options.threads
                            : std::max(1u, std::thread::hardware_concurrency());
    ContextBuildOptions build_options;
    build_options.threads = threads;

    const bool khop = cfg.model.variant == Variant::KHop;
    const char* cache_dir = std::getenv("MECCH_CACHE_DIR");
    std::string cache_path;
    if (cache_dir && *cache_dir) {
        char name[128];
        std::snprintf(name, sizeof name, "mecch_ctx_%016llx_k%d_%s.bin",
                      static_cast<unsigned long long>(run.graph.content_hash()),
                      cfg.model.metapath_length, khop ? "khop" : "mc");
        cache_path = (fs::path(cache_dir) / name).string();
        auto cached = load_context_cache(cache_path, run.graph.content_hash(),
                                         cfg.model.metapath_length, khop);
        if (cached) run.store = std::move(*cached);
    }
    if (run.store.entries.empty()) {
        if (khop) {
            run.store = build_khop_store(run.graph, cfg.model.metapath_length, build_options);
        } else {
            std::vector<std::vector<Metapath>> by_type(run.graph.schema.num_node_types());
            for (NodeTypeId t = 0; t < run.graph.schema.num_node_types(); ++t)
                by_type[t] = enumerate_metapaths(run.graph.schema, t, cfg.model.metapath_length,
                                                 cfg.metapath_cap);
            run.store = build_all_contexts(run.graph, by_type, build_options);
        }
        if (!cache_path.empty()) {
            fs::create_directories(cache_dir);
            save_context_cache(run.store, cache_path);
        }
    }

    if (need_splits) {
        run.splits = cfg.model.task == Task::NodeClassification ? load_nc_splits(run.graph, cfg)
                                                                : load_lp_splits(run.graph, cfg);
        run.splits.validate(run.graph);
        if (cfg.model.task == Task::NodeClassification) {
            if (cfg.output_dim_set && cfg.model.output_dim != run.splits.nc.num_classes)
                throw ConfigError("output_dim disagrees with the number of classes in the labels");
            cfg.model.output_dim = run.splits.nc.num_classes;
        }
    }
    run.config = std::move(cfg);
    return run;
}

json metapath_lists(const HeteroGraph& g, const ContextStore& store) {
    json lists = json::object();
    for (NodeTypeId t = 0; t < g.schema.num_node_types(); ++t) {
        json arr = json::array();
        for (int e : store.by_type[t]) arr.push_back(store.entries[e].display);
        lists[g.schema.node_type_names[t]] = arr;
    }
    return lists;
}

json base_summary(const LoadedRun& run) {
    json summary;
    summary["task"] = task_name(run.config.model.task);
    summary["variant"] = variant_name(run.config.model.variant);
    summary["hidden_dim"] = run.config.model.hidden_dim;
    summary["metapath_length"] = run.config.model.metapath_length;
    summary["num_layers"] = run.config.model.num_layers;
    summary["dropout"] = run.config.model.dropout;
    summary["seed"] = run.config.model.seed;
    summary["train_seed"] = run.config.train.seed;
    summary["metapaths"] = metapath_lists(run.graph, run.store);
    summary["peak_context_bytes"] = run.store.total_bytes();
    return summary;
}

void add_test_metrics(json& summary, Task task, const EvalMetrics& metrics) {
    if (task == Task::NodeClassification) {
        summary["test_macro_f1"] = metrics.macro_f1;
        summary["test_micro_f1"] = metrics.micro_f1;
    } else {
        summary["test_roc_auc"] = metrics.roc_auc;
    }
}

void write_json(const json& j, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot write '" + path + "'");
    out << j.dump(2) << "\n";
}

void check_checkpoint_compatible(const ModelConfig& from_file, const ModelConfig& from_ckpt) {
    if (from_ckpt.task != from_file.task)
        throw Error(2, "task_mismatch",
                    "checkpoint was trained for " + task_name(from_ckpt.task) +
                        ", config requests " + task_name(from_file.task));
    if (from_ckpt.variant != from_file.variant || from_ckpt.hidden_dim != from_file.hidden_dim ||
        from_ckpt.metapath_length != from_file.metapath_length ||
        from_ckpt.num_layers != from_file.num_layers)
        throw Error(2, "checkpoint_mismatch",
                    "checkpoint architecture does not match the config");
}

void check_params_match(const ParamStore& expected, const ParamStore& actual) {
    if (expected.count() != actual.count())
        throw Error(2, "checkpoint_mismatch", "checkpoint parameter set does not match this graph");
    for (int i = 0; i < expected.count(); ++i)
        if (expected.name(i) != actual.name(i) || expected.shape(i) != actual.shape(i))
            throw Error(2, "checkpoint_mismatch",
                        "checkpoint parameter '" + actual.name(i) + "' does not match this graph");
}

} // namespace

int cmd_train(const CliOptions& options) {
    const auto t0 = std::chrono::steady_clock::now();
    LoadedRun run = load_run(options, true);

    TrainResult result = train(run.graph, run.store, run.splits, run.config.model, run.config.train);
    EvalMetrics metrics =
        run.config.model.task == Task::NodeClassification
            ? evaluate(run.graph, run.store, run.splits, run.config.model, result.best_params,
                       run.splits.nc.test)
            : evaluate(run.graph, run.store, run.splits, run.config.model, result.best_params,
                       run.splits.lp.test, run.splits.lp.neg_test);
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    const fs::path out_dir = options.out_path.empty() ? fs::path(".") : fs::path(options.out_path);
    fs::create_directories(out_dir);
    save_checkpoint((out_dir / "checkpoint.bin").string(), run.config.model, result.best_params);
    {
        std::ofstream hist(out_dir / "history.csv");
        if (!hist) throw ParseError("cannot write history.csv");
        hist << "epoch,train_loss,valid_metric,seconds\n";
        for (const auto& rec : result.history)
            hist << rec.epoch << "," << fmt_double(rec.train_loss) << ","
                 << fmt_double(rec.valid_metric) << "," << fmt_double(rec.seconds) << "\n";
    }

    json summary = base_summary(run);
    summary["epochs_run"] = result.epochs_run;
    summary["best_epoch"] = result.best_epoch;
    summary["best_valid_metric"] = result.best_valid_metric;
    summary["seconds"] = seconds;
    add_test_metrics(summary, run.config.model.task, metrics);
    write_json(summary, (out_dir / "metrics.json").string());

    std::cout << "trained " << result.epochs_run << " epochs (best " << result.best_epoch << "), ";
    if (run.config.model.task == Task::NodeClassification)
        std::cout << "test macro-F1 " << metrics.macro_f1 << ", micro-F1 " << metrics.micro_f1;
    else
        std::cout << "test ROC-AUC " << metrics.roc_auc;
    std::cout << ", artifacts in " << out_dir.string() << "\n";
    return 0;
}

int cmd_eval(const CliOptions& options) {
    LoadedRun run = load_run(options, true);
    Checkpoint ckpt = load_checkpoint(options.checkpoint_path);
    check_checkpoint_compatible(run.config.model, ckpt.config);
    if (ckpt.config.task == Task::NodeClassification &&
        ckpt.config.output_dim != run.splits.nc.num_classes)
        throw Error(2, "checkpoint_mismatch",
                    "checkpoint class count does not match the labels");
    check_params_match(init_params(run.graph, run.store, ckpt.config), ckpt.params);

    EvalMetrics metrics =
        run.config.model.task == Task::NodeClassification
            ? evaluate(run.graph, run.store, run.splits, ckpt.config, ckpt.params,
                       run.splits.nc.test)
            : evaluate(run.graph, run.store, run.splits, ckpt.config, ckpt.params,
                       run.splits.lp.test, run.splits.lp.neg_test);

    json summary = base_summary(run);
    add_test_metrics(summary, run.config.model.task, metrics);
    if (options.out_path.empty())
        std::cout << summary.dump(2) << "\n";
    else
        write_json(summary, options.out_path);
    return 0;
}

int cmd_bench(const CliOptions& options) {
    ComplexityReport report = verify_complexity(options.bench_n, options.bench_k);
    if (!options.out_path.empty()) write_complexity_csv(report, options.out_path);
    for (const auto& r : report.rows)
        std::printf("n=%d K=%d  MN=%lld MC=%lld MI=%lld  formulas %lld/%lld/%lld  %s\n", r.n, r.K,
                    static_cast<long long>(r.count_mn), static_cast<long long>(r.count_mc),
                    static_cast<long long>(r.count_mi), static_cast<long long>(r.formula_mn),
                    static_cast<long long>(r.formula_mc), static_cast<long long>(r.formula_mi),
                    r.pass ? "pass" : "FAIL");
    if (!report.all_pass) {
        std::cerr << "error[bench_mismatch]: aggregation counts deviate from the closed forms\n";
        return 3;
    }
    return 0;
}

int cmd_export_embeddings(const CliOptions& options) {
    LoadedRun run = load_run(options, true);
    Checkpoint ckpt = load_checkpoint(options.checkpoint_path);
    check_checkpoint_compatible(run.config.model, ckpt.config);
    if (ckpt.config.task == Task::NodeClassification &&
        ckpt.config.output_dim != run.splits.nc.num_classes)
        throw Error(2, "checkpoint_mismatch",
                    "checkpoint class count does not match the labels");
    check_params_match(init_params(run.graph, run.store, ckpt.config), ckpt.params);

    std::string type_name = options.node_type.empty() ? run.config.target_type : options.node_type;
    if (type_name.empty() && run.config.model.task == Task::LinkPrediction)
        type_name = run.graph.schema
                        .node_type_names[run.graph.schema
                                             .edge_types[run.splits.lp.target_relation]
                                             .src];
    auto t = run.graph.schema.find_node_type(type_name);
    if (!t) throw ConfigError("unknown node type name '" + type_name + "'", "unknown_node_type");

    Tape tape;
    BoundParams bound = bind_params(tape, ckpt.params, false);
    Rng rng(0);
    ForwardResult fwd =
        forward(tape, run.graph, run.store, ckpt.params, bound, ckpt.config, false, rng);
    const auto& values = fwd.h_final[*t].values();
    const int d = ckpt.config.output_dim;

    std::ofstream out(options.out_path);
    if (!out) throw ParseError("cannot write '" + options.out_path + "'");
    for (int32_t i = 0; i < run.graph.type_counts[*t]; ++i) {
        out << run.graph.ext_ids[run.graph.global_id(*t, i)] << "\t" << type_name << "\t";
        for (int k = 0; k < d; ++k)
            out << (k ? "," : "") << fmt_double(values[static_cast<size_t>(i) * d + k]);
        out << "\n";
    }
    return 0;
}

int run_cli(int argc, char** argv) {
    CLI::App app{"MECCH heterogeneous-graph learning engine"};
    app.require_subcommand(1);

    CliOptions options;
    std::string n_list = "2,3", k_list = "1,2,3";

    auto add_common = [&](CLI::App* cmd, bool need_config) {
        auto* c = cmd->add_option("--config", options.config_path, "run configuration file");
        if (need_config) c->required();
        cmd->add_option("--seed", options.seed, "override the config seeds")
            ->each([&](const std::string&) { options.seed_override = true; });
        cmd->add_option("--threads", options.threads, "worker cap for context construction");
        cmd->add_option("--out", options.out_path, "output path");
    };

    CLI::App* train_cmd = app.add_subcommand("train", "train a model per the config");
    add_common(train_cmd, true);

    CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
    add_common(eval_cmd, true);
    eval_cmd->add_option("--checkpoint", options.checkpoint_path, "model checkpoint")->required();

    CLI::App* bench_cmd =
        app.add_subcommand("bench", "verify aggregation-count formulas on typed trees");
    bench_cmd->add_option("--n", n_list, "comma-separated branching factors");
    bench_cmd->add_option("--K", k_list, "comma-separated metapath lengths");
    bench_cmd->add_option("--out", options.out_path, "CSV report path");

    CLI::App* export_cmd =
        app.add_subcommand("export-embeddings", "write final embeddings of one node type as TSV");
    add_common(export_cmd, true);
    export_cmd->add_option("--checkpoint", options.checkpoint_path, "model checkpoint")->required();
    export_cmd->add_option("--node-type", options.node_type, "node type to export");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e); // --help
        std::cerr << "error[usage]: " << e.what() << "\n";
        return 1;
    }

    auto parse_int_list = [](const std::string& s) {
        std::vector<int> out;
        std::stringstream ss(s);
        std::string item;
        while (std::getline(ss, item, ','))
            if (!item.empty()) out.push_back(std::stoi(item));
        if (out.empty()) throw ConfigError("empty integer list", "usage");
        return out;
    };

    try {
        if (train_cmd->parsed()) return cmd_train(options);
        if (eval_cmd->parsed()) return cmd_eval(options);
        if (bench_cmd->parsed()) {
            options.bench_n = parse_int_list(n_list);
            options.bench_k = parse_int_list(k_list);
            if (options.out_path.empty()) options.out_path = "complexity_report.csv";
            return cmd_bench(options);
        }
        if (export_cmd->parsed()) {
            if (options.out_path.empty())
                throw ConfigError("export-embeddings requires --out", "usage");
            return cmd_export_embeddings(options);
        }
    } catch (const Error& e) {
        std::cerr << "error[" << e.category() << "]: " << e.what() << "\n";
        return e.exit_code();
    } catch (const std::exception& e) {
        std::cerr << "error[internal]: " << e.what() << "\n";
        return 2;
    }
    return 1;
}

} // namespace mecch
