// Generates the planted synthetic datasets in the TSV formats the main CLI
// loads, plus a ready-to-run run.cfg; handy for trying out train/eval
// without external data.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "mecch/bench.hpp"
#include "mecch/errors.hpp"

namespace {

void write_config(const std::string& dir, bool link_prediction) {
    std::ofstream cfg(dir + "/run.cfg");
    cfg << "[data]\n"
           "schema = schema.txt\n"
           "nodes = nodes.tsv\n"
           "edges = edges.tsv\n";
    if (link_prediction)
        cfg << "target_relation = likes\n"
               "target_train = target_train.tsv\n"
               "target_valid = target_valid.tsv\n"
               "target_test = target_test.tsv\n"
               "negatives_valid = negatives_valid.tsv\n"
               "negatives_test = negatives_test.tsv\n";
    else
        cfg << "target_type = A\n"
               "labels = labels.tsv\n"
               "splits = splits.tsv\n";
    cfg << "\n[model]\n"
        << "task = " << (link_prediction ? "link_prediction" : "node_classification")
        << "\nvariant = mecch\n"
           "hidden_dim = 64\n"
           "metapath_length = 2\n"
           "num_layers = 2\n"
           "dropout = 0\n"
           "seed = 1\n"
           "\n[train]\n"
           "lr = 5e-3\n"
           "weight_decay = 0\n"
           "max_epochs = 500\n"
           "patience = 50\n"
           "seed = 2\n";
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"planted dataset generator"};
    app.require_subcommand(1);

    uint64_t seed = 1;
    std::string out_dir = "data";
    int nodes_per_type = 300;
    int num_classes = 3;
    int block_count = 4;
    int nodes_per_block = 30;

    CLI::App* nc = app.add_subcommand("nc", "planted node-classification dataset");
    nc->add_option("--seed", seed);
    nc->add_option("--out", out_dir);
    nc->add_option("--nodes-per-type", nodes_per_type);
    nc->add_option("--classes", num_classes);

    CLI::App* lp = app.add_subcommand("lp", "planted link-prediction dataset");
    lp->add_option("--seed", seed);
    lp->add_option("--out", out_dir);
    lp->add_option("--blocks", block_count);
    lp->add_option("--nodes-per-block", nodes_per_block);

    CLI11_PARSE(app, argc, argv);

    try {
        if (nc->parsed()) {
            auto dataset = mecch::make_planted_nc_dataset(seed, nodes_per_type, num_classes);
            mecch::write_nc_dataset_files(dataset, out_dir);
            write_config(out_dir, false);
            std::cout << "wrote node-classification fixture and run.cfg to " << out_dir << "\n";
        } else {
            auto dataset = mecch::make_planted_lp_dataset(seed, block_count, nodes_per_block);
            mecch::write_lp_dataset_files(dataset, out_dir);
            write_config(out_dir, true);
            std::cout << "wrote link-prediction fixture and run.cfg to " << out_dir << "\n";
        }
    } catch (const mecch::Error& e) {
        std::cerr << "error[" << e.category() << "]: " << e.what() << "\n";
        return e.exit_code();
    }
    return 0;
}
