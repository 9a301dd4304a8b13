#ifndef MECCH_CLI_HPP
#define MECCH_CLI_HPP

#include <string>
#include <vector>

#include "mecch/config.hpp"

namespace mecch {

struct CliOptions {
    std::string config_path;
    std::string checkpoint_path;
    std::string out_path;       // train: artifact directory; others: output file
    std::string node_type;      // export-embeddings
    std::vector<int> bench_n = {2, 3};
    std::vector<int> bench_k = {1, 2, 3};
    bool seed_override = false;
    uint64_t seed = 0;
    int threads = 0; // 0 = hardware concurrency
};

/// Trains per the config and writes checkpoint.bin, history.csv and
/// metrics.json into the output directory. Honors MECCH_CACHE_DIR for
/// context-store caching.
int cmd_train(const CliOptions& options);

/// Evaluation-mode test metrics from an existing checkpoint; no parameter
/// mutation. Writes metrics JSON to out_path or stdout.
int cmd_eval(const CliOptions& options);

int cmd_bench(const CliOptions& options);

/// Final-layer embeddings of one node type as <ext_id>\t<type>\t<v1,...,vd>.
int cmd_export_embeddings(const CliOptions& options);

/// Dispatches one command, mapping thrown errors to the documented exit codes
/// and a single machine-parseable stderr line `error[<category>]: <message>`.
int run_cli(int argc, char** argv);

} // namespace mecch

#endif // MECCH_CLI_HPP
