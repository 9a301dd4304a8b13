#ifndef MECCH_CONFIG_HPP
#define MECCH_CONFIG_HPP

#include <optional>
#include <string>

#include "mecch/model.hpp"
#include "mecch/train.hpp"

namespace mecch {

/// Flat `key = value` run configuration with [data] [model] [train] sections.
/// Unknown keys are hard errors; silent typo tolerance is worse than a
/// failing run.
struct RunConfig {
    // [data]
    std::string schema_path;
    std::string nodes_path;
    std::string edges_path;
    std::string target_type;     // node classification
    std::string labels_path;
    std::string splits_path;
    std::string target_relation; // link prediction
    std::string lp_train_path, lp_valid_path, lp_test_path;
    std::string lp_neg_valid_path, lp_neg_test_path;

    ModelConfig model;
    TrainConfig train;
    int metapath_cap = 64;
    bool output_dim_set = false; // node classification derives it from the labels

    void validate() const;
};

RunConfig load_run_config(const std::string& path);

/// Paths in the config are resolved relative to the config file's directory.
std::string resolve_path(const std::string& config_path, const std::string& value);

} // namespace mecch

#endif // MECCH_CONFIG_HPP
