#include "mecch/config.hpp"

#include <filesystem>
#include <fstream>

#include "mecch/errors.hpp"

namespace mecch {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

double to_double(const std::string& key, const std::string& v) {
    try {
        size_t used = 0;
        double x = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError("key '" + key + "': expected a number, got '" + v + "'");
    }
}

int64_t to_int(const std::string& key, const std::string& v) {
    try {
        size_t used = 0;
        int64_t x = std::stoll(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError("key '" + key + "': expected an integer, got '" + v + "'");
    }
}

} // namespace

void RunConfig::validate() const {
    model.validate();
    train.validate();
    if (schema_path.empty() || nodes_path.empty() || edges_path.empty())
        throw ConfigError("[data] schema, nodes and edges are required");
    if (model.task == Task::NodeClassification) {
        if (target_type.empty() || labels_path.empty() || splits_path.empty())
            throw ConfigError("[data] target_type, labels and splits are required for node classification");
    } else {
        if (target_relation.empty() || lp_train_path.empty() || lp_valid_path.empty() ||
            lp_test_path.empty() || lp_neg_valid_path.empty() || lp_neg_test_path.empty())
            throw ConfigError("[data] target_relation and the five target/negative edge files are "
                              "required for link prediction");
    }
    if (metapath_cap < 1) throw ConfigError("metapath_cap must be >= 1");
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");

    RunConfig cfg;
    std::string section;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        if (line.front() == '[' && line.back() == ']') {
            section = line.substr(1, line.size() - 2);
            if (section != "data" && section != "model" && section != "train")
                throw ConfigError(path + ":" + std::to_string(line_no) + ": unknown section [" +
                                  section + "]");
            continue;
        }
        size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path + ":" + std::to_string(line_no) + ": expected key = value");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        std::string where = section + "." + key;

        if (section == "data") {
            if (key == "schema") cfg.schema_path = resolve_path(path, value);
            else if (key == "nodes") cfg.nodes_path = resolve_path(path, value);
            else if (key == "edges") cfg.edges_path = resolve_path(path, value);
            else if (key == "target_type") cfg.target_type = value;
            else if (key == "labels") cfg.labels_path = resolve_path(path, value);
            else if (key == "splits") cfg.splits_path = resolve_path(path, value);
            else if (key == "target_relation") cfg.target_relation = value;
            else if (key == "target_train") cfg.lp_train_path = resolve_path(path, value);
            else if (key == "target_valid") cfg.lp_valid_path = resolve_path(path, value);
            else if (key == "target_test") cfg.lp_test_path = resolve_path(path, value);
            else if (key == "negatives_valid") cfg.lp_neg_valid_path = resolve_path(path, value);
            else if (key == "negatives_test") cfg.lp_neg_test_path = resolve_path(path, value);
            else throw ConfigError(path + ":" + std::to_string(line_no) + ": unknown key '" + where + "'", "unknown_key");
        } else if (section == "model") {
            if (key == "task") cfg.model.task = parse_task(value);
            else if (key == "variant") cfg.model.variant = parse_variant(value);
            else if (key == "hidden_dim") cfg.model.hidden_dim = static_cast<int>(to_int(where, value));
            else if (key == "metapath_length") cfg.model.metapath_length = static_cast<int>(to_int(where, value));
            else if (key == "num_layers") cfg.model.num_layers = static_cast<int>(to_int(where, value));
            else if (key == "dropout") cfg.model.dropout = to_double(where, value);
            else if (key == "output_dim") { cfg.model.output_dim = static_cast<int>(to_int(where, value)); cfg.output_dim_set = true; }
            else if (key == "seed") cfg.model.seed = static_cast<uint64_t>(to_int(where, value));
            else if (key == "metapath_cap") cfg.metapath_cap = static_cast<int>(to_int(where, value));
            else throw ConfigError(path + ":" + std::to_string(line_no) + ": unknown key '" + where + "'", "unknown_key");
        } else if (section == "train") {
            if (key == "lr") cfg.train.learning_rate = to_double(where, value);
            else if (key == "weight_decay") cfg.train.weight_decay = to_double(where, value);
            else if (key == "max_epochs") cfg.train.max_epochs = static_cast<int>(to_int(where, value));
            else if (key == "patience") cfg.train.patience = static_cast<int>(to_int(where, value));
            else if (key == "negatives_per_positive") cfg.train.negatives_per_positive = static_cast<int>(to_int(where, value));
            else if (key == "seed") cfg.train.seed = static_cast<uint64_t>(to_int(where, value));
            else throw ConfigError(path + ":" + std::to_string(line_no) + ": unknown key '" + where + "'", "unknown_key");
        } else {
            throw ConfigError(path + ":" + std::to_string(line_no) + ": key outside any section");
        }
    }

    if (cfg.model.task == Task::LinkPrediction && !cfg.output_dim_set)
        cfg.model.output_dim = cfg.model.hidden_dim;
    cfg.validate();
    return cfg;
}

std::string resolve_path(const std::string& config_path, const std::string& value) {
    std::filesystem::path p(value);
    if (p.is_absolute()) return value;
    return (std::filesystem::path(config_path).parent_path() / p).string();
}

} // namespace mecch
