#ifndef MECCH_MODEL_HPP
#define MECCH_MODEL_HPP

#include <string>
#include <vector>

#include "mecch/context.hpp"
#include "mecch/graph.hpp"
#include "mecch/tensor.hpp"

namespace mecch {

enum class Variant { MECCH, KHop, Ace, Mmf };
enum class Task { NodeClassification, LinkPrediction };

std::string variant_name(Variant v);
std::string task_name(Task t);
Variant parse_variant(const std::string& s);
Task parse_task(const std::string& s);

struct ModelConfig {
    int hidden_dim = 64;
    int metapath_length = 2; // K
    int num_layers = 2;      // L
    double dropout = 0.0;
    Variant variant = Variant::MECCH;
    Task task = Task::NodeClassification;
    int output_dim = 64; // class count for classification, hidden_dim for link prediction
    uint64_t seed = 1;

    void validate() const;
};

/// Flat named parameter store. Names and order are fixed by the graph schema,
/// the metapath store and the config, which makes optimizer state and
/// checkpoints line up across runs.
class ParamStore {
public:
    int add(std::string name, std::vector<int64_t> shape, std::vector<double> values);
    int find(const std::string& name) const; // -1 when absent

    int count() const { return static_cast<int>(names_.size()); }
    const std::string& name(int i) const { return names_[i]; }
    const std::vector<int64_t>& shape(int i) const { return shapes_[i]; }
    std::vector<double>& values(int i) { return values_[i]; }
    const std::vector<double>& values(int i) const { return values_[i]; }

    bool operator==(const ParamStore&) const = default;

private:
    std::vector<std::string> names_;
    std::vector<std::vector<int64_t>> shapes_;
    std::vector<std::vector<double>> values_;
};

/// Fresh parameters for the given graph/store/config: Glorot-uniform weights
/// and embeddings, zero biases, per-metapath fusion vectors at 1/|P_A| so
/// fusion starts as an unbiased mean.
ParamStore init_params(const HeteroGraph& g, const ContextStore& store, const ModelConfig& config);

/// Parameter leaves bound onto a tape for one forward/backward pass, indexed
/// like the ParamStore.
struct BoundParams {
    std::vector<Tensor> leaves;
};

BoundParams bind_params(Tape& tape, const ParamStore& params, bool requires_grad = true);

/// One full forward pass: feature preprocessing, then per layer per type the
/// context encoder (mean pooling, or attention for the Ace variant), metapath
/// fusion and projection. Hidden width is hidden_dim on all layers except the
/// last, which is output_dim with no activation.
struct ForwardResult {
    std::vector<Tensor> h_final; // per node type, [count(type) x output_dim]
};

ForwardResult forward(Tape& tape, const HeteroGraph& g, const ContextStore& store,
                      const ParamStore& params, const BoundParams& bound,
                      const ModelConfig& config, bool training, Rng& rng);

void save_checkpoint(const std::string& path, const ModelConfig& config, const ParamStore& params);

struct Checkpoint {
    ModelConfig config;
    ParamStore params;
};

/// Throws Error("checkpoint_format") on malformed files.
Checkpoint load_checkpoint(const std::string& path);

} // namespace mecch

#endif // MECCH_MODEL_HPP
