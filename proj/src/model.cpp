#include "mecch/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "mecch/errors.hpp"

namespace mecch {

std::string variant_name(Variant v) {
    switch (v) {
    case Variant::MECCH: return "mecch";
    case Variant::KHop: return "khop";
    case Variant::Ace: return "ace";
    case Variant::Mmf: return "mmf";
    }
    return "?";
}

std::string task_name(Task t) {
    return t == Task::NodeClassification ? "node_classification" : "link_prediction";
}

Variant parse_variant(const std::string& s) {
    if (s == "mecch") return Variant::MECCH;
    if (s == "khop") return Variant::KHop;
    if (s == "ace") return Variant::Ace;
    if (s == "mmf") return Variant::Mmf;
    throw ConfigError("unknown variant '" + s + "' (expected mecch|khop|ace|mmf)");
}

Task parse_task(const std::string& s) {
    if (s == "node_classification") return Task::NodeClassification;
    if (s == "link_prediction") return Task::LinkPrediction;
    throw ConfigError("unknown task '" + s + "' (expected node_classification|link_prediction)");
}

void ModelConfig::validate() const {
    if (hidden_dim <= 0) throw ConfigError("hidden_dim must be positive");
    if (metapath_length < 1) throw ConfigError("metapath_length must be >= 1");
    if (num_layers < 1) throw ConfigError("num_layers must be >= 1");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0, 1)");
    if (output_dim <= 0) throw ConfigError("output_dim must be positive");
}

int ParamStore::add(std::string name, std::vector<int64_t> shape, std::vector<double> values) {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    if (n != static_cast<int64_t>(values.size()))
        throw ContractError("param '" + name + "': data does not match shape");
    names_.push_back(std::move(name));
    shapes_.push_back(std::move(shape));
    values_.push_back(std::move(values));
    return count() - 1;
}

int ParamStore::find(const std::string& name) const {
    for (int i = 0; i < count(); ++i)
        if (names_[i] == name) return i;
    return -1;
}

namespace {

std::vector<double> glorot_uniform(int64_t fan_out, int64_t fan_in, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::vector<double> out(static_cast<size_t>(fan_out) * fan_in);
    for (double& x : out) x = (2.0 * uniform_real(rng) - 1.0) * limit;
    return out;
}

} // namespace

ParamStore init_params(const HeteroGraph& g, const ContextStore& store, const ModelConfig& config) {
    config.validate();
    Rng rng(config.seed);
    ParamStore params;
    const int T = g.schema.num_node_types();
    const int d = config.hidden_dim;

    for (NodeTypeId t = 0; t < T; ++t) {
        const std::string& tn = g.schema.node_type_names[t];
        const auto& tf = g.features.per_type[t];
        if (tf.featureless) {
            params.add("in/E/" + tn, {g.type_counts[t], d},
                       glorot_uniform(g.type_counts[t], d, rng));
        } else {
            params.add("in/W/" + tn, {d, tf.dim}, glorot_uniform(d, tf.dim, rng));
            params.add("in/b/" + tn, {d}, std::vector<double>(d, 0.0));
        }
    }

    for (int l = 1; l <= config.num_layers; ++l) {
        const int d_out = l == config.num_layers ? config.output_dim : d;
        const std::string lp = "l" + std::to_string(l) + "/";
        for (NodeTypeId t = 0; t < T; ++t) {
            const std::string& tn = g.schema.node_type_names[t];
            const auto& entry_ids = store.by_type[t];
            if (config.variant != Variant::Mmf) {
                const double uniform = 1.0 / static_cast<double>(entry_ids.size());
                for (int e : entry_ids)
                    params.add(lp + "a/" + store.entries[e].display, {d},
                               std::vector<double>(d, uniform));
            }
            if (config.variant == Variant::Ace)
                for (int e : entry_ids)
                    params.add(lp + "q/" + store.entries[e].display, {2 * d},
                               glorot_uniform(1, 2 * d, rng));
            params.add(lp + "W/" + tn, {d_out, d}, glorot_uniform(d_out, d, rng));
            params.add(lp + "b/" + tn, {d_out}, std::vector<double>(d_out, 0.0));
        }
    }

    if (config.task == Task::LinkPrediction)
        params.add("lp/w", {config.output_dim}, std::vector<double>(config.output_dim, 1.0));
    return params;
}

BoundParams bind_params(Tape& tape, const ParamStore& params, bool requires_grad) {
    BoundParams bound;
    bound.leaves.reserve(params.count());
    for (int i = 0; i < params.count(); ++i)
        bound.leaves.push_back(tape.leaf(params.shape(i), params.values(i), requires_grad));
    return bound;
}

namespace {

Tensor param_leaf(const ParamStore& params, const BoundParams& bound, const std::string& name) {
    int i = params.find(name);
    if (i < 0) throw ContractError("parameter '" + name + "' is missing");
    return bound.leaves[i];
}

// Per-type h^0 via the type-specific input projection; featureless types are
// an embedding lookup, i.e. the table itself when every node is used.
std::vector<Tensor> preprocess_features(Tape& tape, const HeteroGraph& g, const ParamStore& params,
                                        const BoundParams& bound, const ModelConfig& config) {
    std::vector<Tensor> h0(g.schema.num_node_types());
    for (NodeTypeId t = 0; t < g.schema.num_node_types(); ++t) {
        const std::string& tn = g.schema.node_type_names[t];
        const auto& tf = g.features.per_type[t];
        if (tf.featureless) {
            h0[t] = param_leaf(params, bound, "in/E/" + tn);
        } else {
            Tensor x = tape.constant({g.type_counts[t], tf.dim}, tf.data);
            h0[t] = tape.linear(x, param_leaf(params, bound, "in/W/" + tn),
                                param_leaf(params, bound, "in/b/" + tn));
        }
    }
    (void)config;
    return h0;
}

} // namespace

ForwardResult forward(Tape& tape, const HeteroGraph& g, const ContextStore& store,
                      const ParamStore& params, const BoundParams& bound,
                      const ModelConfig& config, bool training, Rng& rng) {
    config.validate();
    const int T = g.schema.num_node_types();
    if (static_cast<int>(store.by_type.size()) != T)
        throw ContractError("forward: context store does not match the graph");

    std::vector<Tensor> h = preprocess_features(tape, g, params, bound, config);
    for (NodeTypeId t = 0; t < T; ++t) h[t] = tape.dropout(h[t], config.dropout, training, rng);

    // Shared per-entry index/offset views; cheap aliases into the store.
    std::vector<std::shared_ptr<const std::vector<int32_t>>> entry_rows(store.entries.size());
    std::vector<std::shared_ptr<const std::vector<int64_t>>> entry_offsets(store.entries.size());
    for (size_t e = 0; e < store.entries.size(); ++e) {
        entry_rows[e] = std::shared_ptr<const std::vector<int32_t>>(&store.entries[e].indices,
                                                                    [](auto*) {});
        entry_offsets[e] = std::shared_ptr<const std::vector<int64_t>>(&store.entries[e].offsets,
                                                                       [](auto*) {});
    }

    for (int l = 1; l <= config.num_layers; ++l) {
        const bool final_layer = l == config.num_layers;
        const std::string lp = "l" + std::to_string(l) + "/";
        // All reads at layer l use layer l-1 values.
        Tensor h_global = tape.concat_rows(h);
        std::vector<Tensor> h_next(T);
        for (NodeTypeId t = 0; t < T; ++t) {
            const std::string& tn = g.schema.node_type_names[t];
            std::vector<Tensor> encoded;
            std::vector<Tensor> scales;
            for (int e : store.by_type[t]) {
                Tensor gathered = tape.gather_rows(h_global, entry_rows[e]);
                Tensor enc;
                if (config.variant == Variant::Ace) {
                    Tensor q = param_leaf(params, bound, lp + "q/" + store.entries[e].display);
                    Tensor q_center = tape.slice_cols(q, 0, config.hidden_dim);
                    Tensor q_member = tape.slice_cols(q, config.hidden_dim, config.hidden_dim);
                    Tensor center_term = tape.segment_broadcast(tape.matvec(h[t], q_center),
                                                                entry_offsets[e]);
                    Tensor member_term = tape.matvec(gathered, q_member);
                    Tensor logits = tape.leaky_relu(tape.add(center_term, member_term), 0.2);
                    enc = tape.segment_softmax_sum(gathered, logits, entry_offsets[e]);
                } else {
                    enc = tape.segment_mean(gathered, entry_offsets[e]);
                }
                encoded.push_back(enc);
                if (config.variant == Variant::Mmf) {
                    scales.push_back(tape.constant(
                        {config.hidden_dim},
                        std::vector<double>(config.hidden_dim,
                                            1.0 / static_cast<double>(store.by_type[t].size()))));
                } else {
                    scales.push_back(param_leaf(params, bound, lp + "a/" + store.entries[e].display));
                }
            }
            Tensor fused = tape.scaled_sum(encoded, scales);
            Tensor projected = tape.linear(fused, param_leaf(params, bound, lp + "W/" + tn),
                                           param_leaf(params, bound, lp + "b/" + tn));
            if (!final_layer) {
                projected = tape.relu(projected);
                projected = tape.dropout(projected, config.dropout, training, rng);
            }
            h_next[t] = projected;
        }
        h = std::move(h_next);
    }
    return ForwardResult{std::move(h)};
}

namespace {

constexpr char kCkptMagic[8] = {'M', 'E', 'C', 'C', 'H', 'K', 'P', 'T'};
constexpr uint32_t kCkptVersion = 1;

template <typename T>
void wr(std::ofstream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void rd(std::ifstream& in, T& v) {
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw Error(2, "checkpoint_format", "truncated checkpoint file");
}

} // namespace

void save_checkpoint(const std::string& path, const ModelConfig& config, const ParamStore& params) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParseError("cannot write checkpoint '" + path + "'");
    out.write(kCkptMagic, sizeof kCkptMagic);
    wr(out, kCkptVersion);
    wr(out, static_cast<uint8_t>(config.task));
    wr(out, static_cast<uint8_t>(config.variant));
    wr(out, static_cast<int32_t>(config.hidden_dim));
    wr(out, static_cast<int32_t>(config.metapath_length));
    wr(out, static_cast<int32_t>(config.num_layers));
    wr(out, static_cast<int32_t>(config.output_dim));
    wr(out, config.dropout);
    wr(out, config.seed);
    wr(out, static_cast<uint32_t>(params.count()));
    for (int i = 0; i < params.count(); ++i) {
        const std::string& name = params.name(i);
        wr(out, static_cast<uint32_t>(name.size()));
        out.write(name.data(), name.size());
        wr(out, static_cast<uint32_t>(params.shape(i).size()));
        for (int64_t dim : params.shape(i)) wr(out, dim);
        out.write(reinterpret_cast<const char*>(params.values(i).data()),
                  params.values(i).size() * sizeof(double));
    }
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(2, "checkpoint_format", "cannot open checkpoint '" + path + "'");
    char magic[8];
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, kCkptMagic, sizeof magic) != 0)
        throw Error(2, "checkpoint_format", "'" + path + "' is not a model checkpoint");
    uint32_t version = 0;
    rd(in, version);
    if (version != kCkptVersion)
        throw Error(2, "checkpoint_format", "unsupported checkpoint version");

    Checkpoint ckpt;
    uint8_t task = 0, variant = 0;
    int32_t hidden = 0, K = 0, L = 0, out_dim = 0;
    rd(in, task);
    rd(in, variant);
    rd(in, hidden);
    rd(in, K);
    rd(in, L);
    rd(in, out_dim);
    rd(in, ckpt.config.dropout);
    rd(in, ckpt.config.seed);
    if (task > 1 || variant > 3) throw Error(2, "checkpoint_format", "corrupt checkpoint header");
    ckpt.config.task = static_cast<Task>(task);
    ckpt.config.variant = static_cast<Variant>(variant);
    ckpt.config.hidden_dim = hidden;
    ckpt.config.metapath_length = K;
    ckpt.config.num_layers = L;
    ckpt.config.output_dim = out_dim;
    ckpt.config.validate();

    uint32_t n_params = 0;
    rd(in, n_params);
    if (n_params > 1u << 20) throw Error(2, "checkpoint_format", "corrupt parameter count");
    for (uint32_t i = 0; i < n_params; ++i) {
        uint32_t name_len = 0;
        rd(in, name_len);
        if (name_len > 4096) throw Error(2, "checkpoint_format", "corrupt parameter name");
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        uint32_t ndim = 0;
        rd(in, ndim);
        if (ndim > 8) throw Error(2, "checkpoint_format", "corrupt parameter rank");
        std::vector<int64_t> shape(ndim);
        int64_t n = 1;
        for (uint32_t k = 0; k < ndim; ++k) {
            rd(in, shape[k]);
            if (shape[k] <= 0 || shape[k] > (int64_t(1) << 32))
                throw Error(2, "checkpoint_format", "corrupt parameter shape");
            n *= shape[k];
        }
        std::vector<double> values(n);
        in.read(reinterpret_cast<char*>(values.data()), n * sizeof(double));
        if (!in) throw Error(2, "checkpoint_format", "truncated parameter data");
        ckpt.params.add(std::move(name), std::move(shape), std::move(values));
    }
    return ckpt;
}

} // namespace mecch
