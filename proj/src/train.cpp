#include "mecch/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <set>

#include "mecch/errors.hpp"

namespace mecch {

void TrainConfig::validate() const {
    if (learning_rate < 0.0) throw ConfigError("learning_rate must be >= 0");
    if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
    if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
    if (patience < 1 || patience > max_epochs)
        throw ConfigError("patience must be in [1, max_epochs]");
    if (negatives_per_positive < 1) throw ConfigError("negatives_per_positive must be >= 1");
}

void SplitSpec::validate(const HeteroGraph& g) const {
    if (task == Task::NodeClassification) {
        if (nc.target_type < 0 || nc.target_type >= g.schema.num_node_types())
            throw IntegrityError("split target type out of range");
        if (nc.num_classes < 2) throw IntegrityError("need at least 2 classes");
        std::set<int32_t> seen;
        for (const auto* split : {&nc.train, &nc.valid, &nc.test})
            for (const auto& [node, label] : *split) {
                if (node < 0 || node >= g.type_counts[nc.target_type])
                    throw IntegrityError("labeled node out of range");
                if (label < 0 || label >= nc.num_classes)
                    throw IntegrityError("label out of range");
                if (!seen.insert(node).second)
                    throw IntegrityError("node appears in more than one split");
            }
        if (nc.train.empty() || nc.valid.empty() || nc.test.empty())
            throw IntegrityError("every split must be nonempty");
    } else {
        if (lp.target_relation < 0 || lp.target_relation >= g.schema.num_edge_types())
            throw IntegrityError("target relation out of range");
        const EdgeType& et = g.schema.edge_types[lp.target_relation];
        std::set<std::pair<int32_t, int32_t>> seen;
        for (const auto* split : {&lp.train, &lp.valid, &lp.test})
            for (const auto& [u, v] : *split) {
                if (u < 0 || u >= g.type_counts[et.src] || v < 0 || v >= g.type_counts[et.dst])
                    throw IntegrityError("target edge endpoint out of range");
                if (!seen.insert({u, v}).second)
                    throw IntegrityError("edge appears in more than one split");
            }
        for (const auto* negs : {&lp.neg_valid, &lp.neg_test})
            for (const auto& [u, v] : *negs)
                if (u < 0 || u >= g.type_counts[et.src] || v < 0 || v >= g.type_counts[et.dst])
                    throw IntegrityError("negative edge endpoint out of range");
        if (lp.neg_valid.size() != lp.valid.size() || lp.neg_test.size() != lp.test.size())
            throw IntegrityError("evaluation negatives must match positive counts 1:1");
        if (lp.train.empty() || lp.valid.empty() || lp.test.empty())
            throw IntegrityError("every split must be nonempty");
    }
}

AdamState init_adam_state(const ParamStore& params) {
    AdamState state;
    state.m.resize(params.count());
    state.v.resize(params.count());
    for (int i = 0; i < params.count(); ++i) {
        state.m[i].assign(params.values(i).size(), 0.0);
        state.v[i].assign(params.values(i).size(), 0.0);
    }
    return state;
}

void adam_step(ParamStore& params, const std::vector<std::vector<double>>& grads, AdamState& state,
               const TrainConfig& config) {
    if (static_cast<int>(grads.size()) != params.count())
        throw ContractError("adam_step: gradient count mismatch");
    state.t += 1;
    const double bc1 = 1.0 - std::pow(config.adam_beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(config.adam_beta2, static_cast<double>(state.t));
    for (int i = 0; i < params.count(); ++i) {
        auto& theta = params.values(i);
        const auto& g = grads[i];
        if (g.size() != theta.size()) throw ContractError("adam_step: gradient size mismatch");
        auto& m = state.m[i];
        auto& v = state.v[i];
        for (size_t k = 0; k < theta.size(); ++k) {
            if (config.weight_decay > 0.0)
                theta[k] -= config.learning_rate * config.weight_decay * theta[k];
            m[k] = config.adam_beta1 * m[k] + (1.0 - config.adam_beta1) * g[k];
            v[k] = config.adam_beta2 * v[k] + (1.0 - config.adam_beta2) * g[k] * g[k];
            theta[k] -= config.learning_rate * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + config.adam_eps);
        }
    }
}

std::vector<std::pair<int32_t, int32_t>> sample_negatives(
    const HeteroGraph& g, const std::vector<std::pair<int32_t, int32_t>>& positives,
    EdgeTypeId relation, int negatives_per_positive, Rng& rng) {
    const EdgeType& et = g.schema.edge_types[relation];
    const int32_t n_dst = g.type_counts[et.dst];
    if (n_dst == 0) throw IntegrityError("destination type of the target relation has no nodes");
    std::vector<std::pair<int32_t, int32_t>> negatives;
    negatives.reserve(positives.size() * negatives_per_positive);
    for (const auto& [u, v] : positives) {
        (void)v;
        for (int j = 0; j < negatives_per_positive; ++j)
            negatives.emplace_back(u, static_cast<int32_t>(uniform_index(rng, n_dst)));
    }
    return negatives;
}

Tensor nc_loss(Tape& tape, Tensor logits_all,
               const std::vector<std::pair<int32_t, int32_t>>& batch) {
    auto rows = std::make_shared<std::vector<int32_t>>();
    auto labels = std::make_shared<std::vector<int32_t>>();
    rows->reserve(batch.size());
    labels->reserve(batch.size());
    for (const auto& [node, label] : batch) {
        rows->push_back(node);
        labels->push_back(label);
    }
    Tensor gathered = tape.gather_rows(logits_all, rows);
    return tape.softmax_cross_entropy(gathered, labels);
}

namespace {

Tensor edge_scores(Tape& tape, Tensor h_src, Tensor h_dst, Tensor w_lp,
                   const std::vector<std::pair<int32_t, int32_t>>& edges) {
    auto us = std::make_shared<std::vector<int32_t>>();
    auto vs = std::make_shared<std::vector<int32_t>>();
    us->reserve(edges.size());
    vs->reserve(edges.size());
    for (const auto& [u, v] : edges) {
        us->push_back(u);
        vs->push_back(v);
    }
    return tape.distmult_score(tape.gather_rows(h_src, us), tape.gather_rows(h_dst, vs), w_lp);
}

} // namespace

Tensor lp_loss(Tape& tape, Tensor h_src, Tensor h_dst, Tensor w_lp,
               const std::vector<std::pair<int32_t, int32_t>>& positives,
               const std::vector<std::pair<int32_t, int32_t>>& negatives) {
    if (positives.empty()) throw ContractError("lp_loss: empty positive set");
    Tensor pos = edge_scores(tape, h_src, h_dst, w_lp, positives);
    Tensor neg = edge_scores(tape, h_src, h_dst, w_lp, negatives);
    return tape.bce_with_logits(pos, neg);
}

std::pair<double, double> evaluate_f1(const std::vector<double>& logits, int num_classes,
                                      const std::vector<int32_t>& labels) {
    const size_t n = labels.size();
    if (n == 0 || logits.size() != n * num_classes)
        throw ContractError("evaluate_f1: shape mismatch or empty input");
    std::vector<int64_t> tp(num_classes, 0), fp(num_classes, 0), fn(num_classes, 0);
    int64_t correct = 0;
    for (size_t i = 0; i < n; ++i) {
        int pred = 0;
        for (int c = 1; c < num_classes; ++c)
            if (logits[i * num_classes + c] > logits[i * num_classes + pred]) pred = c;
        const int truth = labels[i];
        if (pred == truth) {
            ++tp[truth];
            ++correct;
        } else {
            ++fp[pred];
            ++fn[truth];
        }
    }
    double macro = 0.0;
    for (int c = 0; c < num_classes; ++c) {
        const double denom = static_cast<double>(2 * tp[c] + fp[c] + fn[c]);
        macro += denom > 0.0 ? 2.0 * static_cast<double>(tp[c]) / denom : 0.0;
    }
    macro /= static_cast<double>(num_classes);
    const double micro = static_cast<double>(correct) / static_cast<double>(n);
    return {macro, micro};
}

double evaluate_auc(const std::vector<double>& pos_scores, const std::vector<double>& neg_scores) {
    if (pos_scores.empty() || neg_scores.empty())
        throw ContractError("evaluate_auc: need at least one score on each side");
    std::vector<double> neg = neg_scores;
    std::sort(neg.begin(), neg.end());
    // Mann-Whitney numerator: #(s+ > s-) + 0.5 #(s+ = s-); counts are exact
    // in doubles, so this matches brute-force pair counting bit for bit.
    double numerator = 0.0;
    for (double s : pos_scores) {
        const auto lo = std::lower_bound(neg.begin(), neg.end(), s);
        const auto hi = std::upper_bound(lo, neg.end(), s);
        numerator += static_cast<double>(lo - neg.begin()) + 0.5 * static_cast<double>(hi - lo);
    }
    return numerator / (static_cast<double>(pos_scores.size()) * static_cast<double>(neg.size()));
}

namespace {

struct TaskHeads {
    NodeTypeId src_type = -1;
    NodeTypeId dst_type = -1;
};

TaskHeads task_heads(const HeteroGraph& g, const SplitSpec& splits) {
    TaskHeads heads;
    if (splits.task == Task::LinkPrediction) {
        const EdgeType& et = g.schema.edge_types[splits.lp.target_relation];
        heads.src_type = et.src;
        heads.dst_type = et.dst;
    } else {
        heads.src_type = splits.nc.target_type;
    }
    return heads;
}

double validation_metric(const HeteroGraph& g, const ContextStore& store, const SplitSpec& splits,
                         const ModelConfig& mcfg, const ParamStore& params,
                         const std::vector<std::pair<int32_t, int32_t>>& batch,
                         const std::vector<std::pair<int32_t, int32_t>>& negatives) {
    Tape tape;
    BoundParams bound = bind_params(tape, params, false);
    Rng rng(0); // evaluation mode draws nothing
    ForwardResult result = forward(tape, g, store, params, bound, mcfg, false, rng);
    TaskHeads heads = task_heads(g, splits);
    if (splits.task == Task::NodeClassification) {
        const auto& all = result.h_final[heads.src_type].values();
        std::vector<double> logits;
        std::vector<int32_t> labels;
        logits.reserve(batch.size() * mcfg.output_dim);
        for (const auto& [node, label] : batch) {
            labels.push_back(label);
            for (int c = 0; c < mcfg.output_dim; ++c)
                logits.push_back(all[static_cast<size_t>(node) * mcfg.output_dim + c]);
        }
        return evaluate_f1(logits, mcfg.output_dim, labels).first;
    }
    Tensor w_lp = bound.leaves[params.find("lp/w")];
    Tensor pos = edge_scores(tape, result.h_final[heads.src_type], result.h_final[heads.dst_type],
                             w_lp, batch);
    Tensor neg = edge_scores(tape, result.h_final[heads.src_type], result.h_final[heads.dst_type],
                             w_lp, negatives);
    return evaluate_auc(pos.values(), neg.values());
}

} // namespace

TrainResult train(const HeteroGraph& g, const ContextStore& store, const SplitSpec& splits,
                  const ModelConfig& model_config, const TrainConfig& train_config) {
    model_config.validate();
    train_config.validate();
    splits.validate(g);
    if (splits.task != model_config.task)
        throw ConfigError("split task does not match model task", "task_mismatch");

    ParamStore params = init_params(g, store, model_config);
    AdamState adam = init_adam_state(params);
    Rng rng(train_config.seed);
    TaskHeads heads = task_heads(g, splits);

    TrainResult result;
    result.best_params = params;
    result.best_valid_metric = -1.0;

    int epochs_since_best = 0;
    for (int epoch = 1; epoch <= train_config.max_epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();

        Tape tape;
        BoundParams bound = bind_params(tape, params, true);
        ForwardResult fwd = forward(tape, g, store, params, bound, model_config, true, rng);
        Tensor loss;
        if (splits.task == Task::NodeClassification) {
            loss = nc_loss(tape, fwd.h_final[heads.src_type], splits.nc.train);
        } else {
            auto negatives = sample_negatives(g, splits.lp.train, splits.lp.target_relation,
                                              train_config.negatives_per_positive, rng);
            loss = lp_loss(tape, fwd.h_final[heads.src_type], fwd.h_final[heads.dst_type],
                           bound.leaves[params.find("lp/w")], splits.lp.train, negatives);
        }
        const double loss_value = loss.scalar();
        if (!std::isfinite(loss_value))
            throw NumericError("non-finite training loss at epoch " + std::to_string(epoch));
        tape.backward(loss);

        std::vector<std::vector<double>> grads(params.count());
        for (int i = 0; i < params.count(); ++i) grads[i] = tape.grad(bound.leaves[i]);
        adam_step(params, grads, adam, train_config);

        const double metric =
            splits.task == Task::NodeClassification
                ? validation_metric(g, store, splits, model_config, params, splits.nc.valid, {})
                : validation_metric(g, store, splits, model_config, params, splits.lp.valid,
                                    splits.lp.neg_valid);

        const double seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.history.push_back({epoch, loss_value, metric, seconds});
        result.epochs_run = epoch;

        if (metric > result.best_valid_metric) {
            result.best_valid_metric = metric;
            result.best_epoch = epoch;
            result.best_params = params;
            epochs_since_best = 0;
        } else if (++epochs_since_best >= train_config.patience) {
            break;
        }
    }
    return result;
}

EvalMetrics evaluate(const HeteroGraph& g, const ContextStore& store, const SplitSpec& splits,
                     const ModelConfig& model_config, const ParamStore& params,
                     const std::vector<std::pair<int32_t, int32_t>>& batch,
                     const std::vector<std::pair<int32_t, int32_t>>& lp_negatives) {
    Tape tape;
    BoundParams bound = bind_params(tape, params, false);
    Rng rng(0);
    ForwardResult result = forward(tape, g, store, params, bound, model_config, false, rng);
    TaskHeads heads = task_heads(g, splits);
    EvalMetrics metrics;
    if (splits.task == Task::NodeClassification) {
        const auto& all = result.h_final[heads.src_type].values();
        std::vector<double> logits;
        std::vector<int32_t> labels;
        for (const auto& [node, label] : batch) {
            labels.push_back(label);
            for (int c = 0; c < model_config.output_dim; ++c)
                logits.push_back(all[static_cast<size_t>(node) * model_config.output_dim + c]);
        }
        auto [macro, micro] = evaluate_f1(logits, model_config.output_dim, labels);
        metrics.macro_f1 = macro;
        metrics.micro_f1 = micro;
    } else {
        Tensor w_lp = bound.leaves[params.find("lp/w")];
        Tensor pos = edge_scores(tape, result.h_final[heads.src_type],
                                 result.h_final[heads.dst_type], w_lp, batch);
        Tensor neg = edge_scores(tape, result.h_final[heads.src_type],
                                 result.h_final[heads.dst_type], w_lp, lp_negatives);
        metrics.roc_auc = evaluate_auc(pos.values(), neg.values());
    }
    return metrics;
}

} // namespace mecch
