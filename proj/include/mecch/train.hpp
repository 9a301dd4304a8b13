#ifndef MECCH_TRAIN_HPP
#define MECCH_TRAIN_HPP

#include <cstdint>
#include <utility>
#include <vector>

#include "mecch/model.hpp"

namespace mecch {

/// Labeled node lists (node classification) or positive edge lists plus fixed
/// 1:1 evaluation negatives (link prediction). Node and edge endpoints are
/// type-local ids of the target type(s).
struct NcSplits {
    NodeTypeId target_type = -1;
    int num_classes = 0;
    std::vector<std::pair<int32_t, int32_t>> train, valid, test; // (local node, label)
};

struct LpSplits {
    EdgeTypeId target_relation = -1;
    std::vector<std::pair<int32_t, int32_t>> train, valid, test;          // (src local, dst local)
    std::vector<std::pair<int32_t, int32_t>> neg_valid, neg_test;         // fixed eval negatives
};

struct SplitSpec {
    Task task = Task::NodeClassification;
    NcSplits nc;
    LpSplits lp;

    /// Disjointness, label ranges, endpoint ranges, negative counts.
    void validate(const HeteroGraph& g) const;
};

struct TrainConfig {
    double learning_rate = 5e-3;
    double weight_decay = 0.0;
    int max_epochs = 500;
    int patience = 50;
    int negatives_per_positive = 1;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    uint64_t seed = 2;

    void validate() const;
};

struct AdamState {
    std::vector<std::vector<double>> m, v;
    int64_t t = 0;
};

AdamState init_adam_state(const ParamStore& params);

/// One Adam step with bias correction; weight decay is applied as a separate
/// decoupled theta -= lr*wd*theta term before the update.
void adam_step(ParamStore& params, const std::vector<std::vector<double>>& grads, AdamState& state,
               const TrainConfig& config);

/// Destination-corrupted negatives: for each positive (u,v), draws
/// negatives_per_positive destinations uniformly (with replacement) from all
/// nodes of the destination type. No filtering of accidental true edges.
std::vector<std::pair<int32_t, int32_t>> sample_negatives(
    const HeteroGraph& g, const std::vector<std::pair<int32_t, int32_t>>& positives,
    EdgeTypeId relation, int negatives_per_positive, Rng& rng);

Tensor nc_loss(Tape& tape, Tensor logits_all, const std::vector<std::pair<int32_t, int32_t>>& batch);

Tensor lp_loss(Tape& tape, Tensor h_src, Tensor h_dst, Tensor w_lp,
               const std::vector<std::pair<int32_t, int32_t>>& positives,
               const std::vector<std::pair<int32_t, int32_t>>& negatives);

/// (macro_f1, micro_f1) under the argmax rule, ties to the lowest class
/// index; classes absent from both prediction and truth count as F1 = 0.
std::pair<double, double> evaluate_f1(const std::vector<double>& logits, int num_classes,
                                      const std::vector<int32_t>& labels);

/// P(s+ > s-) + 0.5 P(s+ = s-) by rank statistics; exact for the pair counts.
double evaluate_auc(const std::vector<double>& pos_scores, const std::vector<double>& neg_scores);

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double valid_metric = 0.0;
    double seconds = 0.0;
};

struct TrainResult {
    ParamStore best_params;
    std::vector<EpochRecord> history;
    int best_epoch = 0;
    double best_valid_metric = 0.0;
    int epochs_run = 0;
};

/// Full-batch training with Adam and early stopping on the validation metric
/// (macro-F1 or ROC-AUC); returns the best-validation parameters. Aborts with
/// NumericError on a non-finite loss.
TrainResult train(const HeteroGraph& g, const ContextStore& store, const SplitSpec& splits,
                  const ModelConfig& model_config, const TrainConfig& train_config);

struct EvalMetrics {
    double macro_f1 = 0.0;
    double micro_f1 = 0.0;
    double roc_auc = 0.0;
};

/// Evaluation-mode metrics on one split (test by default).
EvalMetrics evaluate(const HeteroGraph& g, const ContextStore& store, const SplitSpec& splits,
                     const ModelConfig& model_config, const ParamStore& params,
                     const std::vector<std::pair<int32_t, int32_t>>& batch,
                     const std::vector<std::pair<int32_t, int32_t>>& lp_negatives = {});

} // namespace mecch

#endif // MECCH_TRAIN_HPP
