#ifndef MECCH_TENSOR_HPP
#define MECCH_TENSOR_HPP

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "mecch/rand.hpp"

namespace mecch {

class Tape;

/// Handle to a dense f64 tensor recorded on a Tape. Cheap to copy; valid for
/// the lifetime of its tape.
struct Tensor {
    int id = -1;
    Tape* tape = nullptr;

    bool valid() const { return tape != nullptr; }
    int64_t rows() const;
    int64_t cols() const;
    int64_t size() const;
    const std::vector<double>& values() const;
    double scalar() const;
};

/// Append-only record of executed primitive ops; nodes hold values, gradient
/// accumulators and the backward closure. One tape per forward/backward pass,
/// confined to one thread.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Tensor leaf(std::vector<int64_t> shape, std::vector<double> data, bool requires_grad);
    Tensor constant(std::vector<int64_t> shape, std::vector<double> data);
    Tensor zeros(std::vector<int64_t> shape, bool requires_grad);

    // y[i] = W x_i + b, with x [n x d_in], W [d_out x d_in], b [d_out].
    Tensor linear(Tensor x, Tensor W, Tensor b);
    // Row means per segment; offsets are monotone over the m rows of values,
    // empty segments are a contract violation.
    Tensor segment_mean(Tensor values, std::shared_ptr<const std::vector<int64_t>> offsets);
    // sum_p broadcast(scales[p]) * xs[p], all xs [n x d], scales [d].
    Tensor scaled_sum(const std::vector<Tensor>& xs, const std::vector<Tensor>& scales);
    Tensor relu(Tensor x);
    Tensor leaky_relu(Tensor x, double slope);
    Tensor sigmoid(Tensor x);
    // Inverted dropout: kept entries scaled by 1/(1-rate); identity when not
    // training or rate == 0 (no rng draws in that case).
    Tensor dropout(Tensor x, double rate, bool training, Rng& rng);
    Tensor add(Tensor a, Tensor b);
    Tensor concat_rows(const std::vector<Tensor>& xs);
    Tensor gather_rows(Tensor x, std::shared_ptr<const std::vector<int32_t>> rows);
    Tensor slice_cols(Tensor x, int64_t start, int64_t len); // on 1-d tensors: subrange
    Tensor matvec(Tensor x, Tensor w); // [m x d] . [d] -> [m]
    Tensor segment_broadcast(Tensor x, std::shared_ptr<const std::vector<int64_t>> offsets);
    // Per segment: softmax(logits)-weighted sum of value rows. Computed in
    // numerator/denominator form so zero logits reproduce segment_mean bit for bit.
    Tensor segment_softmax_sum(Tensor values, Tensor logits,
                               std::shared_ptr<const std::vector<int64_t>> offsets);
    // s[i] = sum_k hu[i,k] * w[k] * hv[i,k]; the DistMult bilinear scorer.
    Tensor distmult_score(Tensor hu, Tensor hv, Tensor w);
    // Mean over rows of -log softmax(logits)[label], log-sum-exp stabilized.
    Tensor softmax_cross_entropy(Tensor logits, std::shared_ptr<const std::vector<int32_t>> labels);
    // -mean log sigmoid(pos) - mean log sigmoid(-neg), stable softplus form.
    Tensor bce_with_logits(Tensor pos_scores, Tensor neg_scores);
    Tensor sum(Tensor x);

    /// Reverse-topological accumulation from a scalar loss. Every
    /// requires_grad leaf ends up with a gradient (zero if unused).
    void backward(Tensor loss);

    const std::vector<double>& value(Tensor t) const;
    const std::vector<double>& grad(Tensor t) const;
    const std::vector<int64_t>& shape(Tensor t) const;
    size_t num_nodes() const { return nodes_.size(); }

private:
    friend struct Tensor;
    struct Node {
        std::vector<int64_t> shape;
        std::vector<double> value;
        std::vector<double> grad;
        bool requires_grad = false;
        std::function<void()> backward_fn; // empty for leaves/constants
    };

    Tensor make_node(std::vector<int64_t> shape, std::vector<double> value, bool requires_grad,
                     const char* op);
    Node& node(Tensor t);
    const Node& node(Tensor t) const;

    std::vector<Node> nodes_;
};

/// Max relative finite-difference error of d(program)/d(leaves), central
/// differences with step 1e-5 * (1 + |x|), sampling up to
/// max_coords_per_leaf coordinates per leaf. The program must be
/// deterministic (dropout off or re-seeded identically per call).
double grad_check(const std::function<Tensor(Tape&, const std::vector<Tensor>&)>& program,
                  const std::vector<std::vector<int64_t>>& leaf_shapes,
                  std::vector<std::vector<double>> leaf_values, int max_coords_per_leaf = 200,
                  uint64_t sample_seed = 7);

} // namespace mecch

#endif // MECCH_TENSOR_HPP
