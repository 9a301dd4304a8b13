#include "mecch/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "mecch/errors.hpp"

namespace mecch {

namespace {

int64_t numel(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return n;
}

void check_offsets(const std::vector<int64_t>& offsets, int64_t m, const char* op) {
    if (offsets.empty() || offsets.front() != 0 || offsets.back() != m)
        throw ContractError(std::string(op) + ": offsets must start at 0 and cover all rows");
    for (size_t j = 1; j < offsets.size(); ++j) {
        if (offsets[j] < offsets[j - 1])
            throw ContractError(std::string(op) + ": offsets must be monotone");
        if (offsets[j] == offsets[j - 1])
            throw ContractError(std::string(op) + ": empty segment");
    }
}

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::fabs(z))); }

} // namespace

int64_t Tensor::rows() const { return tape->shape(*this).empty() ? 0 : tape->shape(*this)[0]; }
int64_t Tensor::cols() const {
    const auto& s = tape->shape(*this);
    return s.size() > 1 ? s[1] : 1;
}
int64_t Tensor::size() const { return numel(tape->shape(*this)); }
const std::vector<double>& Tensor::values() const { return tape->value(*this); }
double Tensor::scalar() const {
    if (size() != 1) throw ContractError("scalar() on a non-scalar tensor");
    return values()[0];
}

Tape::Node& Tape::node(Tensor t) {
    if (t.tape != this || t.id < 0 || t.id >= static_cast<int>(nodes_.size()))
        throw ContractError("tensor does not belong to this tape");
    return nodes_[t.id];
}
const Tape::Node& Tape::node(Tensor t) const { return const_cast<Tape*>(this)->node(t); }

const std::vector<double>& Tape::value(Tensor t) const { return node(t).value; }
const std::vector<double>& Tape::grad(Tensor t) const { return node(t).grad; }
const std::vector<int64_t>& Tape::shape(Tensor t) const { return node(t).shape; }

Tensor Tape::make_node(std::vector<int64_t> shape, std::vector<double> value, bool requires_grad,
                       const char* op) {
    if (numel(shape) != static_cast<int64_t>(value.size()))
        throw ContractError(std::string(op) + ": data length does not match shape");
    for (double x : value)
        if (!std::isfinite(x)) throw NumericError(std::string(op) + " produced a non-finite value");
    Node n;
    n.shape = std::move(shape);
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Tensor{static_cast<int>(nodes_.size()) - 1, this};
}

Tensor Tape::leaf(std::vector<int64_t> shape, std::vector<double> data, bool requires_grad) {
    return make_node(std::move(shape), std::move(data), requires_grad, "leaf");
}

Tensor Tape::constant(std::vector<int64_t> shape, std::vector<double> data) {
    return make_node(std::move(shape), std::move(data), false, "constant");
}

Tensor Tape::zeros(std::vector<int64_t> shape, bool requires_grad) {
    std::vector<double> data(numel(shape), 0.0);
    return make_node(std::move(shape), std::move(data), requires_grad, "zeros");
}

Tensor Tape::linear(Tensor x, Tensor W, Tensor b) {
    const auto& xs = shape(x);
    const auto& ws = shape(W);
    const auto& bs = shape(b);
    if (xs.size() != 2 || ws.size() != 2 || bs.size() != 1 || xs[1] != ws[1] || ws[0] != bs[0])
        throw ContractError("linear: shape mismatch");
    const int64_t n = xs[0], d_in = xs[1], d_out = ws[0];
    const auto& xv = value(x);
    const auto& wv = value(W);
    const auto& bv = value(b);
    std::vector<double> out(static_cast<size_t>(n) * d_out);
    for (int64_t i = 0; i < n; ++i)
        for (int64_t o = 0; o < d_out; ++o) {
            double acc = bv[o];
            const double* xr = &xv[i * d_in];
            const double* wr = &wv[o * d_in];
            for (int64_t k = 0; k < d_in; ++k) acc += xr[k] * wr[k];
            out[i * d_out + o] = acc;
        }
    Tensor y = make_node({n, d_out}, std::move(out), true, "linear");
    bool need = node(x).requires_grad || node(W).requires_grad || node(b).requires_grad;
    if (need)
        node(y).backward_fn = [this, x, W, b, y, n, d_in, d_out]() {
            const auto& g = node(y).grad;
            const auto& xv = node(x).value;
            const auto& wv = node(W).value;
            if (node(x).requires_grad) {
                auto& gx = node(x).grad;
                for (int64_t i = 0; i < n; ++i)
                    for (int64_t o = 0; o < d_out; ++o) {
                        double go = g[i * d_out + o];
                        const double* wr = &wv[o * d_in];
                        double* gxr = &gx[i * d_in];
                        for (int64_t k = 0; k < d_in; ++k) gxr[k] += go * wr[k];
                    }
            }
            if (node(W).requires_grad) {
                auto& gw = node(W).grad;
                for (int64_t i = 0; i < n; ++i)
                    for (int64_t o = 0; o < d_out; ++o) {
                        double go = g[i * d_out + o];
                        const double* xr = &xv[i * d_in];
                        double* gwr = &gw[o * d_in];
                        for (int64_t k = 0; k < d_in; ++k) gwr[k] += go * xr[k];
                    }
            }
            if (node(b).requires_grad) {
                auto& gb = node(b).grad;
                for (int64_t i = 0; i < n; ++i)
                    for (int64_t o = 0; o < d_out; ++o) gb[o] += g[i * d_out + o];
            }
        };
    node(y).requires_grad = need;
    return y;
}

Tensor Tape::segment_mean(Tensor values_t, std::shared_ptr<const std::vector<int64_t>> offsets) {
    const auto& vs = shape(values_t);
    if (vs.size() != 2) throw ContractError("segment_mean: values must be 2-d");
    const int64_t m = vs[0], d = vs[1];
    check_offsets(*offsets, m, "segment_mean");
    const int64_t s = static_cast<int64_t>(offsets->size()) - 1;
    const auto& v = value(values_t);
    std::vector<double> out(static_cast<size_t>(s) * d, 0.0);
    for (int64_t j = 0; j < s; ++j) {
        const int64_t lo = (*offsets)[j], hi = (*offsets)[j + 1];
        double* o = &out[j * d];
        for (int64_t r = lo; r < hi; ++r) {
            const double* row = &v[r * d];
            for (int64_t k = 0; k < d; ++k) o[k] += row[k];
        }
        for (int64_t k = 0; k < d; ++k) o[k] /= static_cast<double>(hi - lo);
    }
    Tensor y = make_node({s, d}, std::move(out), node(values_t).requires_grad, "segment_mean");
    if (node(values_t).requires_grad)
        node(y).backward_fn = [this, values_t, y, offsets, s, d]() {
            const auto& g = node(y).grad;
            auto& gv = node(values_t).grad;
            for (int64_t j = 0; j < s; ++j) {
                const int64_t lo = (*offsets)[j], hi = (*offsets)[j + 1];
                const double scale = 1.0 / static_cast<double>(hi - lo);
                const double* gr = &g[j * d];
                for (int64_t r = lo; r < hi; ++r) {
                    double* gvr = &gv[r * d];
                    for (int64_t k = 0; k < d; ++k) gvr[k] += gr[k] * scale;
                }
            }
        };
    return y;
}

Tensor Tape::scaled_sum(const std::vector<Tensor>& xs, const std::vector<Tensor>& scales) {
    if (xs.empty() || xs.size() != scales.size())
        throw ContractError("scaled_sum: needs equal-length non-empty lists");
    const auto& s0 = shape(xs[0]);
    if (s0.size() != 2) throw ContractError("scaled_sum: inputs must be 2-d");
    const int64_t n = s0[0], d = s0[1];
    for (size_t p = 0; p < xs.size(); ++p) {
        if (shape(xs[p]) != s0 || shape(scales[p]) != std::vector<int64_t>{d})
            throw ContractError("scaled_sum: shape mismatch");
    }
    std::vector<double> out(static_cast<size_t>(n) * d, 0.0);
    bool need = false;
    for (size_t p = 0; p < xs.size(); ++p) {
        const auto& xv = value(xs[p]);
        const auto& av = value(scales[p]);
        for (int64_t i = 0; i < n; ++i)
            for (int64_t k = 0; k < d; ++k) out[i * d + k] += av[k] * xv[i * d + k];
        need = need || node(xs[p]).requires_grad || node(scales[p]).requires_grad;
    }
    Tensor y = make_node({n, d}, std::move(out), need, "scaled_sum");
    if (need)
        node(y).backward_fn = [this, xs, scales, y, n, d]() {
            const auto& g = node(y).grad;
            for (size_t p = 0; p < xs.size(); ++p) {
                const auto& xv = node(xs[p]).value;
                const auto& av = node(scales[p]).value;
                if (node(xs[p]).requires_grad) {
                    auto& gx = node(xs[p]).grad;
                    for (int64_t i = 0; i < n; ++i)
                        for (int64_t k = 0; k < d; ++k) gx[i * d + k] += g[i * d + k] * av[k];
                }
                if (node(scales[p]).requires_grad) {
                    auto& ga = node(scales[p]).grad;
                    for (int64_t i = 0; i < n; ++i)
                        for (int64_t k = 0; k < d; ++k) ga[k] += g[i * d + k] * xv[i * d + k];
                }
            }
        };
    return y;
}

Tensor Tape::relu(Tensor x) {
    std::vector<double> out = value(x);
    for (double& v : out) v = v > 0.0 ? v : 0.0;
    Tensor y = make_node(shape(x), std::move(out), node(x).requires_grad, "relu");
    if (node(x).requires_grad)
        node(y).backward_fn = [this, x, y]() {
            const auto& g = node(y).grad;
            const auto& xv = node(x).value;
            auto& gx = node(x).grad;
            for (size_t i = 0; i < g.size(); ++i) gx[i] += xv[i] > 0.0 ? g[i] : 0.0;
        };
    return y;
}

Tensor Tape::leaky_relu(Tensor x, double slope) {
    std::vector<double> out = value(x);
    for (double& v : out) v = v > 0.0 ? v : slope * v;
    Tensor y = make_node(shape(x), std::move(out), node(x).requires_grad, "leaky_relu");
    if (node(x).requires_grad)
        node(y).backward_fn = [this, x, y, slope]() {
            const auto& g = node(y).grad;
            const auto& xv = node(x).value;
            auto& gx = node(x).grad;
            for (size_t i = 0; i < g.size(); ++i) gx[i] += (xv[i] > 0.0 ? 1.0 : slope) * g[i];
        };
    return y;
}

Tensor Tape::sigmoid(Tensor x) {
    std::vector<double> out = value(x);
    for (double& v : out) v = 1.0 / (1.0 + std::exp(-v));
    Tensor y = make_node(shape(x), std::move(out), node(x).requires_grad, "sigmoid");
    if (node(x).requires_grad)
        node(y).backward_fn = [this, x, y]() {
            const auto& g = node(y).grad;
            const auto& yv = node(y).value;
            auto& gx = node(x).grad;
            for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * yv[i] * (1.0 - yv[i]);
        };
    return y;
}

Tensor Tape::dropout(Tensor x, double rate, bool training, Rng& rng) {
    if (rate < 0.0 || rate >= 1.0) throw ContractError("dropout: rate must be in [0, 1)");
    if (!training || rate == 0.0) return x;
    auto mask = std::make_shared<std::vector<double>>(value(x).size());
    const double keep_scale = 1.0 / (1.0 - rate);
    for (double& m : *mask) m = uniform_real(rng) < rate ? 0.0 : keep_scale;
    std::vector<double> out = value(x);
    for (size_t i = 0; i < out.size(); ++i) out[i] *= (*mask)[i];
    Tensor y = make_node(shape(x), std::move(out), node(x).requires_grad, "dropout");
    if (node(x).requires_grad)
        node(y).backward_fn = [this, x, y, mask]() {
            const auto& g = node(y).grad;
            auto& gx = node(x).grad;
            for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (*mask)[i];
        };
    return y;
}

Tensor Tape::add(Tensor a, Tensor b) {
    if (shape(a) != shape(b)) throw ContractError("add: shape mismatch");
    std::vector<double> out = value(a);
    const auto& bv = value(b);
    for (size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    bool need = node(a).requires_grad || node(b).requires_grad;
    Tensor y = make_node(shape(a), std::move(out), need, "add");
    if (need)
        node(y).backward_fn = [this, a, b, y]() {
            const auto& g = node(y).grad;
            if (node(a).requires_grad) {
                auto& ga = node(a).grad;
                for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (node(b).requires_grad) {
                auto& gb = node(b).grad;
                for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
            }
        };
    return y;
}

Tensor Tape::concat_rows(const std::vector<Tensor>& xs) {
    if (xs.empty()) throw ContractError("concat_rows: empty list");
    const int64_t d = shape(xs[0]).size() == 2 ? shape(xs[0])[1] : -1;
    if (d < 0) throw ContractError("concat_rows: inputs must be 2-d");
    int64_t n = 0;
    bool need = false;
    for (Tensor x : xs) {
        if (shape(x).size() != 2 || shape(x)[1] != d)
            throw ContractError("concat_rows: column mismatch");
        n += shape(x)[0];
        need = need || node(x).requires_grad;
    }
    std::vector<double> out;
    out.reserve(static_cast<size_t>(n) * d);
    for (Tensor x : xs) out.insert(out.end(), value(x).begin(), value(x).end());
    Tensor y = make_node({n, d}, std::move(out), need, "concat_rows");
    if (need)
        node(y).backward_fn = [this, xs, y]() {
            const auto& g = node(y).grad;
            size_t pos = 0;
            for (Tensor x : xs) {
                const size_t len = node(x).value.size();
                if (node(x).requires_grad) {
                    auto& gx = node(x).grad;
                    for (size_t i = 0; i < len; ++i) gx[i] += g[pos + i];
                }
                pos += len;
            }
        };
    return y;
}

Tensor Tape::gather_rows(Tensor x, std::shared_ptr<const std::vector<int32_t>> rows) {
    const auto& xs = shape(x);
    if (xs.size() != 2) throw ContractError("gather_rows: input must be 2-d");
    const int64_t n = xs[0], d = xs[1];
    const int64_t m = static_cast<int64_t>(rows->size());
    const auto& xv = value(x);
    std::vector<double> out(static_cast<size_t>(m) * d);
    for (int64_t i = 0; i < m; ++i) {
        const int32_t r = (*rows)[i];
        if (r < 0 || r >= n) throw ContractError("gather_rows: row index out of range");
        std::memcpy(&out[i * d], &xv[static_cast<int64_t>(r) * d], d * sizeof(double));
    }
    Tensor y = make_node({m, d}, std::move(out), node(x).requires_grad, "gather_rows");
    if (node(x).requires_grad)
        node(y).backward_fn = [this, x, y, rows, m, d]() {
            const auto& g = node(y).grad;
            auto& gx = node(x).grad;
            for (int64_t i = 0; i < m; ++i) {
                double* dst = &gx[static_cast<int64_t>((*rows)[i]) * d];
                const double* src = &g[i * d];
                for (int64_t k = 0; k < d; ++k) dst[k] += src[k];
            }
        };
    return y;
}

Tensor Tape::slice_cols(Tensor x, int64_t start, int64_t len) {
    const auto& xs = shape(x);
    if (xs.size() != 1 || start < 0 || start + len > xs[0])
        throw ContractError("slice_cols: bad range");
    std::vector<double> out(value(x).begin() + start, value(x).begin() + start + len);
    Tensor y = make_node({len}, std::move(out), node(x).requires_grad, "slice_cols");
    if (node(x).requires_grad)
        node(y).backward_fn = [this, x, y, start, len]() {
            const auto& g = node(y).grad;
            auto& gx = node(x).grad;
            for (int64_t i = 0; i < len; ++i) gx[start + i] += g[i];
        };
    return y;
}

Tensor Tape::matvec(Tensor x, Tensor w) {
    const auto& xs = shape(x);
    const auto& ws = shape(w);
    if (xs.size() != 2 || ws.size() != 1 || xs[1] != ws[0]) throw ContractError("matvec: shape mismatch");
    const int64_t m = xs[0], d = xs[1];
    const auto& xv = value(x);
    const auto& wv = value(w);
    std::vector<double> out(m);
    for (int64_t i = 0; i < m; ++i) {
        double acc = 0.0;
        const double* xr = &xv[i * d];
        for (int64_t k = 0; k < d; ++k) acc += xr[k] * wv[k];
        out[i] = acc;
    }
    bool need = node(x).requires_grad || node(w).requires_grad;
    Tensor y = make_node({m}, std::move(out), need, "matvec");
    if (need)
        node(y).backward_fn = [this, x, w, y, m, d]() {
            const auto& g = node(y).grad;
            const auto& xv = node(x).value;
            const auto& wv = node(w).value;
            if (node(x).requires_grad) {
                auto& gx = node(x).grad;
                for (int64_t i = 0; i < m; ++i)
                    for (int64_t k = 0; k < d; ++k) gx[i * d + k] += g[i] * wv[k];
            }
            if (node(w).requires_grad) {
                auto& gw = node(w).grad;
                for (int64_t i = 0; i < m; ++i)
                    for (int64_t k = 0; k < d; ++k) gw[k] += g[i] * xv[i * d + k];
            }
        };
    return y;
}

Tensor Tape::segment_broadcast(Tensor x, std::shared_ptr<const std::vector<int64_t>> offsets) {
    const auto& xs = shape(x);
    const int64_t s = static_cast<int64_t>(offsets->size()) - 1;
    if (xs.size() != 1 || xs[0] != s) throw ContractError("segment_broadcast: shape mismatch");
    const int64_t m = offsets->back();
    const auto& xv = value(x);
    std::vector<double> out(m);
    for (int64_t j = 0; j < s; ++j)
        for (int64_t r = (*offsets)[j]; r < (*offsets)[j + 1]; ++r) out[r] = xv[j];
    Tensor y = make_node({m}, std::move(out), node(x).requires_grad, "segment_broadcast");
    if (node(x).requires_grad)
        node(y).backward_fn = [this, x, y, offsets, s]() {
            const auto& g = node(y).grad;
            auto& gx = node(x).grad;
            for (int64_t j = 0; j < s; ++j)
                for (int64_t r = (*offsets)[j]; r < (*offsets)[j + 1]; ++r) gx[j] += g[r];
        };
    return y;
}

Tensor Tape::segment_softmax_sum(Tensor values_t, Tensor logits,
                                 std::shared_ptr<const std::vector<int64_t>> offsets) {
    const auto& vs = shape(values_t);
    const auto& ls = shape(logits);
    if (vs.size() != 2 || ls.size() != 1 || ls[0] != vs[0])
        throw ContractError("segment_softmax_sum: shape mismatch");
    const int64_t m = vs[0], d = vs[1];
    check_offsets(*offsets, m, "segment_softmax_sum");
    const int64_t s = static_cast<int64_t>(offsets->size()) - 1;
    const auto& v = value(values_t);
    const auto& l = value(logits);

    // exp weights kept for backward; numerator/denominator form.
    auto weights = std::make_shared<std::vector<double>>(m);
    auto denoms = std::make_shared<std::vector<double>>(s);
    std::vector<double> out(static_cast<size_t>(s) * d, 0.0);
    for (int64_t j = 0; j < s; ++j) {
        const int64_t lo = (*offsets)[j], hi = (*offsets)[j + 1];
        double mx = l[lo];
        for (int64_t r = lo + 1; r < hi; ++r) mx = std::max(mx, l[r]);
        double den = 0.0;
        for (int64_t r = lo; r < hi; ++r) {
            (*weights)[r] = std::exp(l[r] - mx);
            den += (*weights)[r];
        }
        (*denoms)[j] = den;
        double* o = &out[j * d];
        for (int64_t r = lo; r < hi; ++r) {
            const double* row = &v[r * d];
            const double w = (*weights)[r];
            for (int64_t k = 0; k < d; ++k) o[k] += w * row[k];
        }
        for (int64_t k = 0; k < d; ++k) o[k] /= den;
    }
    bool need = node(values_t).requires_grad || node(logits).requires_grad;
    Tensor y = make_node({s, d}, std::move(out), need, "segment_softmax_sum");
    if (need)
        node(y).backward_fn = [this, values_t, logits, y, offsets, weights, denoms, s, d]() {
            const auto& g = node(y).grad;
            const auto& v = node(values_t).value;
            for (int64_t j = 0; j < s; ++j) {
                const int64_t lo = (*offsets)[j], hi = (*offsets)[j + 1];
                const double den = (*denoms)[j];
                const double* gr = &g[j * d];
                // alpha_r = weights[r]/den; d(out_j)/dvalues_r = alpha_r;
                // d(out_j)/dlogit_r = alpha_r (v_r - sum_t alpha_t v_t) . g_j
                double weighted_dot = 0.0;
                for (int64_t r = lo; r < hi; ++r) {
                    const double* row = &v[r * d];
                    double dot = 0.0;
                    for (int64_t k = 0; k < d; ++k) dot += row[k] * gr[k];
                    weighted_dot += ((*weights)[r] / den) * dot;
                }
                if (node(values_t).requires_grad) {
                    auto& gv = node(values_t).grad;
                    for (int64_t r = lo; r < hi; ++r) {
                        const double alpha = (*weights)[r] / den;
                        double* gvr = &gv[r * d];
                        for (int64_t k = 0; k < d; ++k) gvr[k] += alpha * gr[k];
                    }
                }
                if (node(logits).requires_grad) {
                    auto& gl = node(logits).grad;
                    for (int64_t r = lo; r < hi; ++r) {
                        const double alpha = (*weights)[r] / den;
                        const double* row = &v[r * d];
                        double dot = 0.0;
                        for (int64_t k = 0; k < d; ++k) dot += row[k] * gr[k];
                        gl[r] += alpha * (dot - weighted_dot);
                    }
                }
            }
        };
    return y;
}

Tensor Tape::distmult_score(Tensor hu, Tensor hv, Tensor w) {
    const auto& us = shape(hu);
    const auto& vs = shape(hv);
    const auto& ws = shape(w);
    if (us.size() != 2 || vs != us || ws.size() != 1 || ws[0] != us[1])
        throw ContractError("distmult_score: shape mismatch");
    const int64_t n = us[0], d = us[1];
    const auto& uv = value(hu);
    const auto& vv = value(hv);
    const auto& wv = value(w);
    std::vector<double> out(n);
    for (int64_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (int64_t k = 0; k < d; ++k) acc += uv[i * d + k] * wv[k] * vv[i * d + k];
        out[i] = acc;
    }
    bool need = node(hu).requires_grad || node(hv).requires_grad || node(w).requires_grad;
    Tensor y = make_node({n}, std::move(out), need, "distmult_score");
    if (need)
        node(y).backward_fn = [this, hu, hv, w, y, n, d]() {
            const auto& g = node(y).grad;
            const auto& uv = node(hu).value;
            const auto& vv = node(hv).value;
            const auto& wv = node(w).value;
            if (node(hu).requires_grad) {
                auto& gu = node(hu).grad;
                for (int64_t i = 0; i < n; ++i)
                    for (int64_t k = 0; k < d; ++k) gu[i * d + k] += g[i] * wv[k] * vv[i * d + k];
            }
            if (node(hv).requires_grad) {
                auto& gv = node(hv).grad;
                for (int64_t i = 0; i < n; ++i)
                    for (int64_t k = 0; k < d; ++k) gv[i * d + k] += g[i] * wv[k] * uv[i * d + k];
            }
            if (node(w).requires_grad) {
                auto& gw = node(w).grad;
                for (int64_t i = 0; i < n; ++i)
                    for (int64_t k = 0; k < d; ++k) gw[k] += g[i] * uv[i * d + k] * vv[i * d + k];
            }
        };
    return y;
}

Tensor Tape::softmax_cross_entropy(Tensor logits,
                                   std::shared_ptr<const std::vector<int32_t>> labels) {
    const auto& ls = shape(logits);
    if (ls.size() != 2 || static_cast<int64_t>(labels->size()) != ls[0])
        throw ContractError("softmax_cross_entropy: shape mismatch");
    const int64_t n = ls[0], C = ls[1];
    if (n == 0) throw ContractError("softmax_cross_entropy: empty batch");
    const auto& lv = value(logits);
    auto probs = std::make_shared<std::vector<double>>(static_cast<size_t>(n) * C);
    double loss = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        const int32_t label = (*labels)[i];
        if (label < 0 || label >= C)
            throw ContractError("softmax_cross_entropy: label out of range");
        const double* row = &lv[i * C];
        double mx = row[0];
        for (int64_t c = 1; c < C; ++c) mx = std::max(mx, row[c]);
        double lse = 0.0;
        for (int64_t c = 0; c < C; ++c) lse += std::exp(row[c] - mx);
        lse = mx + std::log(lse);
        loss += lse - row[label];
        for (int64_t c = 0; c < C; ++c) (*probs)[i * C + c] = std::exp(row[c] - lse);
    }
    loss /= static_cast<double>(n);
    Tensor y = make_node({1}, {loss}, node(logits).requires_grad, "softmax_cross_entropy");
    if (node(logits).requires_grad)
        node(y).backward_fn = [this, logits, y, labels, probs, n, C]() {
            const double g = node(y).grad[0];
            auto& gl = node(logits).grad;
            const double scale = g / static_cast<double>(n);
            for (int64_t i = 0; i < n; ++i)
                for (int64_t c = 0; c < C; ++c)
                    gl[i * C + c] +=
                        scale * ((*probs)[i * C + c] - (c == (*labels)[i] ? 1.0 : 0.0));
        };
    return y;
}

Tensor Tape::bce_with_logits(Tensor pos_scores, Tensor neg_scores) {
    const auto& ps = shape(pos_scores);
    const auto& ns = shape(neg_scores);
    if (ps.size() != 1 || ns.size() != 1) throw ContractError("bce_with_logits: scores must be 1-d");
    const int64_t k = ps[0], kn = ns[0];
    if (k == 0) throw ContractError("bce_with_logits: empty positive set");
    const auto& pv = value(pos_scores);
    const auto& nv = value(neg_scores);
    double loss = 0.0;
    for (int64_t i = 0; i < k; ++i) loss += softplus(-pv[i]) / static_cast<double>(k);
    for (int64_t i = 0; i < kn; ++i) loss += softplus(nv[i]) / static_cast<double>(kn);
    bool need = node(pos_scores).requires_grad || node(neg_scores).requires_grad;
    Tensor y = make_node({1}, {loss}, need, "bce_with_logits");
    if (need)
        node(y).backward_fn = [this, pos_scores, neg_scores, y, k, kn]() {
            const double g = node(y).grad[0];
            const auto& pv = node(pos_scores).value;
            const auto& nv = node(neg_scores).value;
            if (node(pos_scores).requires_grad) {
                auto& gp = node(pos_scores).grad;
                for (int64_t i = 0; i < k; ++i) {
                    const double sig = 1.0 / (1.0 + std::exp(-pv[i]));
                    gp[i] += g * (sig - 1.0) / static_cast<double>(k);
                }
            }
            if (node(neg_scores).requires_grad && kn > 0) {
                auto& gn = node(neg_scores).grad;
                for (int64_t i = 0; i < kn; ++i) {
                    const double sig = 1.0 / (1.0 + std::exp(-nv[i]));
                    gn[i] += g * sig / static_cast<double>(kn);
                }
            }
        };
    return y;
}

Tensor Tape::sum(Tensor x) {
    double acc = 0.0;
    for (double v : value(x)) acc += v;
    Tensor y = make_node({1}, {acc}, node(x).requires_grad, "sum");
    if (node(x).requires_grad)
        node(y).backward_fn = [this, x, y]() {
            const double g = node(y).grad[0];
            auto& gx = node(x).grad;
            for (double& v : gx) v += g;
        };
    return y;
}

void Tape::backward(Tensor loss) {
    Node& top = node(loss);
    if (top.value.size() != 1) throw ContractError("backward: loss must be a scalar");
    for (Node& n : nodes_)
        if (n.requires_grad) n.grad.assign(n.value.size(), 0.0);
    top.grad.assign(1, 1.0);
    for (int i = loss.id; i >= 0; --i)
        if (nodes_[i].backward_fn && !nodes_[i].grad.empty()) nodes_[i].backward_fn();
}

double grad_check(const std::function<Tensor(Tape&, const std::vector<Tensor>&)>& program,
                  const std::vector<std::vector<int64_t>>& leaf_shapes,
                  std::vector<std::vector<double>> leaf_values, int max_coords_per_leaf,
                  uint64_t sample_seed) {
    auto run = [&](const std::vector<std::vector<double>>& vals, Tape& tape,
                   std::vector<Tensor>& leaves) {
        leaves.clear();
        for (size_t i = 0; i < leaf_shapes.size(); ++i)
            leaves.push_back(tape.leaf(leaf_shapes[i], vals[i], true));
        return program(tape, leaves);
    };

    Tape tape;
    std::vector<Tensor> leaves;
    Tensor loss = run(leaf_values, tape, leaves);
    tape.backward(loss);

    Rng rng(sample_seed);
    double max_rel = 0.0;
    for (size_t li = 0; li < leaf_shapes.size(); ++li) {
        const auto& analytic = tape.grad(leaves[li]);
        const size_t n = leaf_values[li].size();
        std::vector<size_t> coords(n);
        for (size_t i = 0; i < n; ++i) coords[i] = i;
        if (static_cast<int>(n) > max_coords_per_leaf) {
            for (size_t i = 0; i < n; ++i) std::swap(coords[i], coords[uniform_index(rng, n)]);
            coords.resize(max_coords_per_leaf);
        }
        for (size_t c : coords) {
            const double x0 = leaf_values[li][c];
            const double h = 1e-5 * (1.0 + std::fabs(x0));
            leaf_values[li][c] = x0 + h;
            Tape tp;
            std::vector<Tensor> lp;
            const double f_plus = run(leaf_values, tp, lp).scalar();
            leaf_values[li][c] = x0 - h;
            Tape tm;
            std::vector<Tensor> lm;
            const double f_minus = run(leaf_values, tm, lm).scalar();
            leaf_values[li][c] = x0;
            const double fd = (f_plus - f_minus) / (2.0 * h);
            const double rel =
                std::fabs(analytic[c] - fd) / std::max({1.0, std::fabs(analytic[c]), std::fabs(fd)});
            max_rel = std::max(max_rel, rel);
        }
    }
    return max_rel;
}

} // namespace mecch
