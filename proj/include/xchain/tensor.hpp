#pragma once

// Dense float64 tensors with reverse-mode automatic differentiation.
//
// A Tensor is a cheap shared handle: copies alias the same storage and
// clone() makes a deep copy. Ops are free functions; passing a Tape records
// one node per op. Tape::backward walks the record in reverse creation
// order, which is a valid reverse topological order because every operand
// exists before its result. Execution is single-threaded and deterministic.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "xchain/errors.hpp"
#include "xchain/rng.hpp"

namespace xchain {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::string s = "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ", ";
        s += std::to_string(shape[i]);
    }
    return s + ")";
}

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape) {
        Tensor t;
        t.impl_ = std::make_shared<Storage>();
        const std::size_t n = shape_numel(shape);
        t.impl_->shape = std::move(shape);
        t.impl_->value.assign(n, 0.0);
        return t;
    }
    static Tensor full(Shape shape, double value) {
        Tensor t = zeros(std::move(shape));
        std::fill(t.impl_->value.begin(), t.impl_->value.end(), value);
        return t;
    }
    static Tensor from(Shape shape, std::vector<double> values) {
        if (shape_numel(shape) != values.size())
            throw DimensionError("Tensor::from: shape " + shape_str(shape) + " needs " +
                                 std::to_string(shape_numel(shape)) + " values, got " +
                                 std::to_string(values.size()));
        Tensor t;
        t.impl_ = std::make_shared<Storage>();
        t.impl_->shape = std::move(shape);
        t.impl_->value = std::move(values);
        return t;
    }
    static Tensor scalar(double value) { return from({1}, {value}); }

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    std::size_t rank() const { return impl_->shape.size(); }
    std::size_t size() const { return impl_->value.size(); }

    std::size_t rows() const { require_rank2(); return impl_->shape[0]; }
    std::size_t cols() const { require_rank2(); return impl_->shape[1]; }

    double* data() { return impl_->value.data(); }
    const double* data() const { return impl_->value.data(); }
    std::vector<double>& values() { return impl_->value; }
    const std::vector<double>& values() const { return impl_->value; }

    double item() const {
        if (size() != 1) throw UsageError("Tensor::item: tensor has shape " + shape_str(shape()));
        return impl_->value[0];
    }

    bool has_grad() const { return defined() && !impl_->grad.empty(); }
    const std::vector<double>& grad() const {
        if (!has_grad()) throw UsageError("Tensor::grad: no gradient has been accumulated");
        return impl_->grad;
    }
    // Gradient buffer for autograd internals; allocated as zeros on demand.
    std::vector<double>& grad_buffer() {
        if (impl_->grad.empty()) impl_->grad.assign(impl_->value.size(), 0.0);
        return impl_->grad;
    }
    void zero_grad() { impl_->grad.clear(); }

    // Index of the op that produced this tensor, -1 for leaves.
    int node() const { return defined() ? impl_->node : -1; }
    void set_node(int idx) { impl_->node = idx; }

    Tensor clone() const {
        Tensor t;
        t.impl_ = std::make_shared<Storage>();
        t.impl_->shape = impl_->shape;
        t.impl_->value = impl_->value;
        return t;
    }

    // Handles compare by identity, like pointers.
    bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

private:
    struct Storage {
        Shape shape;
        std::vector<double> value;
        std::vector<double> grad; // empty until first accumulation
        int node = -1;
    };

    void require_rank2() const {
        if (rank() != 2)
            throw DimensionError("expected a rank-2 tensor, got shape " + shape_str(shape()));
    }

    std::shared_ptr<Storage> impl_;
};

// Ordered record of performed operations. Entry i only references tensors
// produced at indices < i, so a reverse sweep is a reverse topological order.
class Tape {
public:
    std::size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

    int record(std::function<void()> pull) {
        nodes_.push_back(std::move(pull));
        return static_cast<int>(nodes_.size()) - 1;
    }

    // Seeds d(loss)/d(loss) = 1 and pulls gradients back to every reachable
    // tensor. `loss` must be a scalar produced through this record.
    void backward(const Tensor& loss) {
        if (!loss.defined() || loss.node() < 0 ||
            loss.node() >= static_cast<int>(nodes_.size()))
            throw UsageError("backward: tensor is not connected to the computation record");
        if (loss.size() != 1)
            throw UsageError("backward: loss must be a scalar, got shape " + shape_str(loss.shape()));
        Tensor l = loss;
        l.grad_buffer()[0] += 1.0;
        for (int i = loss.node(); i >= 0; --i) nodes_[i]();
    }

private:
    std::vector<std::function<void()>> nodes_;
};

namespace detail {

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw DimensionError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()) + " do not match");
}

inline void require_rank(const Tensor& t, std::size_t r, const char* op) {
    if (t.rank() != r)
        throw DimensionError(std::string(op) + ": expected rank " + std::to_string(r) +
                             ", got shape " + shape_str(t.shape()));
}

} // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and shape ops
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b, Tape* tape = nullptr) {
    detail::require_same_shape(a, b, "add");
    Tensor out = Tensor::zeros(a.shape());
    const std::size_t n = a.size();
    for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
    if (tape) {
        Tensor oh = out, ah = a, bh = b;
        out.set_node(tape->record([oh, ah, bh]() mutable {
            if (!oh.has_grad()) return;
            const auto& go = oh.grad();
            auto& ga = ah.grad_buffer();
            auto& gb = bh.grad_buffer();
            for (std::size_t i = 0; i < go.size(); ++i) {
                ga[i] += go[i];
                gb[i] += go[i];
            }
        }));
    }
    return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b, Tape* tape = nullptr) {
    detail::require_same_shape(a, b, "mul");
    Tensor out = Tensor::zeros(a.shape());
    const std::size_t n = a.size();
    for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
    if (tape) {
        Tensor oh = out, ah = a, bh = b;
        out.set_node(tape->record([oh, ah, bh]() mutable {
            if (!oh.has_grad()) return;
            const auto& go = oh.grad();
            auto& ga = ah.grad_buffer();
            auto& gb = bh.grad_buffer();
            for (std::size_t i = 0; i < go.size(); ++i) {
                ga[i] += go[i] * bh.data()[i];
                gb[i] += go[i] * ah.data()[i];
            }
        }));
    }
    return out;
}

inline Tensor scale(const Tensor& a, double c, Tape* tape = nullptr) {
    Tensor out = Tensor::zeros(a.shape());
    const std::size_t n = a.size();
    for (std::size_t i = 0; i < n; ++i) out.data()[i] = c * a.data()[i];
    if (tape) {
        Tensor oh = out, ah = a;
        out.set_node(tape->record([oh, ah, c]() mutable {
            if (!oh.has_grad()) return;
            const auto& go = oh.grad();
            auto& ga = ah.grad_buffer();
            for (std::size_t i = 0; i < go.size(); ++i) ga[i] += c * go[i];
        }));
    }
    return out;
}

inline Tensor sum(const Tensor& a, Tape* tape = nullptr) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a.data()[i];
    Tensor out = Tensor::scalar(s);
    if (tape) {
        Tensor oh = out, ah = a;
        out.set_node(tape->record([oh, ah]() mutable {
            if (!oh.has_grad()) return;
            const double go = oh.grad()[0];
            auto& ga = ah.grad_buffer();
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go;
        }));
    }
    return out;
}

inline Tensor transpose(const Tensor& a, Tape* tape = nullptr) {
    detail::require_rank(a, 2, "transpose");
    const std::size_t m = a.rows(), n = a.cols();
    Tensor out = Tensor::zeros({n, m});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out.data()[j * m + i] = a.data()[i * n + j];
    if (tape) {
        Tensor oh = out, ah = a;
        out.set_node(tape->record([oh, ah, m, n]() mutable {
            if (!oh.has_grad()) return;
            const auto& go = oh.grad();
            auto& ga = ah.grad_buffer();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += go[j * m + i];
        }));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Matrix product. Backward: dA = dC.B^T, dB = A^T.dC.
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b, Tape* tape = nullptr) {
    detail::require_rank(a, 2, "matmul");
    detail::require_rank(b, 2, "matmul");
    if (a.cols() != b.rows())
        throw DimensionError("matmul: inner dimensions disagree, " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    Tensor out = Tensor::zeros({m, n});
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double aik = pa[i * k + kk];
            if (aik == 0.0) continue;
            const double* brow = pb + kk * n;
            double* orow = po + i * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += aik * brow[j];
        }
    }
    if (tape) {
        Tensor oh = out, ah = a, bh = b;
        out.set_node(tape->record([oh, ah, bh, m, k, n]() mutable {
            if (!oh.has_grad()) return;
            const auto& go = oh.grad();
            auto& ga = ah.grad_buffer();
            auto& gb = bh.grad_buffer();
            const double* pb2 = bh.data();
            const double* pa2 = ah.data();
            // dA[i,k] += sum_j dC[i,j] * B[k,j]
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t kk = 0; kk < k; ++kk) {
                    double s = 0.0;
                    const double* gorow = go.data() + i * n;
                    const double* brow = pb2 + kk * n;
                    for (std::size_t j = 0; j < n; ++j) s += gorow[j] * brow[j];
                    ga[i * k + kk] += s;
                }
            // dB[k,j] += sum_i A[i,k] * dC[i,j]
            for (std::size_t i = 0; i < m; ++i) {
                const double* gorow = go.data() + i * n;
                for (std::size_t kk = 0; kk < k; ++kk) {
                    const double aik = pa2[i * k + kk];
                    if (aik == 0.0) continue;
                    double* gbrow = gb.data() + kk * n;
                    for (std::size_t j = 0; j < n; ++j) gbrow[j] += aik * gorow[j];
                }
            }
        }));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Row/column selection and concatenation
// ---------------------------------------------------------------------------

// Gathers rows of a rank-2 tensor; backward scatter-adds. Serves as both the
// embedding lookup and position pooling primitive.
inline Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& indices,
                          Tape* tape = nullptr) {
    detail::require_rank(x, 2, "gather_rows");
    const std::size_t n = x.cols();
    for (std::size_t idx : indices)
        if (idx >= x.rows())
            throw IndexError("gather_rows: row " + std::to_string(idx) + " out of range for shape " +
                             shape_str(x.shape()));
    Tensor out = Tensor::zeros({indices.size(), n});
    for (std::size_t i = 0; i < indices.size(); ++i)
        std::copy_n(x.data() + indices[i] * n, n, out.data() + i * n);
    if (tape) {
        Tensor oh = out, xh = x;
        out.set_node(tape->record([oh, xh, indices, n]() mutable {
            if (!oh.has_grad()) return;
            const auto& go = oh.grad();
            auto& gx = xh.grad_buffer();
            for (std::size_t i = 0; i < indices.size(); ++i) {
                const double* src = go.data() + i * n;
                double* dst = gx.data() + indices[i] * n;
                for (std::size_t j = 0; j < n; ++j) dst[j] += src[j];
            }
        }));
    }
    return out;
}

inline Tensor slice_cols(const Tensor& x, std::size_t c0, std::size_t c1, Tape* tape = nullptr) {
    detail::require_rank(x, 2, "slice_cols");
    if (c0 >= c1 || c1 > x.cols())
        throw DimensionError("slice_cols: range [" + std::to_string(c0) + ", " + std::to_string(c1) +
                             ") invalid for shape " + shape_str(x.shape()));
    const std::size_t m = x.rows(), n = x.cols(), w = c1 - c0;
    Tensor out = Tensor::zeros({m, w});
    for (std::size_t i = 0; i < m; ++i)
        std::copy_n(x.data() + i * n + c0, w, out.data() + i * w);
    if (tape) {
        Tensor oh = out, xh = x;
        out.set_node(tape->record([oh, xh, m, n, w, c0]() mutable {
            if (!oh.has_grad()) return;
            const auto& go = oh.grad();
            auto& gx = xh.grad_buffer();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < w; ++j) gx[i * n + c0 + j] += go[i * w + j];
        }));
    }
    return out;
}

inline Tensor concat_cols(const std::vector<Tensor>& parts, Tape* tape = nullptr) {
    if (parts.empty()) throw UsageError("concat_cols: no tensors given");
    const std::size_t m = parts[0].rows();
    std::size_t total = 0;
    for (const Tensor& p : parts) {
        detail::require_rank(p, 2, "concat_cols");
        if (p.rows() != m)
            throw DimensionError("concat_cols: row counts differ, " + shape_str(parts[0].shape()) +
                                 " vs " + shape_str(p.shape()));
        total += p.cols();
    }
    Tensor out = Tensor::zeros({m, total});
    std::size_t off = 0;
    for (const Tensor& p : parts) {
        const std::size_t w = p.cols();
        for (std::size_t i = 0; i < m; ++i)
            std::copy_n(p.data() + i * w, w, out.data() + i * total + off);
        off += w;
    }
    if (tape) {
        Tensor oh = out;
        std::vector<Tensor> hs = parts;
        out.set_node(tape->record([oh, hs, m, total]() mutable {
            if (!oh.has_grad()) return;
            const auto& go = oh.grad();
            std::size_t off2 = 0;
            for (Tensor& p : hs) {
                const std::size_t w = p.cols();
                auto& gp = p.grad_buffer();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < w; ++j) gp[i * w + j] += go[i * total + off2 + j];
                off2 += w;
            }
        }));
    }
    return out;
}

inline Tensor concat_rows(const std::vector<Tensor>& parts, Tape* tape = nullptr) {
    if (parts.empty()) throw UsageError("concat_rows: no tensors given");
    const std::size_t n = parts[0].cols();
    std::size_t total = 0;
    for (const Tensor& p : parts) {
        detail::require_rank(p, 2, "concat_rows");
        if (p.cols() != n)
            throw DimensionError("concat_rows: column counts differ, " + shape_str(parts[0].shape()) +
                                 " vs " + shape_str(p.shape()));
        total += p.rows();
    }
    Tensor out = Tensor::zeros({total, n});
    std::size_t off = 0;
    for (const Tensor& p : parts) {
        std::copy_n(p.data(), p.size(), out.data() + off * n);
        off += p.rows();
    }
    if (tape) {
        Tensor oh = out;
        std::vector<Tensor> hs = parts;
        out.set_node(tape->record([oh, hs, n]() mutable {
            if (!oh.has_grad()) return;
            const auto& go = oh.grad();
            std::size_t off2 = 0;
            for (Tensor& p : hs) {
                auto& gp = p.grad_buffer();
                for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += go[off2 * n + i];
                off2 += p.rows();
            }
        }));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Broadcast adds the model needs: a bias row, and a constant row (used for
// additive attention masks; constants carry no gradient).
// ---------------------------------------------------------------------------

inline Tensor add_row_bias(const Tensor& x, const Tensor& bias, Tape* tape = nullptr) {
    detail::require_rank(x, 2, "add_row_bias");
    detail::require_rank(bias, 1, "add_row_bias");
    if (bias.size() != x.cols())
        throw DimensionError("add_row_bias: bias " + shape_str(bias.shape()) +
                             " does not match columns of " + shape_str(x.shape()));
    const std::size_t m = x.rows(), n = x.cols();
    Tensor out = Tensor::zeros({m, n});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out.data()[i * n + j] = x.data()[i * n + j] + bias.data()[j];
    if (tape) {
        Tensor oh = out, xh = x, bh = bias;
        out.set_node(tape->record([oh, xh, bh, m, n]() mutable {
            if (!oh.has_grad()) return;
            const auto& go = oh.grad();
            auto& gx = xh.grad_buffer();
            auto& gb = bh.grad_buffer();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) {
                    gx[i * n + j] += go[i * n + j];
                    gb[j] += go[i * n + j];
                }
        }));
    }
    return out;
}

inline Tensor add_row_const(const Tensor& x, const std::vector<double>& row, Tape* tape = nullptr) {
    detail::require_rank(x, 2, "add_row_const");
    if (row.size() != x.cols())
        throw DimensionError("add_row_const: row of length " + std::to_string(row.size()) +
                             " does not match columns of " + shape_str(x.shape()));
    const std::size_t m = x.rows(), n = x.cols();
    Tensor out = Tensor::zeros({m, n});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out.data()[i * n + j] = x.data()[i * n + j] + row[j];
    if (tape) {
        Tensor oh = out, xh = x;
        out.set_node(tape->record([oh, xh]() mutable {
            if (!oh.has_grad()) return;
            const auto& go = oh.grad();
            auto& gx = xh.grad_buffer();
            for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
        }));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Softmax with max-subtraction. Rank 1 (axis 0) or rank 2 (axis 0/1). Each
// slice along the axis sums to 1; NaN input is rejected.
// ---------------------------------------------------------------------------

inline Tensor softmax(const Tensor& x, std::size_t axis, Tape* tape = nullptr) {
    if (x.rank() != 1 && x.rank() != 2)
        throw DimensionError("softmax: expected rank 1 or 2, got shape " + shape_str(x.shape()));
    if (axis >= x.rank())
        throw DimensionError("softmax: axis " + std::to_string(axis) + " invalid for shape " +
                             shape_str(x.shape()));
    for (std::size_t i = 0; i < x.size(); ++i)
        if (std::isnan(x.data()[i])) throw NumericError("softmax: NaN in input");

    // View the input as `slices` independent rows of length `len`.
    const bool row_major = (x.rank() == 1) || (axis == 1);
    const std::size_t len = x.rank() == 1 ? x.size() : (axis == 1 ? x.cols() : x.rows());
    const std::size_t slices = x.size() / len;
    const std::size_t stride = row_major ? 1 : x.cols();
    const std::size_t slice_step = row_major ? len : 1;

    Tensor out = Tensor::zeros(x.shape());
    for (std::size_t s = 0; s < slices; ++s) {
        const double* xs = x.data() + s * slice_step;
        double* os = out.data() + s * slice_step;
        double mx = xs[0];
        for (std::size_t i = 1; i < len; ++i) mx = std::max(mx, xs[i * stride]);
        double denom = 0.0;
        for (std::size_t i = 0; i < len; ++i) {
            const double e = std::exp(xs[i * stride] - mx);
            os[i * stride] = e;
            denom += e;
        }
        for (std::size_t i = 0; i < len; ++i) os[i * stride] /= denom;
    }
    if (tape) {
        Tensor oh = out, xh = x;
        out.set_node(tape->record([oh, xh, slices, len, stride, slice_step]() mutable {
            if (!oh.has_grad()) return;
            const auto& go = oh.grad();
            auto& gx = xh.grad_buffer();
            const double* y = oh.data();
            for (std::size_t s = 0; s < slices; ++s) {
                const std::size_t base = s * slice_step;
                double dot = 0.0;
                for (std::size_t i = 0; i < len; ++i)
                    dot += go[base + i * stride] * y[base + i * stride];
                for (std::size_t i = 0; i < len; ++i) {
                    const std::size_t k = base + i * stride;
                    gx[k] += y[k] * (go[k] - dot);
                }
            }
        }));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Layer normalization over the last axis of a rank-2 tensor, then affine
// scale/shift. Population variance.
// ---------------------------------------------------------------------------

inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps,
                         Tape* tape = nullptr) {
    detail::require_rank(x, 2, "layer_norm");
    detail::require_rank(gamma, 1, "layer_norm");
    detail::require_rank(beta, 1, "layer_norm");
    if (gamma.size() != x.cols() || beta.size() != x.cols())
        throw DimensionError("layer_norm: gamma/beta must match columns of " + shape_str(x.shape()));
    const std::size_t m = x.rows(), n = x.cols();
    Tensor out = Tensor::zeros({m, n});
    std::vector<double> xhat(m * n);
    std::vector<double> inv_std(m);
    for (std::size_t i = 0; i < m; ++i) {
        const double* xr = x.data() + i * n;
        double mean = 0.0;
        for (std::size_t j = 0; j < n; ++j) mean += xr[j];
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double d = xr[j] - mean;
            var += d * d;
        }
        var /= static_cast<double>(n);
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[i] = is;
        for (std::size_t j = 0; j < n; ++j) {
            const double h = (xr[j] - mean) * is;
            xhat[i * n + j] = h;
            out.data()[i * n + j] = h * gamma.data()[j] + beta.data()[j];
        }
    }
    if (tape) {
        Tensor oh = out, xh = x, gh = gamma, bh = beta;
        out.set_node(tape->record([oh, xh, gh, bh, xhat = std::move(xhat),
                                   inv_std = std::move(inv_std), m, n]() mutable {
            if (!oh.has_grad()) return;
            const auto& go = oh.grad();
            auto& gx = xh.grad_buffer();
            auto& gg = gh.grad_buffer();
            auto& gb = bh.grad_buffer();
            for (std::size_t i = 0; i < m; ++i) {
                const double* gor = go.data() + i * n;
                const double* hr = xhat.data() + i * n;
                double mean_dh = 0.0, mean_dh_h = 0.0;
                for (std::size_t j = 0; j < n; ++j) {
                    const double dh = gor[j] * gh.data()[j];
                    mean_dh += dh;
                    mean_dh_h += dh * hr[j];
                }
                mean_dh /= static_cast<double>(n);
                mean_dh_h /= static_cast<double>(n);
                for (std::size_t j = 0; j < n; ++j) {
                    const double dh = gor[j] * gh.data()[j];
                    gx[i * n + j] += inv_std[i] * (dh - mean_dh - hr[j] * mean_dh_h);
                    gg[j] += gor[j] * hr[j];
                    gb[j] += gor[j];
                }
            }
        }));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Exact GELU: x * Phi(x).
// ---------------------------------------------------------------------------

inline Tensor gelu(const Tensor& x, Tape* tape = nullptr) {
    Tensor out = Tensor::zeros(x.shape());
    const std::size_t n = x.size();
    for (std::size_t i = 0; i < n; ++i) {
        const double v = x.data()[i];
        out.data()[i] = 0.5 * v * (1.0 + std::erf(v * 0.7071067811865475));
    }
    if (tape) {
        Tensor oh = out, xh = x;
        out.set_node(tape->record([oh, xh]() mutable {
            if (!oh.has_grad()) return;
            const auto& go = oh.grad();
            auto& gx = xh.grad_buffer();
            for (std::size_t i = 0; i < go.size(); ++i) {
                const double v = xh.data()[i];
                const double cdf = 0.5 * (1.0 + std::erf(v * 0.7071067811865475));
                const double pdf = std::exp(-0.5 * v * v) * 0.3989422804014327;
                gx[i] += go[i] * (cdf + v * pdf);
            }
        }));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Inverted dropout. rate == 0 is the identity; otherwise mask/(1-rate) with
// the mask drawn from the caller's Rng.
// ---------------------------------------------------------------------------

inline Tensor dropout(const Tensor& x, double rate, Rng& rng, Tape* tape = nullptr) {
    if (rate < 0.0 || rate >= 1.0)
        throw ConfigError("dropout: rate must be in [0, 1), got " + std::to_string(rate));
    if (rate == 0.0) return x;
    Tensor out = Tensor::zeros(x.shape());
    std::vector<std::uint8_t> keep(x.size());
    const double inv = 1.0 / (1.0 - rate);
    for (std::size_t i = 0; i < x.size(); ++i) {
        keep[i] = rng.bernoulli(rate) ? 0 : 1;
        out.data()[i] = keep[i] ? x.data()[i] * inv : 0.0;
    }
    if (tape) {
        Tensor oh = out, xh = x;
        out.set_node(tape->record([oh, xh, keep = std::move(keep), inv]() mutable {
            if (!oh.has_grad()) return;
            const auto& go = oh.grad();
            auto& gx = xh.grad_buffer();
            for (std::size_t i = 0; i < go.size(); ++i)
                if (keep[i]) gx[i] += go[i] * inv;
        }));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Mean over the batch of -log softmax(logits)[target]. Targets index the
// columns of a rank-2 logits tensor.
// ---------------------------------------------------------------------------

inline Tensor cross_entropy(const Tensor& logits, const std::vector<std::size_t>& targets,
                            Tape* tape = nullptr) {
    detail::require_rank(logits, 2, "cross_entropy");
    const std::size_t batch = logits.rows(), k = logits.cols();
    if (targets.size() != batch)
        throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                             std::to_string(batch) + " rows");
    if (batch == 0) throw InputError("cross_entropy: empty batch");
    for (std::size_t t : targets)
        if (t >= k)
            throw IndexError("cross_entropy: target " + std::to_string(t) + " out of range for " +
                             std::to_string(k) + " classes");
    std::vector<double> probs(batch * k);
    double loss = 0.0;
    for (std::size_t i = 0; i < batch; ++i) {
        const double* row = logits.data() + i * k;
        double mx = row[0];
        for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
        double denom = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            const double e = std::exp(row[j] - mx);
            probs[i * k + j] = e;
            denom += e;
        }
        for (std::size_t j = 0; j < k; ++j) probs[i * k + j] /= denom;
        loss -= std::log(probs[i * k + targets[i]]);
    }
    loss /= static_cast<double>(batch);
    Tensor out = Tensor::scalar(loss);
    if (tape) {
        Tensor oh = out, lh = logits;
        out.set_node(tape->record([oh, lh, probs = std::move(probs), targets, batch, k]() mutable {
            if (!oh.has_grad()) return;
            const double go = oh.grad()[0];
            auto& gl = lh.grad_buffer();
            const double invb = 1.0 / static_cast<double>(batch);
            for (std::size_t i = 0; i < batch; ++i)
                for (std::size_t j = 0; j < k; ++j) {
                    double g = probs[i * k + j];
                    if (j == targets[i]) g -= 1.0;
                    gl[i * k + j] += go * invb * g;
                }
        }));
    }
    return out;
}

} // namespace xchain
