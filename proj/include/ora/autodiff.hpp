#pragma once

// Minimal reverse-mode automatic differentiation over dense arrays of rank
// at most 3, stored row-major. A Tape records every forward op together with
// a closure that propagates gradients to the op's inputs. Each tape supports
// exactly one backward pass.
//
// Every forward op checks its output for NaN/Inf and throws NumericError.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numbers>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "ora/util.hpp"

namespace ora::ad {

using Shape = std::vector<size_t>;

inline size_t numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
    std::string out = "(";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + ")";
}

template <class Real>
struct Tensor {
    Shape shape;
    std::vector<Real> data;

    Tensor() = default;
    explicit Tensor(Shape s, Real fill = Real(0)) : shape(std::move(s)), data(numel(shape), fill) { check_rank(); }
    Tensor(Shape s, std::vector<Real> d) : shape(std::move(s)), data(std::move(d)) {
        check_rank();
        if (data.size() != numel(shape))
            throw ShapeError("tensor data length " + std::to_string(data.size()) + " does not match shape " +
                             shape_str(shape));
    }

    size_t size() const noexcept { return data.size(); }
    size_t rank() const noexcept { return shape.size(); }
    Real& operator[](size_t i) { return data[i]; }
    Real operator[](size_t i) const { return data[i]; }

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    void check_rank() const {
        if (shape.empty() || shape.size() > 3) throw ShapeError("tensor rank must be 1..3, got " + shape_str(shape));
    }
};

template <class Real>
class Tape;

/// Handle to a node on a tape.
template <class Real>
struct Var {
    Tape<Real>* tape = nullptr;
    size_t id = 0;

    const Shape& shape() const { return tape->node(id).shape; }
    const std::vector<Real>& value() const { return tape->node(id).value; }
    size_t size() const { return value().size(); }
    Real item() const {
        if (size() != 1) throw ShapeError("item() on non-scalar " + shape_str(shape()));
        return value()[0];
    }
};

template <class Real>
class Tape {
public:
    struct Node {
        const char* op = "leaf";
        Shape shape;
        std::vector<Real> value;
        std::vector<Real> grad;
        bool requires_grad = false;
        std::function<void(Tape&)> backward;
    };

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var<Real> leaf(Tensor<Real> t, bool requires_grad = true) {
        return push("leaf", std::move(t.shape), std::move(t.data), requires_grad, nullptr);
    }
    Var<Real> constant(Tensor<Real> t) { return leaf(std::move(t), false); }

    /// Records an op output. `backward` runs only if the output requires grad.
    Var<Real> push(const char* op, Shape shape, std::vector<Real> value, bool requires_grad,
                   std::function<void(Tape&)> backward) {
        if (used_) throw Error("autodiff", "tape already consumed by backward()");
        for (Real x : value)
            if (!std::isfinite(x)) throw NumericError(std::string(op) + ": non-finite output");
        Node n;
        n.op = op;
        n.shape = std::move(shape);
        n.value = std::move(value);
        n.requires_grad = requires_grad;
        n.backward = std::move(backward);
        nodes_.push_back(std::move(n));
        return Var<Real>{this, nodes_.size() - 1};
    }

    const Node& node(size_t id) const { return nodes_.at(id); }
    size_t size() const noexcept { return nodes_.size(); }
    bool requires_grad(size_t id) const { return nodes_[id].requires_grad; }

    /// Gradient buffer of a node, zero-allocated on first use.
    std::vector<Real>& grad_buffer(size_t id) {
        Node& n = nodes_[id];
        if (n.grad.empty()) n.grad.assign(n.value.size(), Real(0));
        return n.grad;
    }

    const std::vector<Real>& value(size_t id) const { return nodes_[id].value; }

    void backward(Var<Real> loss) {
        if (loss.tape != this) throw Error("autodiff", "loss belongs to a different tape");
        if (used_) throw Error("autodiff", "tape already consumed by backward()");
        if (nodes_[loss.id].value.size() != 1)
            throw ShapeError("backward: loss must be scalar, got " + shape_str(nodes_[loss.id].shape));
        used_ = true;
        if (!nodes_[loss.id].requires_grad) return;
        grad_buffer(loss.id)[0] = Real(1);
        for (size_t i = loss.id + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
            n.backward(*this);
        }
    }

    /// Gradient of a node after backward(); zeros if nothing reached it.
    std::vector<Real> grad(Var<Real> v) const {
        const Node& n = nodes_.at(v.id);
        if (n.grad.empty()) return std::vector<Real>(n.value.size(), Real(0));
        return n.grad;
    }

    bool consumed() const noexcept { return used_; }

private:
    std::vector<Node> nodes_;
    bool used_ = false;
};

namespace kernel {

// C(MxN) += A(MxK) * B(KxN)
template <class Real>
void gemm_nn(size_t M, size_t N, size_t K, const Real* A, const Real* B, Real* C) {
    for (size_t i = 0; i < M; ++i) {
        Real* c = C + i * N;
        for (size_t k = 0; k < K; ++k) {
            const Real a = A[i * K + k];
            const Real* b = B + k * N;
#pragma omp simd
            for (size_t j = 0; j < N; ++j) c[j] += a * b[j];
        }
    }
}

// C(MxN) += A(MxK) * B^T, B stored NxK
template <class Real>
void gemm_nt(size_t M, size_t N, size_t K, const Real* A, const Real* B, Real* C) {
    for (size_t i = 0; i < M; ++i) {
        const Real* a = A + i * K;
        for (size_t j = 0; j < N; ++j) {
            const Real* b = B + j * K;
            Real s = 0;
#pragma omp simd reduction(+ : s)
            for (size_t k = 0; k < K; ++k) s += a[k] * b[k];
            C[i * N + j] += s;
        }
    }
}

// C(MxN) += A^T * B, A stored KxM, B stored KxN
template <class Real>
void gemm_tn(size_t M, size_t N, size_t K, const Real* A, const Real* B, Real* C) {
    for (size_t k = 0; k < K; ++k) {
        const Real* b = B + k * N;
        for (size_t i = 0; i < M; ++i) {
            const Real a = A[k * M + i];
            Real* c = C + i * N;
#pragma omp simd
            for (size_t j = 0; j < N; ++j) c[j] += a * b[j];
        }
    }
}

}  // namespace kernel

namespace detail {

template <class Real>
void same_tape(const Var<Real>& a, const Var<Real>& b, const char* op) {
    if (a.tape != b.tape) throw Error("autodiff", std::string(op) + ": operands on different tapes");
}

template <class Real>
bool any_grad(const Var<Real>& a) {
    return a.tape->requires_grad(a.id);
}

template <class Real>
bool any_grad(const Var<Real>& a, const Var<Real>& b) {
    return a.tape->requires_grad(a.id) || b.tape->requires_grad(b.id);
}

inline size_t last_dim(const Shape& s) { return s.back(); }
inline size_t rows_of(const Shape& s) { return numel(s) / s.back(); }

}  // namespace detail

/// (MxK)(KxN) or batched (BxMxK)(BxKxN).
template <class Real>
Var<Real> matmul(Var<Real> a, Var<Real> b) {
    detail::same_tape(a, b, "matmul");
    const Shape sa = a.shape(), sb = b.shape();
    size_t batch = 1, M, K, N;
    Shape out_shape;
    if (sa.size() == 2 && sb.size() == 2 && sa[1] == sb[0]) {
        M = sa[0], K = sa[1], N = sb[1];
        out_shape = {M, N};
    } else if (sa.size() == 3 && sb.size() == 3 && sa[0] == sb[0] && sa[2] == sb[1]) {
        batch = sa[0], M = sa[1], K = sa[2], N = sb[2];
        out_shape = {batch, M, N};
    } else {
        throw ShapeError("matmul: incompatible shapes " + shape_str(sa) + " and " + shape_str(sb));
    }
    std::vector<Real> out(batch * M * N, Real(0));
    const auto& av = a.value();
    const auto& bv = b.value();
    for (size_t p = 0; p < batch; ++p)
        kernel::gemm_nn(M, N, K, av.data() + p * M * K, bv.data() + p * K * N, out.data() + p * M * N);
    const size_t ia = a.id, ib = b.id;
    return a.tape->push("matmul", out_shape, std::move(out), detail::any_grad(a, b),
                        [ia, ib, batch, M, N, K, self = a.tape->size()](Tape<Real>& t) {
                            const auto& g = t.grad_buffer(self);
                            if (t.requires_grad(ia)) {
                                auto& ga = t.grad_buffer(ia);
                                const auto& bv = t.value(ib);
                                for (size_t p = 0; p < batch; ++p)
                                    kernel::gemm_nt(M, K, N, g.data() + p * M * N, bv.data() + p * K * N,
                                                    ga.data() + p * M * K);
                            }
                            if (t.requires_grad(ib)) {
                                auto& gb = t.grad_buffer(ib);
                                const auto& av = t.value(ia);
                                for (size_t p = 0; p < batch; ++p)
                                    kernel::gemm_tn(K, N, M, av.data() + p * M * K, g.data() + p * M * N,
                                                    gb.data() + p * K * N);
                            }
                        });
}

/// Swaps the last two axes.
template <class Real>
Var<Real> transpose(Var<Real> a) {
    const Shape s = a.shape();
    if (s.size() < 2) throw ShapeError("transpose: rank must be 2 or 3, got " + shape_str(s));
    const size_t batch = s.size() == 3 ? s[0] : 1, R = s[s.size() - 2], C = s.back();
    Shape os = s;
    std::swap(os[os.size() - 1], os[os.size() - 2]);
    const auto& v = a.value();
    std::vector<Real> out(v.size());
    for (size_t p = 0; p < batch; ++p)
        for (size_t r = 0; r < R; ++r)
            for (size_t c = 0; c < C; ++c) out[p * R * C + c * R + r] = v[p * R * C + r * C + c];
    const size_t ia = a.id;
    return a.tape->push("transpose", os, std::move(out), detail::any_grad(a),
                        [ia, batch, R, C, self = a.tape->size()](Tape<Real>& t) {
                            const auto& g = t.grad_buffer(self);
                            auto& ga = t.grad_buffer(ia);
                            for (size_t p = 0; p < batch; ++p)
                                for (size_t r = 0; r < R; ++r)
                                    for (size_t c = 0; c < C; ++c)
                                        ga[p * R * C + r * C + c] += g[p * R * C + c * R + r];
                        });
}

/// (A,B,C) -> (B,A,C).
template <class Real>
Var<Real> swap01(Var<Real> a) {
    const Shape s = a.shape();
    if (s.size() != 3) throw ShapeError("swap01: rank must be 3, got " + shape_str(s));
    const size_t A = s[0], B = s[1], C = s[2];
    const auto& v = a.value();
    std::vector<Real> out(v.size());
    for (size_t i = 0; i < A; ++i)
        for (size_t j = 0; j < B; ++j)
            std::copy_n(v.begin() + static_cast<std::ptrdiff_t>((i * B + j) * C), C,
                        out.begin() + static_cast<std::ptrdiff_t>((j * A + i) * C));
    const size_t ia = a.id;
    return a.tape->push("swap01", Shape{B, A, C}, std::move(out), detail::any_grad(a),
                        [ia, A, B, C, self = a.tape->size()](Tape<Real>& t) {
                            const auto& g = t.grad_buffer(self);
                            auto& ga = t.grad_buffer(ia);
                            for (size_t i = 0; i < A; ++i)
                                for (size_t j = 0; j < B; ++j)
                                    for (size_t c = 0; c < C; ++c) ga[(i * B + j) * C + c] += g[(j * A + i) * C + c];
                        });
}

template <class Real>
Var<Real> reshape(Var<Real> a, Shape s) {
    if (numel(s) != a.size())
        throw ShapeError("reshape: cannot reshape " + shape_str(a.shape()) + " to " + shape_str(s));
    if (s.empty() || s.size() > 3) throw ShapeError("reshape: rank must be 1..3, got " + shape_str(s));
    const size_t ia = a.id;
    return a.tape->push("reshape", std::move(s), a.value(), detail::any_grad(a),
                        [ia, self = a.tape->size()](Tape<Real>& t) {
                            const auto& g = t.grad_buffer(self);
                            auto& ga = t.grad_buffer(ia);
                            for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                        });
}

template <class Real>
Var<Real> add(Var<Real> a, Var<Real> b) {
    detail::same_tape(a, b, "add");
    if (a.shape() != b.shape())
        throw ShapeError("add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    std::vector<Real> out = a.value();
    const auto& bv = b.value();
    for (size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    const size_t ia = a.id, ib = b.id;
    return a.tape->push("add", a.shape(), std::move(out), detail::any_grad(a, b),
                        [ia, ib, self = a.tape->size()](Tape<Real>& t) {
                            const auto& g = t.grad_buffer(self);
                            for (size_t id : {ia, ib}) {
                                if (!t.requires_grad(id)) continue;
                                auto& gi = t.grad_buffer(id);
                                for (size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
                            }
                        });
}

/// Elementwise product.
template <class Real>
Var<Real> multiply(Var<Real> a, Var<Real> b) {
    detail::same_tape(a, b, "multiply");
    if (a.shape() != b.shape())
        throw ShapeError("multiply: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    std::vector<Real> out = a.value();
    const auto& bv = b.value();
    for (size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
    const size_t ia = a.id, ib = b.id;
    return a.tape->push("multiply", a.shape(), std::move(out), detail::any_grad(a, b),
                        [ia, ib, self = a.tape->size()](Tape<Real>& t) {
                            const auto& g = t.grad_buffer(self);
                            if (t.requires_grad(ia)) {
                                auto& ga = t.grad_buffer(ia);
                                const auto& bv = t.value(ib);
                                for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
                            }
                            if (t.requires_grad(ib)) {
                                auto& gb = t.grad_buffer(ib);
                                const auto& av = t.value(ia);
                                for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
                            }
                        });
}

template <class Real>
Var<Real> scale(Var<Real> a, Real s) {
    std::vector<Real> out = a.value();
    for (auto& x : out) x *= s;
    const size_t ia = a.id;
    return a.tape->push("scale", a.shape(), std::move(out), detail::any_grad(a),
                        [ia, s, self = a.tape->size()](Tape<Real>& t) {
                            const auto& g = t.grad_buffer(self);
                            auto& ga = t.grad_buffer(ia);
                            for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
                        });
}

/// Adds a vector to every row along the last axis.
template <class Real>
Var<Real> add_bias(Var<Real> a, Var<Real> bias) {
    detail::same_tape(a, bias, "add_bias");
    const size_t D = detail::last_dim(a.shape());
    if (bias.size() != D)
        throw ShapeError("add_bias: bias " + shape_str(bias.shape()) + " does not match rows of " +
                         shape_str(a.shape()));
    std::vector<Real> out = a.value();
    const auto& bv = bias.value();
    const size_t R = out.size() / D;
    for (size_t r = 0; r < R; ++r)
        for (size_t d = 0; d < D; ++d) out[r * D + d] += bv[d];
    const size_t ia = a.id, ib = bias.id;
    return a.tape->push("add_bias", a.shape(), std::move(out), detail::any_grad(a, bias),
                        [ia, ib, R, D, self = a.tape->size()](Tape<Real>& t) {
                            const auto& g = t.grad_buffer(self);
                            if (t.requires_grad(ia)) {
                                auto& ga = t.grad_buffer(ia);
                                for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                            }
                            if (t.requires_grad(ib)) {
                                auto& gb = t.grad_buffer(ib);
                                for (size_t r = 0; r < R; ++r)
                                    for (size_t d = 0; d < D; ++d) gb[d] += g[r * D + d];
                            }
                        });
}

/// Rows of a (R x D) table selected by index.
template <class Real>
Var<Real> gather_rows(Var<Real> table, std::vector<size_t> indices) {
    const Shape s = table.shape();
    if (s.size() != 2) throw ShapeError("gather_rows: table must be rank 2, got " + shape_str(s));
    const size_t R = s[0], D = s[1];
    const auto& v = table.value();
    std::vector<Real> out(indices.size() * D);
    for (size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= R)
            throw ShapeError("gather_rows: index " + std::to_string(indices[i]) + " out of range for " +
                             shape_str(s));
        std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(indices[i] * D), D,
                    out.begin() + static_cast<std::ptrdiff_t>(i * D));
    }
    const size_t it = table.id;
    const size_t n = indices.size();
    return table.tape->push("gather_rows", Shape{n, D}, std::move(out), detail::any_grad(table),
                            [it, D, idx = std::move(indices), self = table.tape->size()](Tape<Real>& t) {
                                const auto& g = t.grad_buffer(self);
                                auto& gt = t.grad_buffer(it);
                                for (size_t i = 0; i < idx.size(); ++i)
                                    for (size_t d = 0; d < D; ++d) gt[idx[i] * D + d] += g[i * D + d];
                            });
}

/// Softmax along the last axis, with max subtraction.
template <class Real>
Var<Real> softmax(Var<Real> a) {
    const size_t D = detail::last_dim(a.shape());
    std::vector<Real> out = a.value();
    const size_t R = out.size() / D;
    for (size_t r = 0; r < R; ++r) {
        Real* row = out.data() + r * D;
        const Real mx = *std::max_element(row, row + D);
        Real s = 0;
        for (size_t d = 0; d < D; ++d) {
            row[d] = std::exp(row[d] - mx);
            s += row[d];
        }
        for (size_t d = 0; d < D; ++d) row[d] /= s;
    }
    const size_t ia = a.id;
    return a.tape->push("softmax", a.shape(), std::move(out), detail::any_grad(a),
                        [ia, R, D, self = a.tape->size()](Tape<Real>& t) {
                            const auto& g = t.grad_buffer(self);
                            const auto& y = t.value(self);
                            auto& ga = t.grad_buffer(ia);
                            for (size_t r = 0; r < R; ++r) {
                                Real dot = 0;
                                for (size_t d = 0; d < D; ++d) dot += g[r * D + d] * y[r * D + d];
                                for (size_t d = 0; d < D; ++d) ga[r * D + d] += y[r * D + d] * (g[r * D + d] - dot);
                            }
                        });
}

template <class Real>
Var<Real> log(Var<Real> a) {
    std::vector<Real> out = a.value();
    for (auto& x : out) {
        if (!(x > Real(0))) throw NumericError("log: non-positive input");
        x = std::log(x);
    }
    const size_t ia = a.id;
    return a.tape->push("log", a.shape(), std::move(out), detail::any_grad(a),
                        [ia, self = a.tape->size()](Tape<Real>& t) {
                            const auto& g = t.grad_buffer(self);
                            const auto& x = t.value(ia);
                            auto& ga = t.grad_buffer(ia);
                            for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / x[i];
                        });
}

/// Sum over one axis; the axis is removed (a rank-1 input yields shape {1}).
template <class Real>
Var<Real> sum(Var<Real> a, size_t axis) {
    const Shape s = a.shape();
    if (axis >= s.size()) throw ShapeError("sum: axis " + std::to_string(axis) + " out of range for " + shape_str(s));
    size_t outer = 1, inner = 1;
    for (size_t i = 0; i < axis; ++i) outer *= s[i];
    for (size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    const size_t n = s[axis];
    Shape os;
    for (size_t i = 0; i < s.size(); ++i)
        if (i != axis) os.push_back(s[i]);
    if (os.empty()) os = {1};
    const auto& v = a.value();
    std::vector<Real> out(outer * inner, Real(0));
    for (size_t o = 0; o < outer; ++o)
        for (size_t k = 0; k < n; ++k)
            for (size_t i = 0; i < inner; ++i) out[o * inner + i] += v[(o * n + k) * inner + i];
    const size_t ia = a.id;
    return a.tape->push("sum", os, std::move(out), detail::any_grad(a),
                        [ia, outer, inner, n, self = a.tape->size()](Tape<Real>& t) {
                            const auto& g = t.grad_buffer(self);
                            auto& ga = t.grad_buffer(ia);
                            for (size_t o = 0; o < outer; ++o)
                                for (size_t k = 0; k < n; ++k)
                                    for (size_t i = 0; i < inner; ++i) ga[(o * n + k) * inner + i] += g[o * inner + i];
                        });
}

template <class Real>
Var<Real> mean(Var<Real> a, size_t axis) {
    const size_t n = a.shape().at(axis);
    return scale(sum(a, axis), Real(1) / static_cast<Real>(n));
}

template <class Real>
Var<Real> sum_all(Var<Real> a) {
    return sum(reshape(a, Shape{a.size()}), 0);
}

template <class Real>
Var<Real> mean_all(Var<Real> a) {
    return scale(sum_all(a), Real(1) / static_cast<Real>(a.size()));
}

/// Tanh approximation of GELU.
template <class Real>
Var<Real> gelu(Var<Real> a) {
    constexpr Real c = Real(0.7978845608028654);  // sqrt(2/pi)
    constexpr Real k = Real(0.044715);
    std::vector<Real> out = a.value();
    for (auto& x : out) x = Real(0.5) * x * (Real(1) + std::tanh(c * (x + k * x * x * x)));
    const size_t ia = a.id;
    return a.tape->push("gelu", a.shape(), std::move(out), detail::any_grad(a),
                        [ia, self = a.tape->size()](Tape<Real>& t) {
                            const auto& g = t.grad_buffer(self);
                            const auto& xv = t.value(ia);
                            auto& ga = t.grad_buffer(ia);
                            for (size_t i = 0; i < g.size(); ++i) {
                                const Real x = xv[i];
                                const Real u = c * (x + k * x * x * x);
                                const Real th = std::tanh(u);
                                const Real du = c * (Real(1) + Real(3) * k * x * x);
                                const Real d = Real(0.5) * (Real(1) + th) + Real(0.5) * x * (Real(1) - th * th) * du;
                                ga[i] += g[i] * d;
                            }
                        });
}

/// Normalizes each row along the last axis to zero mean and unit variance,
/// then applies gain and bias. A constant row normalizes to zero.
template <class Real>
Var<Real> layer_norm(Var<Real> a, Var<Real> gain, Var<Real> bias, Real eps = Real(1e-5)) {
    detail::same_tape(a, gain, "layer_norm");
    detail::same_tape(a, bias, "layer_norm");
    const size_t D = detail::last_dim(a.shape());
    if (gain.size() != D || bias.size() != D)
        throw ShapeError("layer_norm: affine parameters must have length " + std::to_string(D));
    const auto& v = a.value();
    const auto& gv = gain.value();
    const auto& bv = bias.value();
    const size_t R = v.size() / D;
    std::vector<Real> out(v.size()), xhat(v.size()), inv_std(R);
    for (size_t r = 0; r < R; ++r) {
        const Real* x = v.data() + r * D;
        Real mu = 0;
        for (size_t d = 0; d < D; ++d) mu += x[d];
        mu /= static_cast<Real>(D);
        Real var = 0;
        for (size_t d = 0; d < D; ++d) var += (x[d] - mu) * (x[d] - mu);
        var /= static_cast<Real>(D);
        const Real is = Real(1) / std::sqrt(var + eps);
        inv_std[r] = is;
        for (size_t d = 0; d < D; ++d) {
            xhat[r * D + d] = (x[d] - mu) * is;
            out[r * D + d] = xhat[r * D + d] * gv[d] + bv[d];
        }
    }
    const size_t ia = a.id, ig = gain.id, ib = bias.id;
    const bool rg = detail::any_grad(a) || detail::any_grad(gain) || detail::any_grad(bias);
    return a.tape->push("layer_norm", a.shape(), std::move(out), rg,
                        [ia, ig, ib, R, D, xhat = std::move(xhat), inv_std = std::move(inv_std),
                         self = a.tape->size()](Tape<Real>& t) {
                            const auto& g = t.grad_buffer(self);
                            const auto& gv = t.value(ig);
                            if (t.requires_grad(ig)) {
                                auto& gg = t.grad_buffer(ig);
                                for (size_t r = 0; r < R; ++r)
                                    for (size_t d = 0; d < D; ++d) gg[d] += g[r * D + d] * xhat[r * D + d];
                            }
                            if (t.requires_grad(ib)) {
                                auto& gb = t.grad_buffer(ib);
                                for (size_t r = 0; r < R; ++r)
                                    for (size_t d = 0; d < D; ++d) gb[d] += g[r * D + d];
                            }
                            if (t.requires_grad(ia)) {
                                auto& ga = t.grad_buffer(ia);
                                std::vector<Real> dx(D);
                                for (size_t r = 0; r < R; ++r) {
                                    Real m1 = 0, m2 = 0;
                                    for (size_t d = 0; d < D; ++d) {
                                        dx[d] = g[r * D + d] * gv[d];
                                        m1 += dx[d];
                                        m2 += dx[d] * xhat[r * D + d];
                                    }
                                    m1 /= static_cast<Real>(D);
                                    m2 /= static_cast<Real>(D);
                                    for (size_t d = 0; d < D; ++d)
                                        ga[r * D + d] += inv_std[r] * (dx[d] - m1 - xhat[r * D + d] * m2);
                                }
                            }
                        });
}

/// Replaces entries where mask != 0 with `fill`; those entries get no gradient.
template <class Real>
Var<Real> masked_fill(Var<Real> a, std::vector<char> mask, Real fill) {
    if (mask.size() != a.size())
        throw ShapeError("masked_fill: mask length " + std::to_string(mask.size()) + " does not match " +
                         shape_str(a.shape()));
    std::vector<Real> out = a.value();
    for (size_t i = 0; i < out.size(); ++i)
        if (mask[i]) out[i] = fill;
    const size_t ia = a.id;
    return a.tape->push("masked_fill", a.shape(), std::move(out), detail::any_grad(a),
                        [ia, mask = std::move(mask), self = a.tape->size()](Tape<Real>& t) {
                            const auto& g = t.grad_buffer(self);
                            auto& ga = t.grad_buffer(ia);
                            for (size_t i = 0; i < g.size(); ++i)
                                if (!mask[i]) ga[i] += g[i];
                        });
}

/// Mask for (heads x L x L) scores hiding keys after each query.
inline std::vector<char> causal_mask(size_t heads, size_t L) {
    std::vector<char> m(heads * L * L, 0);
    for (size_t h = 0; h < heads; ++h)
        for (size_t i = 0; i < L; ++i)
            for (size_t j = i + 1; j < L; ++j) m[(h * L + i) * L + j] = 1;
    return m;
}

// ---------------------------------------------------------------------------
// Randomness and initialization

/// Deterministic generator; uniform draws are built from raw 64-bit output so
/// streams do not depend on standard-library distribution internals.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }
    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Uniform integer in [0, n).
    size_t below(size_t n) { return static_cast<size_t>(uniform() * static_cast<double>(n)) % n; }
    /// Standard normal via Box-Muller.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
        has_spare_ = true;
        return r * std::cos(2.0 * std::numbers::pi * u2);
    }
    double exponential(double rate) {
        double u = uniform();
        while (u <= 0.0) u = uniform();
        return -std::log(u) / rate;
    }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

inline Rng seed_rng(std::uint64_t seed) { return Rng(seed); }

/// Uniform in [-scale, +scale]; a negative scale selects 1/sqrt(fan_in) with
/// fan_in = shape[0].
template <class Real>
Tensor<Real> param_init(const Shape& shape, Rng& rng, double scale = -1.0) {
    if (scale < 0.0) scale = 1.0 / std::sqrt(static_cast<double>(shape.at(0)));
    Tensor<Real> t(shape);
    if (scale == 0.0) return t;
    for (auto& x : t.data) x = static_cast<Real>(rng.uniform(-scale, scale));
    return t;
}

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <class Real>
struct AdamState {
    std::vector<std::vector<Real>> m, v;
    std::uint64_t step = 0;
};

/// One bias-corrected Adam update of every parameter in place.
template <class Real>
void adam_step(std::vector<Tensor<Real>>& params, const std::vector<std::vector<Real>>& grads, AdamState<Real>& state,
               const AdamConfig& cfg) {
    if (grads.size() != params.size()) throw ShapeError("adam_step: gradient count does not match parameters");
    if (state.m.empty()) {
        state.m.resize(params.size());
        state.v.resize(params.size());
        for (size_t i = 0; i < params.size(); ++i) {
            state.m[i].assign(params[i].size(), Real(0));
            state.v[i].assign(params[i].size(), Real(0));
        }
    }
    for (size_t i = 0; i < params.size(); ++i) {
        if (grads[i].size() != params[i].size())
            throw ShapeError("adam_step: gradient " + std::to_string(i) + " has wrong length");
        for (Real g : grads[i])
            if (!std::isfinite(g)) throw NumericError("adam_step: non-finite gradient in parameter " + std::to_string(i));
    }
    ++state.step;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    const Real b1 = static_cast<Real>(cfg.beta1), b2 = static_cast<Real>(cfg.beta2);
    for (size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i].data;
        auto& m = state.m[i];
        auto& v = state.v[i];
        const auto& g = grads[i];
        for (size_t k = 0; k < p.size(); ++k) {
            m[k] = b1 * m[k] + (Real(1) - b1) * g[k];
            v[k] = b2 * v[k] + (Real(1) - b2) * g[k] * g[k];
            const double mhat = static_cast<double>(m[k]) / bc1;
            const double vhat = static_cast<double>(v[k]) / bc2;
            p[k] -= static_cast<Real>(cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
        }
    }
}

}  // namespace ora::ad
