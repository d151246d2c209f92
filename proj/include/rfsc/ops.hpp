#pragma once

// Differentiable forward primitives. Every op takes a tape pointer: nullptr
// runs plain forward math, a tape records a node when some input is tracked
// or requires a gradient. Conventions baked in here and relied on elsewhere:
//   - relu gradient at exactly 0 is 0;
//   - sqrt/pow clamp negative inputs to 0 and have zero gradient there;
//   - clamp has zero gradient strictly outside [lo, hi];
//   - sign never records a gradient edge;
//   - l2-normalizing a zero vector is a structured error, not a NaN.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "rfsc/tensor.hpp"

namespace rfsc {

namespace detail {

// C[m,n] += A[m,k] * B[k,n]. Saxpy form: the inner loop runs over contiguous
// rows of B and C with a fixed accumulation order, so it vectorizes without
// reassociation and stays bit-deterministic.
template <typename T>
void mm_nn_acc(const T* a, const T* b, T* c, std::int64_t m, std::int64_t k, std::int64_t n) {
    for (std::int64_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        T* crow = c + i * n;
        for (std::int64_t p = 0; p < k; ++p) {
            const T s = arow[p];
            const T* brow = b + p * n;
            for (std::int64_t j = 0; j < n; ++j) crow[j] += s * brow[j];
        }
    }
}

// C[r,c] += A[m,r]^T * B[m,c], as rank-1 updates over rows of A and B.
template <typename T>
void mm_tn_acc(const T* a, const T* b, T* c, std::int64_t m, std::int64_t r, std::int64_t cdim) {
    for (std::int64_t i = 0; i < m; ++i) {
        const T* arow = a + i * r;
        const T* brow = b + i * cdim;
        for (std::int64_t p = 0; p < r; ++p) {
            const T s = arow[p];
            T* crow = c + p * cdim;
            for (std::int64_t j = 0; j < cdim; ++j) crow[j] += s * brow[j];
        }
    }
}

template <typename T>
std::vector<T> transpose(const T* a, std::int64_t m, std::int64_t n) {
    std::vector<T> t(static_cast<std::size_t>(m * n));
    for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < n; ++j) t[static_cast<std::size_t>(j * m + i)] = a[i * n + j];
    return t;
}

inline std::vector<int> op_inputs(std::initializer_list<int> ids) {
    std::vector<int> v;
    for (int id : ids)
        if (id >= 0) v.push_back(id);
    return v;
}

} // namespace detail

// ===== Linear algebra =====

template <typename T>
[[nodiscard]] TensorT<T> matmul(GraphT<T>* g, const TensorT<T>& a, const TensorT<T>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        fail_data("matmul: incompatible shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    TensorT<T> out({m, n});
    detail::mm_nn_acc(a.raw(), b.raw(), out.raw(), m, k, n);
    if (g && (g->wants(a) || g->wants(b))) {
        const int ia = g->wants(a) ? g->track(a) : -1;
        const int ib = g->wants(b) ? g->track(b) : -1;
        g->add_node("matmul", detail::op_inputs({ia, ib}), out,
                    [ia, ib, a, b, m, k, n](GraphT<T>& gg, std::span<const T> d) {
                        if (auto da = gg.grad_buf(ia); !da.empty()) {
                            auto bt = detail::transpose(b.raw(), k, n); // [n,k]
                            detail::mm_nn_acc(d.data(), bt.data(), da.data(), m, n, k);
                        }
                        if (auto db = gg.grad_buf(ib); !db.empty())
                            detail::mm_tn_acc(a.raw(), d.data(), db.data(), m, k, n);
                    });
    }
    return out;
}

// out[i,j] = sum_p a[i,p] * b[j,p]; the natural form for cosine scores where
// both operands are stored row-major.
template <typename T>
[[nodiscard]] TensorT<T> matmul_nt(GraphT<T>* g, const TensorT<T>& a, const TensorT<T>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1))
        fail_data("matmul_nt: incompatible shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
    TensorT<T> out({m, n});
    {
        auto bt = detail::transpose(b.raw(), n, k); // [k,n]
        detail::mm_nn_acc(a.raw(), bt.data(), out.raw(), m, k, n);
    }
    if (g && (g->wants(a) || g->wants(b))) {
        const int ia = g->wants(a) ? g->track(a) : -1;
        const int ib = g->wants(b) ? g->track(b) : -1;
        g->add_node("matmul_nt", detail::op_inputs({ia, ib}), out,
                    [ia, ib, a, b, m, k, n](GraphT<T>& gg, std::span<const T> d) {
                        if (auto da = gg.grad_buf(ia); !da.empty())
                            detail::mm_nn_acc(d.data(), b.raw(), da.data(), m, n, k);
                        if (auto db = gg.grad_buf(ib); !db.empty())
                            detail::mm_tn_acc(d.data(), a.raw(), db.data(), m, n, k);
                    });
    }
    return out;
}

template <typename T>
[[nodiscard]] TensorT<T> add_row(GraphT<T>* g, const TensorT<T>& x, const TensorT<T>& b) {
    if (x.rank() != 2 || b.rank() != 1 || x.dim(1) != b.dim(0))
        fail_data("add_row: incompatible shapes " + shape_str(x.shape()) + " + " + shape_str(b.shape()));
    const std::int64_t m = x.dim(0), n = x.dim(1);
    TensorT<T> out({m, n});
    for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < n; ++j) out.raw()[i * n + j] = x.raw()[i * n + j] + b.raw()[j];
    if (g && (g->wants(x) || g->wants(b))) {
        const int ix = g->wants(x) ? g->track(x) : -1;
        const int ib = g->wants(b) ? g->track(b) : -1;
        g->add_node("add_row", detail::op_inputs({ix, ib}), out,
                    [ix, ib, m, n](GraphT<T>& gg, std::span<const T> d) {
                        if (auto dx = gg.grad_buf(ix); !dx.empty())
                            for (std::size_t j = 0; j < d.size(); ++j) dx[j] += d[j];
                        if (auto db = gg.grad_buf(ib); !db.empty())
                            for (std::int64_t i = 0; i < m; ++i)
                                for (std::int64_t j = 0; j < n; ++j) db[static_cast<std::size_t>(j)] += d[static_cast<std::size_t>(i * n + j)];
                    });
    }
    return out;
}

// x[m,k] * w[k,n] + b[n], the layer building block.
template <typename T>
[[nodiscard]] TensorT<T> affine(GraphT<T>* g, const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b) {
    return add_row(g, matmul(g, x, w), b);
}

// ===== Elementwise =====

namespace detail {

// Shared scaffolding for unary elementwise ops: fwd maps one value, bwd maps
// (x, y, dout) to dx. Gradient closures capture x and y by handle.
template <typename T, typename Fwd, typename Bwd>
TensorT<T> unary_op(GraphT<T>* g, const char* name, const TensorT<T>& x, Fwd fwd, Bwd bwd) {
    TensorT<T> out(x.shape());
    const T* xp = x.raw();
    T* op = out.raw();
    const std::size_t n = static_cast<std::size_t>(x.size());
    for (std::size_t i = 0; i < n; ++i) op[i] = fwd(xp[i]);
    if (g && g->wants(x)) {
        const int ix = g->track(x);
        g->add_node(name, {ix}, out, [ix, x, out, bwd](GraphT<T>& gg, std::span<const T> d) {
            auto dx = gg.grad_buf(ix);
            const T* xr = x.raw();
            const T* yr = out.raw();
            for (std::size_t i = 0; i < d.size(); ++i) dx[i] += bwd(xr[i], yr[i], d[i]);
        });
    }
    return out;
}

} // namespace detail

template <typename T>
[[nodiscard]] TensorT<T> relu(GraphT<T>* g, const TensorT<T>& x) {
    return detail::unary_op(
        g, "relu", x, [](T v) { return v > T(0) ? v : T(0); },
        [](T v, T /*y*/, T d) { return v > T(0) ? d : T(0); });
}

// sqrt(max(x, 0)); zero gradient where the clamp engaged or x == 0.
template <typename T>
[[nodiscard]] TensorT<T> sqrt_clamped(GraphT<T>* g, const TensorT<T>& x) {
    return detail::unary_op(
        g, "sqrt_clamped", x, [](T v) { return v > T(0) ? std::sqrt(v) : T(0); },
        [](T v, T y, T d) { return v > T(0) ? d * (T(0.5) / y) : T(0); });
}

// max(x, 0)^p for p > 0; p = 1 is max(x, 0), p = 0.5 matches sqrt_clamped.
template <typename T>
[[nodiscard]] TensorT<T> clamped_pow(GraphT<T>* g, const TensorT<T>& x, T p) {
    if (!(p > T(0))) fail_data("clamped_pow: exponent must be positive, got " + std::to_string(static_cast<double>(p)));
    if (p == T(0.5)) return sqrt_clamped(g, x);
    if (p == T(1)) return relu(g, x);
    return detail::unary_op(
        g, "clamped_pow", x, [p](T v) { return v > T(0) ? std::pow(v, p) : T(0); },
        [p](T v, T /*y*/, T d) { return v > T(0) ? d * p * std::pow(v, p - T(1)) : T(0); });
}

template <typename T>
[[nodiscard]] TensorT<T> clamp(GraphT<T>* g, const TensorT<T>& x, T lo, T hi) {
    if (lo > hi) fail_data("clamp: lo > hi");
    return detail::unary_op(
        g, "clamp", x, [lo, hi](T v) { return std::min(std::max(v, lo), hi); },
        [lo, hi](T v, T /*y*/, T d) { return (v >= lo && v <= hi) ? d : T(0); });
}

// Elementwise sign in {-1, 0, 1}. Deliberately tape-free: its derivative is 0
// almost everywhere, and attack steps use it as plain data.
template <typename T>
[[nodiscard]] TensorT<T> sign(const TensorT<T>& x) {
    TensorT<T> out(x.shape());
    for (std::int64_t i = 0; i < x.size(); ++i) {
        const T v = x.raw()[i];
        out.raw()[i] = v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0));
    }
    return out;
}

namespace detail {

template <typename T, typename Bwd>
TensorT<T> binary_op(GraphT<T>* g, const char* name, const TensorT<T>& a, const TensorT<T>& b, TensorT<T> out, Bwd bwd) {
    if (g && (g->wants(a) || g->wants(b))) {
        const int ia = g->wants(a) ? g->track(a) : -1;
        const int ib = g->wants(b) ? g->track(b) : -1;
        g->add_node(name, op_inputs({ia, ib}), out, [ia, ib, a, b, bwd](GraphT<T>& gg, std::span<const T> d) {
            bwd(gg.grad_buf(ia), gg.grad_buf(ib), a, b, d);
        });
    }
    return out;
}

template <typename T>
void check_same_shape(const char* name, const TensorT<T>& a, const TensorT<T>& b) {
    if (a.shape() != b.shape())
        fail_data(std::string(name) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

} // namespace detail

template <typename T>
[[nodiscard]] TensorT<T> add(GraphT<T>* g, const TensorT<T>& a, const TensorT<T>& b) {
    detail::check_same_shape("add", a, b);
    TensorT<T> out(a.shape());
    for (std::int64_t i = 0; i < a.size(); ++i) out.raw()[i] = a.raw()[i] + b.raw()[i];
    return detail::binary_op(g, "add", a, b, std::move(out),
                             [](std::span<T> da, std::span<T> db, const TensorT<T>&, const TensorT<T>&, std::span<const T> d) {
                                 for (std::size_t i = 0; i < d.size(); ++i) {
                                     if (!da.empty()) da[i] += d[i];
                                     if (!db.empty()) db[i] += d[i];
                                 }
                             });
}

template <typename T>
[[nodiscard]] TensorT<T> sub(GraphT<T>* g, const TensorT<T>& a, const TensorT<T>& b) {
    detail::check_same_shape("sub", a, b);
    TensorT<T> out(a.shape());
    for (std::int64_t i = 0; i < a.size(); ++i) out.raw()[i] = a.raw()[i] - b.raw()[i];
    return detail::binary_op(g, "sub", a, b, std::move(out),
                             [](std::span<T> da, std::span<T> db, const TensorT<T>&, const TensorT<T>&, std::span<const T> d) {
                                 for (std::size_t i = 0; i < d.size(); ++i) {
                                     if (!da.empty()) da[i] += d[i];
                                     if (!db.empty()) db[i] -= d[i];
                                 }
                             });
}

template <typename T>
[[nodiscard]] TensorT<T> mul(GraphT<T>* g, const TensorT<T>& a, const TensorT<T>& b) {
    detail::check_same_shape("mul", a, b);
    TensorT<T> out(a.shape());
    for (std::int64_t i = 0; i < a.size(); ++i) out.raw()[i] = a.raw()[i] * b.raw()[i];
    return detail::binary_op(g, "mul", a, b, std::move(out),
                             [](std::span<T> da, std::span<T> db, const TensorT<T>& a2, const TensorT<T>& b2, std::span<const T> d) {
                                 for (std::size_t i = 0; i < d.size(); ++i) {
                                     if (!da.empty()) da[i] += d[i] * b2.raw()[i];
                                     if (!db.empty()) db[i] += d[i] * a2.raw()[i];
                                 }
                             });
}

// Same elements, new shape; a fresh copy so tape identity stays one-to-one.
template <typename T>
[[nodiscard]] TensorT<T> reshape(GraphT<T>* g, const TensorT<T>& x, Shape shape) {
    if (shape_numel(shape) != x.size())
        fail_data("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    TensorT<T> out = TensorT<T>::from(std::move(shape), std::vector<T>(x.data().begin(), x.data().end()));
    if (g && g->wants(x)) {
        const int ix = g->track(x);
        g->add_node("reshape", {ix}, out, [ix](GraphT<T>& gg, std::span<const T> d) {
            auto dx = gg.grad_buf(ix);
            for (std::size_t i = 0; i < d.size(); ++i) dx[i] += d[i];
        });
    }
    return out;
}

template <typename T>
[[nodiscard]] TensorT<T> add_scalar(GraphT<T>* g, const TensorT<T>& x, T c) {
    return detail::unary_op(
        g, "add_scalar", x, [c](T v) { return v + c; }, [](T, T, T d) { return d; });
}

template <typename T>
[[nodiscard]] TensorT<T> mul_scalar(GraphT<T>* g, const TensorT<T>& x, T c) {
    return detail::unary_op(
        g, "mul_scalar", x, [c](T v) { return v * c; }, [c](T, T, T d) { return d * c; });
}

// ===== Reductions =====

template <typename T>
[[nodiscard]] TensorT<T> sum_all(GraphT<T>* g, const TensorT<T>& x) {
    T acc = T(0);
    for (std::int64_t i = 0; i < x.size(); ++i) acc += x.raw()[i];
    TensorT<T> out = TensorT<T>::scalar(acc);
    if (g && g->wants(x)) {
        const int ix = g->track(x);
        g->add_node("sum_all", {ix}, out, [ix](GraphT<T>& gg, std::span<const T> d) {
            auto dx = gg.grad_buf(ix);
            for (auto& v : dx) v += d[0];
        });
    }
    return out;
}

template <typename T>
[[nodiscard]] TensorT<T> mean_all(GraphT<T>* g, const TensorT<T>& x) {
    if (x.size() == 0) fail_data("mean_all: empty tensor");
    T acc = T(0);
    for (std::int64_t i = 0; i < x.size(); ++i) acc += x.raw()[i];
    const T inv = T(1) / static_cast<T>(x.size());
    TensorT<T> out = TensorT<T>::scalar(acc * inv);
    if (g && g->wants(x)) {
        const int ix = g->track(x);
        g->add_node("mean_all", {ix}, out, [ix, inv](GraphT<T>& gg, std::span<const T> d) {
            auto dx = gg.grad_buf(ix);
            for (auto& v : dx) v += d[0] * inv;
        });
    }
    return out;
}

// ===== Normalization and loss =====

// Rows (or the whole vector for rank 1) scaled to unit Euclidean norm.
template <typename T>
[[nodiscard]] TensorT<T> l2_normalize(GraphT<T>* g, const TensorT<T>& x) {
    if (x.rank() != 1 && x.rank() != 2)
        fail_data("l2_normalize: expected rank 1 or 2, got shape " + shape_str(x.shape()));
    const std::int64_t rows = x.rank() == 2 ? x.dim(0) : 1;
    const std::int64_t cols = x.rank() == 2 ? x.dim(1) : x.dim(0);
    TensorT<T> out(x.shape());
    std::vector<T> norms(static_cast<std::size_t>(rows));
    for (std::int64_t r = 0; r < rows; ++r) {
        T n2 = T(0);
        for (std::int64_t j = 0; j < cols; ++j) {
            const T v = x.raw()[r * cols + j];
            n2 += v * v;
        }
        if (n2 == T(0)) fail_data("l2_normalize: zero vector at row " + std::to_string(r));
        const T n = std::sqrt(n2);
        norms[static_cast<std::size_t>(r)] = n;
        for (std::int64_t j = 0; j < cols; ++j) out.raw()[r * cols + j] = x.raw()[r * cols + j] / n;
    }
    if (g && g->wants(x)) {
        const int ix = g->track(x);
        g->add_node("l2_normalize", {ix}, out,
                    [ix, out, norms, rows, cols](GraphT<T>& gg, std::span<const T> d) {
                        auto dx = gg.grad_buf(ix);
                        for (std::int64_t r = 0; r < rows; ++r) {
                            const T* y = out.raw() + r * cols;
                            const T* dy = d.data() + r * cols;
                            T dot = T(0);
                            for (std::int64_t j = 0; j < cols; ++j) dot += y[j] * dy[j];
                            const T inv_n = T(1) / norms[static_cast<std::size_t>(r)];
                            for (std::int64_t j = 0; j < cols; ++j)
                                dx[static_cast<std::size_t>(r * cols + j)] += (dy[j] - y[j] * dot) * inv_n;
                        }
                    });
    }
    return out;
}

// Per-sample softmax cross-entropy with integer labels. Accepts [B,C] logits
// with B labels (returns [B]) or a rank-1 [C] row with one label (returns
// [1]). Stabilized by max subtraction.
template <typename T>
[[nodiscard]] TensorT<T> softmax_cross_entropy(GraphT<T>* g, const TensorT<T>& logits, std::span<const int> labels) {
    std::int64_t bsz, classes;
    if (logits.rank() == 2) {
        bsz = logits.dim(0);
        classes = logits.dim(1);
    } else if (logits.rank() == 1) {
        bsz = 1;
        classes = logits.dim(0);
    } else {
        fail_data("softmax_cross_entropy: expected rank 1 or 2 logits, got shape " + shape_str(logits.shape()));
    }
    if (static_cast<std::int64_t>(labels.size()) != bsz)
        fail_data("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " + std::to_string(bsz));
    if (classes == 0) fail_data("softmax_cross_entropy: zero classes");
    for (std::int64_t b = 0; b < bsz; ++b)
        if (labels[static_cast<std::size_t>(b)] < 0 || labels[static_cast<std::size_t>(b)] >= classes)
            fail_data("softmax_cross_entropy: label " + std::to_string(labels[static_cast<std::size_t>(b)]) +
                      " at index " + std::to_string(b) + " outside [0," + std::to_string(classes) + ")");

    TensorT<T> out({bsz});
    std::vector<T> probs(static_cast<std::size_t>(bsz * classes));
    for (std::int64_t b = 0; b < bsz; ++b) {
        const T* z = logits.raw() + b * classes;
        T mx = z[0];
        for (std::int64_t c = 1; c < classes; ++c) mx = std::max(mx, z[c]);
        T s = T(0);
        for (std::int64_t c = 0; c < classes; ++c) {
            const T e = std::exp(z[c] - mx);
            probs[static_cast<std::size_t>(b * classes + c)] = e;
            s += e;
        }
        const T inv_s = T(1) / s;
        for (std::int64_t c = 0; c < classes; ++c) probs[static_cast<std::size_t>(b * classes + c)] *= inv_s;
        out.raw()[b] = std::log(s) + mx - z[labels[static_cast<std::size_t>(b)]];
    }
    if (g && g->wants(logits)) {
        const int iz = g->track(logits);
        std::vector<int> labels_copy(labels.begin(), labels.end());
        g->add_node("softmax_cross_entropy", {iz}, out,
                    [iz, probs = std::move(probs), labels_copy = std::move(labels_copy), bsz, classes](
                        GraphT<T>& gg, std::span<const T> d) {
                        auto dz = gg.grad_buf(iz);
                        for (std::int64_t b = 0; b < bsz; ++b) {
                            const T db = d[static_cast<std::size_t>(b)];
                            const int y = labels_copy[static_cast<std::size_t>(b)];
                            for (std::int64_t c = 0; c < classes; ++c) {
                                T p = probs[static_cast<std::size_t>(b * classes + c)];
                                if (c == y) p -= T(1);
                                dz[static_cast<std::size_t>(b * classes + c)] += db * p;
                            }
                        }
                    });
    }
    return out;
}

} // namespace rfsc
