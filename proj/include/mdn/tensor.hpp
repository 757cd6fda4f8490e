#pragma once

// Dense row-major tensors with reverse-mode automatic differentiation on a
// dynamic tape. Training runs in float; the same templates instantiate with
// double for gradient checking.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <vector>

#include "mdn/common.hpp"

namespace mdn {

using Shape = std::vector<int64_t>;

inline int64_t numel_of(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

inline std::vector<int64_t> strides_of(const Shape& s) {
    std::vector<int64_t> st(s.size(), 1);
    for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i) st[i] = st[i + 1] * s[i + 1];
    return st;
}

template <typename S>
struct TensorImpl {
    Shape shape;
    std::vector<S> value;
    std::vector<S> grad;  // empty until the backward pass touches it
    bool requires_grad = false;
};

template <typename S>
void ensure_grad(TensorImpl<S>& impl) {
    if (impl.grad.size() != impl.value.size()) impl.grad.assign(impl.value.size(), S(0));
}

template <typename S>
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<TensorImpl<S>> impl) : impl_(std::move(impl)) {}

    static Tensor zeros(Shape shape) {
        return filled(std::move(shape), S(0));
    }
    static Tensor filled(Shape shape, S v) {
        auto impl = std::make_shared<TensorImpl<S>>();
        impl->value.assign(numel_of(shape), v);
        impl->shape = std::move(shape);
        return Tensor(std::move(impl));
    }
    static Tensor from(Shape shape, std::vector<S> data) {
        check<ShapeError>(numel_of(shape) == static_cast<int64_t>(data.size()),
                          "tensor data length ", data.size(), " does not match shape ",
                          shape_str(shape));
        auto impl = std::make_shared<TensorImpl<S>>();
        impl->shape = std::move(shape);
        impl->value = std::move(data);
        return Tensor(std::move(impl));
    }
    static Tensor scalar(S v) { return from({}, {v}); }
    static Tensor randn(Shape shape, Rng& rng, S stddev = S(1), S mean = S(0)) {
        std::normal_distribution<double> dist(0.0, 1.0);
        auto t = zeros(std::move(shape));
        for (S& x : t.data()) x = mean + stddev * static_cast<S>(dist(rng));
        return t;
    }
    static Tensor uniform(Shape shape, Rng& rng, S lo, S hi) {
        std::uniform_real_distribution<double> dist(static_cast<double>(lo),
                                                    static_cast<double>(hi));
        auto t = zeros(std::move(shape));
        for (S& x : t.data()) x = static_cast<S>(dist(rng));
        return t;
    }

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    int64_t dim(size_t i) const { return impl_->shape[i]; }
    size_t rank() const { return impl_->shape.size(); }
    int64_t numel() const { return static_cast<int64_t>(impl_->value.size()); }

    const std::vector<S>& data() const { return impl_->value; }
    std::vector<S>& data() { return impl_->value; }
    const std::vector<S>& grad() const { return impl_->grad; }
    std::vector<S>& grad() { return impl_->grad; }

    bool requires_grad() const { return impl_->requires_grad; }
    Tensor& set_requires_grad(bool rg) {
        impl_->requires_grad = rg;
        return *this;
    }
    void zero_grad() { impl_->grad.clear(); }

    S item() const {
        check<ShapeError>(numel() == 1, "item() on tensor of shape ", shape_str(shape()));
        return impl_->value[0];
    }

    std::shared_ptr<TensorImpl<S>> impl() const { return impl_; }

private:
    std::shared_ptr<TensorImpl<S>> impl_;
};

// Ordered record of executed ops; replaying it in reverse is the backward
// pass. Ops self-register on the active tape while any input requires grad.
template <typename S>
class Tape {
public:
    void record(std::function<void()> fn) { entries_.push_back(std::move(fn)); }
    size_t size() const { return entries_.size(); }
    void clear() { entries_.clear(); }

    void backward(const Tensor<S>& loss) {
        check<ShapeError>(loss.numel() == 1, "backward() requires a scalar loss, got shape ",
                          shape_str(loss.shape()));
        check<Error>(!entries_.empty(), "backward() on an empty tape");
        ensure_grad(*loss.impl());
        loss.impl()->grad[0] = S(1);
        for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
    }

    static Tape*& active() {
        thread_local Tape* t = nullptr;
        return t;
    }

private:
    std::vector<std::function<void()>> entries_;
};

template <typename S>
class TapeScope {
public:
    explicit TapeScope(Tape<S>* tape) : prev_(Tape<S>::active()) { Tape<S>::active() = tape; }
    ~TapeScope() { Tape<S>::active() = prev_; }
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape<S>* prev_;
};

namespace detail {

template <typename S>
bool will_record(std::initializer_list<const Tensor<S>*> inputs) {
    if (!Tape<S>::active()) return false;
    for (const Tensor<S>* t : inputs)
        if (t->requires_grad()) return true;
    return false;
}

template <typename S>
void check_finite(const char* op, const Tensor<S>& t) {
    for (S v : t.data())
        if (!std::isfinite(static_cast<double>(v)))
            fail<NumericError>("non-finite output of op '", op, "'");
}

// Opening an OpenMP region costs around a millisecond on constrained boxes,
// so kernels only parallelize above a work threshold and hot loops branch
// explicitly rather than relying on if-clauses.
inline constexpr int64_t kParallelMacThreshold = int64_t{1} << 22;

// C[m,n] += A[m,k] * B[k,n]
template <typename S>
void gemm_nn(const S* __restrict a, const S* __restrict b, S* __restrict c, int64_t m, int64_t k,
             int64_t n, bool parallel) {
    if (parallel && m > 1) {
#pragma omp parallel for schedule(static)
        for (int64_t i = 0; i < m; ++i) {
            const S* __restrict ai = a + i * k;
            S* __restrict ci = c + i * n;
            for (int64_t p = 0; p < k; ++p) {
                const S av = ai[p];
                const S* __restrict bp = b + p * n;
                for (int64_t j = 0; j < n; ++j) ci[j] += av * bp[j];
            }
        }
        return;
    }
    for (int64_t i = 0; i < m; ++i) {
        const S* __restrict ai = a + i * k;
        S* __restrict ci = c + i * n;
        for (int64_t p = 0; p < k; ++p) {
            const S av = ai[p];
            const S* __restrict bp = b + p * n;
            for (int64_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

// C[m,k] += A[m,n] * B[k,n]^T
template <typename S>
void gemm_nt(const S* __restrict a, const S* __restrict b, S* __restrict c, int64_t m, int64_t n,
             int64_t k, bool parallel) {
    if (parallel && m > 1) {
#pragma omp parallel for schedule(static)
        for (int64_t i = 0; i < m; ++i) {
            const S* __restrict ai = a + i * n;
            S* __restrict ci = c + i * k;
            for (int64_t p = 0; p < k; ++p) {
                const S* __restrict bp = b + p * n;
                S acc = S(0);
                for (int64_t j = 0; j < n; ++j) acc += ai[j] * bp[j];
                ci[p] += acc;
            }
        }
        return;
    }
    for (int64_t i = 0; i < m; ++i) {
        const S* __restrict ai = a + i * n;
        S* __restrict ci = c + i * k;
        for (int64_t p = 0; p < k; ++p) {
            const S* __restrict bp = b + p * n;
            S acc = S(0);
            for (int64_t j = 0; j < n; ++j) acc += ai[j] * bp[j];
            ci[p] += acc;
        }
    }
}

// C[k,n] += A[m,k]^T * B[m,n]
template <typename S>
void gemm_tn(const S* __restrict a, const S* __restrict b, S* __restrict c, int64_t m, int64_t k,
             int64_t n, bool parallel) {
    if (parallel && k > 1) {
#pragma omp parallel for schedule(static)
        for (int64_t p = 0; p < k; ++p) {
            S* __restrict cp = c + p * n;
            for (int64_t i = 0; i < m; ++i) {
                const S av = a[i * k + p];
                const S* __restrict bi = b + i * n;
                for (int64_t j = 0; j < n; ++j) cp[j] += av * bi[j];
            }
        }
        return;
    }
    for (int64_t p = 0; p < k; ++p) {
        S* __restrict cp = c + p * n;
        for (int64_t i = 0; i < m; ++i) {
            const S av = a[i * k + p];
            const S* __restrict bi = b + i * n;
            for (int64_t j = 0; j < n; ++j) cp[j] += av * bi[j];
        }
    }
}

// True when `rhs` equals the trailing extents of `lhs` (the only broadcast the
// engine allows besides scalars).
inline bool is_suffix_shape(const Shape& lhs, const Shape& rhs) {
    if (rhs.size() > lhs.size()) return false;
    return std::equal(rhs.rbegin(), rhs.rend(), lhs.rbegin());
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic

namespace detail {

template <typename S, typename FwdFn, typename BwdA, typename BwdB>
Tensor<S> binary_suffix_op(const char* name, const Tensor<S>& a, const Tensor<S>& b, FwdFn fwd,
                           BwdA bwd_a, BwdB bwd_b) {
    check<ShapeError>(is_suffix_shape(a.shape(), b.shape()), "op '", name, "': shape ",
                      shape_str(b.shape()), " does not broadcast over ", shape_str(a.shape()));
    const int64_t n = a.numel();
    const int64_t bn = std::max<int64_t>(b.numel(), 1);
    auto out = Tensor<S>::zeros(a.shape());
    const S* pa = a.data().data();
    const S* pb = b.data().data();
    S* po = out.data().data();
    for (int64_t i = 0; i < n; ++i) po[i] = fwd(pa[i], pb[i % bn]);
    check_finite(name, out);
    if (will_record<S>({&a, &b})) {
        out.set_requires_grad(true);
        auto ai = a.impl(), bi = b.impl(), oi = out.impl();
        Tape<S>::active()->record([ai, bi, oi, n, bn, bwd_a, bwd_b]() {
            if (oi->grad.empty()) return;
            const S* og = oi->grad.data();
            if (ai->requires_grad) {
                ensure_grad(*ai);
                for (int64_t i = 0; i < n; ++i)
                    ai->grad[i] += bwd_a(og[i], ai->value[i], bi->value[i % bn]);
            }
            if (bi->requires_grad) {
                ensure_grad(*bi);
                for (int64_t i = 0; i < n; ++i)
                    bi->grad[i % bn] += bwd_b(og[i], ai->value[i], bi->value[i % bn]);
            }
        });
    }
    return out;
}

}  // namespace detail

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
    return detail::binary_suffix_op<S>(
        "add", a, b, [](S x, S y) { return x + y; }, [](S g, S, S) { return g; },
        [](S g, S, S) { return g; });
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
    return detail::binary_suffix_op<S>(
        "sub", a, b, [](S x, S y) { return x - y; }, [](S g, S, S) { return g; },
        [](S g, S, S) { return -g; });
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
    return detail::binary_suffix_op<S>(
        "mul", a, b, [](S x, S y) { return x * y; }, [](S g, S, S y) { return g * y; },
        [](S g, S x, S) { return g * x; });
}

template <typename S>
Tensor<S> scalar_mul(const Tensor<S>& a, S k) {
    auto out = Tensor<S>::zeros(a.shape());
    const int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * k;
    detail::check_finite("scalar_mul", out);
    if (detail::will_record<S>({&a})) {
        out.set_requires_grad(true);
        auto ai = a.impl(), oi = out.impl();
        Tape<S>::active()->record([ai, oi, k, n]() {
            if (oi->grad.empty() || !ai->requires_grad) return;
            ensure_grad(*ai);
            for (int64_t i = 0; i < n; ++i) ai->grad[i] += oi->grad[i] * k;
        });
    }
    return out;
}

template <typename S>
Tensor<S> scalar_add(const Tensor<S>& a, S k) {
    auto out = Tensor<S>::zeros(a.shape());
    const int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + k;
    detail::check_finite("scalar_add", out);
    if (detail::will_record<S>({&a})) {
        out.set_requires_grad(true);
        auto ai = a.impl(), oi = out.impl();
        Tape<S>::active()->record([ai, oi, n]() {
            if (oi->grad.empty() || !ai->requires_grad) return;
            ensure_grad(*ai);
            for (int64_t i = 0; i < n; ++i) ai->grad[i] += oi->grad[i];
        });
    }
    return out;
}

// A (..., D) scaled per row by s (..., 1): broadcast over the last axis.
template <typename S>
Tensor<S> rowwise_scale(const Tensor<S>& a, const Tensor<S>& s) {
    check<ShapeError>(a.rank() >= 1 && s.rank() == a.rank() && s.shape().back() == 1,
                      "rowwise_scale: scale shape ", shape_str(s.shape()),
                      " must be input shape with last extent 1, input ", shape_str(a.shape()));
    for (size_t i = 0; i + 1 < a.rank(); ++i)
        check<ShapeError>(a.dim(i) == s.dim(i), "rowwise_scale: shape mismatch ",
                          shape_str(a.shape()), " vs ", shape_str(s.shape()));
    const int64_t d = a.shape().back();
    const int64_t rows = a.numel() / std::max<int64_t>(d, 1);
    auto out = Tensor<S>::zeros(a.shape());
    for (int64_t r = 0; r < rows; ++r) {
        const S sv = s.data()[r];
        for (int64_t j = 0; j < d; ++j) out.data()[r * d + j] = a.data()[r * d + j] * sv;
    }
    detail::check_finite("rowwise_scale", out);
    if (detail::will_record<S>({&a, &s})) {
        out.set_requires_grad(true);
        auto ai = a.impl(), si = s.impl(), oi = out.impl();
        Tape<S>::active()->record([ai, si, oi, rows, d]() {
            if (oi->grad.empty()) return;
            if (ai->requires_grad) {
                ensure_grad(*ai);
                for (int64_t r = 0; r < rows; ++r) {
                    const S sv = si->value[r];
                    for (int64_t j = 0; j < d; ++j)
                        ai->grad[r * d + j] += oi->grad[r * d + j] * sv;
                }
            }
            if (si->requires_grad) {
                ensure_grad(*si);
                for (int64_t r = 0; r < rows; ++r) {
                    S acc = S(0);
                    for (int64_t j = 0; j < d; ++j)
                        acc += oi->grad[r * d + j] * ai->value[r * d + j];
                    si->grad[r] += acc;
                }
            }
        });
    }
    return out;
}

template <typename S>
Tensor<S> exp(const Tensor<S>& a) {
    auto out = Tensor<S>::zeros(a.shape());
    const int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) out.data()[i] = std::exp(a.data()[i]);
    detail::check_finite("exp", out);
    if (detail::will_record<S>({&a})) {
        out.set_requires_grad(true);
        auto ai = a.impl(), oi = out.impl();
        Tape<S>::active()->record([ai, oi, n]() {
            if (oi->grad.empty() || !ai->requires_grad) return;
            ensure_grad(*ai);
            for (int64_t i = 0; i < n; ++i) ai->grad[i] += oi->grad[i] * oi->value[i];
        });
    }
    return out;
}

template <typename S>
Tensor<S> log(const Tensor<S>& a) {
    auto out = Tensor<S>::zeros(a.shape());
    const int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) out.data()[i] = std::log(a.data()[i]);
    detail::check_finite("log", out);
    if (detail::will_record<S>({&a})) {
        out.set_requires_grad(true);
        auto ai = a.impl(), oi = out.impl();
        Tape<S>::active()->record([ai, oi, n]() {
            if (oi->grad.empty() || !ai->requires_grad) return;
            ensure_grad(*ai);
            for (int64_t i = 0; i < n; ++i) ai->grad[i] += oi->grad[i] / ai->value[i];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Shape manipulation

template <typename S>
Tensor<S> reshape(const Tensor<S>& a, Shape shape) {
    check<ShapeError>(numel_of(shape) == a.numel(), "reshape: ", shape_str(a.shape()),
                      " cannot be viewed as ", shape_str(shape));
    auto out = Tensor<S>::from(std::move(shape), a.data());
    if (detail::will_record<S>({&a})) {
        out.set_requires_grad(true);
        auto ai = a.impl(), oi = out.impl();
        Tape<S>::active()->record([ai, oi]() {
            if (oi->grad.empty() || !ai->requires_grad) return;
            ensure_grad(*ai);
            for (size_t i = 0; i < oi->grad.size(); ++i) ai->grad[i] += oi->grad[i];
        });
    }
    return out;
}

template <typename S>
Tensor<S> transpose(const Tensor<S>& a, const std::vector<int>& perm) {
    check<ShapeError>(perm.size() == a.rank(), "transpose: perm rank ", perm.size(),
                      " vs tensor rank ", a.rank());
    Shape out_shape(perm.size());
    for (size_t i = 0; i < perm.size(); ++i) out_shape[i] = a.dim(perm[i]);
    const auto in_strides = strides_of(a.shape());
    // stride in the input for each output axis
    std::vector<int64_t> gather(perm.size());
    for (size_t i = 0; i < perm.size(); ++i) gather[i] = in_strides[perm[i]];
    const int64_t n = a.numel();
    auto out = Tensor<S>::zeros(out_shape);
    const size_t r = perm.size();
    auto walk = [out_shape, gather, n, r](const S* src_data, S* dst_data, bool accumulate) {
        std::vector<int64_t> counter(r, 0);
        int64_t src = 0;
        for (int64_t o = 0; o < n; ++o) {
            if (accumulate)
                dst_data[src] += src_data[o];
            else
                dst_data[o] = src_data[src];
            for (size_t ax = r; ax-- > 0;) {
                ++counter[ax];
                src += gather[ax];
                if (counter[ax] < out_shape[ax]) break;
                src -= counter[ax] * gather[ax];
                counter[ax] = 0;
            }
        }
    };
    walk(a.data().data(), out.data().data(), false);
    if (detail::will_record<S>({&a})) {
        out.set_requires_grad(true);
        auto ai = a.impl(), oi = out.impl();
        Tape<S>::active()->record([ai, oi, walk]() {
            if (oi->grad.empty() || !ai->requires_grad) return;
            ensure_grad(*ai);
            walk(oi->grad.data(), ai->grad.data(), true);
        });
    }
    return out;
}

template <typename S>
Tensor<S> concat(const std::vector<Tensor<S>>& parts, int axis) {
    check<ShapeError>(!parts.empty(), "concat: no inputs");
    const size_t rank = parts[0].rank();
    check<ShapeError>(axis >= 0 && static_cast<size_t>(axis) < rank, "concat: axis ", axis,
                      " out of range for rank ", rank);
    Shape out_shape = parts[0].shape();
    int64_t axis_total = 0;
    for (const auto& p : parts) {
        check<ShapeError>(p.rank() == rank, "concat: rank mismatch");
        for (size_t i = 0; i < rank; ++i)
            if (static_cast<int>(i) != axis)
                check<ShapeError>(p.dim(i) == out_shape[i], "concat: shape mismatch ",
                                  shape_str(p.shape()), " vs ", shape_str(out_shape));
        axis_total += p.dim(axis);
    }
    out_shape[axis] = axis_total;
    auto out = Tensor<S>::zeros(out_shape);

    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= out_shape[i];
    for (size_t i = axis + 1; i < rank; ++i) inner *= out_shape[i];

    std::vector<int64_t> offsets(parts.size());
    int64_t off = 0;
    for (size_t p = 0; p < parts.size(); ++p) {
        offsets[p] = off;
        const int64_t ext = parts[p].dim(axis);
        for (int64_t ou = 0; ou < outer; ++ou) {
            std::copy_n(parts[p].data().data() + ou * ext * inner, ext * inner,
                        out.data().data() + (ou * axis_total + off) * inner);
        }
        off += ext;
    }

    bool rec = false;
    if (Tape<S>::active())
        for (const auto& p : parts)
            if (p.requires_grad()) rec = true;
    if (rec) {
        out.set_requires_grad(true);
        std::vector<std::shared_ptr<TensorImpl<S>>> impls;
        std::vector<int64_t> exts;
        for (const auto& p : parts) {
            impls.push_back(p.impl());
            exts.push_back(p.dim(axis));
        }
        auto oi = out.impl();
        Tape<S>::active()->record([impls, exts, offsets, oi, outer, inner, axis_total]() {
            if (oi->grad.empty()) return;
            for (size_t p = 0; p < impls.size(); ++p) {
                if (!impls[p]->requires_grad) continue;
                ensure_grad(*impls[p]);
                for (int64_t ou = 0; ou < outer; ++ou) {
                    const S* src = oi->grad.data() + (ou * axis_total + offsets[p]) * inner;
                    S* dst = impls[p]->grad.data() + ou * exts[p] * inner;
                    for (int64_t i = 0; i < exts[p] * inner; ++i) dst[i] += src[i];
                }
            }
        });
    }
    return out;
}

template <typename S>
Tensor<S> slice(const Tensor<S>& a, int axis, int64_t start, int64_t len) {
    check<ShapeError>(axis >= 0 && static_cast<size_t>(axis) < a.rank(), "slice: bad axis ", axis);
    check<ShapeError>(start >= 0 && len >= 0 && start + len <= a.dim(axis),
                      "slice: range [", start, ",", start + len, ") exceeds extent ", a.dim(axis));
    Shape out_shape = a.shape();
    out_shape[axis] = len;
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= a.dim(i);
    for (size_t i = axis + 1; i < a.rank(); ++i) inner *= a.dim(i);
    const int64_t ext = a.dim(axis);
    auto out = Tensor<S>::zeros(out_shape);
    for (int64_t ou = 0; ou < outer; ++ou)
        std::copy_n(a.data().data() + (ou * ext + start) * inner, len * inner,
                    out.data().data() + ou * len * inner);
    if (detail::will_record<S>({&a})) {
        out.set_requires_grad(true);
        auto ai = a.impl(), oi = out.impl();
        Tape<S>::active()->record([ai, oi, outer, inner, ext, start, len]() {
            if (oi->grad.empty() || !ai->requires_grad) return;
            ensure_grad(*ai);
            for (int64_t ou = 0; ou < outer; ++ou) {
                const S* src = oi->grad.data() + ou * len * inner;
                S* dst = ai->grad.data() + (ou * ext + start) * inner;
                for (int64_t i = 0; i < len * inner; ++i) dst[i] += src[i];
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reductions

template <typename S>
Tensor<S> sum_axes(const Tensor<S>& a, std::vector<int> axes) {
    std::sort(axes.begin(), axes.end());
    std::vector<bool> reduced(a.rank(), false);
    for (int ax : axes) {
        check<ShapeError>(ax >= 0 && static_cast<size_t>(ax) < a.rank(), "sum_axes: bad axis ", ax);
        reduced[ax] = true;
    }
    Shape out_shape;
    for (size_t i = 0; i < a.rank(); ++i)
        if (!reduced[i]) out_shape.push_back(a.dim(i));

    const auto out_strides = strides_of(out_shape);
    // contribution of each input axis to the output flat index
    std::vector<int64_t> contrib(a.rank(), 0);
    {
        size_t oax = 0;
        for (size_t i = 0; i < a.rank(); ++i)
            if (!reduced[i]) contrib[i] = out_strides[oax++];
    }
    const int64_t n = a.numel();
    auto out = Tensor<S>::zeros(out_shape);
    const size_t r = a.rank();
    const Shape in_shape = a.shape();
    // odometer walk over the input with an incrementally maintained output
    // index; avoids per-element division
    auto walk = [in_shape, contrib, n, r](const S* src, S* dst, bool scatter) {
        std::vector<int64_t> counter(r, 0);
        int64_t o = 0;
        for (int64_t i = 0; i < n; ++i) {
            if (scatter)
                dst[i] += src[o];
            else
                dst[o] += src[i];
            for (size_t ax = r; ax-- > 0;) {
                ++counter[ax];
                o += contrib[ax];
                if (counter[ax] < in_shape[ax]) break;
                o -= counter[ax] * contrib[ax];
                counter[ax] = 0;
            }
        }
    };
    walk(a.data().data(), out.data().data(), false);
    detail::check_finite("sum", out);
    if (detail::will_record<S>({&a})) {
        out.set_requires_grad(true);
        auto ai = a.impl(), oi = out.impl();
        Tape<S>::active()->record([ai, oi, walk]() {
            if (oi->grad.empty() || !ai->requires_grad) return;
            ensure_grad(*ai);
            walk(oi->grad.data(), ai->grad.data(), true);
        });
    }
    return out;
}

template <typename S>
Tensor<S> mean_axes(const Tensor<S>& a, std::vector<int> axes) {
    int64_t count = 1;
    for (int ax : axes) count *= a.dim(ax);
    return scalar_mul(sum_axes(a, std::move(axes)), S(1) / static_cast<S>(count));
}

template <typename S>
Tensor<S> sum_all(const Tensor<S>& a) {
    std::vector<int> axes(a.rank());
    std::iota(axes.begin(), axes.end(), 0);
    return sum_axes(a, axes);
}

template <typename S>
Tensor<S> mean_all(const Tensor<S>& a) {
    return scalar_mul(sum_all(a), S(1) / static_cast<S>(a.numel()));
}

// ---------------------------------------------------------------------------
// Matrix multiplication: A (..., M, K) with B either (K, N) shared across the
// batch or (..., K, N) with identical leading extents.

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
    check<ShapeError>(a.rank() >= 2 && b.rank() >= 2, "matmul: inputs must have rank >= 2, got ",
                      shape_str(a.shape()), " and ", shape_str(b.shape()));
    const int64_t m = a.dim(a.rank() - 2);
    const int64_t k = a.dim(a.rank() - 1);
    const int64_t kb = b.dim(b.rank() - 2);
    const int64_t n = b.dim(b.rank() - 1);
    check<ShapeError>(k == kb, "matmul: inner extents differ, ", shape_str(a.shape()), " vs ",
                      shape_str(b.shape()));
    const bool shared_b = (b.rank() == 2 && a.rank() > 2);
    if (!shared_b && a.rank() != b.rank())
        fail<ShapeError>("matmul: rank mismatch ", shape_str(a.shape()), " vs ",
                         shape_str(b.shape()));
    int64_t batch = 1;
    Shape out_shape;
    for (size_t i = 0; i + 2 < a.rank(); ++i) {
        if (!shared_b)
            check<ShapeError>(a.dim(i) == b.dim(i), "matmul: batch extents differ, ",
                              shape_str(a.shape()), " vs ", shape_str(b.shape()));
        batch *= a.dim(i);
        out_shape.push_back(a.dim(i));
    }
    out_shape.push_back(m);
    out_shape.push_back(n);
    auto out = Tensor<S>::zeros(out_shape);

    const S* pa = a.data().data();
    const S* pb = b.data().data();
    S* po = out.data().data();
    const bool big = batch * m * k * n >= detail::kParallelMacThreshold;
    const bool par_outer = big && batch >= 4;
    if (par_outer) {
#pragma omp parallel for schedule(static)
        for (int64_t bi = 0; bi < batch; ++bi)
            detail::gemm_nn(pa + bi * m * k, shared_b ? pb : pb + bi * k * n, po + bi * m * n, m,
                            k, n, false);
    } else {
        for (int64_t bi = 0; bi < batch; ++bi)
            detail::gemm_nn(pa + bi * m * k, shared_b ? pb : pb + bi * k * n, po + bi * m * n, m,
                            k, n, big);
    }
    detail::check_finite("matmul", out);

    if (detail::will_record<S>({&a, &b})) {
        out.set_requires_grad(true);
        auto ai = a.impl(), bi_ = b.impl(), oi = out.impl();
        Tape<S>::active()->record([ai, bi_, oi, m, k, n, batch, shared_b, big, par_outer]() {
            if (oi->grad.empty()) return;
            const S* og = oi->grad.data();
            if (ai->requires_grad) {
                ensure_grad(*ai);
                S* ga = ai->grad.data();
                const S* vb = bi_->value.data();
                if (par_outer) {
#pragma omp parallel for schedule(static)
                    for (int64_t c = 0; c < batch; ++c)
                        detail::gemm_nt(og + c * m * n, shared_b ? vb : vb + c * k * n,
                                        ga + c * m * k, m, n, k, false);
                } else {
                    for (int64_t c = 0; c < batch; ++c)
                        detail::gemm_nt(og + c * m * n, shared_b ? vb : vb + c * k * n,
                                        ga + c * m * k, m, n, k, big);
                }
            }
            if (bi_->requires_grad) {
                ensure_grad(*bi_);
                S* gb = bi_->grad.data();
                const S* va = ai->value.data();
                if (shared_b || batch == 1) {
                    // fold the batch into the row dimension
                    detail::gemm_tn(va, og, gb, batch * m, k, n, big);
                } else if (par_outer) {
#pragma omp parallel for schedule(static)
                    for (int64_t c = 0; c < batch; ++c)
                        detail::gemm_tn(va + c * m * k, og + c * m * n, gb + c * k * n, m, k, n,
                                        false);
                } else {
                    for (int64_t c = 0; c < batch; ++c)
                        detail::gemm_tn(va + c * m * k, og + c * m * n, gb + c * k * n, m, k, n,
                                        big);
                }
            }
        });
    }
    return out;
}

}  // namespace mdn
