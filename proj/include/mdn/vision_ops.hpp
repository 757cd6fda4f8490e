#pragma once

// Convolution (via im2col), temporal channel shifting and ROI align, all
// recorded on the autodiff tape.

#include <array>

#include "mdn/tensor.hpp"

namespace mdn {

namespace detail {

// col (Cg*kh*kw, N*oh*ow) gathered from x (N,C,H,W) for channel group
// [c0, c0+cg). Border handling is hoisted out of the inner loops.
template <typename S>
void im2col_one(const S* __restrict x, int64_t n, int64_t c_total, int64_t h, int64_t w,
                int64_t c0, int64_t cg, int64_t kh, int64_t kw, int64_t stride, int64_t pad,
                int64_t oh, int64_t ow, int64_t cols, S* __restrict col);

template <typename S>
void im2col(const S* __restrict x, int64_t n_imgs, int64_t c_total, int64_t h, int64_t w,
            int64_t c0, int64_t cg, int64_t kh, int64_t kw, int64_t stride, int64_t pad,
            int64_t oh, int64_t ow, S* __restrict col, bool parallel) {
    const int64_t ohw = oh * ow;
    const int64_t cols = n_imgs * ohw;
    if (parallel) {
#pragma omp parallel for schedule(static)
        for (int64_t n = 0; n < n_imgs; ++n)
            im2col_one(x, n, c_total, h, w, c0, cg, kh, kw, stride, pad, oh, ow, cols, col);
        return;
    }
    for (int64_t n = 0; n < n_imgs; ++n)
        im2col_one(x, n, c_total, h, w, c0, cg, kh, kw, stride, pad, oh, ow, cols, col);
}

template <typename S>
void im2col_one(const S* __restrict x, int64_t n, int64_t c_total, int64_t h, int64_t w,
                int64_t c0, int64_t cg, int64_t kh, int64_t kw, int64_t stride, int64_t pad,
                int64_t oh, int64_t ow, int64_t cols, S* __restrict col) {
    const int64_t ohw = oh * ow;
    {
        for (int64_t c = 0; c < cg; ++c) {
            const S* __restrict img = x + (n * c_total + c0 + c) * h * w;
            for (int64_t ky = 0; ky < kh; ++ky) {
                for (int64_t kx = 0; kx < kw; ++kx) {
                    S* __restrict dst = col + ((c * kh + ky) * kw + kx) * cols + n * ohw;
                    // valid ox range: 0 <= ox*stride - pad + kx < w
                    const int64_t lo = std::max<int64_t>(
                        0, (pad - kx + stride - 1) / stride);
                    const int64_t hi = std::min<int64_t>(
                        ow - 1, (w - 1 + pad - kx) / stride);
                    for (int64_t oy = 0; oy < oh; ++oy) {
                        const int64_t iy = oy * stride - pad + ky;
                        S* __restrict row = dst + oy * ow;
                        if (iy < 0 || iy >= h) {
                            std::fill(row, row + ow, S(0));
                            continue;
                        }
                        const S* __restrict src = img + iy * w - pad + kx;
                        for (int64_t ox = 0; ox < lo; ++ox) row[ox] = S(0);
                        if (stride == 1) {
                            for (int64_t ox = lo; ox <= hi; ++ox) row[ox] = src[ox];
                        } else {
                            for (int64_t ox = lo; ox <= hi; ++ox) row[ox] = src[ox * stride];
                        }
                        for (int64_t ox = hi + 1; ox < ow; ++ox) row[ox] = S(0);
                    }
                }
            }
        }
    }
}

// Scatter-add of a col buffer back into dx; inverse of im2col.
template <typename S>
void col2im_one(const S* __restrict col, int64_t n, int64_t c_total, int64_t h, int64_t w,
                int64_t c0, int64_t cg, int64_t kh, int64_t kw, int64_t stride, int64_t pad,
                int64_t oh, int64_t ow, int64_t cols, S* __restrict dx) {
    const int64_t ohw = oh * ow;
    for (int64_t c = 0; c < cg; ++c) {
        S* __restrict img = dx + (n * c_total + c0 + c) * h * w;
        for (int64_t ky = 0; ky < kh; ++ky) {
            for (int64_t kx = 0; kx < kw; ++kx) {
                const S* __restrict src = col + ((c * kh + ky) * kw + kx) * cols + n * ohw;
                const int64_t lo = std::max<int64_t>(0, (pad - kx + stride - 1) / stride);
                const int64_t hi = std::min<int64_t>(ow - 1, (w - 1 + pad - kx) / stride);
                for (int64_t oy = 0; oy < oh; ++oy) {
                    const int64_t iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= h) continue;
                    S* __restrict drow = img + iy * w - pad + kx;
                    const S* __restrict srow = src + oy * ow;
                    if (stride == 1) {
                        for (int64_t ox = lo; ox <= hi; ++ox) drow[ox] += srow[ox];
                    } else {
                        for (int64_t ox = lo; ox <= hi; ++ox) drow[ox * stride] += srow[ox];
                    }
                }
            }
        }
    }
}

template <typename S>
void col2im_acc(const S* col, int64_t n_imgs, int64_t c_total, int64_t h, int64_t w, int64_t c0,
                int64_t cg, int64_t kh, int64_t kw, int64_t stride, int64_t pad, int64_t oh,
                int64_t ow, S* dx, bool parallel) {
    const int64_t cols = n_imgs * oh * ow;
    if (parallel) {
#pragma omp parallel for schedule(static)
        for (int64_t n = 0; n < n_imgs; ++n)
            col2im_one(col, n, c_total, h, w, c0, cg, kh, kw, stride, pad, oh, ow, cols, dx);
        return;
    }
    for (int64_t n = 0; n < n_imgs; ++n)
        col2im_one(col, n, c_total, h, w, c0, cg, kh, kw, stride, pad, oh, ow, cols, dx);
}

}  // namespace detail

// x (N, Cin, H, W) * w (Cout, Cin/groups, kh, kw) + b (Cout).
template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b, int64_t stride,
                 int64_t pad, int64_t groups = 1) {
    check<ShapeError>(x.rank() == 4 && w.rank() == 4, "conv2d: x ", shape_str(x.shape()), ", w ",
                      shape_str(w.shape()));
    const int64_t n = x.dim(0), cin = x.dim(1), h = x.dim(2), ww = x.dim(3);
    const int64_t cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    check<ShapeError>(cin % groups == 0 && cout % groups == 0 && w.dim(1) == cin / groups,
                      "conv2d: channel/group mismatch, x ", shape_str(x.shape()), ", w ",
                      shape_str(w.shape()), ", groups ", groups);
    check<ShapeError>(b.numel() == cout, "conv2d: bias length ", b.numel(), " vs out channels ",
                      cout);
    const int64_t oh = (h + 2 * pad - kh) / stride + 1;
    const int64_t ow = (ww + 2 * pad - kw) / stride + 1;
    check<ShapeError>(oh >= 1 && ow >= 1, "conv2d: empty output for input ", shape_str(x.shape()));
    const int64_t cg = cin / groups, og = cout / groups;
    const int64_t kdim = cg * kh * kw;
    const int64_t cols = n * oh * ow;

    auto out = Tensor<S>::zeros({n, cout, oh, ow});
    // one im2col over all channels: group g's rows sit at offset g*kdim. The
    // buffer is kept for the backward pass. Grouped convolutions parallelize
    // over groups; otherwise the kernels parallelize internally.
    const bool big = cout * kdim * cols >= detail::kParallelMacThreshold / 4;
    const bool par_groups = big && groups >= 4;
    const bool par_inner = big && !par_groups;
    const bool par_cols = cin * kh * kw * cols >= detail::kParallelMacThreshold / 4;
    auto saved_col = std::make_shared<std::vector<S>>(cin * kh * kw * cols);
    detail::im2col(x.data().data(), n, cin, h, ww, 0, cin, kh, kw, stride, pad, oh, ow,
                   saved_col->data(), par_cols);
    {
        std::vector<S> res(cout * cols, S(0));
        if (par_groups) {
#pragma omp parallel for schedule(static)
            for (int64_t g = 0; g < groups; ++g)
                detail::gemm_nn(w.data().data() + g * og * kdim,
                                saved_col->data() + g * kdim * cols, res.data() + g * og * cols,
                                og, kdim, cols, false);
        } else {
            for (int64_t g = 0; g < groups; ++g)
                detail::gemm_nn(w.data().data() + g * og * kdim,
                                saved_col->data() + g * kdim * cols, res.data() + g * og * cols,
                                og, kdim, cols, par_inner);
        }
        for (int64_t co = 0; co < cout; ++co) {
            const S bias = b.data()[co];
            for (int64_t im = 0; im < n; ++im) {
                const S* src = res.data() + co * cols + im * oh * ow;
                S* dst = out.data().data() + ((im * cout + co) * oh) * ow;
                for (int64_t i = 0; i < oh * ow; ++i) dst[i] = src[i] + bias;
            }
        }
    }
    detail::check_finite("conv2d", out);

    if (detail::will_record<S>({&x, &w, &b})) {
        out.set_requires_grad(true);
        auto xi = x.impl(), wi = w.impl(), bi = b.impl(), oi = out.impl();
        Tape<S>::active()->record([xi, wi, bi, oi, saved_col, n, cin, h, ww, cout, kh, kw, stride,
                                   pad, oh, ow, groups, og, kdim, cols, par_groups, par_inner,
                                   par_cols]() {
            if (oi->grad.empty()) return;
            const bool need_x = xi->requires_grad, need_w = wi->requires_grad,
                       need_b = bi->requires_grad;
            if (need_x) ensure_grad(*xi);
            if (need_w) ensure_grad(*wi);
            if (need_b) ensure_grad(*bi);
            // gather dY into (cout, n*oh*ow)
            std::vector<S> dyg(cout * cols);
            for (int64_t co = 0; co < cout; ++co)
                for (int64_t im = 0; im < n; ++im)
                    std::copy_n(oi->grad.data() + ((im * cout + co) * oh) * ow, oh * ow,
                                dyg.data() + co * cols + im * oh * ow);
            if (need_b) {
                for (int64_t co = 0; co < cout; ++co) {
                    S acc = S(0);
                    const S* row = dyg.data() + co * cols;
                    for (int64_t i = 0; i < cols; ++i) acc += row[i];
                    bi->grad[co] += acc;
                }
            }
            if (need_w) {
                if (par_groups) {
#pragma omp parallel for schedule(static)
                    for (int64_t g = 0; g < groups; ++g)
                        detail::gemm_nt(dyg.data() + g * og * cols,
                                        saved_col->data() + g * kdim * cols,
                                        wi->grad.data() + g * og * kdim, og, cols, kdim, false);
                } else {
                    for (int64_t g = 0; g < groups; ++g)
                        detail::gemm_nt(dyg.data() + g * og * cols,
                                        saved_col->data() + g * kdim * cols,
                                        wi->grad.data() + g * og * kdim, og, cols, kdim,
                                        par_inner);
                }
            }
            if (need_x) {
                std::vector<S> dcol(cin * kh * kw * cols, S(0));
                if (par_groups) {
#pragma omp parallel for schedule(static)
                    for (int64_t g = 0; g < groups; ++g)
                        detail::gemm_tn(wi->value.data() + g * og * kdim,
                                        dyg.data() + g * og * cols,
                                        dcol.data() + g * kdim * cols, og, kdim, cols, false);
                } else {
                    for (int64_t g = 0; g < groups; ++g)
                        detail::gemm_tn(wi->value.data() + g * og * kdim,
                                        dyg.data() + g * og * cols,
                                        dcol.data() + g * kdim * cols, og, kdim, cols,
                                        par_inner);
                }
                detail::col2im_acc(dcol.data(), n, cin, h, ww, 0, cin, kh, kw, stride, pad, oh,
                                   ow, xi->grad.data(), par_cols);
            }
        });
    }
    return out;
}

// Shifts the first floor(frac*C) channels one frame forward in time and the
// next floor(frac*C) one frame back, zero-filling at clip boundaries.
template <typename S>
Tensor<S> temporal_shift(const Tensor<S>& x, double frac) {
    check<ShapeError>(x.rank() == 5, "temporal_shift: expected (B,T,C,H,W), got ",
                      shape_str(x.shape()));
    check<Error>(frac >= 0.0 && frac <= 0.5, "temporal_shift: frac must be in [0,0.5], got ",
                 frac);
    const int64_t b = x.dim(0), t = x.dim(1), c = x.dim(2), hw = x.dim(3) * x.dim(4);
    const int64_t nshift = static_cast<int64_t>(frac * static_cast<double>(c));
    if (t < 2 || nshift == 0) return x;

    auto out = Tensor<S>::zeros(x.shape());
    const S* px = x.data().data();
    S* po = out.data().data();
    auto at = [&](int64_t bi, int64_t ti, int64_t ci) { return ((bi * t + ti) * c + ci) * hw; };
    for (int64_t bi = 0; bi < b; ++bi) {
        for (int64_t ti = 0; ti < t; ++ti) {
            for (int64_t ci = 0; ci < c; ++ci) {
                int64_t src_t = ti;
                if (ci < nshift)
                    src_t = ti - 1;  // forward shift: frame t reads t-1
                else if (ci < 2 * nshift)
                    src_t = ti + 1;  // backward shift
                if (src_t < 0 || src_t >= t) continue;  // zero fill
                std::copy_n(px + at(bi, src_t, ci), hw, po + at(bi, ti, ci));
            }
        }
    }
    if (detail::will_record<S>({&x})) {
        out.set_requires_grad(true);
        auto xi = x.impl(), oi = out.impl();
        Tape<S>::active()->record([xi, oi, b, t, c, hw, nshift]() {
            if (oi->grad.empty() || !xi->requires_grad) return;
            ensure_grad(*xi);
            for (int64_t bi = 0; bi < b; ++bi)
                for (int64_t ti = 0; ti < t; ++ti)
                    for (int64_t ci = 0; ci < c; ++ci) {
                        int64_t src_t = ti;
                        if (ci < nshift)
                            src_t = ti - 1;
                        else if (ci < 2 * nshift)
                            src_t = ti + 1;
                        if (src_t < 0 || src_t >= t) continue;
                        const S* src = oi->grad.data() + ((bi * t + ti) * c + ci) * hw;
                        S* dst = xi->grad.data() + ((bi * t + src_t) * c + ci) * hw;
                        for (int64_t i = 0; i < hw; ++i) dst[i] += src[i];
                    }
        });
    }
    return out;
}

struct AlignBox {
    double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
    bool valid = false;
};

namespace detail {

// Bilinear corner weights at a continuous position; corners outside the grid
// contribute nothing. Positions are offset by -0.5 so that integer box
// coordinates address pixel edges while interpolation works on pixel centers.
struct BilinearTaps {
    int64_t idx[4];
    double w[4];
    int count = 0;
};

inline BilinearTaps bilinear_taps(double y, double x, int64_t h, int64_t w) {
    BilinearTaps taps;
    const double yy = y - 0.5, xx = x - 0.5;
    const int64_t y0 = static_cast<int64_t>(std::floor(yy));
    const int64_t x0 = static_cast<int64_t>(std::floor(xx));
    const double ly = yy - static_cast<double>(y0), lx = xx - static_cast<double>(x0);
    const int64_t ys[2] = {y0, y0 + 1};
    const int64_t xs[2] = {x0, x0 + 1};
    const double wy[2] = {1.0 - ly, ly};
    const double wx[2] = {1.0 - lx, lx};
    for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b) {
            if (ys[a] < 0 || ys[a] >= h || xs[b] < 0 || xs[b] >= w) continue;
            taps.idx[taps.count] = ys[a] * w + xs[b];
            taps.w[taps.count] = wy[a] * wx[b];
            ++taps.count;
        }
    return taps;
}

}  // namespace detail

// Boxes are given in image pixels; spatial_scale maps them onto the feature
// grid without rounding. One box per feature map; invalid boxes yield a zero
// patch. Each bin averages samples^2 bilinear taps at regular sub-bin centers.
template <typename S>
Tensor<S> roi_align(const Tensor<S>& fm, const std::vector<AlignBox>& boxes, int64_t p,
                    int64_t samples, double spatial_scale) {
    check<ShapeError>(fm.rank() == 4, "roi_align: expected (N,C,H,W), got ",
                      shape_str(fm.shape()));
    const int64_t n = fm.dim(0), c = fm.dim(1), h = fm.dim(2), w = fm.dim(3);
    check<ShapeError>(static_cast<int64_t>(boxes.size()) == n, "roi_align: ", boxes.size(),
                      " boxes for ", n, " maps");
    check<Error>(p >= 1 && samples >= 1, "roi_align: bad output size ", p, " or samples ",
                 samples);
    auto out = Tensor<S>::zeros({n, c, p, p});
    const double inv = 1.0 / static_cast<double>(samples * samples);
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) {
        if (!boxes[i].valid) continue;
        const double fx0 = boxes[i].x0 * spatial_scale, fy0 = boxes[i].y0 * spatial_scale;
        const double bw = (boxes[i].x1 - boxes[i].x0) * spatial_scale / static_cast<double>(p);
        const double bh = (boxes[i].y1 - boxes[i].y0) * spatial_scale / static_cast<double>(p);
        for (int64_t by = 0; by < p; ++by)
            for (int64_t bx = 0; bx < p; ++bx)
                for (int64_t sy = 0; sy < samples; ++sy)
                    for (int64_t sx = 0; sx < samples; ++sx) {
                        const double y =
                            fy0 + (static_cast<double>(by) +
                                   (static_cast<double>(sy) + 0.5) / static_cast<double>(samples)) *
                                      bh;
                        const double x =
                            fx0 + (static_cast<double>(bx) +
                                   (static_cast<double>(sx) + 0.5) / static_cast<double>(samples)) *
                                      bw;
                        const auto taps = detail::bilinear_taps(y, x, h, w);
                        for (int64_t ch = 0; ch < c; ++ch) {
                            const S* img = fm.data().data() + (i * c + ch) * h * w;
                            S acc = S(0);
                            for (int t = 0; t < taps.count; ++t)
                                acc += static_cast<S>(taps.w[t]) * img[taps.idx[t]];
                            out.data()[((i * c + ch) * p + by) * p + bx] +=
                                acc * static_cast<S>(inv);
                        }
                    }
    }
    detail::check_finite("roi_align", out);
    if (detail::will_record<S>({&fm})) {
        out.set_requires_grad(true);
        auto fi = fm.impl(), oi = out.impl();
        Tape<S>::active()->record([fi, oi, boxes, n, c, h, w, p, samples, spatial_scale, inv]() {
            if (oi->grad.empty() || !fi->requires_grad) return;
            ensure_grad(*fi);
#pragma omp parallel for schedule(static)
            for (int64_t i = 0; i < n; ++i) {
                if (!boxes[i].valid) continue;
                const double fx0 = boxes[i].x0 * spatial_scale;
                const double fy0 = boxes[i].y0 * spatial_scale;
                const double bw =
                    (boxes[i].x1 - boxes[i].x0) * spatial_scale / static_cast<double>(p);
                const double bh =
                    (boxes[i].y1 - boxes[i].y0) * spatial_scale / static_cast<double>(p);
                for (int64_t by = 0; by < p; ++by)
                    for (int64_t bx = 0; bx < p; ++bx)
                        for (int64_t sy = 0; sy < samples; ++sy)
                            for (int64_t sx = 0; sx < samples; ++sx) {
                                const double y = fy0 + (static_cast<double>(by) +
                                                        (static_cast<double>(sy) + 0.5) /
                                                            static_cast<double>(samples)) *
                                                           bh;
                                const double x = fx0 + (static_cast<double>(bx) +
                                                        (static_cast<double>(sx) + 0.5) /
                                                            static_cast<double>(samples)) *
                                                           bw;
                                const auto taps = detail::bilinear_taps(y, x, h, w);
                                for (int64_t ch = 0; ch < c; ++ch) {
                                    const S g =
                                        oi->grad[((i * c + ch) * p + by) * p + bx] *
                                        static_cast<S>(inv);
                                    S* img = fi->grad.data() + (i * c + ch) * h * w;
                                    for (int t = 0; t < taps.count; ++t)
                                        img[taps.idx[t]] += g * static_cast<S>(taps.w[t]);
                                }
                            }
            }
        });
    }
    return out;
}

}  // namespace mdn
