#pragma once

// Central-difference gradient verification. Instantiate the code under test
// with S = double; float truncation would swamp the comparison.

#include <functional>

#include "mdn/tensor.hpp"

namespace mdn {

// Max over coordinates of |autodiff - central_difference| /
// max(|central_difference|, 1e-8), differentiating fn() with respect to `wrt`
// (which fn must read). fn must be pure and scalar-valued.
inline double grad_check_wrt(const std::function<Tensor<double>()>& fn, Tensor<double>& wrt,
                             double eps = 1e-4) {
    wrt.set_requires_grad(true);
    wrt.zero_grad();
    Tape<double> tape;
    {
        TapeScope<double> scope(&tape);
        auto loss = fn();
        check<ShapeError>(loss.numel() == 1, "grad_check: fn must be scalar-valued, got shape ",
                          shape_str(loss.shape()));
        tape.backward(loss);
    }
    std::vector<double> ad(wrt.numel(), 0.0);
    if (!wrt.grad().empty()) ad = wrt.grad();
    wrt.zero_grad();

    auto eval = [&]() {
        TapeScope<double> scope(nullptr);
        return fn().item();
    };
    double worst = 0.0;
    for (int64_t i = 0; i < wrt.numel(); ++i) {
        const double x0 = wrt.data()[i];
        wrt.data()[i] = x0 + eps;
        const double fp = eval();
        wrt.data()[i] = x0 - eps;
        const double fm = eval();
        wrt.data()[i] = x0;
        const double fd = (fp - fm) / (2.0 * eps);
        const double err = std::abs(ad[i] - fd) / std::max(std::abs(fd), 1e-8);
        worst = std::max(worst, err);
    }
    return worst;
}

inline double grad_check(const std::function<Tensor<double>(const Tensor<double>&)>& fn,
                         Tensor<double> point, double eps = 1e-4) {
    return grad_check_wrt([&]() { return fn(point); }, point, eps);
}

}  // namespace mdn
