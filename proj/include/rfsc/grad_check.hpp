#pragma once

// Finite-difference gradient checking. The callable f is generic over the
// scalar type: f(GraphT<T>*, TensorT<T>) -> scalar TensorT<T>. The analytic
// side runs the float32 tape; the numeric side re-evaluates f in float64 with
// central differences, so the reference is more precise than the thing under
// test. Returns the max over coordinates of
//     |analytic - numeric| / max(1e-8, |analytic| + |numeric|),
// with NaN anywhere reported as +infinity. Callers must keep x away from
// kinks (relu/clamp corners) by more than h.

#include <cmath>
#include <limits>
#include <vector>

#include "rfsc/ops.hpp"
#include "rfsc/tensor.hpp"

namespace rfsc {

template <typename F>
[[nodiscard]] double grad_check(F&& f, const Tensor& x, double h = 1e-3) {
    // Analytic gradient via the float tape.
    Tensor xa = x.clone();
    xa.set_requires_grad(true);
    GraphT<float> g;
    Tensor loss = f(&g, xa);
    if (loss.size() != 1) fail_data("grad_check: f must return a scalar");
    g.backward(loss);
    std::vector<double> analytic(xa.grad().begin(), xa.grad().end());

    // Numeric gradient via float64 central differences, tape-free.
    std::vector<double> base(x.data().begin(), x.data().end());
    double worst = 0.0;
    for (std::size_t i = 0; i < base.size(); ++i) {
        auto eval_at = [&](double v) {
            std::vector<double> probe = base;
            probe[i] = v;
            TensorT<double> xt = TensorT<double>::from(x.shape(), std::move(probe));
            return f(static_cast<GraphT<double>*>(nullptr), xt).item();
        };
        const double fp = eval_at(base[i] + h);
        const double fm = eval_at(base[i] - h);
        const double numeric = (fp - fm) / (2.0 * h);
        const double diff = std::abs(analytic[i] - numeric);
        const double denom = std::max(1e-8, std::abs(analytic[i]) + std::abs(numeric));
        const double rel = diff / denom;
        if (std::isnan(rel)) return std::numeric_limits<double>::infinity();
        worst = std::max(worst, rel);
    }
    return worst;
}

} // namespace rfsc
