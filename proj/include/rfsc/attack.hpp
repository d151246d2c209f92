#pragma once

// Projected gradient descent in the L-infinity ball, the workhorse for both
// adversarial training and robust evaluation:
//   x_{t+1} = Pi( x_t + alpha * sign(grad_x mean-loss) )
// where Pi clips to the epsilon box around the clean batch first, then to the
// pixel range [0,1]. The loss is supplied as a callable producing per-sample
// losses, so the same attack drives base-class cross-entropy, cosine-score
// and linear-head objectives. One-step FGSM is pgd with alpha = epsilon,
// one iteration and no random start, sharing the code path bit for bit.

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>

#include "rfsc/ops.hpp"
#include "rfsc/rng.hpp"
#include "rfsc/tensor.hpp"

namespace rfsc {

struct AttackConfig {
    float epsilon = 8.0f / 255.0f;
    float alpha = 2.0f / 255.0f;
    int iterations = 20;
    bool random_start = true;
    std::uint64_t seed = 0;

    void validate() const {
        if (!(epsilon >= 0.0f)) fail_data("attack: epsilon must be nonnegative");
        if (!(alpha >= 0.0f)) fail_data("attack: alpha must be nonnegative");
        if (iterations < 0) fail_data("attack: iterations must be nonnegative");
    }
};

struct AttackResult {
    Tensor x_adv;
    float loss_clean = 0.0f;
    float loss_adv = 0.0f;
    float delta_linf = 0.0f; // max |x_adv - x|, always <= epsilon
};

// Per-sample losses, shaped [batch], differentiable wrt x when a tape is given.
using BatchLossFn = std::function<Tensor(Graph*, const Tensor& x, std::span<const int> y)>;

namespace detail {

inline float mean_loss_value(const BatchLossFn& loss_fn, const Tensor& x, std::span<const int> y) {
    Tensor per_sample = loss_fn(nullptr, x, y);
    if (per_sample.rank() != 1 || per_sample.dim(0) != x.dim(0))
        fail_data("attack: loss_fn must yield per-sample losses shaped [" + std::to_string(x.dim(0)) + "], got " +
                  shape_str(per_sample.shape()));
    return mean_all<float>(nullptr, per_sample).item();
}

} // namespace detail

inline AttackResult pgd(const BatchLossFn& loss_fn, const Tensor& x, std::span<const int> y, const AttackConfig& cfg) {
    cfg.validate();
    if (x.rank() != 2) fail_data("attack: expected a [batch, dim] input, got shape " + shape_str(x.shape()));
    if (static_cast<std::int64_t>(y.size()) != x.dim(0))
        fail_data("attack: " + std::to_string(y.size()) + " labels for a batch of " + std::to_string(x.dim(0)));
    for (std::int64_t i = 0; i < x.size(); ++i)
        if (!(x.raw()[i] >= 0.0f && x.raw()[i] <= 1.0f))
            fail_data("attack: input value " + std::to_string(x.raw()[i]) + " outside [0,1] at index " + std::to_string(i));

    AttackResult res;
    res.loss_clean = detail::mean_loss_value(loss_fn, x, y);

    // Empty ball or no iterations: the clean batch, bit for bit.
    if (cfg.epsilon == 0.0f || cfg.iterations == 0) {
        res.x_adv = x.clone();
        res.loss_adv = res.loss_clean;
        res.delta_linf = 0.0f;
        return res;
    }

    const std::int64_t n = x.size();
    Tensor cur = x.clone();
    if (cfg.random_start) {
        Rng rng(mix_seed(cfg.seed, 0x706764ull)); // stream tag: "pgd"
        for (std::int64_t i = 0; i < n; ++i) {
            const float v = x.raw()[i] + static_cast<float>(rng.uniform(-cfg.epsilon, cfg.epsilon));
            cur.raw()[i] = std::min(1.0f, std::max(0.0f, v));
        }
    }

    for (int t = 0; t < cfg.iterations; ++t) {
        Graph g;
        Tensor xt = cur;
        xt.set_requires_grad(true);
        Tensor per_sample = loss_fn(&g, xt, y);
        if (per_sample.rank() != 1 || per_sample.dim(0) != x.dim(0))
            fail_data("attack: loss_fn must yield per-sample losses shaped [" + std::to_string(x.dim(0)) + "], got " +
                      shape_str(per_sample.shape()));
        g.backward(mean_all(&g, per_sample));
        auto grad = xt.grad();

        Tensor next(x.shape());
        for (std::int64_t i = 0; i < n; ++i) {
            const float gv = grad[static_cast<std::size_t>(i)];
            const float sgn = gv > 0.0f ? 1.0f : (gv < 0.0f ? -1.0f : 0.0f);
            float v = cur.raw()[i] + cfg.alpha * sgn;
            const float lo = x.raw()[i] - cfg.epsilon;
            const float hi = x.raw()[i] + cfg.epsilon;
            v = std::min(hi, std::max(lo, v)); // epsilon box first,
            v = std::min(1.0f, std::max(0.0f, v)); // then pixel range
            next.raw()[i] = v;
        }
        cur = next;
    }

    res.x_adv = cur;
    res.loss_adv = detail::mean_loss_value(loss_fn, cur, y);
    float delta = 0.0f;
    for (std::int64_t i = 0; i < n; ++i) delta = std::max(delta, std::abs(cur.raw()[i] - x.raw()[i]));
    res.delta_linf = delta;
    return res;
}

// Single sign-gradient step of size epsilon: exactly one gradient evaluation.
inline AttackResult fgsm(const BatchLossFn& loss_fn, const Tensor& x, std::span<const int> y, const AttackConfig& cfg) {
    AttackConfig one = cfg;
    one.alpha = cfg.epsilon;
    one.iterations = 1;
    one.random_start = false;
    return pgd(loss_fn, x, y, one);
}

} // namespace rfsc
