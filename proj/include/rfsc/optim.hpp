#pragma once

// SGD with momentum, dampening and weight decay:
//   v <- momentum * v + (1 - dampening) * (g + weight_decay * p)
//   p <- p - lr * v
// Velocity starts at zero and is owned here, parallel to the parameter list.

#include <vector>

#include "rfsc/tensor.hpp"

namespace rfsc {

struct SgdConfig {
    float momentum = 0.9f;
    float dampening = 0.0f;
};

class Sgd {
public:
    Sgd() = default;
    Sgd(std::vector<Tensor*> params, SgdConfig cfg) : params_(std::move(params)), cfg_(cfg) {
        for (const Tensor* p : params_)
            velocity_.emplace_back(static_cast<std::size_t>(p->size()), 0.0f);
    }

    void step(float lr, float weight_decay) {
        for (std::size_t k = 0; k < params_.size(); ++k) {
            Tensor& p = *params_[k];
            if (!p.requires_grad()) fail_data("sgd step: parameter " + std::to_string(k) + " has no gradient");
            auto g = p.grad();
            auto& v = velocity_[k];
            float* w = p.raw();
            for (std::size_t i = 0; i < v.size(); ++i) {
                v[i] = cfg_.momentum * v[i] + (1.0f - cfg_.dampening) * (g[i] + weight_decay * w[i]);
                w[i] -= lr * v[i];
            }
        }
    }

private:
    std::vector<Tensor*> params_;
    std::vector<std::vector<float>> velocity_;
    SgdConfig cfg_;
};

} // namespace rfsc
