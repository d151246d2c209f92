#pragma once

// The model: an MLP feature extractor (every layer, including the last, is
// followed by ReLU, so features are nonnegative) plus an affine base-class
// head used only during base training. The extractor keeps a second set of
// weights, an exponential moving average updated once per optimizer step:
//   shadow <- tau * shadow + (1 - tau) * current.
// The shadow is always allocated; the head is never averaged. Evaluation
// chooses per call whether features come from the live or averaged weights.

#include <cstdint>
#include <string>
#include <vector>

#include "rfsc/ops.hpp"
#include "rfsc/rng.hpp"
#include "rfsc/tensor.hpp"

namespace rfsc {

struct MlpSpec {
    std::int64_t input_dim = 0;
    std::vector<std::int64_t> hidden_dims = {256, 128};
    std::int64_t feature_dim = 64;
    std::int64_t num_base_classes = 0;

    void validate() const {
        if (input_dim <= 0) fail_data("mlp spec: input_dim must be positive");
        if (feature_dim <= 0) fail_data("mlp spec: feature_dim must be positive");
        if (num_base_classes <= 0) fail_data("mlp spec: num_base_classes must be positive");
        for (auto d : hidden_dims)
            if (d <= 0) fail_data("mlp spec: hidden dims must be positive");
    }

    // Layer widths of the extractor: input, hiddens..., feature.
    [[nodiscard]] std::vector<std::int64_t> extractor_widths() const {
        std::vector<std::int64_t> w{input_dim};
        w.insert(w.end(), hidden_dims.begin(), hidden_dims.end());
        w.push_back(feature_dim);
        return w;
    }
};

class Network {
public:
    Network() = default;

    // Weights are uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)),
    // biases zero; the EMA shadow starts as a copy of the extractor.
    Network(MlpSpec spec, std::uint64_t seed, float ema_tau = 0.999f) : spec_(std::move(spec)), ema_tau_(ema_tau) {
        spec_.validate();
        Rng rng(mix_seed(seed, 0x696e6974ull)); // stream tag: "init"
        const auto widths = spec_.extractor_widths();
        for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
            w_.push_back(init_weight(rng, widths[l], widths[l + 1]));
            b_.push_back(init_bias(widths[l + 1]));
        }
        head_w_ = init_weight(rng, spec_.feature_dim, spec_.num_base_classes);
        head_b_ = init_bias(spec_.num_base_classes);
        reset_ema_to_current();
    }

    [[nodiscard]] const MlpSpec& spec() const { return spec_; }
    [[nodiscard]] float ema_tau() const { return ema_tau_; }
    void set_ema_tau(float tau) { ema_tau_ = tau; }

    [[nodiscard]] std::size_t extractor_layers() const { return w_.size(); }

    // Mutable parameter views for the optimizer.
    [[nodiscard]] std::vector<Tensor*> extractor_params() {
        std::vector<Tensor*> p;
        for (auto& t : w_) p.push_back(&t);
        for (auto& t : b_) p.push_back(&t);
        return p;
    }
    [[nodiscard]] std::vector<Tensor*> head_params() { return {&head_w_, &head_b_}; }

    // Named parameters in checkpoint order; EMA records mirror the extractor.
    [[nodiscard]] std::vector<std::pair<std::string, const Tensor*>> named_params() const {
        std::vector<std::pair<std::string, const Tensor*>> out;
        for (std::size_t l = 0; l < w_.size(); ++l) {
            out.emplace_back("extractor." + std::to_string(l) + ".weight", &w_[l]);
            out.emplace_back("extractor." + std::to_string(l) + ".bias", &b_[l]);
        }
        out.emplace_back("head.weight", &head_w_);
        out.emplace_back("head.bias", &head_b_);
        return out;
    }
    [[nodiscard]] std::vector<std::pair<std::string, const Tensor*>> named_ema_params() const {
        std::vector<std::pair<std::string, const Tensor*>> out;
        for (std::size_t l = 0; l < ema_w_.size(); ++l) {
            out.emplace_back("extractor." + std::to_string(l) + ".weight", &ema_w_[l]);
            out.emplace_back("extractor." + std::to_string(l) + ".bias", &ema_b_[l]);
        }
        return out;
    }
    [[nodiscard]] Tensor* find_param(const std::string& name) {
        auto match = [&](const char* prefix, std::vector<Tensor>& ws, std::vector<Tensor>& bs) -> Tensor* {
            for (std::size_t l = 0; l < ws.size(); ++l) {
                if (name == std::string(prefix) + std::to_string(l) + ".weight") return &ws[l];
                if (name == std::string(prefix) + std::to_string(l) + ".bias") return &bs[l];
            }
            return nullptr;
        };
        if (auto* t = match("extractor.", w_, b_)) return t;
        if (name == "head.weight") return &head_w_;
        if (name == "head.bias") return &head_b_;
        return nullptr;
    }
    [[nodiscard]] Tensor* find_ema_param(const std::string& name) {
        for (std::size_t l = 0; l < ema_w_.size(); ++l) {
            if (name == "extractor." + std::to_string(l) + ".weight") return &ema_w_[l];
            if (name == "extractor." + std::to_string(l) + ".bias") return &ema_b_[l];
        }
        return nullptr;
    }

    // Feature extractor forward. use_ema selects the averaged weights;
    // train_params additionally wires the live parameters into the tape so
    // the optimizer can read their gradients (never valid with use_ema).
    [[nodiscard]] Tensor features(Graph* g, const Tensor& x, bool use_ema, bool train_params = false) const {
        if (x.rank() != 2 || x.dim(1) != spec_.input_dim)
            fail_data("features: input shape " + shape_str(x.shape()) + " does not match input_dim " +
                      std::to_string(spec_.input_dim));
        if (use_ema && train_params) fail_data("features: averaged weights are never trained");
        const auto& ws = use_ema ? ema_w_ : w_;
        const auto& bs = use_ema ? ema_b_ : b_;
        Tensor h = x;
        for (std::size_t l = 0; l < ws.size(); ++l) {
            const Tensor wl = train_params ? ws[l] : ws[l].detached();
            const Tensor bl = train_params ? bs[l] : bs[l].detached();
            h = relu(g, affine(g, h, wl, bl));
        }
        return h;
    }

    // Base-class logits from live weights (training path).
    [[nodiscard]] Tensor logits(Graph* g, const Tensor& x, bool train_params = false) const {
        const Tensor f = features(g, x, /*use_ema=*/false, train_params);
        const Tensor w = train_params ? head_w_ : head_w_.detached();
        const Tensor b = train_params ? head_b_ : head_b_.detached();
        return affine(g, f, w, b);
    }

    // One EMA step over extractor parameters only.
    void ema_update() {
        const float tau = ema_tau_;
        auto blend = [tau](Tensor& shadow, const Tensor& cur) {
            float* s = shadow.raw();
            const float* c = cur.raw();
            for (std::int64_t i = 0; i < shadow.size(); ++i) s[i] = tau * s[i] + (1.0f - tau) * c[i];
        };
        for (std::size_t l = 0; l < w_.size(); ++l) {
            blend(ema_w_[l], w_[l]);
            blend(ema_b_[l], b_[l]);
        }
    }

    void reset_ema_to_current() {
        ema_w_.clear();
        ema_b_.clear();
        for (const auto& t : w_) ema_w_.push_back(t.clone());
        for (const auto& t : b_) ema_b_.push_back(t.clone());
    }

    void set_requires_grad(bool on) {
        for (auto& t : w_) t.set_requires_grad(on);
        for (auto& t : b_) t.set_requires_grad(on);
        head_w_.set_requires_grad(on);
        head_b_.set_requires_grad(on);
    }

    void zero_grads() {
        for (auto& t : w_) t.zero_grad();
        for (auto& t : b_) t.zero_grad();
        head_w_.zero_grad();
        head_b_.zero_grad();
    }

private:
    static Tensor init_weight(Rng& rng, std::int64_t fan_in, std::int64_t fan_out) {
        const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        Tensor t({fan_in, fan_out});
        for (auto& v : t.data()) v = static_cast<float>(rng.uniform(-a, a));
        return t;
    }
    static Tensor init_bias(std::int64_t n) { return Tensor({n}); }

    MlpSpec spec_;
    std::vector<Tensor> w_, b_;         // live extractor
    std::vector<Tensor> ema_w_, ema_b_; // averaged extractor
    Tensor head_w_, head_b_;            // base-class head (never averaged)
    float ema_tau_ = 0.999f;
};

} // namespace rfsc
