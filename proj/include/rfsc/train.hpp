#pragma once

// Phase 1: mini-batch training of the extractor + base head, optionally on
// sign-gradient-perturbed batches, with a per-step averaged (shadow) copy of
// the extractor. Cosine learning-rate decay from lr to lr_final across
// epochs; the head's rate is scaled by the same factor.

#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "rfsc/attack.hpp"
#include "rfsc/data.hpp"
#include "rfsc/network.hpp"
#include "rfsc/ops.hpp"
#include "rfsc/optim.hpp"
#include "rfsc/rng.hpp"

namespace rfsc {

enum class Adversary { none, pgd };

[[nodiscard]] inline std::string adversary_name(Adversary a) { return a == Adversary::pgd ? "pgd" : "none"; }

struct TrainConfig {
    int epochs = 60;
    int batch_size = 64;
    float lr_extractor = 0.1f;
    float lr_extractor_final = 0.001f;
    float lr_head = 0.1f;
    float weight_decay_extractor = 1e-5f;
    float weight_decay_head = 1e-4f;
    float momentum = 0.9f;
    Adversary adversary = Adversary::none;
    AttackConfig attack; // consulted only when adversary == pgd
    bool wa_enabled = true;
    float ema_tau = 0.999f;
    std::uint64_t seed = 0;

    void validate() const {
        if (epochs < 0) fail_usage("train: epochs must be nonnegative");
        if (batch_size < 1) fail_usage("train: batch_size must be at least 1");
        if (!(lr_extractor > 0.0f) || !(lr_head > 0.0f)) fail_usage("train: learning rates must be positive");
        if (!(lr_extractor_final > 0.0f) || lr_extractor_final > lr_extractor)
            fail_usage("train: final learning rate must be in (0, lr_extractor]");
        if (!(weight_decay_extractor >= 0.0f) || !(weight_decay_head >= 0.0f))
            fail_usage("train: weight decay must be nonnegative");
        if (!(momentum >= 0.0f) || momentum >= 1.0f) fail_usage("train: momentum must be in [0, 1)");
        if (!(ema_tau >= 0.0f) || ema_tau > 1.0f) fail_usage("train: ema_tau must be in [0, 1]");
        if (adversary == Adversary::pgd) attack.validate();
    }
};

struct EpochLog {
    int epoch = 0;        // zero-based
    double clean_loss = 0; // epoch mean of per-sample loss on unperturbed batches
    double adv_loss = 0;   // epoch mean on the batches actually trained on
    double lr = 0;         // extractor learning rate used this epoch
};

using LogSink = std::function<void(const EpochLog&)>;

// Cosine decay from lr to lr_final: factor 1 at epoch 0, reaching lr_final at
// the last epoch. A single-epoch run uses the initial rate.
[[nodiscard]] inline double cosine_lr(double lr, double lr_final, int epoch, int epochs) {
    if (epochs <= 1) return lr;
    const double t = static_cast<double>(epoch) / static_cast<double>(epochs - 1);
    return lr_final + 0.5 * (lr - lr_final) * (1.0 + std::cos(t * 3.14159265358979323846));
}

// Trains net in place. Each epoch reshuffles from a seed derived from
// (cfg.seed, epoch); each batch's attack uses a seed derived from
// (cfg.attack.seed, epoch, batch) so trajectories are reproducible and no
// consumer's stream depends on another's draw count.
inline void train_base(Network& net, const LabeledSet& data, const TrainConfig& cfg, const LogSink& log = {}) {
    cfg.validate();
    data.validate();
    if (data.count() == 0) fail_data("train: dataset is empty");
    if (data.input_dim != net.spec().input_dim)
        fail_data("train: dataset dim " + std::to_string(data.input_dim) + " does not match network input_dim " +
                  std::to_string(net.spec().input_dim));
    const int nclasses = net.spec().num_base_classes;
    for (std::int64_t i = 0; i < data.count(); ++i) {
        if (data.labels[static_cast<std::size_t>(i)] < 0 || data.labels[static_cast<std::size_t>(i)] >= nclasses)
            fail_data("train: label " + std::to_string(data.labels[static_cast<std::size_t>(i)]) + " at sample " +
                      std::to_string(i) + " is outside [0, " + std::to_string(nclasses) + ")");
    }
    for (float v : data.images)
        if (!(v >= 0.0f && v <= 1.0f)) fail_data("train: inputs must lie in [0,1]");

    net.set_ema_tau(cfg.ema_tau);
    net.set_requires_grad(true);
    Sgd opt_extractor(net.extractor_params(), SgdConfig{cfg.momentum, 0.0f});
    Sgd opt_head(net.head_params(), SgdConfig{cfg.momentum, 0.0f});

    const BatchLossFn attack_loss = [&net](Graph* g, const Tensor& xb, std::span<const int> yb) {
        return softmax_cross_entropy(g, net.logits(g, xb, /*train_params=*/false), yb);
    };

    std::vector<int> order(static_cast<std::size_t>(data.count()));
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng(mix_seed(cfg.seed, 0x73687566ull, static_cast<std::uint64_t>(epoch))); // stream tag: "shuf"
        shuffle_rng.shuffle(order);

        const double lr_e = cosine_lr(cfg.lr_extractor, cfg.lr_extractor_final, epoch, cfg.epochs);
        const double factor = lr_e / static_cast<double>(cfg.lr_extractor);
        const double lr_h = static_cast<double>(cfg.lr_head) * factor;

        double sum_clean = 0.0, sum_adv = 0.0;
        std::int64_t seen = 0;
        int batch_idx = 0;
        for (std::int64_t start = 0; start < data.count(); start += cfg.batch_size, ++batch_idx) {
            const std::int64_t stop = std::min<std::int64_t>(start + cfg.batch_size, data.count());
            const std::span<const int> idx(order.data() + start, static_cast<std::size_t>(stop - start));
            Tensor x = gather_images(data, idx);
            const std::vector<int> y = gather_labels(data, idx);

            Tensor x_train = x;
            double batch_clean, batch_adv;
            if (cfg.adversary == Adversary::pgd) {
                AttackConfig ac = cfg.attack;
                ac.seed = mix_seed(cfg.attack.seed, static_cast<std::uint64_t>(epoch),
                                   static_cast<std::uint64_t>(batch_idx));
                const AttackResult res = pgd(attack_loss, x, y, ac);
                x_train = res.x_adv;
                batch_clean = res.loss_clean;
                batch_adv = res.loss_adv;
            } else {
                batch_clean = static_cast<double>(detail::mean_loss_value(attack_loss, x, y));
                batch_adv = batch_clean;
            }

            Graph g;
            const Tensor logits = net.logits(&g, x_train, /*train_params=*/true);
            const Tensor loss = mean_all(&g, softmax_cross_entropy(&g, logits, y));
            if (!std::isfinite(loss.item()))
                fail_numeric("train: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(batch_idx));
            net.zero_grads();
            g.backward(loss);
            opt_extractor.step(static_cast<float>(lr_e), cfg.weight_decay_extractor);
            opt_head.step(static_cast<float>(lr_h), cfg.weight_decay_head);
            if (cfg.wa_enabled) net.ema_update();

            const auto bs = static_cast<double>(stop - start);
            sum_clean += batch_clean * bs;
            sum_adv += batch_adv * bs;
            seen += stop - start;
        }

        if (log) {
            EpochLog e;
            e.epoch = epoch;
            e.clean_loss = sum_clean / static_cast<double>(seen);
            e.adv_loss = sum_adv / static_cast<double>(seen);
            e.lr = lr_e;
            log(e);
        }
    }
}

} // namespace rfsc
