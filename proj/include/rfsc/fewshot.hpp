#pragma once

// Phase 2: power-transform of features, per-class base statistics, calibrated
// nearest-centroid construction (each support feature is averaged with the m
// Euclidean-nearest base-class means in transformed space), cosine
// nearest-centroid inference, and a linear novel-episode head trained on
// frozen-extractor features. robust_eval_episode scores one episode under a
// sign-gradient attack whose loss is built through to the classifier's own
// logits, so there is no surrogate mismatch.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rfsc/attack.hpp"
#include "rfsc/data.hpp"
#include "rfsc/network.hpp"
#include "rfsc/ops.hpp"
#include "rfsc/optim.hpp"
#include "rfsc/rng.hpp"

namespace rfsc {

struct TukeyConfig {
    float lambda = 0.5f;

    void validate() const {
        if (!(lambda > 0.0f) || lambda > 1.0f) fail_usage("tukey: lambda must be in (0, 1]");
    }
};

// Elementwise max(z,0)^lambda, recorded on the tape when one is given.
[[nodiscard]] inline Tensor tukey(Graph* g, const Tensor& z, const TukeyConfig& cfg) {
    cfg.validate();
    return clamped_pow(g, z, cfg.lambda);
}

// Per-base-class means of transformed features, accumulated in 64-bit.
struct BaseStats {
    std::vector<std::vector<float>> means; // [class][feature_dim]

    [[nodiscard]] int num_classes() const { return static_cast<int>(means.size()); }
    [[nodiscard]] std::int64_t feature_dim() const {
        return means.empty() ? 0 : static_cast<std::int64_t>(means.front().size());
    }
};

[[nodiscard]] inline BaseStats base_stats(const Network& net, const LabeledSet& base_data, const TukeyConfig& tcfg,
                                          bool use_ema) {
    base_data.validate();
    const int nclasses = net.spec().num_base_classes;
    if (base_data.count() == 0) fail_data("base_stats: dataset is empty");
    for (int c = 0; c < nclasses; ++c) {
        auto it = base_data.class_index.find(c);
        if (it == base_data.class_index.end() || it->second.empty())
            fail_data("base_stats: base class " + std::to_string(c) + " has no samples");
    }
    const std::int64_t dim = net.spec().feature_dim;
    std::vector<std::vector<double>> sums(static_cast<std::size_t>(nclasses), std::vector<double>(dim, 0.0));
    std::vector<std::int64_t> counts(static_cast<std::size_t>(nclasses), 0);

    constexpr std::int64_t kBatch = 256;
    std::vector<int> idx;
    for (std::int64_t start = 0; start < base_data.count(); start += kBatch) {
        const std::int64_t stop = std::min(start + kBatch, base_data.count());
        idx.resize(static_cast<std::size_t>(stop - start));
        std::iota(idx.begin(), idx.end(), static_cast<int>(start));
        const Tensor z = tukey(nullptr, net.features(nullptr, gather_images(base_data, idx), use_ema), tcfg);
        for (std::int64_t r = 0; r < z.dim(0); ++r) {
            const int cls = base_data.labels[static_cast<std::size_t>(start + r)];
            auto& s = sums[static_cast<std::size_t>(cls)];
            for (std::int64_t k = 0; k < dim; ++k) s[static_cast<std::size_t>(k)] += z.raw()[r * dim + k];
            ++counts[static_cast<std::size_t>(cls)];
        }
    }

    BaseStats stats;
    stats.means.resize(static_cast<std::size_t>(nclasses), std::vector<float>(static_cast<std::size_t>(dim)));
    for (int c = 0; c < nclasses; ++c)
        for (std::int64_t k = 0; k < dim; ++k)
            stats.means[static_cast<std::size_t>(c)][static_cast<std::size_t>(k)] = static_cast<float>(
                sums[static_cast<std::size_t>(c)][static_cast<std::size_t>(k)] / static_cast<double>(counts[static_cast<std::size_t>(c)]));
    return stats;
}

struct CentroidSet {
    std::vector<std::vector<float>> centroids; // [episode class][feature_dim]
    int m_used = 0;

    [[nodiscard]] int num_classes() const { return static_cast<int>(centroids.size()); }
};

// One centroid per episode class: every support feature is averaged with its
// m nearest base means (Euclidean, ties by ascending base class id), then the
// per-sample centroids of a class are averaged. m=0 is the plain support
// mean. All arithmetic is 64-bit; results are stored as 32-bit.
[[nodiscard]] inline CentroidSet cnc_centroids(const Tensor& support_z, std::span<const int> support_y,
                                               const BaseStats& stats, int m) {
    if (support_z.rank() != 2) fail_data("cnc_centroids: support features must be rank 2");
    if (static_cast<std::size_t>(support_z.dim(0)) != support_y.size())
        fail_data("cnc_centroids: " + std::to_string(support_z.dim(0)) + " features vs " +
                  std::to_string(support_y.size()) + " labels");
    if (m < 0) fail_usage("cnc_centroids: m must be nonnegative");
    if (m > 0 && m > stats.num_classes())
        fail_usage("cnc_centroids: m=" + std::to_string(m) + " exceeds the " + std::to_string(stats.num_classes()) +
                   " available base classes");
    if (m > 0 && stats.feature_dim() != support_z.dim(1))
        fail_data("cnc_centroids: base means have dim " + std::to_string(stats.feature_dim()) +
                  ", support features have dim " + std::to_string(support_z.dim(1)));

    int n_way = 0;
    for (int y : support_y) {
        if (y < 0) fail_data("cnc_centroids: negative episode label");
        n_way = std::max(n_way, y + 1);
    }
    if (n_way == 0) fail_data("cnc_centroids: no support samples");

    const std::int64_t dim = support_z.dim(1);
    std::vector<std::vector<double>> acc(static_cast<std::size_t>(n_way), std::vector<double>(dim, 0.0));
    std::vector<std::int64_t> counts(static_cast<std::size_t>(n_way), 0);

    std::vector<std::pair<double, int>> order(static_cast<std::size_t>(stats.num_classes()));
    for (std::int64_t j = 0; j < support_z.dim(0); ++j) {
        const float* z = support_z.raw() + j * dim;
        std::vector<double> centroid(static_cast<std::size_t>(dim));
        for (std::int64_t k = 0; k < dim; ++k) centroid[static_cast<std::size_t>(k)] = z[k];
        if (m > 0) {
            for (int c = 0; c < stats.num_classes(); ++c) {
                const auto& mu = stats.means[static_cast<std::size_t>(c)];
                double d2 = 0.0;
                for (std::int64_t k = 0; k < dim; ++k) {
                    const double diff = static_cast<double>(z[k]) - static_cast<double>(mu[static_cast<std::size_t>(k)]);
                    d2 += diff * diff;
                }
                order[static_cast<std::size_t>(c)] = {d2, c};
            }
            std::sort(order.begin(), order.end()); // (distance, class id) ascending
            for (int r = 0; r < m; ++r) {
                const auto& mu = stats.means[static_cast<std::size_t>(order[static_cast<std::size_t>(r)].second)];
                for (std::int64_t k = 0; k < dim; ++k)
                    centroid[static_cast<std::size_t>(k)] += static_cast<double>(mu[static_cast<std::size_t>(k)]);
            }
        }
        const double inv = 1.0 / static_cast<double>(m + 1);
        auto& a = acc[static_cast<std::size_t>(support_y[static_cast<std::size_t>(j)])];
        for (std::int64_t k = 0; k < dim; ++k) a[static_cast<std::size_t>(k)] += centroid[static_cast<std::size_t>(k)] * inv;
        ++counts[static_cast<std::size_t>(support_y[static_cast<std::size_t>(j)])];
    }

    CentroidSet cs;
    cs.m_used = m;
    cs.centroids.resize(static_cast<std::size_t>(n_way), std::vector<float>(static_cast<std::size_t>(dim)));
    for (int c = 0; c < n_way; ++c) {
        if (counts[static_cast<std::size_t>(c)] == 0)
            fail_data("cnc_centroids: episode class " + std::to_string(c) + " has no support samples");
        for (std::int64_t k = 0; k < dim; ++k)
            cs.centroids[static_cast<std::size_t>(c)][static_cast<std::size_t>(k)] = static_cast<float>(
                acc[static_cast<std::size_t>(c)][static_cast<std::size_t>(k)] / static_cast<double>(counts[static_cast<std::size_t>(c)]));
    }
    return cs;
}

struct Prediction {
    std::vector<int> labels;
    Tensor scores; // [queries, classes] cosine similarities
};

// Cosine nearest centroid: argmax_j of normalized dot products, ties broken
// by the smallest class index. Internals are 64-bit.
[[nodiscard]] inline Prediction nc_predict(const Tensor& query_z, const CentroidSet& centroids) {
    if (query_z.rank() != 2) fail_data("nc_predict: query features must be rank 2");
    if (centroids.num_classes() == 0) fail_data("nc_predict: no centroids");
    const std::int64_t dim = query_z.dim(1);
    const int nclasses = centroids.num_classes();
    if (static_cast<std::int64_t>(centroids.centroids.front().size()) != dim)
        fail_data("nc_predict: centroid dim " + std::to_string(centroids.centroids.front().size()) +
                  " vs query dim " + std::to_string(dim));

    std::vector<std::vector<double>> cn(static_cast<std::size_t>(nclasses), std::vector<double>(dim));
    for (int c = 0; c < nclasses; ++c) {
        double norm2 = 0.0;
        for (std::int64_t k = 0; k < dim; ++k) {
            const double v = centroids.centroids[static_cast<std::size_t>(c)][static_cast<std::size_t>(k)];
            cn[static_cast<std::size_t>(c)][static_cast<std::size_t>(k)] = v;
            norm2 += v * v;
        }
        if (norm2 == 0.0) fail_numeric("nc_predict: centroid for class " + std::to_string(c) + " is the zero vector");
        const double inv = 1.0 / std::sqrt(norm2);
        for (auto& v : cn[static_cast<std::size_t>(c)]) v *= inv;
    }

    Prediction pred;
    pred.scores = Tensor({query_z.dim(0), nclasses});
    pred.labels.resize(static_cast<std::size_t>(query_z.dim(0)));
    for (std::int64_t q = 0; q < query_z.dim(0); ++q) {
        const float* z = query_z.raw() + q * dim;
        double norm2 = 0.0;
        for (std::int64_t k = 0; k < dim; ++k) norm2 += static_cast<double>(z[k]) * static_cast<double>(z[k]);
        if (norm2 == 0.0) fail_numeric("nc_predict: query row " + std::to_string(q) + " is the zero vector");
        const double inv = 1.0 / std::sqrt(norm2);
        int best = 0;
        double best_score = -2.0;
        for (int c = 0; c < nclasses; ++c) {
            double dot = 0.0;
            for (std::int64_t k = 0; k < dim; ++k)
                dot += static_cast<double>(z[k]) * inv * cn[static_cast<std::size_t>(c)][static_cast<std::size_t>(k)];
            pred.scores.raw()[q * nclasses + c] = static_cast<float>(dot);
            if (dot > best_score) {
                best_score = dot;
                best = c;
            }
        }
        pred.labels[static_cast<std::size_t>(q)] = best;
    }
    return pred;
}

struct NovelTrainConfig {
    int epochs = 100;
    float lr = 0.01f;
    float momentum = 0.9f;
    float dampening = 0.9f;
    float weight_decay = 1e-3f;

    void validate() const {
        if (epochs < 0) fail_usage("novel train: epochs must be nonnegative");
        if (!(lr > 0.0f)) fail_usage("novel train: lr must be positive");
        if (!(momentum >= 0.0f) || momentum >= 1.0f) fail_usage("novel train: momentum must be in [0, 1)");
        if (!(dampening >= 0.0f) || dampening >= 1.0f) fail_usage("novel train: dampening must be in [0, 1)");
        if (!(weight_decay >= 0.0f)) fail_usage("novel train: weight decay must be nonnegative");
    }
};

enum class NovelAdversary { none, pgd7, pgd20 };

struct NovelLinearHead {
    Tensor weight; // [feature_dim, n_way]
    Tensor bias;   // [n_way]
};

// Full-batch training of an episode head on frozen-extractor features. The
// adversarial variants regenerate support perturbations each epoch against
// the current head; the extractor itself is never updated.
[[nodiscard]] inline NovelLinearHead train_novel_linear(const Network& net, const Tensor& support_x,
                                                        std::span<const int> support_y, int n_way,
                                                        const NovelTrainConfig& cfg, NovelAdversary adv,
                                                        AttackConfig attack, bool use_ema) {
    cfg.validate();
    if (n_way < 2) fail_usage("novel train: need at least 2 classes");
    if (support_x.rank() != 2 || static_cast<std::size_t>(support_x.dim(0)) != support_y.size())
        fail_data("novel train: support shape " + shape_str(support_x.shape()) + " vs " +
                  std::to_string(support_y.size()) + " labels");
    std::vector<std::int64_t> per_class(static_cast<std::size_t>(n_way), 0);
    for (int y : support_y) {
        if (y < 0 || y >= n_way) fail_data("novel train: label " + std::to_string(y) + " outside [0, " +
                                           std::to_string(n_way) + ")");
        ++per_class[static_cast<std::size_t>(y)];
    }
    for (int c = 0; c < n_way; ++c)
        if (per_class[static_cast<std::size_t>(c)] == 0)
            fail_data("novel train: episode class " + std::to_string(c) + " has no support samples");
    if (adv != NovelAdversary::none) {
        attack.iterations = adv == NovelAdversary::pgd7 ? 7 : 20;
        attack.validate();
    }

    NovelLinearHead head;
    head.weight = Tensor({net.spec().feature_dim, n_way}); // zeros
    head.bias = Tensor({n_way});                           // zeros
    head.weight.set_requires_grad(true);
    head.bias.set_requires_grad(true);
    Sgd opt({&head.weight, &head.bias}, SgdConfig{cfg.momentum, cfg.dampening});

    const BatchLossFn head_loss = [&](Graph* g, const Tensor& xb, std::span<const int> yb) {
        const Tensor f = net.features(g, xb, use_ema);
        return softmax_cross_entropy(g, affine(g, f, head.weight.detached(), head.bias.detached()), yb);
    };

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Tensor x_train = support_x;
        if (adv != NovelAdversary::none) {
            AttackConfig ac = attack;
            ac.seed = mix_seed(attack.seed, 0x6e6f76ull, static_cast<std::uint64_t>(epoch)); // stream tag: "nov"
            x_train = pgd(head_loss, support_x, support_y, ac).x_adv;
        }
        Graph g;
        const Tensor f = net.features(&g, x_train, use_ema);
        const Tensor logits = affine(&g, f, head.weight, head.bias);
        const Tensor loss = mean_all(&g, softmax_cross_entropy(&g, logits, support_y));
        if (!std::isfinite(loss.item()))
            fail_numeric("novel train: non-finite loss at epoch " + std::to_string(epoch));
        head.weight.zero_grad();
        head.bias.zero_grad();
        g.backward(loss);
        opt.step(cfg.lr, cfg.weight_decay);
    }
    head.weight.set_requires_grad(false);
    head.bias.set_requires_grad(false);
    return head;
}

enum class ClassifierKind { cnc, nc, linear, linear_adv7, linear_adv20 };

[[nodiscard]] inline std::string classifier_name(ClassifierKind k) {
    switch (k) {
        case ClassifierKind::cnc: return "cnc";
        case ClassifierKind::nc: return "nc";
        case ClassifierKind::linear: return "linear";
        case ClassifierKind::linear_adv7: return "linear-adv7";
        case ClassifierKind::linear_adv20: return "linear-adv20";
    }
    return "?";
}

struct EvalContext {
    ClassifierKind kind = ClassifierKind::cnc;
    int m = 2;              // base neighbors per support sample (cnc only)
    TukeyConfig tukey;
    bool use_ema = true;
    float temperature = 1.0f; // divides cosine scores inside the attacked loss
    NovelTrainConfig novel;   // linear variants
    const BaseStats* stats = nullptr; // required when kind=cnc and m>0

    void validate() const {
        tukey.validate();
        novel.validate();
        if (m < 0) fail_usage("eval: m must be nonnegative");
        if (!(temperature > 0.0f)) fail_usage("eval: temperature must be positive");
        if (kind == ClassifierKind::cnc && m > 0 && stats == nullptr)
            fail_usage("eval: calibrated centroids need base statistics (m=" + std::to_string(m) + ")");
    }
};

struct EpisodeBatch {
    Tensor support_x;           // [n_way*k_shot, input_dim]
    std::vector<int> support_y; // episode-local labels
    Tensor query_x;             // [n_way*q, input_dim]
    std::vector<int> query_y;
    int n_way = 0;
};

struct EpisodeOutcome {
    std::int64_t standard_correct = 0;
    std::int64_t robust_correct = 0;
    std::int64_t total = 0;
};

// Scores one episode: classifier built from the support set only, then clean
// and attacked query accuracy. The attack differentiates the classifier's own
// logits end to end through the frozen extractor to the pixels.
[[nodiscard]] inline EpisodeOutcome robust_eval_episode(const Network& net, const EpisodeBatch& ep,
                                                        const EvalContext& ctx, const AttackConfig& attack) {
    ctx.validate();
    attack.validate();
    if (ep.n_way < 2) fail_data("eval: episode needs at least 2 classes");

    EpisodeOutcome out;
    out.total = static_cast<std::int64_t>(ep.query_y.size());

    BatchLossFn attacked_loss;
    std::function<std::vector<int>(const Tensor&)> predict;

    CentroidSet centroids;
    Tensor centroid_rows; // unit rows, constant inside the attacked graph
    NovelLinearHead head;

    const bool cosine_path = ctx.kind == ClassifierKind::cnc || ctx.kind == ClassifierKind::nc;
    if (cosine_path) {
        const int m_eff = ctx.kind == ClassifierKind::cnc ? ctx.m : 0;
        static const BaseStats kNoStats{};
        const BaseStats& stats = (m_eff > 0) ? *ctx.stats : kNoStats;
        const Tensor support_z = tukey(nullptr, net.features(nullptr, ep.support_x, ctx.use_ema), ctx.tukey);
        centroids = cnc_centroids(support_z, ep.support_y, stats, m_eff);
        if (centroids.num_classes() != ep.n_way)
            fail_data("eval: support labels cover " + std::to_string(centroids.num_classes()) + " of " +
                      std::to_string(ep.n_way) + " classes");

        const std::int64_t dim = net.spec().feature_dim;
        centroid_rows = Tensor({ep.n_way, dim});
        for (int c = 0; c < ep.n_way; ++c) {
            double norm2 = 0.0;
            for (std::int64_t k = 0; k < dim; ++k) {
                const double v = centroids.centroids[static_cast<std::size_t>(c)][static_cast<std::size_t>(k)];
                norm2 += v * v;
            }
            if (norm2 == 0.0) fail_numeric("eval: centroid for episode class " + std::to_string(c) + " is zero");
            const double inv = 1.0 / std::sqrt(norm2);
            for (std::int64_t k = 0; k < dim; ++k)
                centroid_rows.raw()[c * dim + k] = static_cast<float>(
                    centroids.centroids[static_cast<std::size_t>(c)][static_cast<std::size_t>(k)] * inv);
        }

        const float inv_temp = 1.0f / ctx.temperature;
        attacked_loss = [&net, &ctx, centroid_rows, inv_temp](Graph* g, const Tensor& xb, std::span<const int> yb) {
            const Tensor zn = l2_normalize(g, tukey(g, net.features(g, xb, ctx.use_ema), ctx.tukey));
            const Tensor scores = mul_scalar(g, matmul_nt(g, zn, centroid_rows), inv_temp);
            return softmax_cross_entropy(g, scores, yb);
        };
        predict = [&net, &ctx, &centroids](const Tensor& xb) {
            const Tensor z = tukey(nullptr, net.features(nullptr, xb, ctx.use_ema), ctx.tukey);
            return nc_predict(z, centroids).labels;
        };
    } else {
        const NovelAdversary adv = ctx.kind == ClassifierKind::linear_adv7    ? NovelAdversary::pgd7
                                   : ctx.kind == ClassifierKind::linear_adv20 ? NovelAdversary::pgd20
                                                                              : NovelAdversary::none;
        head = train_novel_linear(net, ep.support_x, ep.support_y, ep.n_way, ctx.novel, adv, attack, ctx.use_ema);
        attacked_loss = [&net, &ctx, &head](Graph* g, const Tensor& xb, std::span<const int> yb) {
            const Tensor logits = affine(g, net.features(g, xb, ctx.use_ema), head.weight, head.bias);
            return softmax_cross_entropy(g, logits, yb);
        };
        predict = [&net, &ctx, &head](const Tensor& xb) {
            const Tensor logits =
                affine(static_cast<Graph*>(nullptr), net.features(nullptr, xb, ctx.use_ema), head.weight, head.bias);
            std::vector<int> labels(static_cast<std::size_t>(logits.dim(0)));
            const std::int64_t n = logits.dim(1);
            for (std::int64_t r = 0; r < logits.dim(0); ++r) {
                int best = 0;
                for (std::int64_t c = 1; c < n; ++c)
                    if (logits.raw()[r * n + c] > logits.raw()[r * n + best]) best = static_cast<int>(c);
                labels[static_cast<std::size_t>(r)] = best;
            }
            return labels;
        };
    }

    const std::vector<int> clean_pred = predict(ep.query_x);
    for (std::size_t i = 0; i < clean_pred.size(); ++i)
        if (clean_pred[i] == ep.query_y[i]) ++out.standard_correct;

    const AttackResult res = pgd(attacked_loss, ep.query_x, ep.query_y, attack);
    const std::vector<int> adv_pred = predict(res.x_adv);
    for (std::size_t i = 0; i < adv_pred.size(); ++i)
        if (adv_pred[i] == ep.query_y[i]) ++out.robust_correct;
    return out;
}

} // namespace rfsc
