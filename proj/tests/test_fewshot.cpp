// Few-shot layer: power-transform arithmetic, base statistics vs a two-pass
// oracle, calibrated-centroid construction vs exhaustive neighbor search,
// cosine prediction vs an independent 64-bit oracle, scale-invariance
// algebra, the frozen-extractor contract of the episode head, and the
// zero-budget identities of episode evaluation.

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <numeric>

#include "rfsc/checkpoint.hpp"
#include "rfsc/data.hpp"
#include "rfsc/fewshot.hpp"
#include "rfsc/network.hpp"
#include "rfsc/rng.hpp"

using rfsc::AttackConfig;
using rfsc::BaseStats;
using rfsc::CentroidSet;
using rfsc::ClassifierKind;
using rfsc::EpisodeBatch;
using rfsc::EvalContext;
using rfsc::LabeledSet;
using rfsc::MlpSpec;
using rfsc::Network;
using rfsc::NovelAdversary;
using rfsc::NovelTrainConfig;
using rfsc::Rng;
using rfsc::SyntheticSpec;
using rfsc::Tensor;
using rfsc::TukeyConfig;

namespace {

Tensor row_tensor(const std::vector<std::vector<float>>& rows) {
    const auto r = static_cast<std::int64_t>(rows.size());
    const auto c = static_cast<std::int64_t>(rows.front().size());
    Tensor t({r, c});
    for (std::int64_t i = 0; i < r; ++i)
        for (std::int64_t j = 0; j < c; ++j) t.raw()[i * c + j] = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    return t;
}

MlpSpec toy_spec() {
    MlpSpec s;
    s.input_dim = 9;
    s.hidden_dims = {12};
    s.feature_dim = 6;
    s.num_base_classes = 2;
    return s;
}

LabeledSet toy_set(int classes, int per_class, std::uint64_t seed) {
    SyntheticSpec spec;
    spec.num_classes = classes;
    spec.samples_per_class = per_class;
    spec.side = 3;
    spec.noise_sigma = 0.05f;
    spec.seed = seed;
    return rfsc::gen_synthetic(spec);
}

// Episode batch: first k samples of each class as support, next q as queries.
EpisodeBatch make_episode(const LabeledSet& set, int n_way, int k, int q) {
    EpisodeBatch ep;
    ep.n_way = n_way;
    std::vector<int> sidx, qidx;
    for (int c = 0; c < n_way; ++c) {
        const auto& idx = set.class_index.at(c);
        for (int i = 0; i < k; ++i) {
            sidx.push_back(idx[static_cast<std::size_t>(i)]);
            ep.support_y.push_back(c);
        }
        for (int i = 0; i < q; ++i) {
            qidx.push_back(idx[static_cast<std::size_t>(k + i)]);
            ep.query_y.push_back(c);
        }
    }
    ep.support_x = rfsc::gather_images(set, sidx);
    ep.query_x = rfsc::gather_images(set, qidx);
    return ep;
}

} // namespace

TEST(Tukey, SquareRootValuesAndClamp) {
    Tensor z = row_tensor({{4.0f, 9.0f, 0.0f, 0.25f, -1.0f}});
    const Tensor t = rfsc::tukey(nullptr, z, TukeyConfig{0.5f});
    const float expect[] = {2.0f, 3.0f, 0.0f, 0.5f, 0.0f};
    for (int i = 0; i < 5; ++i) EXPECT_NEAR(t.raw()[i], expect[i], 1e-6f);
}

TEST(Tukey, LambdaOneIsIdentityOnNonnegatives) {
    Rng rng(4);
    Tensor z({3, 7});
    for (auto& v : z.data()) v = static_cast<float>(rng.uniform());
    const Tensor t = rfsc::tukey(nullptr, z, TukeyConfig{1.0f});
    for (std::int64_t i = 0; i < z.size(); ++i) EXPECT_EQ(t.raw()[i], z.raw()[i]);
    EXPECT_THROW((void)rfsc::tukey(nullptr, z, TukeyConfig{0.0f}), rfsc::Error);
    EXPECT_THROW((void)rfsc::tukey(nullptr, z, TukeyConfig{1.5f}), rfsc::Error);
}

TEST(BaseStats, MatchesTwoPassOracleAndHandlesDuplicates) {
    auto data = toy_set(2, 9, 31);
    Network net(toy_spec(), 17);
    const auto stats = rfsc::base_stats(net, data, TukeyConfig{}, /*use_ema=*/false);
    ASSERT_EQ(stats.num_classes(), 2);
    ASSERT_EQ(stats.feature_dim(), 6);

    // Independent two-pass oracle: one sample at a time, 64-bit mean.
    for (int c = 0; c < 2; ++c) {
        const auto& idx = data.class_index.at(c);
        std::vector<double> sum(6, 0.0);
        for (int s : idx) {
            const Tensor z =
                rfsc::tukey(nullptr, net.features(nullptr, rfsc::gather_images(data, std::vector<int>{s}), false),
                            TukeyConfig{});
            for (int k = 0; k < 6; ++k) sum[static_cast<std::size_t>(k)] += z.raw()[k];
        }
        for (int k = 0; k < 6; ++k) {
            const double mean = sum[static_cast<std::size_t>(k)] / static_cast<double>(idx.size());
            EXPECT_NEAR(stats.means[static_cast<std::size_t>(c)][static_cast<std::size_t>(k)], mean, 1e-6);
            EXPECT_GE(stats.means[static_cast<std::size_t>(c)][static_cast<std::size_t>(k)], 0.0f);
        }
    }

    // A class whose samples are all duplicates of one row has that row's
    // transformed feature as its mean, exactly as with a single copy.
    LabeledSet dup = data;
    const auto& c0 = dup.class_index.at(0);
    for (int s : c0)
        std::memcpy(dup.images.data() + static_cast<std::size_t>(s) * 9,
                    dup.images.data() + static_cast<std::size_t>(c0[0]) * 9, 9 * sizeof(float));
    const auto dstats = rfsc::base_stats(net, dup, TukeyConfig{}, false);
    const Tensor zref = rfsc::tukey(
        nullptr, net.features(nullptr, rfsc::gather_images(dup, std::vector<int>{c0[0]}), false), TukeyConfig{});
    for (int k = 0; k < 6; ++k)
        EXPECT_NEAR(dstats.means[0][static_cast<std::size_t>(k)], zref.raw()[k], 1e-6);
}

TEST(BaseStats, MissingClassIsStructuredError) {
    auto data = toy_set(2, 4, 5);
    // Relabel everything to class 0; class 1 ends up empty.
    for (auto& l : data.labels) l = 0;
    data.rebuild_index();
    Network net(toy_spec(), 1);
    try {
        (void)rfsc::base_stats(net, data, TukeyConfig{}, false);
        FAIL() << "expected missing-class error";
    } catch (const rfsc::Error& e) {
        EXPECT_NE(std::string(e.what()).find("class 1"), std::string::npos);
    }
}

TEST(Centroids, CalibrationArithmeticExample) {
    BaseStats stats;
    stats.means = {{1.0f, 0.0f}, {0.0f, 1.0f}};
    const Tensor z = row_tensor({{4.0f, 0.0f}});
    const std::vector<int> y{0};
    const auto cs = rfsc::cnc_centroids(z, y, stats, 1);
    ASSERT_EQ(cs.num_classes(), 1);
    EXPECT_NEAR(cs.centroids[0][0], 2.5f, 1e-6f);
    EXPECT_NEAR(cs.centroids[0][1], 0.0f, 1e-6f);
}

TEST(Centroids, ZeroNeighborsIsPlainSupportMean) {
    const Tensor z = row_tensor({{1.0f, 0.0f}, {0.0f, 1.0f}});
    const std::vector<int> y{0, 0};
    const auto cs = rfsc::cnc_centroids(z, y, BaseStats{}, 0);
    EXPECT_NEAR(cs.centroids[0][0], 0.5f, 1e-6f);
    EXPECT_NEAR(cs.centroids[0][1], 0.5f, 1e-6f);
}

TEST(Centroids, NeighborChoiceMatchesExhaustiveSearch) {
    Rng rng(101);
    for (int trial = 0; trial < 60; ++trial) {
        const int nb = 2 + static_cast<int>(rng.below(9));   // base classes <= 10
        const int dim = 2 + static_cast<int>(rng.below(7));  // dims <= 8
        const int m = static_cast<int>(rng.below(static_cast<std::uint64_t>(nb) + 1));
        const int n_way = 1 + static_cast<int>(rng.below(3));
        const int k = 1 + static_cast<int>(rng.below(3));

        BaseStats stats;
        stats.means.resize(static_cast<std::size_t>(nb), std::vector<float>(static_cast<std::size_t>(dim)));
        for (auto& mu : stats.means)
            for (auto& v : mu) v = static_cast<float>(rng.uniform());
        Tensor z({static_cast<std::int64_t>(n_way * k), dim});
        std::vector<int> y;
        for (auto& v : z.data()) v = static_cast<float>(rng.uniform());
        for (int c = 0; c < n_way; ++c)
            for (int i = 0; i < k; ++i) y.push_back(c);

        const auto cs = rfsc::cnc_centroids(z, y, stats, m);

        // Oracle: enumerate every size-m subset of base classes, keep the one
        // with the smallest total distance (lexicographic tie-break).
        std::vector<std::vector<double>> acc(static_cast<std::size_t>(n_way),
                                             std::vector<double>(static_cast<std::size_t>(dim), 0.0));
        for (int j = 0; j < n_way * k; ++j) {
            const float* zr = z.raw() + static_cast<std::int64_t>(j) * dim;
            std::vector<double> dist(static_cast<std::size_t>(nb));
            for (int c = 0; c < nb; ++c) {
                double d2 = 0;
                for (int t = 0; t < dim; ++t) {
                    const double d = static_cast<double>(zr[t]) - stats.means[static_cast<std::size_t>(c)][static_cast<std::size_t>(t)];
                    d2 += d * d;
                }
                dist[static_cast<std::size_t>(c)] = d2;
            }
            std::vector<int> best;
            double best_total = 0;
            for (std::uint32_t mask = 0; mask < (1u << nb); ++mask) {
                if (__builtin_popcount(mask) != m) continue;
                double total = 0;
                std::vector<int> members;
                for (int c = 0; c < nb; ++c)
                    if (mask & (1u << c)) {
                        total += dist[static_cast<std::size_t>(c)];
                        members.push_back(c);
                    }
                if (best.empty() || total < best_total || (total == best_total && members < best)) {
                    best = members;
                    best_total = total;
                }
            }
            std::vector<double> centroid(static_cast<std::size_t>(dim));
            for (int t = 0; t < dim; ++t) centroid[static_cast<std::size_t>(t)] = zr[t];
            for (int c : best)
                for (int t = 0; t < dim; ++t)
                    centroid[static_cast<std::size_t>(t)] += stats.means[static_cast<std::size_t>(c)][static_cast<std::size_t>(t)];
            for (int t = 0; t < dim; ++t)
                acc[static_cast<std::size_t>(y[static_cast<std::size_t>(j)])][static_cast<std::size_t>(t)] +=
                    centroid[static_cast<std::size_t>(t)] / (m + 1);
        }
        for (int c = 0; c < n_way; ++c)
            for (int t = 0; t < dim; ++t)
                EXPECT_NEAR(cs.centroids[static_cast<std::size_t>(c)][static_cast<std::size_t>(t)],
                            acc[static_cast<std::size_t>(c)][static_cast<std::size_t>(t)] / k, 1e-5)
                    << "trial " << trial;
    }
}

TEST(Centroids, PositiveScalingIsLinear) {
    Rng rng(55);
    BaseStats stats;
    stats.means.resize(5, std::vector<float>(4));
    for (auto& mu : stats.means)
        for (auto& v : mu) v = static_cast<float>(rng.uniform());
    Tensor z({6, 4});
    for (auto& v : z.data()) v = static_cast<float>(rng.uniform());
    const std::vector<int> y{0, 0, 1, 1, 2, 2};

    const auto base = rfsc::cnc_centroids(z, y, stats, 2);
    const float c = 4.0f; // power of two: exact in float
    BaseStats scaled_stats = stats;
    for (auto& mu : scaled_stats.means)
        for (auto& v : mu) v *= c;
    Tensor sz = z.clone();
    for (auto& v : sz.data()) v *= c;
    const auto scaled = rfsc::cnc_centroids(sz, y, scaled_stats, 2);
    for (int i = 0; i < base.num_classes(); ++i)
        for (int t = 0; t < 4; ++t)
            EXPECT_EQ(scaled.centroids[static_cast<std::size_t>(i)][static_cast<std::size_t>(t)],
                      c * base.centroids[static_cast<std::size_t>(i)][static_cast<std::size_t>(t)]);
}

TEST(Centroids, BadArgumentsAreStructuredErrors) {
    BaseStats stats;
    stats.means = {{1.0f, 0.0f}};
    const Tensor z = row_tensor({{1.0f, 2.0f}});
    const std::vector<int> y{0};
    EXPECT_THROW((void)rfsc::cnc_centroids(z, y, stats, -1), rfsc::Error);
    EXPECT_THROW((void)rfsc::cnc_centroids(z, y, stats, 2), rfsc::Error); // m > base classes
    const std::vector<int> gap{1}; // class 0 empty
    EXPECT_THROW((void)rfsc::cnc_centroids(z, gap, stats, 0), rfsc::Error);
}

TEST(NcPredict, AxisAlignedAndScaleInvariantAndTieBreak) {
    CentroidSet cs;
    cs.centroids = {{1.0f, 0.0f}, {0.0f, 1.0f}};
    const auto p = rfsc::nc_predict(row_tensor({{0.9f, 0.1f}, {0.1f, 0.9f}, {1.0f, 1.0f}, {8.0f, 0.0f}}), cs);
    EXPECT_EQ(p.labels, (std::vector<int>{0, 1, 0, 0})); // [1,1] ties -> smaller index
    EXPECT_NEAR(p.scores.raw()[0 * 2 + 0], 0.9f / std::sqrt(0.82f), 1e-5f);
    // Query equal to a scaled centroid scores exactly 1 on that class.
    EXPECT_NEAR(p.scores.raw()[3 * 2 + 0], 1.0f, 1e-6f);
}

TEST(NcPredict, MatchesIndependentCosineOracle) {
    Rng rng(202);
    for (int trial = 0; trial < 100; ++trial) {
        const int dim = 2 + static_cast<int>(rng.below(7));
        const int nc = 2 + static_cast<int>(rng.below(5));
        const int nq = 1 + static_cast<int>(rng.below(8));
        CentroidSet cs;
        cs.centroids.resize(static_cast<std::size_t>(nc), std::vector<float>(static_cast<std::size_t>(dim)));
        for (auto& mu : cs.centroids)
            for (auto& v : mu) v = static_cast<float>(rng.uniform(-1, 1)) + 0.001f;
        Tensor q({nq, dim});
        for (auto& v : q.data()) v = static_cast<float>(rng.uniform(-1, 1)) + 0.001f;

        const auto p = rfsc::nc_predict(q, cs);
        for (int i = 0; i < nq; ++i) {
            int best = 0;
            double best_cos = -2;
            for (int c = 0; c < nc; ++c) {
                double dq = 0, dc = 0, dot = 0;
                for (int t = 0; t < dim; ++t) {
                    const double qa = q.raw()[static_cast<std::int64_t>(i) * dim + t];
                    const double ca = cs.centroids[static_cast<std::size_t>(c)][static_cast<std::size_t>(t)];
                    dq += qa * qa;
                    dc += ca * ca;
                    dot += qa * ca;
                }
                const double cosine = dot / (std::sqrt(dq) * std::sqrt(dc));
                EXPECT_NEAR(p.scores.raw()[static_cast<std::int64_t>(i) * nc + c], cosine, 1e-5);
                if (cosine > best_cos) {
                    best_cos = cosine;
                    best = c;
                }
            }
            EXPECT_EQ(p.labels[static_cast<std::size_t>(i)], best) << "trial " << trial;
        }
    }
}

TEST(NcPredict, ZeroVectorsAreStructuredErrors) {
    CentroidSet cs;
    cs.centroids = {{1.0f, 0.0f}, {0.0f, 0.0f}};
    EXPECT_THROW((void)rfsc::nc_predict(row_tensor({{1.0f, 1.0f}}), cs), rfsc::Error);
    cs.centroids = {{1.0f, 0.0f}};
    try {
        (void)rfsc::nc_predict(row_tensor({{0.0f, 0.0f}}), cs);
        FAIL() << "expected zero-query error";
    } catch (const rfsc::Error& e) {
        EXPECT_EQ(e.kind(), rfsc::ErrorKind::numeric);
        EXPECT_NE(std::string(e.what()).find("row 0"), std::string::npos);
    }
}

TEST(NovelHead, FitsSeparableSupportWithFrozenExtractor) {
    auto data = toy_set(2, 8, 77);
    Network net(toy_spec(), 23);
    const auto before = rfsc::serialize_network(net);
    const auto ep = make_episode(data, 2, 5, 3);

    NovelTrainConfig cfg;
    cfg.epochs = 100;
    const auto head = rfsc::train_novel_linear(net, ep.support_x, ep.support_y, 2, cfg, NovelAdversary::none,
                                               AttackConfig{}, /*use_ema=*/false);
    EXPECT_EQ(rfsc::serialize_network(net), before); // extractor untouched

    const Tensor logits = rfsc::affine(static_cast<rfsc::Graph*>(nullptr),
                                       net.features(nullptr, ep.support_x, false), head.weight, head.bias);
    int hits = 0;
    for (std::int64_t r = 0; r < logits.dim(0); ++r) {
        const int pred = logits.raw()[r * 2 + 1] > logits.raw()[r * 2 + 0] ? 1 : 0;
        if (pred == ep.support_y[static_cast<std::size_t>(r)]) ++hits;
    }
    EXPECT_EQ(hits, 10); // support accuracy 1.0
}

TEST(NovelHead, SameSeedGivesBitwiseIdenticalHeads) {
    auto data = toy_set(2, 6, 13);
    Network net(toy_spec(), 29);
    const auto ep = make_episode(data, 2, 4, 2);
    NovelTrainConfig cfg;
    cfg.epochs = 20;
    AttackConfig atk;
    atk.epsilon = 0.1f;
    atk.alpha = 0.025f;
    atk.seed = 5;
    const auto a = rfsc::train_novel_linear(net, ep.support_x, ep.support_y, 2, cfg, NovelAdversary::pgd7, atk, false);
    const auto b = rfsc::train_novel_linear(net, ep.support_x, ep.support_y, 2, cfg, NovelAdversary::pgd7, atk, false);
    EXPECT_EQ(0, std::memcmp(a.weight.raw(), b.weight.raw(), sizeof(float) * static_cast<std::size_t>(a.weight.size())));
    EXPECT_EQ(0, std::memcmp(a.bias.raw(), b.bias.raw(), sizeof(float) * static_cast<std::size_t>(a.bias.size())));

    atk.seed = 6;
    const auto c = rfsc::train_novel_linear(net, ep.support_x, ep.support_y, 2, cfg, NovelAdversary::pgd7, atk, false);
    EXPECT_NE(0, std::memcmp(a.weight.raw(), c.weight.raw(), sizeof(float) * static_cast<std::size_t>(a.weight.size())));
}

TEST(NovelHead, EmptyClassIsStructuredError) {
    auto data = toy_set(2, 6, 13);
    Network net(toy_spec(), 29);
    const auto ep = make_episode(data, 2, 4, 2);
    std::vector<int> y = ep.support_y;
    for (auto& v : y) v = 0; // class 1 has no support
    EXPECT_THROW(
        (void)rfsc::train_novel_linear(net, ep.support_x, y, 2, NovelTrainConfig{}, NovelAdversary::none,
                                       AttackConfig{}, false),
        rfsc::Error);
}

TEST(EpisodeEval, ZeroBudgetAttacksPreserveStandardAccuracy) {
    auto data = toy_set(3, 10, 41);
    Network net(toy_spec(), 31);
    auto base = toy_set(2, 8, 42);
    const auto stats = rfsc::base_stats(net, base, TukeyConfig{}, false);
    const auto ep = make_episode(data, 3, 2, 5);

    for (ClassifierKind kind : {ClassifierKind::cnc, ClassifierKind::nc, ClassifierKind::linear}) {
        EvalContext ctx;
        ctx.kind = kind;
        ctx.m = 2;
        ctx.use_ema = false;
        ctx.stats = &stats;
        ctx.novel.epochs = 30;

        AttackConfig zero_iters;
        zero_iters.iterations = 0;
        const auto a = rfsc::robust_eval_episode(net, ep, ctx, zero_iters);
        EXPECT_EQ(a.standard_correct, a.robust_correct) << classifier_name(kind);
        EXPECT_EQ(a.total, 15);

        AttackConfig zero_eps;
        zero_eps.epsilon = 0.0f;
        zero_eps.iterations = 10;
        const auto b = rfsc::robust_eval_episode(net, ep, ctx, zero_eps);
        EXPECT_EQ(b.standard_correct, b.robust_correct) << classifier_name(kind);
        EXPECT_EQ(b.standard_correct, a.standard_correct) << classifier_name(kind);
    }
}

TEST(EpisodeEval, AttackNeverLiftsAccuracyOnThisConfiguration) {
    auto data = toy_set(3, 10, 43);
    Network net(toy_spec(), 37);
    auto base = toy_set(2, 8, 44);
    const auto stats = rfsc::base_stats(net, base, TukeyConfig{}, false);
    const auto ep = make_episode(data, 3, 2, 5);

    EvalContext ctx;
    ctx.kind = ClassifierKind::cnc;
    ctx.m = 1;
    ctx.use_ema = false;
    ctx.stats = &stats;

    AttackConfig atk;
    atk.epsilon = 0.15f;
    atk.alpha = 0.04f;
    atk.iterations = 10;
    atk.seed = 3;
    const auto r = rfsc::robust_eval_episode(net, ep, ctx, atk);
    EXPECT_LE(r.robust_correct, r.standard_correct);
    EXPECT_EQ(r.total, 15);
}

TEST(EpisodeEval, CalibratedNeedsStatsOnlyWhenNeighborsRequested) {
    auto data = toy_set(2, 8, 45);
    Network net(toy_spec(), 41);
    const auto ep = make_episode(data, 2, 3, 4);
    EvalContext ctx;
    ctx.kind = ClassifierKind::cnc;
    ctx.m = 2;
    ctx.use_ema = false;
    ctx.stats = nullptr;
    AttackConfig atk;
    atk.iterations = 0;
    EXPECT_THROW((void)rfsc::robust_eval_episode(net, ep, ctx, atk), rfsc::Error);
    ctx.m = 0; // plain support means need no base statistics
    const auto r = rfsc::robust_eval_episode(net, ep, ctx, atk);
    EXPECT_EQ(r.total, 8);
}
