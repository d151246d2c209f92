#pragma once

// Episode sampling and the trial loop. Every episode is a pure function of
// (seed, trial index); trials run independently (optionally across threads)
// and aggregate in trial order, so parallelism can never change a report.
// ci95 = 1.96 * s / sqrt(trials), s the sample standard deviation (n-1).

#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "rfsc/data.hpp"
#include "rfsc/fewshot.hpp"
#include "rfsc/network.hpp"
#include "rfsc/rng.hpp"

namespace rfsc {

struct EpisodeSpec {
    int n_way = 5;
    int k_shot = 1;
    int q_queries = 15;
    int trials = 1000;
    std::uint64_t seed = 0;

    void validate() const {
        if (n_way < 2) fail_usage("episode: n_way must be at least 2");
        if (k_shot < 1) fail_usage("episode: k_shot must be at least 1");
        if (q_queries < 1) fail_usage("episode: q_queries must be at least 1");
        if (trials < 1) fail_usage("episode: trials must be at least 1");
    }
};

struct Episode {
    std::vector<int> classes;     // novel class ids in draw order
    std::vector<int> support_idx; // sample indices into the novel set
    std::vector<int> query_idx;
    std::vector<int> support_y;   // episode-local labels, 0..n_way-1
    std::vector<int> query_y;
};

// Deterministic in (spec.seed, trial): n_way classes without replacement,
// then k_shot+q_queries distinct samples per class, split support/query.
[[nodiscard]] inline Episode sample_episode(const LabeledSet& novel, const EpisodeSpec& spec, int trial) {
    spec.validate();
    novel.validate();
    if (novel.num_classes() < spec.n_way)
        fail_data("episode: need " + std::to_string(spec.n_way) + " classes, novel split has " +
                  std::to_string(novel.num_classes()));
    const int per_class = spec.k_shot + spec.q_queries;

    Rng rng(mix_seed(spec.seed, 0x657069ull, static_cast<std::uint64_t>(trial))); // stream tag: "epi"
    Episode ep;
    ep.classes = rng.sample_without_replacement(novel.num_classes(), spec.n_way);
    for (int local = 0; local < spec.n_way; ++local) {
        const int cls = ep.classes[static_cast<std::size_t>(local)];
        const auto& pool = novel.class_index.at(cls);
        if (static_cast<int>(pool.size()) < per_class)
            fail_data("episode: class " + std::to_string(cls) + " has " + std::to_string(pool.size()) +
                      " samples, needs " + std::to_string(per_class));
        const auto pick = rng.sample_without_replacement(static_cast<int>(pool.size()), per_class);
        for (int i = 0; i < spec.k_shot; ++i) {
            ep.support_idx.push_back(pool[static_cast<std::size_t>(pick[static_cast<std::size_t>(i)])]);
            ep.support_y.push_back(local);
        }
        for (int i = spec.k_shot; i < per_class; ++i) {
            ep.query_idx.push_back(pool[static_cast<std::size_t>(pick[static_cast<std::size_t>(i)])]);
            ep.query_y.push_back(local);
        }
    }
    return ep;
}

[[nodiscard]] inline EpisodeBatch episode_batch(const LabeledSet& novel, const Episode& ep, int n_way) {
    EpisodeBatch b;
    b.n_way = n_way;
    b.support_x = gather_images(novel, ep.support_idx);
    b.query_x = gather_images(novel, ep.query_idx);
    b.support_y = ep.support_y;
    b.query_y = ep.query_y;
    return b;
}

struct TrialStats {
    double mean_pct = 0.0;
    double ci95_pct = 0.0;
    std::vector<double> per_trial_pct;
};

// Welford single-pass mean/variance over the ordered per-trial values.
[[nodiscard]] inline std::pair<double, double> mean_ci95(const std::vector<double>& xs) {
    const auto n = static_cast<double>(xs.size());
    double mean = 0.0, m2 = 0.0;
    std::int64_t k = 0;
    for (double x : xs) {
        ++k;
        const double d = x - mean;
        mean += d / static_cast<double>(k);
        m2 += d * (x - mean);
    }
    if (xs.size() < 2) return {mean, 0.0};
    const double s = std::sqrt(m2 / (n - 1.0));
    return {mean, 1.96 * s / std::sqrt(n)};
}

struct EvalReport {
    TrialStats standard;
    TrialStats robust;
    int trials = 0;
    std::vector<std::pair<std::string, std::string>> metadata; // ordered key/value block
};

namespace detail {

inline std::string fmt_double(double v, const char* fmt = "%.6f") {
    char buf[64];
    std::snprintf(buf, sizeof(buf), fmt, v);
    return buf;
}

} // namespace detail

// Runs spec.trials episodes. Each trial builds its classifier from its own
// support set and scores clean + attacked queries; per-trial attack seeds are
// derived from (attack.seed, trial). jobs > 1 distributes trials across
// threads; a failing trial aborts the whole run.
[[nodiscard]] inline EvalReport run_trials(const Network& net, const LabeledSet& novel, const EpisodeSpec& spec,
                                           const EvalContext& ctx, const AttackConfig& attack, int jobs = 1) {
    spec.validate();
    ctx.validate();
    attack.validate();
    if (jobs < 1) fail_usage("run_trials: jobs must be at least 1");

    std::vector<double> standard_pct(static_cast<std::size_t>(spec.trials));
    std::vector<double> robust_pct(static_cast<std::size_t>(spec.trials));

    auto run_one = [&](int t) {
        const Episode ep = sample_episode(novel, spec, t);
        const EpisodeBatch batch = episode_batch(novel, ep, spec.n_way);
        AttackConfig ac = attack;
        ac.seed = mix_seed(attack.seed, 0x61746bull, static_cast<std::uint64_t>(t)); // stream tag: "atk"
        const EpisodeOutcome out = robust_eval_episode(net, batch, ctx, ac);
        standard_pct[static_cast<std::size_t>(t)] =
            100.0 * static_cast<double>(out.standard_correct) / static_cast<double>(out.total);
        robust_pct[static_cast<std::size_t>(t)] =
            100.0 * static_cast<double>(out.robust_correct) / static_cast<double>(out.total);
    };

    if (jobs == 1) {
        for (int t = 0; t < spec.trials; ++t) run_one(t);
    } else {
        std::atomic<int> next{0};
        std::mutex err_mu;
        std::exception_ptr first_error;
        auto worker = [&] {
            for (;;) {
                const int t = next.fetch_add(1);
                if (t >= spec.trials) return;
                try {
                    run_one(t);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(err_mu);
                    if (!first_error) first_error = std::current_exception();
                    return;
                }
            }
        };
        std::vector<std::thread> pool;
        const int nthreads = std::min(jobs, spec.trials);
        pool.reserve(static_cast<std::size_t>(nthreads));
        for (int i = 0; i < nthreads; ++i) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
        if (first_error) std::rethrow_exception(first_error);
    }

    EvalReport rep;
    rep.trials = spec.trials;
    rep.standard.per_trial_pct = std::move(standard_pct);
    rep.robust.per_trial_pct = std::move(robust_pct);
    std::tie(rep.standard.mean_pct, rep.standard.ci95_pct) = mean_ci95(rep.standard.per_trial_pct);
    std::tie(rep.robust.mean_pct, rep.robust.ci95_pct) = mean_ci95(rep.robust.per_trial_pct);

    auto& md = rep.metadata;
    md.emplace_back("classifier", classifier_name(ctx.kind));
    md.emplace_back("n_way", std::to_string(spec.n_way));
    md.emplace_back("k_shot", std::to_string(spec.k_shot));
    md.emplace_back("q_queries", std::to_string(spec.q_queries));
    md.emplace_back("trials", std::to_string(spec.trials));
    md.emplace_back("episode_seed", std::to_string(spec.seed));
    const bool cosine = ctx.kind == ClassifierKind::cnc || ctx.kind == ClassifierKind::nc;
    if (cosine) {
        md.emplace_back("m", std::to_string(ctx.kind == ClassifierKind::cnc ? ctx.m : 0));
        md.emplace_back("tukey_lambda", detail::fmt_double(ctx.tukey.lambda, "%.9g"));
        md.emplace_back("attack_temperature", detail::fmt_double(ctx.temperature, "%.9g"));
    } else {
        md.emplace_back("novel_epochs", std::to_string(ctx.novel.epochs));
        md.emplace_back("novel_lr", detail::fmt_double(ctx.novel.lr, "%.9g"));
        md.emplace_back("novel_momentum", detail::fmt_double(ctx.novel.momentum, "%.9g"));
        md.emplace_back("novel_dampening", detail::fmt_double(ctx.novel.dampening, "%.9g"));
        md.emplace_back("novel_weight_decay", detail::fmt_double(ctx.novel.weight_decay, "%.9g"));
    }
    md.emplace_back("use_ema", ctx.use_ema ? "true" : "false");
    md.emplace_back("attack_epsilon", detail::fmt_double(attack.epsilon, "%.9g"));
    md.emplace_back("attack_alpha", detail::fmt_double(attack.alpha, "%.9g"));
    md.emplace_back("attack_iterations", std::to_string(attack.iterations));
    md.emplace_back("attack_random_start", attack.random_start ? "true" : "false");
    md.emplace_back("attack_seed", std::to_string(attack.seed));
    if (spec.trials == 1) md.emplace_back("ci95_note", "single trial; ci95 reported as 0");
    return rep;
}

// Human-readable report: metadata block, then one line per metric.
[[nodiscard]] inline std::string report_to_text(const EvalReport& rep) {
    std::string out = "episode evaluation\n";
    for (const auto& [k, v] : rep.metadata) out += k + ": " + v + "\n";
    out += "standard_accuracy_pct: " + detail::fmt_double(rep.standard.mean_pct) + " +/- " +
           detail::fmt_double(rep.standard.ci95_pct) + "\n";
    out += "robust_accuracy_pct: " + detail::fmt_double(rep.robust.mean_pct) + " +/- " +
           detail::fmt_double(rep.robust.ci95_pct) + "\n";
    return out;
}

// Machine-readable CSV: one row per trial, then summary rows.
[[nodiscard]] inline std::string report_to_csv(const EvalReport& rep) {
    std::string out = "trial,standard_pct,robust_pct\n";
    for (int t = 0; t < rep.trials; ++t)
        out += std::to_string(t) + "," + detail::fmt_double(rep.standard.per_trial_pct[static_cast<std::size_t>(t)]) +
               "," + detail::fmt_double(rep.robust.per_trial_pct[static_cast<std::size_t>(t)]) + "\n";
    out += "summary_mean," + detail::fmt_double(rep.standard.mean_pct) + "," + detail::fmt_double(rep.robust.mean_pct) +
           "\n";
    out += "summary_ci95," + detail::fmt_double(rep.standard.ci95_pct) + "," + detail::fmt_double(rep.robust.ci95_pct) +
           "\n";
    out += "summary_trials," + std::to_string(rep.trials) + "," + std::to_string(rep.trials) + "\n";
    return out;
}

} // namespace rfsc
