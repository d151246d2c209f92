// Command-line front end: data generation, base training, episodic
// evaluation, and parameter sweeps. Every command writes its fully resolved
// configuration and exact command line next to its outputs so any artifact
// can be reproduced bit-identically from the directory alone.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include <CLI11.hpp>

#include "rfsc/checkpoint.hpp"
#include "rfsc/config.hpp"
#include "rfsc/data.hpp"
#include "rfsc/episodes.hpp"
#include "rfsc/error.hpp"
#include "rfsc/fewshot.hpp"
#include "rfsc/network.hpp"
#include "rfsc/train.hpp"

namespace fs = std::filesystem;

namespace {

std::string shell_quote(const std::string& arg) {
    if (!arg.empty() && arg.find_first_not_of("abcdefghijklmnopqrstuvwxyz"
                                              "ABCDEFGHIJKLMNOPQRSTUVWXYZ"
                                              "0123456789_./=,:@+-") == std::string::npos)
        return arg;
    std::string out = "'";
    for (char c : arg) {
        if (c == '\'')
            out += "'\\''";
        else
            out += c;
    }
    return out + "'";
}

std::string join_command_line(int argc, char** argv) {
    std::string out;
    for (int i = 0; i < argc; ++i) {
        if (i) out += ' ';
        out += shell_quote(argv[i]);
    }
    return out;
}

// Command-line options that overlay config keys when explicitly given.
struct KeyedFlags {
    void add(CLI::App* cmd, const std::string& flag, const std::string& key, const std::string& help) {
        auto store = std::make_shared<std::string>();
        CLI::Option* opt = cmd->add_option(flag, *store, help);
        opt->multi_option_policy(CLI::MultiOptionPolicy::TakeLast); // later flags override earlier ones
        bound_.emplace_back(opt, key, store);
    }

    void overlay(rfsc::RunConfig& cfg) const {
        for (const auto& [opt, key, store] : bound_)
            if (opt->count() > 0) cfg.set(key, *store);
    }

  private:
    std::vector<std::tuple<CLI::Option*, std::string, std::shared_ptr<std::string>>> bound_;
};

void write_run_record(const fs::path& dir, const rfsc::RunConfig& cfg, const std::string& cmdline) {
    rfsc::write_text((dir / "resolved.cfg").string(), cfg.to_text());
    rfsc::write_text((dir / "command.txt").string(), cmdline + "\n");
}

struct EvalInputs {
    rfsc::Network net;
    rfsc::Splits splits;
};

EvalInputs load_eval_inputs(const rfsc::RunConfig& cfg, const std::string& checkpoint_path) {
    EvalInputs in;
    in.net = rfsc::load_checkpoint(checkpoint_path);
    const rfsc::LabeledSet data = rfsc::load_csv(cfg.raw("data.csv"));
    const rfsc::SplitManifest manifest = rfsc::load_manifest(cfg.raw("data.manifest"));
    in.splits = rfsc::apply_split(data, manifest);
    if (in.splits.novel.input_dim != in.net.spec().input_dim)
        rfsc::fail_data("checkpoint expects input_dim " + std::to_string(in.net.spec().input_dim) +
                        ", dataset provides " + std::to_string(in.splits.novel.input_dim));
    return in;
}

// Base-class feature means are needed only for calibrated centroids.
const rfsc::BaseStats* ensure_stats(std::optional<rfsc::BaseStats>& cache, const EvalInputs& in,
                                    const rfsc::EvalContext& ctx) {
    if (ctx.kind != rfsc::ClassifierKind::cnc || ctx.m <= 0) return nullptr;
    if (!cache) {
        if (in.splits.base.num_classes() != in.net.spec().num_base_classes)
            rfsc::fail_data("checkpoint was trained on " + std::to_string(in.net.spec().num_base_classes) +
                            " base classes, manifest defines " + std::to_string(in.splits.base.num_classes()));
        cache = rfsc::base_stats(in.net, in.splits.base, ctx.tukey, ctx.use_ema);
    }
    return &*cache;
}

int run_gen_data(rfsc::RunConfig& cfg, const std::string& out_prefix, const std::string& cmdline) {
    const rfsc::SyntheticSpec spec = rfsc::synth_spec_from(cfg);
    const rfsc::SplitManifest manifest = rfsc::synth_manifest_from(cfg);
    const rfsc::LabeledSet set = rfsc::gen_synthetic(spec);

    const fs::path prefix(out_prefix);
    if (prefix.has_parent_path()) fs::create_directories(prefix.parent_path());
    const std::string csv_path = out_prefix + ".csv";
    const std::string manifest_path = out_prefix + ".manifest";
    rfsc::save_csv(csv_path, set);
    rfsc::write_text(manifest_path, rfsc::manifest_to_text(manifest));
    // Point the resolved config at the files just written so it can feed
    // train-base --config unchanged.
    cfg.set("data.csv", csv_path);
    cfg.set("data.manifest", manifest_path);
    rfsc::write_text(out_prefix + ".resolved.cfg", cfg.to_text());
    rfsc::write_text(out_prefix + ".command.txt", cmdline + "\n");

    std::cout << "generated " << set.count() << " samples (" << set.num_classes() << " classes, dim "
              << set.input_dim << ")\n"
              << "wrote " << csv_path << ", " << manifest_path << "\n";
    return 0;
}

int run_train_base(rfsc::RunConfig& cfg, const std::string& out_dir, const std::string& cmdline) {
    const rfsc::LabeledSet data = rfsc::load_csv(cfg.raw("data.csv"));
    const rfsc::SplitManifest manifest = rfsc::load_manifest(cfg.raw("data.manifest"));
    const rfsc::Splits splits = rfsc::apply_split(data, manifest);

    const rfsc::MlpSpec spec = rfsc::mlp_spec_from(cfg, splits.base.input_dim, splits.base.num_classes());
    const rfsc::TrainConfig tc = rfsc::train_config_from(cfg);
    rfsc::Network net(spec, cfg.get_seed("net.seed"), tc.ema_tau);

    std::string log_csv = "epoch,clean_loss,adv_loss,lr\n";
    const rfsc::LogSink sink = [&](const rfsc::EpochLog& row) {
        char buf[128];
        std::snprintf(buf, sizeof(buf), "%d,%.6f,%.6f,%.9g\n", row.epoch, row.clean_loss, row.adv_loss, row.lr);
        log_csv += buf;
        std::cout << "epoch " << row.epoch << ": clean " << rfsc::detail::fmt_double(row.clean_loss) << ", adv "
                  << rfsc::detail::fmt_double(row.adv_loss) << ", lr " << rfsc::detail::fmt_double(row.lr, "%.9g")
                  << "\n";
    };
    rfsc::train_base(net, splits.base, tc, sink);

    const fs::path dir(out_dir);
    fs::create_directories(dir);
    const std::string ckpt_path = (dir / "checkpoint.rfsc").string();
    rfsc::save_checkpoint(ckpt_path, net);
    rfsc::write_text((dir / "train_log.csv").string(), log_csv);
    write_run_record(dir, cfg, cmdline);

    std::cout << "trained " << tc.epochs << " epochs (" << rfsc::adversary_name(tc.adversary) << " adversary) on "
              << splits.base.count() << " samples across " << splits.base.num_classes() << " base classes\n"
              << "wrote " << ckpt_path << "\n";
    return 0;
}

int run_eval(rfsc::RunConfig& cfg, const std::string& checkpoint_path, const std::string& out_dir, int jobs,
             const std::string& cmdline) {
    const EvalInputs in = load_eval_inputs(cfg, checkpoint_path);
    rfsc::EvalContext ctx = rfsc::eval_context_from(cfg);
    const rfsc::EpisodeSpec spec = rfsc::episode_spec_from(cfg);
    const rfsc::AttackConfig attack = rfsc::attack_from(cfg, "eval.");

    std::optional<rfsc::BaseStats> stats;
    ctx.stats = ensure_stats(stats, in, ctx);
    const rfsc::EvalReport rep = rfsc::run_trials(in.net, in.splits.novel, spec, ctx, attack, jobs);

    const fs::path dir(out_dir);
    fs::create_directories(dir);
    const std::string text = rfsc::report_to_text(rep);
    rfsc::write_text((dir / "report.txt").string(), text);
    rfsc::write_text((dir / "report.csv").string(), rfsc::report_to_csv(rep));
    write_run_record(dir, cfg, cmdline);

    std::cout << text << "wrote " << (dir / "report.txt").string() << "\n";
    return 0;
}

int run_sweep(rfsc::RunConfig& cfg, const std::string& checkpoint_path, const std::string& out_dir,
              const std::string& axis, const std::string& values_csv, int jobs, const std::string& cmdline) {
    std::string key;
    std::string column;
    if (axis == "m") {
        key = "eval.m";
        column = "m";
    } else if (axis == "eps") {
        key = "eval.attack_epsilon";
        column = "epsilon";
    } else if (axis == "iters") {
        key = "eval.attack_iterations";
        column = "iterations";
    } else {
        rfsc::fail_usage("sweep: axis '" + axis + "' is not one of m|eps|iters");
    }

    std::vector<std::string> tokens;
    std::istringstream parts(values_csv);
    std::string part;
    while (std::getline(parts, part, ',')) {
        if (part.empty()) rfsc::fail_usage("sweep: empty value in --values list");
        tokens.push_back(part);
    }
    if (tokens.empty()) rfsc::fail_usage("sweep: --values list is empty");

    const EvalInputs in = load_eval_inputs(cfg, checkpoint_path);
    const fs::path dir(out_dir);
    fs::create_directories(dir);

    std::optional<rfsc::BaseStats> stats;
    std::string sweep_csv = column + ",standard_mean_pct,standard_ci95_pct,robust_mean_pct,robust_ci95_pct\n";
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        rfsc::RunConfig point = cfg;
        point.set(key, tokens[i]);
        rfsc::EvalContext ctx = rfsc::eval_context_from(point);
        const rfsc::EpisodeSpec spec = rfsc::episode_spec_from(point);
        const rfsc::AttackConfig attack = rfsc::attack_from(point, "eval.");
        ctx.stats = ensure_stats(stats, in, ctx);
        const rfsc::EvalReport rep = rfsc::run_trials(in.net, in.splits.novel, spec, ctx, attack, jobs);

        sweep_csv += tokens[i] + "," + rfsc::detail::fmt_double(rep.standard.mean_pct) + "," +
                     rfsc::detail::fmt_double(rep.standard.ci95_pct) + "," +
                     rfsc::detail::fmt_double(rep.robust.mean_pct) + "," +
                     rfsc::detail::fmt_double(rep.robust.ci95_pct) + "\n";
        const std::string stem = "report_" + axis + "_" + std::to_string(i);
        rfsc::write_text((dir / (stem + ".txt")).string(), rfsc::report_to_text(rep));
        rfsc::write_text((dir / (stem + ".csv")).string(), rfsc::report_to_csv(rep));
        std::cout << axis << "=" << tokens[i] << ": standard " << rfsc::detail::fmt_double(rep.standard.mean_pct)
                  << " +/- " << rfsc::detail::fmt_double(rep.standard.ci95_pct) << ", robust "
                  << rfsc::detail::fmt_double(rep.robust.mean_pct) << " +/- "
                  << rfsc::detail::fmt_double(rep.robust.ci95_pct) << "\n";
    }

    rfsc::write_text((dir / "sweep.csv").string(), sweep_csv);
    write_run_record(dir, cfg, cmdline);
    std::cout << "wrote " << (dir / "sweep.csv").string() << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"adversarially robust few-shot classification toolkit"};
    app.require_subcommand(1);
    const std::string cmdline = join_command_line(argc, argv);
    const int default_jobs = std::max(1u, std::thread::hardware_concurrency());

    // gen-data ---------------------------------------------------------------
    CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic dataset plus class-split manifest");
    std::string gen_out;
    gen->add_option("--out", gen_out, "output path prefix (writes <prefix>.csv and <prefix>.manifest)")->required();
    KeyedFlags gen_flags;
    gen_flags.add(gen, "--classes", "synth.classes", "total number of classes");
    gen_flags.add(gen, "--per-class", "synth.per_class", "samples per class");
    gen_flags.add(gen, "--side", "synth.side", "image side length (inputs are side*side)");
    gen_flags.add(gen, "--contrast", "synth.contrast", "template contrast about mid-gray in [0,1]");
    gen_flags.add(gen, "--noise", "synth.noise", "Gaussian pixel noise sigma");
    gen_flags.add(gen, "--seed", "synth.seed", "generator seed");
    gen_flags.add(gen, "--base", "synth.base", "number of base classes in the manifest");
    gen_flags.add(gen, "--val", "synth.val", "number of held-out validation classes");
    gen_flags.add(gen, "--novel", "synth.novel", "number of novel classes for episodes");

    // train-base -------------------------------------------------------------
    CLI::App* train = app.add_subcommand("train-base", "train the base feature extractor");
    std::string train_config, train_out;
    train->add_option("--config", train_config, "run configuration file (key=value lines)")
        ->required()
        ->check(CLI::ExistingFile);
    train->add_option("--out", train_out, "output directory for checkpoint and training log")->required();
    KeyedFlags train_flags;
    train_flags.add(train, "--adv", "train.adversary", "training adversary: pgd or none");
    bool no_wa = false;
    train->add_flag("--no-wa", no_wa, "disable the weight-averaging shadow update");

    // eval -------------------------------------------------------------------
    CLI::App* eval = app.add_subcommand("eval", "episodic few-shot evaluation of a checkpoint");
    std::string eval_config, eval_checkpoint, eval_out;
    int eval_jobs = default_jobs;
    eval->add_option("--config", eval_config, "optional run configuration file")->check(CLI::ExistingFile);
    eval->add_option("--checkpoint", eval_checkpoint, "trained checkpoint file")->required()->check(CLI::ExistingFile);
    eval->add_option("--out", eval_out, "output directory for reports")->required();
    eval->add_option("--jobs", eval_jobs, "parallel trial workers")->check(CLI::PositiveNumber);
    KeyedFlags eval_flags;
    auto add_eval_flags = [](CLI::App* cmd, KeyedFlags& flags) {
        flags.add(cmd, "--data", "data.csv", "dataset CSV (label,pixels...)");
        flags.add(cmd, "--manifest", "data.manifest", "class-split manifest file");
        flags.add(cmd, "--classifier", "eval.classifier", "cnc | nc | linear | linear-adv7 | linear-adv20");
        flags.add(cmd, "--n", "eval.n_way", "classes per episode");
        flags.add(cmd, "--k", "eval.k_shot", "support samples per class");
        flags.add(cmd, "--q", "eval.q_queries", "query samples per class");
        flags.add(cmd, "--trials", "eval.trials", "number of episodes to average");
        flags.add(cmd, "--m", "eval.m", "base neighbors per support sample (cnc)");
        flags.add(cmd, "--lambda", "eval.tukey_lambda", "feature power-transform exponent in (0,1]");
        flags.add(cmd, "--temperature", "eval.temperature", "cosine-score divisor inside the attacked loss");
        flags.add(cmd, "--use-ema", "eval.use_ema", "evaluate averaged weights: on or off");
        flags.add(cmd, "--seed", "eval.seed", "episode sampling seed");
        flags.add(cmd, "--eps", "eval.attack_epsilon", "attack budget (decimal or fraction like 8/255)");
        flags.add(cmd, "--alpha", "eval.attack_alpha", "attack step size (decimal or fraction)");
        flags.add(cmd, "--iters", "eval.attack_iterations", "attack iterations");
        flags.add(cmd, "--random-start", "eval.attack_random_start", "random attack start: on or off");
        flags.add(cmd, "--attack-seed", "eval.attack_seed", "attack randomness seed");
    };
    add_eval_flags(eval, eval_flags);

    // sweep ------------------------------------------------------------------
    CLI::App* sweep = app.add_subcommand("sweep", "evaluate across one axis and tabulate the results");
    std::string sweep_config, sweep_checkpoint, sweep_out, sweep_axis, sweep_values;
    int sweep_jobs = default_jobs;
    sweep->add_option("--config", sweep_config, "optional run configuration file")->check(CLI::ExistingFile);
    sweep->add_option("--checkpoint", sweep_checkpoint, "trained checkpoint file")
        ->required()
        ->check(CLI::ExistingFile);
    sweep->add_option("--out", sweep_out, "output directory for sweep.csv and per-point reports")->required();
    sweep->add_option("--axis", sweep_axis, "swept parameter: m | eps | iters")->required();
    sweep->add_option("--values", sweep_values, "comma-separated axis values")->required();
    sweep->add_option("--jobs", sweep_jobs, "parallel trial workers")->check(CLI::PositiveNumber);
    KeyedFlags sweep_flags;
    add_eval_flags(sweep, sweep_flags);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (gen->parsed()) {
            rfsc::RunConfig cfg;
            gen_flags.overlay(cfg);
            return run_gen_data(cfg, gen_out, cmdline);
        }
        if (train->parsed()) {
            rfsc::RunConfig cfg = rfsc::load_run_config(train_config);
            train_flags.overlay(cfg);
            if (no_wa) cfg.set("train.wa", "false");
            return run_train_base(cfg, train_out, cmdline);
        }
        if (eval->parsed()) {
            rfsc::RunConfig cfg = eval_config.empty() ? rfsc::RunConfig() : rfsc::load_run_config(eval_config);
            eval_flags.overlay(cfg);
            return run_eval(cfg, eval_checkpoint, eval_out, eval_jobs, cmdline);
        }
        rfsc::RunConfig cfg = sweep_config.empty() ? rfsc::RunConfig() : rfsc::load_run_config(sweep_config);
        sweep_flags.overlay(cfg);
        return run_sweep(cfg, sweep_checkpoint, sweep_out, sweep_axis, sweep_values, sweep_jobs, cmdline);
    } catch (const rfsc::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        switch (e.kind()) {
            case rfsc::ErrorKind::usage: return 1;
            case rfsc::ErrorKind::data: return 2;
            case rfsc::ErrorKind::numeric: return 3;
        }
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "unexpected error: " << e.what() << "\n";
        return 2;
    }
}
