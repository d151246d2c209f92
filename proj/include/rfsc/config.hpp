#pragma once

// Flat key=value run configuration. One canonical key table covers every
// tunable in the library; unknown keys are usage errors so typos cannot
// silently fall back to defaults. Commands overlay file values and then
// command-line flags onto the defaults and write the fully resolved result
// next to their outputs, which makes any run reproducible from its artifacts.

#include <cstdint>
#include <cstdlib>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "rfsc/attack.hpp"
#include "rfsc/data.hpp"
#include "rfsc/episodes.hpp"
#include "rfsc/error.hpp"
#include "rfsc/fewshot.hpp"
#include "rfsc/io.hpp"
#include "rfsc/network.hpp"
#include "rfsc/train.hpp"

namespace rfsc {

struct ConfigKey {
    const char* name;
    const char* def; // nullptr: no default, must be set before first read
};

// Canonical key order; resolved files are written in exactly this order.
[[nodiscard]] inline const std::vector<ConfigKey>& config_keys() {
    static const std::vector<ConfigKey> keys = {
        {"data.csv", nullptr},
        {"data.manifest", nullptr},
        {"net.hidden", "128,64"},
        {"net.feature_dim", "64"},
        {"net.seed", "1"},
        {"train.epochs", "60"},
        {"train.batch_size", "64"},
        {"train.lr_extractor", "0.1"},
        {"train.lr_extractor_final", "0.001"},
        {"train.lr_head", "0.1"},
        {"train.weight_decay_extractor", "1e-5"},
        {"train.weight_decay_head", "1e-4"},
        {"train.momentum", "0.9"},
        {"train.adversary", "pgd"},
        {"train.attack_epsilon", "8/255"},
        {"train.attack_alpha", "2/255"},
        {"train.attack_iterations", "7"},
        {"train.attack_random_start", "true"},
        {"train.attack_seed", "0"},
        {"train.wa", "true"},
        {"train.ema_tau", "0.999"},
        {"train.seed", "0"},
        {"eval.classifier", "cnc"},
        {"eval.n_way", "5"},
        {"eval.k_shot", "1"},
        {"eval.q_queries", "15"},
        {"eval.trials", "1000"},
        {"eval.m", "2"},
        {"eval.tukey_lambda", "0.5"},
        {"eval.temperature", "1"},
        {"eval.use_ema", "true"},
        {"eval.seed", "0"},
        {"eval.attack_epsilon", "8/255"},
        {"eval.attack_alpha", "2/255"},
        {"eval.attack_iterations", "20"},
        {"eval.attack_random_start", "true"},
        {"eval.attack_seed", "0"},
        {"novel.epochs", "100"},
        {"novel.lr", "0.01"},
        {"novel.momentum", "0.9"},
        {"novel.dampening", "0.9"},
        {"novel.weight_decay", "1e-3"},
        {"synth.classes", "35"},
        {"synth.per_class", "200"},
        {"synth.side", "8"},
        {"synth.contrast", "1"},
        {"synth.noise", "0.15"},
        {"synth.seed", "7"},
        {"synth.base", "20"},
        {"synth.val", "5"},
        {"synth.novel", "10"},
    };
    return keys;
}

// Parses a decimal number or a fraction like "8/255"; rejects trailing junk.
[[nodiscard]] inline double parse_number(const std::string& text, const std::string& what) {
    auto parse_part = [&](const std::string& part) {
        if (part.empty()) fail_usage(what + ": empty number in '" + text + "'");
        const char* begin = part.c_str();
        char* end = nullptr;
        const double v = std::strtod(begin, &end);
        if (end != begin + part.size()) fail_usage(what + ": '" + text + "' is not a number");
        return v;
    };
    const std::size_t slash = text.find('/');
    if (slash == std::string::npos) return parse_part(text);
    const double num = parse_part(text.substr(0, slash));
    const double den = parse_part(text.substr(slash + 1));
    if (den == 0.0) fail_usage(what + ": zero denominator in '" + text + "'");
    return num / den;
}

class RunConfig {
  public:
    RunConfig() : values_(config_keys().size()) {}

    void set(const std::string& key, const std::string& value) {
        values_[index_of(key)] = value;
    }

    [[nodiscard]] bool is_set(const std::string& key) const { return values_[index_of(key)].has_value(); }

    // Resolved value: explicit setting or table default; unset + no default is
    // a usage error naming the key.
    [[nodiscard]] std::string raw(const std::string& key) const {
        const std::size_t i = index_of(key);
        if (values_[i].has_value()) return *values_[i];
        if (config_keys()[i].def == nullptr)
            fail_usage("config key '" + key + "' is required but not set");
        return config_keys()[i].def;
    }

    [[nodiscard]] std::string get_string(const std::string& key) const { return raw(key); }

    [[nodiscard]] double get_number(const std::string& key) const {
        return parse_number(raw(key), "config key '" + key + "'");
    }

    [[nodiscard]] float get_float(const std::string& key) const { return static_cast<float>(get_number(key)); }

    [[nodiscard]] int get_int(const std::string& key) const {
        const std::string& v = raw(key);
        const char* begin = v.c_str();
        char* end = nullptr;
        const long parsed = std::strtol(begin, &end, 10);
        if (v.empty() || end != begin + v.size())
            fail_usage("config key '" + key + "': '" + v + "' is not an integer");
        return static_cast<int>(parsed);
    }

    [[nodiscard]] std::uint64_t get_seed(const std::string& key) const {
        const std::string& v = raw(key);
        const char* begin = v.c_str();
        char* end = nullptr;
        const unsigned long long parsed = std::strtoull(begin, &end, 10);
        if (v.empty() || end != begin + v.size() || v[0] == '-')
            fail_usage("config key '" + key + "': '" + v + "' is not a nonnegative integer");
        return static_cast<std::uint64_t>(parsed);
    }

    [[nodiscard]] bool get_bool(const std::string& key) const {
        const std::string& v = raw(key);
        if (v == "true" || v == "on" || v == "1") return true;
        if (v == "false" || v == "off" || v == "0") return false;
        fail_usage("config key '" + key + "': '" + v + "' is not a boolean (true/false/on/off/1/0)");
    }

    // Full resolved snapshot in canonical order; keys that are unset and have
    // no default are omitted (they were never consulted).
    [[nodiscard]] std::string to_text() const {
        std::string out;
        const auto& keys = config_keys();
        for (std::size_t i = 0; i < keys.size(); ++i) {
            if (values_[i].has_value())
                out += std::string(keys[i].name) + "=" + *values_[i] + "\n";
            else if (keys[i].def != nullptr)
                out += std::string(keys[i].name) + "=" + keys[i].def + "\n";
        }
        return out;
    }

  private:
    [[nodiscard]] static std::size_t index_of(const std::string& key) {
        const auto& keys = config_keys();
        for (std::size_t i = 0; i < keys.size(); ++i)
            if (key == keys[i].name) return i;
        fail_usage("unknown config key '" + key + "'");
    }

    std::vector<std::optional<std::string>> values_;
};

// Parses `key=value` lines; '#' starts a comment, blank lines are skipped.
[[nodiscard]] inline RunConfig parse_run_config(const std::string& text, const std::string& source) {
    RunConfig cfg;
    std::istringstream lines(text);
    std::string line;
    std::size_t row = 0;
    auto trim = [](std::string s) {
        const std::size_t a = s.find_first_not_of(" \t\r");
        const std::size_t b = s.find_last_not_of(" \t\r");
        return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    std::vector<std::string> seen;
    while (std::getline(lines, line)) {
        ++row;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        const std::string stripped = trim(line);
        if (stripped.empty()) continue;
        const std::size_t eq = stripped.find('=');
        if (eq == std::string::npos)
            fail_usage(source + ": line " + std::to_string(row) + " is not key=value");
        const std::string key = trim(stripped.substr(0, eq));
        const std::string value = trim(stripped.substr(eq + 1));
        if (key.empty()) fail_usage(source + ": line " + std::to_string(row) + " has an empty key");
        if (value.empty())
            fail_usage(source + ": line " + std::to_string(row) + " has an empty value for '" + key + "'");
        for (const std::string& s : seen)
            if (s == key) fail_usage(source + ": duplicate config key '" + key + "'");
        seen.push_back(key);
        try {
            cfg.set(key, value);
        } catch (const Error& e) {
            fail_usage(source + ": line " + std::to_string(row) + ": " + e.what());
        }
    }
    return cfg;
}

[[nodiscard]] inline RunConfig load_run_config(const std::string& path) {
    return parse_run_config(read_text(path), path);
}

// ---- Typed views over a resolved config ------------------------------------

[[nodiscard]] inline MlpSpec mlp_spec_from(const RunConfig& cfg, std::int64_t input_dim,
                                           std::int64_t num_base_classes) {
    MlpSpec spec;
    spec.input_dim = input_dim;
    spec.num_base_classes = num_base_classes;
    spec.feature_dim = cfg.get_int("net.feature_dim");
    spec.hidden_dims.clear();
    const std::string hidden = cfg.get_string("net.hidden");
    std::istringstream parts(hidden);
    std::string part;
    while (std::getline(parts, part, ',')) {
        const char* begin = part.c_str();
        char* end = nullptr;
        const long dim = std::strtol(begin, &end, 10);
        if (part.empty() || end != begin + part.size() || dim <= 0)
            fail_usage("config key 'net.hidden': '" + hidden + "' is not a comma list of positive integers");
        spec.hidden_dims.push_back(dim);
    }
    if (spec.hidden_dims.empty())
        fail_usage("config key 'net.hidden': at least one hidden layer is required");
    return spec;
}

[[nodiscard]] inline AttackConfig attack_from(const RunConfig& cfg, const std::string& prefix) {
    AttackConfig ac;
    ac.epsilon = cfg.get_float(prefix + "attack_epsilon");
    ac.alpha = cfg.get_float(prefix + "attack_alpha");
    ac.iterations = cfg.get_int(prefix + "attack_iterations");
    ac.random_start = cfg.get_bool(prefix + "attack_random_start");
    ac.seed = cfg.get_seed(prefix + "attack_seed");
    return ac;
}

[[nodiscard]] inline Adversary adversary_from(const RunConfig& cfg) {
    const std::string v = cfg.get_string("train.adversary");
    if (v == "none") return Adversary::none;
    if (v == "pgd") return Adversary::pgd;
    fail_usage("config key 'train.adversary': '" + v + "' is not one of none|pgd");
}

[[nodiscard]] inline TrainConfig train_config_from(const RunConfig& cfg) {
    TrainConfig tc;
    tc.epochs = cfg.get_int("train.epochs");
    tc.batch_size = cfg.get_int("train.batch_size");
    tc.lr_extractor = cfg.get_float("train.lr_extractor");
    tc.lr_extractor_final = cfg.get_float("train.lr_extractor_final");
    tc.lr_head = cfg.get_float("train.lr_head");
    tc.weight_decay_extractor = cfg.get_float("train.weight_decay_extractor");
    tc.weight_decay_head = cfg.get_float("train.weight_decay_head");
    tc.momentum = cfg.get_float("train.momentum");
    tc.adversary = adversary_from(cfg);
    tc.attack = attack_from(cfg, "train.");
    tc.wa_enabled = cfg.get_bool("train.wa");
    tc.ema_tau = cfg.get_float("train.ema_tau");
    tc.seed = cfg.get_seed("train.seed");
    return tc;
}

[[nodiscard]] inline ClassifierKind classifier_from(const RunConfig& cfg) {
    const std::string v = cfg.get_string("eval.classifier");
    if (v == "cnc") return ClassifierKind::cnc;
    if (v == "nc") return ClassifierKind::nc;
    if (v == "linear") return ClassifierKind::linear;
    if (v == "linear-adv7") return ClassifierKind::linear_adv7;
    if (v == "linear-adv20") return ClassifierKind::linear_adv20;
    fail_usage("config key 'eval.classifier': '" + v +
               "' is not one of cnc|nc|linear|linear-adv7|linear-adv20");
}

[[nodiscard]] inline NovelTrainConfig novel_config_from(const RunConfig& cfg) {
    NovelTrainConfig nc;
    nc.epochs = cfg.get_int("novel.epochs");
    nc.lr = cfg.get_float("novel.lr");
    nc.momentum = cfg.get_float("novel.momentum");
    nc.dampening = cfg.get_float("novel.dampening");
    nc.weight_decay = cfg.get_float("novel.weight_decay");
    return nc;
}

// Stats pointer stays null here; the caller wires it up once computed.
[[nodiscard]] inline EvalContext eval_context_from(const RunConfig& cfg) {
    EvalContext ctx;
    ctx.kind = classifier_from(cfg);
    ctx.m = cfg.get_int("eval.m");
    ctx.tukey.lambda = cfg.get_float("eval.tukey_lambda");
    ctx.use_ema = cfg.get_bool("eval.use_ema");
    ctx.temperature = cfg.get_float("eval.temperature");
    ctx.novel = novel_config_from(cfg);
    return ctx;
}

[[nodiscard]] inline EpisodeSpec episode_spec_from(const RunConfig& cfg) {
    EpisodeSpec spec;
    spec.n_way = cfg.get_int("eval.n_way");
    spec.k_shot = cfg.get_int("eval.k_shot");
    spec.q_queries = cfg.get_int("eval.q_queries");
    spec.trials = cfg.get_int("eval.trials");
    spec.seed = cfg.get_seed("eval.seed");
    return spec;
}

[[nodiscard]] inline SyntheticSpec synth_spec_from(const RunConfig& cfg) {
    SyntheticSpec spec;
    spec.num_classes = cfg.get_int("synth.classes");
    spec.samples_per_class = cfg.get_int("synth.per_class");
    spec.side = cfg.get_int("synth.side");
    spec.template_scale = cfg.get_float("synth.contrast");
    spec.noise_sigma = cfg.get_float("synth.noise");
    spec.seed = cfg.get_seed("synth.seed");
    return spec;
}

// Ascending class-id split for generated data: the first `base` ids train the
// extractor, the next `val` are held out, the last `novel` define episodes.
[[nodiscard]] inline SplitManifest synth_manifest_from(const RunConfig& cfg) {
    const int classes = cfg.get_int("synth.classes");
    const int base = cfg.get_int("synth.base");
    const int val = cfg.get_int("synth.val");
    const int novel = cfg.get_int("synth.novel");
    if (base < 1 || val < 0 || novel < 1)
        fail_usage("synthetic split: need at least one base and one novel class");
    if (base + val + novel != classes)
        fail_usage("synthetic split: base + val + novel = " + std::to_string(base + val + novel) +
                   " does not equal synth.classes = " + std::to_string(classes));
    SplitManifest m;
    for (int c = 0; c < base; ++c) m.base.push_back(c);
    for (int c = base; c < base + val; ++c) m.val.push_back(c);
    for (int c = base + val; c < classes; ++c) m.novel.push_back(c);
    return m;
}

} // namespace rfsc
