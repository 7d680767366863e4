#pragma once

#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "jatp/attacks.hpp"
#include "jatp/datahub.hpp"
#include "jatp/losses.hpp"

namespace jatp {

using json = nlohmann::json;

enum class TrainVariant { jatp, jatp_prime, oblivious_pixel, oblivious_feature,
                          full_pixel };
enum class TargetStrategy { natural, standard_at, trades };

struct OptimizerConfig {
    double momentum = 0.9;
    double weight_decay = 2e-4;
    double initial_lr = 1e-2;
    std::vector<int> lr_drop_epochs = {15, 25};
    double lr_drop_factor = 0.1;
};

struct TrainConfig {
    int epochs = 30;
    int batch_size = 128;
    OptimizerConfig optimizer;
    PerturbationBudget budget;  // training attack
    LossWeights weights;
    std::string tap = "stage3";
    std::uint64_t seed = 0;
    TrainVariant variant = TrainVariant::jatp;
    // target pre-training
    TargetStrategy strategy = TargetStrategy::trades;
    double trades_lambda = 6.0;
    // desk-scale architecture knobs
    int target_width = 16;
    int pre_width = 16;
    int pre_blocks = 3;
    // ablation switches; weights.alpha = 0 is equivalent to use_fsm = false
    bool use_pixel = true;
    bool use_bce = true;
    bool use_fsm = true;
    FsmReference fsm_reference = FsmReference::preprocessed_natural;

    void validate() const {
        if (epochs < 1) throw ConfigError("train.epochs: must be >= 1");
        if (batch_size < 1) throw ConfigError("train.batch_size: must be >= 1");
        budget.validate();
        weights.validate();
        for (std::size_t i = 0; i < optimizer.lr_drop_epochs.size(); ++i) {
            if (optimizer.lr_drop_epochs[i] >= epochs)
                throw ConfigError(
                    "train.optimizer.lr_drop_epochs: drop epoch " +
                    std::to_string(optimizer.lr_drop_epochs[i]) +
                    " must be < epochs (" + std::to_string(epochs) + ")");
            if (i > 0 && optimizer.lr_drop_epochs[i] <=
                             optimizer.lr_drop_epochs[i - 1])
                throw ConfigError(
                    "train.optimizer.lr_drop_epochs: must be strictly increasing");
        }
    }
};

struct EvalConfig {
    std::string split = "test";
    int subsample = 1000;  // 0 = full split
    std::vector<AttackSpec> suite;
};

struct RunConfig {
    std::uint64_t seed = 1;
    std::string out_dir = "runs/out";
    DatasetSpec dataset;
    TrainConfig train;
    EvalConfig eval;
};

// ---------------------------------------------------------------------------
// enum <-> string

namespace cfg {

inline std::string to_string(DataSource s) {
    switch (s) {
        case DataSource::synthetic: return "synthetic";
        case DataSource::packed_binary: return "packed_binary";
        case DataSource::image_directory: return "image_directory";
    }
    return "?";
}
inline std::string to_string(TrainVariant v) {
    switch (v) {
        case TrainVariant::jatp: return "jatp";
        case TrainVariant::jatp_prime: return "jatp_prime";
        case TrainVariant::oblivious_pixel: return "oblivious_pixel";
        case TrainVariant::oblivious_feature: return "oblivious_feature";
        case TrainVariant::full_pixel: return "full_pixel";
    }
    return "?";
}
inline std::string to_string(TargetStrategy s) {
    switch (s) {
        case TargetStrategy::natural: return "natural";
        case TargetStrategy::standard_at: return "standard_at";
        case TargetStrategy::trades: return "trades";
    }
    return "?";
}
inline std::string to_string(Objective o) {
    switch (o) {
        case Objective::cross_entropy: return "cross_entropy";
        case Objective::dlr: return "dlr";
        case Objective::feature_distance: return "feature_distance";
    }
    return "?";
}
inline std::string to_string(Scope s) {
    return s == Scope::oblivious ? "oblivious" : "full";
}
inline std::string to_string(FsmReference r) {
    return r == FsmReference::preprocessed_natural ? "preprocessed_natural"
                                                   : "raw_natural";
}

template <class E>
E enum_from(const std::string& s, const std::string& key,
            std::initializer_list<std::pair<const char*, E>> table) {
    for (const auto& [name, value] : table)
        if (s == name) return value;
    std::string allowed;
    for (const auto& [name, value] : table)
        allowed += std::string(allowed.empty() ? "" : ", ") + name;
    throw ConfigError(key + ": unknown value '" + s + "' (allowed: " + allowed +
                      ")");
}

inline void check_keys(const json& j, const std::set<std::string>& allowed,
                       const std::string& path) {
    if (!j.is_object())
        throw ConfigError(path + ": expected an object");
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!allowed.count(it.key()))
            throw ConfigError(path + ": unknown key '" + it.key() + "'");
}

template <class T>
T get_or(const json& j, const std::string& key, const T& dflt,
         const std::string& path) {
    if (!j.contains(key)) return dflt;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(path + "." + key + ": type mismatch");
    }
}

// ---------------------------------------------------------------------------
// per-section parse / serialize

inline PerturbationBudget parse_budget(const json& j, const std::string& path,
                                       const PerturbationBudget& dflt = {}) {
    check_keys(j, {"epsilon", "step_size", "num_steps", "random_start"}, path);
    PerturbationBudget b;
    b.epsilon = float(get_or<double>(j, "epsilon", dflt.epsilon, path));
    b.step_size = float(get_or<double>(j, "step_size", dflt.step_size, path));
    b.num_steps = get_or<int>(j, "num_steps", dflt.num_steps, path);
    b.random_start = get_or<bool>(j, "random_start", dflt.random_start, path);
    if (b.epsilon < 0.0f)
        throw ConfigError(path + ".epsilon: must be >= 0");
    if (b.step_size <= 0.0f)
        throw ConfigError(path + ".step_size: must be > 0");
    if (b.num_steps < 0)
        throw ConfigError(path + ".num_steps: must be >= 0");
    return b;
}

inline json budget_json(const PerturbationBudget& b) {
    return json{{"epsilon", double(b.epsilon)},
                {"step_size", double(b.step_size)},
                {"num_steps", b.num_steps},
                {"random_start", b.random_start}};
}

inline AttackSpec parse_attack(const json& j, const std::string& path) {
    check_keys(j, {"id", "objective", "scope", "bpda", "budget", "tap"}, path);
    AttackSpec a;
    a.id = get_or<std::string>(j, "id", "attack", path);
    a.objective = enum_from<Objective>(
        get_or<std::string>(j, "objective", "cross_entropy", path),
        path + ".objective",
        {{"cross_entropy", Objective::cross_entropy},
         {"dlr", Objective::dlr},
         {"feature_distance", Objective::feature_distance}});
    a.scope = enum_from<Scope>(get_or<std::string>(j, "scope", "full", path),
                               path + ".scope",
                               {{"oblivious", Scope::oblivious},
                                {"full", Scope::full}});
    a.bpda = get_or<bool>(j, "bpda", false, path);
    if (j.contains("budget"))
        a.budget = parse_budget(j.at("budget"), path + ".budget");
    if (j.contains("tap")) {
        FeatureTap tap;
        tap.layer = get_or<std::string>(j, "tap", "stage3", path);
        tap.host = a.scope == Scope::full ? FeatureTap::Host::full
                                          : FeatureTap::Host::target;
        a.tap = tap;
    } else if (a.objective == Objective::feature_distance) {
        a.tap = FeatureTap{FeatureTap::Host::full, "stage3"};
    }
    a.validate();
    return a;
}

inline json attack_json(const AttackSpec& a) {
    json j{{"id", a.id},
           {"objective", to_string(a.objective)},
           {"scope", to_string(a.scope)},
           {"bpda", a.bpda},
           {"budget", budget_json(a.budget)}};
    if (a.tap) j["tap"] = a.tap->layer;
    return j;
}

inline DatasetSpec parse_dataset(const json& j, const std::string& path) {
    check_keys(j,
               {"source", "k", "channels", "height", "width", "train_per_class",
                "test_per_class", "noise_sigma", "path", "augment"},
               path);
    DatasetSpec d;
    d.source = enum_from<DataSource>(
        get_or<std::string>(j, "source", "synthetic", path), path + ".source",
        {{"synthetic", DataSource::synthetic},
         {"packed_binary", DataSource::packed_binary},
         {"image_directory", DataSource::image_directory}});
    d.num_classes = get_or<int>(j, "k", d.num_classes, path);
    d.channels = get_or<int>(j, "channels", d.channels, path);
    d.height = get_or<int>(j, "height", d.height, path);
    d.width = get_or<int>(j, "width", d.width, path);
    d.train_per_class = get_or<int>(j, "train_per_class", d.train_per_class, path);
    d.test_per_class = get_or<int>(j, "test_per_class", d.test_per_class, path);
    d.noise_sigma = get_or<double>(j, "noise_sigma", d.noise_sigma, path);
    d.path = get_or<std::string>(j, "path", d.path, path);
    if (j.contains("augment")) {
        const json& a = j.at("augment");
        check_keys(a, {"enabled", "pad", "crop", "horizontal_flip"},
                   path + ".augment");
        d.augment.enabled = get_or<bool>(a, "enabled", d.augment.enabled, path);
        d.augment.pad = get_or<int>(a, "pad", d.augment.pad, path);
        d.augment.crop = get_or<int>(a, "crop", d.augment.crop, path);
        d.augment.horizontal_flip =
            get_or<bool>(a, "horizontal_flip", d.augment.horizontal_flip, path);
    }
    d.validate();
    return d;
}

inline json dataset_json(const DatasetSpec& d) {
    return json{{"source", to_string(d.source)},
                {"k", d.num_classes},
                {"channels", d.channels},
                {"height", d.height},
                {"width", d.width},
                {"train_per_class", d.train_per_class},
                {"test_per_class", d.test_per_class},
                {"noise_sigma", d.noise_sigma},
                {"path", d.path},
                {"augment", json{{"enabled", d.augment.enabled},
                                 {"pad", d.augment.pad},
                                 {"crop", d.augment.crop},
                                 {"horizontal_flip", d.augment.horizontal_flip}}}};
}

inline TrainConfig parse_train(const json& j, const std::string& path) {
    check_keys(j,
               {"epochs", "batch_size", "optimizer", "budget", "weights", "tap",
                "seed", "variant", "strategy", "trades_lambda", "target_width",
                "pre_width", "pre_blocks", "use_pixel", "use_bce", "use_fsm",
                "fsm_reference"},
               path);
    TrainConfig t;
    t.epochs = get_or<int>(j, "epochs", t.epochs, path);
    t.batch_size = get_or<int>(j, "batch_size", t.batch_size, path);
    if (j.contains("optimizer")) {
        const json& o = j.at("optimizer");
        check_keys(o,
                   {"momentum", "weight_decay", "initial_lr", "lr_drop_epochs",
                    "lr_drop_factor"},
                   path + ".optimizer");
        t.optimizer.momentum =
            get_or<double>(o, "momentum", t.optimizer.momentum, path);
        t.optimizer.weight_decay =
            get_or<double>(o, "weight_decay", t.optimizer.weight_decay, path);
        t.optimizer.initial_lr =
            get_or<double>(o, "initial_lr", t.optimizer.initial_lr, path);
        t.optimizer.lr_drop_epochs = get_or<std::vector<int>>(
            o, "lr_drop_epochs", t.optimizer.lr_drop_epochs, path);
        t.optimizer.lr_drop_factor =
            get_or<double>(o, "lr_drop_factor", t.optimizer.lr_drop_factor, path);
    }
    if (j.contains("budget"))
        t.budget = parse_budget(j.at("budget"), path + ".budget", t.budget);
    if (j.contains("weights")) {
        const json& w = j.at("weights");
        check_keys(w, {"alpha", "beta"}, path + ".weights");
        t.weights.alpha = get_or<double>(w, "alpha", t.weights.alpha, path);
        t.weights.beta = get_or<double>(w, "beta", t.weights.beta, path);
    }
    t.tap = get_or<std::string>(j, "tap", t.tap, path);
    t.seed = get_or<std::uint64_t>(j, "seed", t.seed, path);
    t.variant = enum_from<TrainVariant>(
        get_or<std::string>(j, "variant", "jatp", path), path + ".variant",
        {{"jatp", TrainVariant::jatp},
         {"jatp_prime", TrainVariant::jatp_prime},
         {"oblivious_pixel", TrainVariant::oblivious_pixel},
         {"oblivious_feature", TrainVariant::oblivious_feature},
         {"full_pixel", TrainVariant::full_pixel}});
    t.strategy = enum_from<TargetStrategy>(
        get_or<std::string>(j, "strategy", "trades", path), path + ".strategy",
        {{"natural", TargetStrategy::natural},
         {"standard_at", TargetStrategy::standard_at},
         {"trades", TargetStrategy::trades}});
    t.trades_lambda = get_or<double>(j, "trades_lambda", t.trades_lambda, path);
    t.target_width = get_or<int>(j, "target_width", t.target_width, path);
    t.pre_width = get_or<int>(j, "pre_width", t.pre_width, path);
    t.pre_blocks = get_or<int>(j, "pre_blocks", t.pre_blocks, path);
    t.use_pixel = get_or<bool>(j, "use_pixel", t.use_pixel, path);
    t.use_bce = get_or<bool>(j, "use_bce", t.use_bce, path);
    t.use_fsm = get_or<bool>(j, "use_fsm", t.use_fsm, path);
    t.fsm_reference = enum_from<FsmReference>(
        get_or<std::string>(j, "fsm_reference", "preprocessed_natural", path),
        path + ".fsm_reference",
        {{"preprocessed_natural", FsmReference::preprocessed_natural},
         {"raw_natural", FsmReference::raw_natural}});
    t.validate();
    return t;
}

inline json train_json(const TrainConfig& t) {
    return json{
        {"epochs", t.epochs},
        {"batch_size", t.batch_size},
        {"optimizer", json{{"momentum", t.optimizer.momentum},
                           {"weight_decay", t.optimizer.weight_decay},
                           {"initial_lr", t.optimizer.initial_lr},
                           {"lr_drop_epochs", t.optimizer.lr_drop_epochs},
                           {"lr_drop_factor", t.optimizer.lr_drop_factor}}},
        {"budget", budget_json(t.budget)},
        {"weights", json{{"alpha", t.weights.alpha}, {"beta", t.weights.beta}}},
        {"tap", t.tap},
        {"seed", t.seed},
        {"variant", to_string(t.variant)},
        {"strategy", to_string(t.strategy)},
        {"trades_lambda", t.trades_lambda},
        {"target_width", t.target_width},
        {"pre_width", t.pre_width},
        {"pre_blocks", t.pre_blocks},
        {"use_pixel", t.use_pixel},
        {"use_bce", t.use_bce},
        {"use_fsm", t.use_fsm},
        {"fsm_reference", to_string(t.fsm_reference)}};
}

}  // namespace cfg

inline RunConfig parse_config(const std::string& text) {
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded())
        throw ConfigError("config: not valid JSON");
    cfg::check_keys(j, {"seed", "out_dir", "dataset", "train", "eval"}, "config");
    RunConfig c;
    c.seed = cfg::get_or<std::uint64_t>(j, "seed", c.seed, "config");
    c.out_dir = cfg::get_or<std::string>(j, "out_dir", c.out_dir, "config");
    if (j.contains("dataset"))
        c.dataset = cfg::parse_dataset(j.at("dataset"), "dataset");
    if (j.contains("train")) c.train = cfg::parse_train(j.at("train"), "train");
    if (j.contains("eval")) {
        const json& e = j.at("eval");
        cfg::check_keys(e, {"split", "subsample", "suite"}, "eval");
        c.eval.split = cfg::get_or<std::string>(e, "split", c.eval.split, "eval");
        c.eval.subsample =
            cfg::get_or<int>(e, "subsample", c.eval.subsample, "eval");
        if (e.contains("suite")) {
            if (!e.at("suite").is_array())
                throw ConfigError("eval.suite: expected an array");
            int i = 0;
            for (const auto& a : e.at("suite"))
                c.eval.suite.push_back(cfg::parse_attack(
                    a, "eval.suite[" + std::to_string(i++) + "]"));
        }
    }
    return c;
}

inline std::string serialize_config(const RunConfig& c) {
    json suite = json::array();
    for (const auto& a : c.eval.suite) suite.push_back(cfg::attack_json(a));
    json j{{"seed", c.seed},
           {"out_dir", c.out_dir},
           {"dataset", cfg::dataset_json(c.dataset)},
           {"train", cfg::train_json(c.train)},
           {"eval", json{{"split", c.eval.split},
                         {"subsample", c.eval.subsample},
                         {"suite", suite}}}};
    return j.dump(2);
}

inline std::string config_digest(const RunConfig& c) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx",
                  (unsigned long long)fnv1a64(serialize_config(c)));
    return buf;
}

// --override key.path=value, highest precedence. Values parse as JSON when
// possible, else as strings.
inline json apply_override(json j, const std::string& kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
        throw ConfigError("override '" + kv + "': expected KEY=VALUE");
    const std::string keypath = kv.substr(0, eq);
    const std::string valtext = kv.substr(eq + 1);
    json value = json::parse(valtext, nullptr, false);
    if (value.is_discarded()) value = valtext;
    json* cur = &j;
    std::size_t start = 0;
    while (true) {
        const auto dot = keypath.find('.', start);
        const std::string key = keypath.substr(
            start, dot == std::string::npos ? std::string::npos : dot - start);
        if (key.empty())
            throw ConfigError("override '" + kv + "': empty key segment");
        if (dot == std::string::npos) {
            (*cur)[key] = value;
            break;
        }
        cur = &((*cur)[key]);
        start = dot + 1;
    }
    return j;
}

}  // namespace jatp
