// Command-line entry point: train-target, train-defense, attack, eval,
// report, selftest. Exit codes: 0 success, 1 validation/usage error,
// 2 runtime failure.

#include <CLI11.hpp>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "jatp/jatp.hpp"

namespace fs = std::filesystem;
using namespace jatp;
using nlohmann::json;

namespace {

struct CommonArgs {
    std::string config_path;
    std::string out_dir;
    std::vector<std::string> overrides;
    std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "config file (JSON)");
    cmd->add_option("--out", args.out_dir, "output directory");
    cmd->add_option("--override", args.overrides,
                    "KEY.PATH=VALUE config override (repeatable)");
    cmd->add_option("--seed", args.seed, "global seed (overrides config)");
}

// precedence: --override / --seed / --out > config file > defaults
RunConfig resolve_config(const CommonArgs& args) {
    json j;
    if (!args.config_path.empty()) {
        std::ifstream f(args.config_path);
        if (!f)
            throw ConfigError("cannot open config file '" + args.config_path +
                              "'");
        std::string text((std::istreambuf_iterator<char>(f)),
                         std::istreambuf_iterator<char>());
        j = json::parse(text, nullptr, false);
        if (j.is_discarded())
            throw ConfigError("config file '" + args.config_path +
                              "' is not valid JSON");
    } else {
        j = json::object();
    }
    for (const auto& kv : args.overrides) j = apply_override(j, kv);
    RunConfig c = parse_config(j.dump());
    if (args.seed) c.seed = *args.seed;
    if (!args.out_dir.empty()) {
        c.out_dir = args.out_dir;
    } else if (args.config_path.empty() && !j.contains("out_dir")) {
        if (const char* env = std::getenv("JATP_OUT_DIR")) c.out_dir = env;
    }
    c.train.seed = c.seed;
    return c;
}

class Manifest {
public:
    Manifest(const std::string& command, const RunConfig& cfg)
        : dir_(cfg.out_dir), start_(std::chrono::steady_clock::now()) {
        fs::create_directories(dir_);
        j_["schema_version"] = kReportSchemaVersion;
        j_["command"] = command;
        j_["config_digest"] = config_digest(cfg);
        j_["seed"] = cfg.seed;
        j_["artifacts"] = json::array();
    }

    std::string path(const std::string& name) {
        const std::string p = (fs::path(dir_) / name).string();
        j_["artifacts"].push_back(p);
        return p;
    }

    void set(const std::string& key, const json& value) { j_[key] = value; }

    void write() {
        const auto elapsed = std::chrono::duration<double>(
                                 std::chrono::steady_clock::now() - start_)
                                 .count();
        j_["wall_clock_seconds"] = elapsed;
        std::ofstream f((fs::path(dir_) / "manifest.json").string(),
                        std::ios::trunc);
        f << j_.dump(2) << "\n";
    }

private:
    std::string dir_;
    std::chrono::steady_clock::time_point start_;
    json j_;
};

TargetModel load_target_or_fail(const std::string& path) {
    if (path.empty())
        throw ConfigError("--target PATH is required for this command");
    return ckpt::load_target(path);
}

int cmd_train_target(const CommonArgs& args) {
    RunConfig cfg = resolve_config(args);
    auto splits = load_dataset(cfg.dataset, cfg.seed);
    Manifest manifest("train-target", cfg);
    manifest.set("dataset_digest", splits.train.digest());

    auto res = train_target(splits.train, splits.test, cfg.train,
                            cfg.train.strategy, cfg.dataset.augment);
    res.model.meta.config_digest = config_digest(cfg);
    ckpt::save_target(res.model, manifest.path("target.jatp"));
    write_train_log_jsonl(res.log, manifest.path("train_log.jsonl"));
    {
        std::ofstream f(manifest.path("config.json"), std::ios::trunc);
        f << serialize_config(cfg) << "\n";
    }
    manifest.set("aborted", res.aborted);
    manifest.set("clean_accuracy", res.model.meta.clean_accuracy);
    manifest.set("robust_accuracy", res.model.meta.robust_accuracy);
    manifest.write();
    if (res.aborted) {
        std::cerr << "error: NumericError: training diverged; last good epoch "
                  << res.model.meta.epoch << " was checkpointed\n";
        return 2;
    }
    return 0;
}

int cmd_train_defense(const CommonArgs& args, const std::string& target_path,
                      const std::string& init_path) {
    RunConfig cfg = resolve_config(args);
    TargetModel tgt = load_target_or_fail(target_path);
    tgt.set_frozen(true);
    auto splits = load_dataset(cfg.dataset, cfg.seed);
    Manifest manifest("train-defense", cfg);
    manifest.set("dataset_digest", splits.train.digest());
    manifest.set("variant", cfg::to_string(cfg.train.variant));

    std::optional<Preprocessor> init;
    if (!init_path.empty()) init = ckpt::load_preprocessor(init_path);
    auto res = train_defense(tgt, splits.train, cfg.train,
                             init ? &*init : nullptr);
    res.pre.meta.config_digest = config_digest(cfg);
    ckpt::save_preprocessor(res.pre, manifest.path("preprocessor.jatp"));
    write_train_log_jsonl(res.log, manifest.path("train_log.jsonl"));
    {
        std::ofstream f(manifest.path("config.json"), std::ios::trunc);
        f << serialize_config(cfg) << "\n";
    }
    manifest.set("aborted", res.aborted);
    manifest.write();
    if (res.aborted) {
        std::cerr << "error: NumericError: training diverged; last good epoch "
                  << res.pre.meta.epoch << " was checkpointed\n";
        return 2;
    }
    return 0;
}

// adversarial batch container: "JADV", u32 n/c/h/w, int32 labels,
// float32 pixels (all little-endian)
void write_adv_batch(const std::string& path, const ImageBatch& b) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    f.write("JADV", 4);
    const std::uint32_t dims[4] = {std::uint32_t(b.pixels.dim(0)),
                                   std::uint32_t(b.pixels.dim(1)),
                                   std::uint32_t(b.pixels.dim(2)),
                                   std::uint32_t(b.pixels.dim(3))};
    f.write(reinterpret_cast<const char*>(dims), sizeof dims);
    static_assert(sizeof(int) == 4);
    f.write(reinterpret_cast<const char*>(b.labels.data()),
            std::streamsize(b.labels.size() * 4));
    f.write(reinterpret_cast<const char*>(b.pixels.data()),
            std::streamsize(b.pixels.size() * 4));
    if (!f) throw ReportError("short write to '" + path + "'");
}

int cmd_attack(const CommonArgs& args, const std::string& target_path,
               const std::string& defense_path) {
    RunConfig cfg = resolve_config(args);
    if (cfg.eval.suite.empty())
        throw ConfigError("attack: eval.suite is empty; nothing to craft");
    TargetModel tgt = load_target_or_fail(target_path);
    tgt.set_frozen(true);
    std::optional<Preprocessor> pre;
    if (!defense_path.empty()) pre = ckpt::load_preprocessor(defense_path);

    auto splits = load_dataset(cfg.dataset, cfg.seed);
    const Dataset& split =
        cfg.eval.split == "train" ? splits.train : splits.test;
    ImageBatch clean = eval_split_batch(split, cfg.eval, cfg.seed);

    Manifest manifest("attack", cfg);
    manifest.set("dataset_digest", split.digest());
    for (const auto& spec : cfg.eval.suite) {
        Rng rng(derive_seed(cfg.seed, "eval-attack-" + spec.id));
        ImageBatch adv = craft(spec, pre ? &*pre : nullptr, tgt, clean, rng);
        audit_budget(adv.pixels, clean.pixels, spec.budget.epsilon, spec.id);
        write_adv_batch(manifest.path("adv_" + spec.id + ".bin"), adv);
    }
    manifest.write();
    return 0;
}

int cmd_eval(const CommonArgs& args, const std::string& target_path,
             const std::string& defense_path, const std::string& defense_id) {
    RunConfig cfg = resolve_config(args);
    if (cfg.eval.suite.empty())
        throw ConfigError("eval: eval.suite is empty; nothing to run");
    TargetModel tgt = load_target_or_fail(target_path);
    tgt.set_frozen(true);
    std::optional<Preprocessor> pre;
    if (!defense_path.empty()) pre = ckpt::load_preprocessor(defense_path);

    auto splits = load_dataset(cfg.dataset, cfg.seed);
    const Dataset& split =
        cfg.eval.split == "train" ? splits.train : splits.test;

    // a defended run also evaluates the bare-target rows for the oblivious
    // attacks so that degradation deltas are computable from one report
    EvalReport rep;
    rep.seed = cfg.seed;
    rep.config_digest = config_digest(cfg);
    std::vector<AttackSpec> oblivious;
    for (const auto& s : cfg.eval.suite)
        if (s.scope == Scope::oblivious || !pre) oblivious.push_back(s);
    if (!oblivious.empty()) {
        auto base = evaluate(oblivious, nullptr, tgt, split, cfg.eval,
                             cfg.seed, "none");
        rep.rows.insert(rep.rows.end(), base.rows.begin(), base.rows.end());
    }
    if (pre) {
        auto defended =
            evaluate(cfg.eval.suite, &*pre, tgt, split, cfg.eval, cfg.seed,
                     defense_id.empty() ? "defense" : defense_id);
        rep.rows.insert(rep.rows.end(), defended.rows.begin(),
                        defended.rows.end());
        ImageBatch clean = eval_split_batch(split, cfg.eval, cfg.seed);
        for (const auto& s : cfg.eval.suite)
            if (s.scope == Scope::full) {
                rep.distortion = distortion_stats(*pre, tgt, s, clean, cfg.seed);
                break;
            }
    }
    // deltas only make sense for attacks that also ran against the bare
    // target; full-scope attacks have no "none" row by construction
    EvalReport with_baseline = rep;
    with_baseline.rows.clear();
    for (const auto& r : rep.rows)
        for (const auto& b : rep.rows)
            if (b.defense_id == "none" && b.attack_id == r.attack_id) {
                with_baseline.rows.push_back(r);
                break;
            }
    if (!with_baseline.rows.empty())
        rep.deltas = degradation_delta(with_baseline);

    Manifest manifest("eval", cfg);
    manifest.set("dataset_digest", split.digest());
    write_report_jsonl(rep, manifest.path("report.jsonl"));
    write_report_csv(rep, manifest.path("report.csv"));
    manifest.write();
    return 0;
}

// re-render the CSV table from a stored JSONL report
int cmd_report(const CommonArgs& args, const std::string& in_path) {
    RunConfig cfg = resolve_config(args);
    std::ifstream f(in_path);
    if (!f) throw ReportError("cannot open report '" + in_path + "'");
    EvalReport rep;
    std::string line;
    bool first = true;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded())
            throw ReportError("report '" + in_path + "': bad JSONL line");
        if (first) {
            first = false;
            if (j.value("kind", "") != "eval_report")
                throw ReportError("report '" + in_path +
                                  "': not an eval report");
            rep.seed = j.value("seed", std::uint64_t(0));
            rep.config_digest = j.value("config_digest", std::string());
            continue;
        }
        if (j.value("record", "") != "row") continue;
        EvalRow r;
        r.defense_id = j.at("defense_id");
        r.target_id = j.at("target_id");
        r.attack_id = j.at("attack_id");
        r.clean_accuracy = j.at("clean_accuracy");
        r.robust_accuracy = j.at("robust_accuracy");
        r.examples = j.at("examples");
        r.seed = j.at("seed");
        rep.rows.push_back(r);
    }
    Manifest manifest("report", cfg);
    write_report_csv(rep, manifest.path("report.csv"));
    manifest.write();
    return 0;
}

int cmd_selftest() {
    int failures = 0;
    auto check = [&](const char* name, bool ok) {
        std::printf("%s: %s\n", ok ? "ok" : "FAIL", name);
        failures += !ok;
    };

    // closed-form loss oracles
    {
        Tensor<float> u(Shape{1, 10}, 0.1f);
        check("bce uniform K=10",
              std::abs(bce_loss(u, {0}) - 2.407946) < 1e-5);
        Tensor<float> f1(Shape{1, 2}, std::vector<float>{1, 2});
        Tensor<float> f2(Shape{1, 2}, std::vector<float>{1, 4});
        check("fsm (1,2) vs (1,4)", fsm_loss(f1, f2) == 2.0);
        Tensor<float> a(Shape{1, 1, 1, 2}, std::vector<float>{0.3f, 0.4f});
        Tensor<float> b(Shape{1, 1, 1, 2});
        check("pixel (0.3,0.4)", std::abs(pixel_loss(a, b) - 0.5) < 1e-6);
        check("combined total", jatp_total(1.0, 0.5, 3.0) == 2.5);
    }

    // gradient check on a tiny double-precision network
    {
        nn::MiniResNet<double> net(2, 4, 17, 1);
        Rng rng(18);
        auto x = ag::leaf(
            Tensor<double>::uniform(Shape{2, 1, 8, 8}, rng, 0.05, 0.95), true);
        std::vector<int> labels{1, 3};
        auto build = [&] {
            return ag::mean(ag::cross_entropy_per_example(net.forward(x), labels));
        };
        auto root = build();
        ag::backward(root);
        double max_rel = 0.0;
        const double h = 1e-4;
        for (int t = 0; t < 20; ++t) {
            auto& p = net.params().param(rng.below(net.params().count()));
            const std::size_t i = rng.below(p->value.size());
            const double keep = p->value[i];
            p->value[i] = keep + h;
            const double fp = build()->value[0];
            p->value[i] = keep - h;
            const double fm = build()->value[0];
            p->value[i] = keep;
            const double num = (fp - fm) / (2 * h);
            max_rel = std::max(max_rel,
                               std::abs(p->grad[i] - num) /
                                   std::max({1.0, std::abs(num),
                                             std::abs(double(p->grad[i]))}));
        }
        check("gradient check", max_rel <= 1e-4);
    }

    // attack constraint audit on the synthetic generator
    {
        DatasetSpec spec;
        spec.num_classes = 4;
        spec.height = spec.width = 8;
        spec.train_per_class = 8;
        spec.test_per_class = 8;
        auto s = load_dataset(spec, 3);
        TargetModel tgt(2, 4, 4);
        Preprocessor pre(2, 1, 5);
        AttackSpec spec_full;
        spec_full.scope = Scope::full;
        spec_full.budget.num_steps = 5;
        Rng rng(6);
        ImageBatch clean = s.test.head(s.test.size());
        auto adv = craft(spec_full, &pre, tgt, clean, rng);
        bool ok = true;
        const float tol = spec_full.budget.epsilon + 1e-6f;
        for (std::size_t i = 0; i < adv.pixels.size(); ++i)
            ok &= adv.pixels[i] >= 0.0f && adv.pixels[i] <= 1.0f &&
                  std::abs(adv.pixels[i] - clean.pixels[i]) <= tol;
        check("attack constraint audit", ok);

        AttackSpec eps0 = spec_full;
        eps0.budget.epsilon = 0.0f;
        Rng rng2(6);
        auto same = craft(eps0, &pre, tgt, clean, rng2);
        bool exact = true;
        for (std::size_t i = 0; i < same.pixels.size(); ++i)
            exact &= same.pixels[i] == clean.pixels[i];
        check("epsilon 0 identity", exact);
    }

    std::printf("%s\n", failures ? "selftest FAILED" : "selftest passed");
    return failures ? 2 : 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"adversarial preprocessing defense toolkit"};
    app.require_subcommand(1);

    CommonArgs args;
    std::string target_path, defense_path, init_path, in_path, defense_id;

    auto* tt = app.add_subcommand("train-target", "pre-train a classifier");
    add_common(tt, args);

    auto* td = app.add_subcommand("train-defense", "train a preprocessor");
    add_common(td, args);
    td->add_option("--target", target_path, "target checkpoint")->required();
    td->add_option("--init", init_path, "warm-start preprocessor checkpoint");

    auto* at = app.add_subcommand("attack", "craft and export adversarial batches");
    add_common(at, args);
    at->add_option("--target", target_path, "target checkpoint")->required();
    at->add_option("--defense", defense_path, "preprocessor checkpoint");

    auto* ev = app.add_subcommand("eval", "run the attack suite and report");
    add_common(ev, args);
    ev->add_option("--target", target_path, "target checkpoint")->required();
    ev->add_option("--defense", defense_path, "preprocessor checkpoint");
    ev->add_option("--defense-id", defense_id, "row label for the defense");

    auto* rp = app.add_subcommand("report", "render CSV from a stored report");
    add_common(rp, args);
    rp->add_option("--in", in_path, "report.jsonl path")->required();

    app.add_subcommand("selftest", "run built-in invariant suites");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: ArgumentError: " << e.what() << "\n";
        return 1;
    }

    try {
        if (tt->parsed()) return cmd_train_target(args);
        if (td->parsed()) return cmd_train_defense(args, target_path, init_path);
        if (at->parsed()) return cmd_attack(args, target_path, defense_path);
        if (ev->parsed())
            return cmd_eval(args, target_path, defense_path, defense_id);
        if (rp->parsed()) return cmd_report(args, in_path);
        return cmd_selftest();
    } catch (const ConfigError& e) {
        std::cerr << "error: ConfigError: " << e.what() << "\n";
        return 1;
    } catch (const ArgumentError& e) {
        std::cerr << "error: ArgumentError: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: RuntimeFailure: " << e.what() << "\n";
        return 2;
    }
}
