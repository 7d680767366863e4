#pragma once

#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "jatp/attacks.hpp"
#include "jatp/config.hpp"
#include "jatp/datahub.hpp"
#include "jatp/training.hpp"

namespace jatp {

inline constexpr int kReportSchemaVersion = 1;

// Independent re-check that every crafted example satisfies the budget and
// stays a valid image. A violation is a bug in the attack, so it fails the
// run rather than skewing the numbers.
inline void audit_budget(const Tensor<float>& adv, const Tensor<float>& clean,
                         float epsilon, const std::string& attack_id) {
    if (!adv.same_shape(clean))
        throw ReportError("audit '" + attack_id + "': shape mismatch");
    const double tol = double(epsilon) + 1e-6;
    for (std::size_t i = 0; i < adv.size(); ++i) {
        const double v = double(adv[i]);
        if (!(v >= 0.0 && v <= 1.0))
            throw ReportError("audit '" + attack_id + "': pixel " +
                              std::to_string(i) + " outside [0,1]: " +
                              std::to_string(v));
        const double d = std::abs(v - double(clean[i]));
        if (d > tol)
            throw ReportError("audit '" + attack_id + "': pixel " +
                              std::to_string(i) + " exceeds budget: |delta| = " +
                              std::to_string(d) + " > " + std::to_string(tol));
    }
}

// mean over examples of the per-example L1 distance (sum of |pixel diff|)
inline double mean_l1(const Tensor<float>& a, const Tensor<float>& b) {
    if (!a.same_shape(b))
        throw ArgumentError("mean_l1: shape mismatch");
    const int n = a.dim(0);
    const std::size_t per = a.size() / std::size_t(n);
    double total = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        total += std::abs(double(a[i]) - double(b[i]));
    return total / double(n);
}

struct EvalRow {
    std::string defense_id;  // "none" for the bare target
    std::string target_id;
    std::string attack_id;
    double clean_accuracy = 0.0;
    double robust_accuracy = 0.0;
    int examples = 0;
    std::uint64_t seed = 0;
};

struct EvalDelta {
    std::string defense_id;
    std::string attack_id;
    double degradation = 0.0;  // robust(none) - robust(defense); positive = worse
};

struct DistortionRecord {
    double adversarial_vs_natural = 0.0;   // mean L1 of x~ vs x
    double preprocessed_vs_natural = 0.0;  // mean L1 of P(x~) vs x
};

struct EvalReport {
    std::uint64_t seed = 0;
    std::string config_digest;
    std::vector<EvalRow> rows;
    std::vector<EvalDelta> deltas;
    std::optional<DistortionRecord> distortion;
};

// Run one attack against the bare target (pre == nullptr) or the composed
// model, classify through the same model, and report one row.
inline EvalRow evaluate_attack(const AttackSpec& spec, const Preprocessor* pre,
                               const TargetModel& tgt, const ImageBatch& clean,
                               std::uint64_t seed,
                               const std::string& defense_id) {
    EvalRow row;
    row.defense_id = defense_id;
    row.target_id = tgt.arch_id();
    row.attack_id = spec.id;
    row.examples = clean.batch_size();
    row.seed = seed;

    Rng rng(derive_seed(seed, "eval-attack-" + spec.id));
    ImageBatch adv = craft(spec, pre, tgt, clean, rng);
    audit_budget(adv.pixels, clean.pixels, spec.budget.epsilon, spec.id);

    std::vector<int> clean_pred, adv_pred;
    if (pre) {
        FullModel full(const_cast<Preprocessor&>(*pre),
                       const_cast<TargetModel&>(tgt));
        clean_pred = classify(full, clean);
        adv_pred = classify(full, adv);
    } else {
        clean_pred = classify(tgt, clean);
        adv_pred = classify(tgt, adv);
    }
    int cc = 0, rc = 0;
    for (std::size_t i = 0; i < clean.labels.size(); ++i) {
        cc += clean_pred[i] == clean.labels[i];
        rc += adv_pred[i] == clean.labels[i];
    }
    row.clean_accuracy = 100.0 * double(cc) / double(row.examples);
    row.robust_accuracy = 100.0 * double(rc) / double(row.examples);
    return row;
}

inline ImageBatch eval_split_batch(const Dataset& split, const EvalConfig& cfg,
                                   std::uint64_t seed) {
    return cfg.subsample > 0 && cfg.subsample < split.size()
               ? split.select(
                     subsample_indices(split.size(), cfg.subsample, seed))
               : split.head(split.size());
}

inline EvalReport evaluate(const std::vector<AttackSpec>& suite,
                           const Preprocessor* pre, const TargetModel& tgt,
                           const Dataset& split, const EvalConfig& cfg,
                           std::uint64_t seed,
                           const std::string& defense_id = "") {
    ImageBatch batch = eval_split_batch(split, cfg, seed);
    EvalReport rep;
    rep.seed = seed;
    const std::string id = !defense_id.empty() ? defense_id
                           : pre               ? "defense"
                                               : "none";
    for (const auto& spec : suite) {
        if (spec.scope == Scope::full && pre == nullptr)
            throw ConfigError("evaluate: attack '" + spec.id +
                              "' needs a defense (full scope)");
        rep.rows.push_back(
            evaluate_attack(spec, pre, tgt, batch, seed, id));
    }
    return rep;
}

// delta per (defense, attack) against the report's "none" row for the same
// attack; positive delta = the defense degrades robustness.
inline std::vector<EvalDelta> degradation_delta(const EvalReport& rep) {
    std::map<std::string, double> baseline;
    for (const auto& r : rep.rows)
        if (r.defense_id == "none") baseline[r.attack_id] = r.robust_accuracy;
    std::vector<EvalDelta> out;
    for (const auto& r : rep.rows) {
        auto it = baseline.find(r.attack_id);
        if (it == baseline.end())
            throw ReportError("degradation_delta: no baseline (defense 'none') "
                              "row for attack '" + r.attack_id + "'");
        out.push_back({r.defense_id, r.attack_id,
                       it->second - r.robust_accuracy});
    }
    return out;
}

// 100 * (1 - robust_correct / clean_correct), over the clean-correct subset.
inline double fooling_rate(const std::vector<int>& clean_pred,
                           const std::vector<int>& adv_pred,
                           const std::vector<int>& labels) {
    if (clean_pred.size() != labels.size() || adv_pred.size() != labels.size())
        throw ArgumentError("fooling_rate: size mismatch");
    int clean_correct = 0, still_correct = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (clean_pred[i] == labels[i]) {
            ++clean_correct;
            if (adv_pred[i] == labels[i]) ++still_correct;
        }
    }
    if (clean_correct == 0)
        throw ReportError(
            "fooling_rate: no correctly classified clean examples");
    return 100.0 * (1.0 - double(still_correct) / double(clean_correct));
}

inline double fooling_rate(const Preprocessor& pre, const TargetModel& tgt,
                           const AttackSpec& spec, const ImageBatch& clean,
                           std::uint64_t seed) {
    if (spec.scope != Scope::full)
        throw ConfigError("fooling_rate: attack must be full scope");
    Rng rng(derive_seed(seed, "eval-attack-" + spec.id));
    ImageBatch adv = craft(spec, &pre, tgt, clean, rng);
    audit_budget(adv.pixels, clean.pixels, spec.budget.epsilon, spec.id);
    FullModel full(const_cast<Preprocessor&>(pre),
                   const_cast<TargetModel&>(tgt));
    return fooling_rate(classify(full, clean), classify(full, adv),
                        clean.labels);
}

inline DistortionRecord distortion_stats(const Preprocessor& pre,
                                         const TargetModel& tgt,
                                         const AttackSpec& spec,
                                         const ImageBatch& clean,
                                         std::uint64_t seed) {
    Rng rng(derive_seed(seed, "eval-attack-" + spec.id));
    ImageBatch adv = craft(spec, &pre, tgt, clean, rng);
    audit_budget(adv.pixels, clean.pixels, spec.budget.epsilon, spec.id);
    DistortionRecord rec;
    rec.adversarial_vs_natural = mean_l1(adv.pixels, clean.pixels);
    rec.preprocessed_vs_natural = mean_l1(pre.apply(adv.pixels), clean.pixels);
    return rec;
}

// robust accuracy of defense `dst` on examples crafted against defense `src`;
// acc[src][dst], diagonal = white-box, off-diagonal = transfer.
inline std::vector<std::vector<double>> transfer_matrix(
    const std::vector<const Preprocessor*>& defenses, const TargetModel& tgt,
    const AttackSpec& spec, const ImageBatch& clean, std::uint64_t seed) {
    if (spec.scope != Scope::full)
        throw ConfigError("transfer_matrix: attack must be full scope");
    const std::size_t m = defenses.size();
    std::vector<ImageBatch> crafted;
    for (std::size_t s = 0; s < m; ++s) {
        Rng rng(derive_seed(seed, "transfer-" + spec.id, std::uint64_t(s)));
        crafted.push_back(craft(spec, defenses[s], tgt, clean, rng));
        audit_budget(crafted.back().pixels, clean.pixels, spec.budget.epsilon,
                     spec.id);
    }
    std::vector<std::vector<double>> acc(m, std::vector<double>(m, 0.0));
    for (std::size_t d = 0; d < m; ++d) {
        FullModel full(const_cast<Preprocessor&>(*defenses[d]),
                       const_cast<TargetModel&>(tgt));
        for (std::size_t s = 0; s < m; ++s)
            acc[s][d] = accuracy_percent(full, crafted[s]);
    }
    return acc;
}

// ---------------------------------------------------------------------------
// report writers

inline nlohmann::json row_json(const EvalRow& r) {
    return nlohmann::json{{"defense_id", r.defense_id},
                          {"target_id", r.target_id},
                          {"attack_id", r.attack_id},
                          {"clean_accuracy", r.clean_accuracy},
                          {"robust_accuracy", r.robust_accuracy},
                          {"examples", r.examples},
                          {"seed", r.seed}};
}

// One JSON object per line; the first line is a schema header.
inline void write_report_jsonl(const EvalReport& rep, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw ReportError("cannot open report file '" + path + "'");
    nlohmann::json head{{"schema_version", kReportSchemaVersion},
                        {"kind", "eval_report"},
                        {"seed", rep.seed},
                        {"config_digest", rep.config_digest}};
    f << head.dump() << "\n";
    for (const auto& r : rep.rows) {
        auto j = row_json(r);
        j["record"] = "row";
        f << j.dump() << "\n";
    }
    for (const auto& d : rep.deltas) {
        nlohmann::json j{{"record", "delta"},
                         {"defense_id", d.defense_id},
                         {"attack_id", d.attack_id},
                         {"degradation", d.degradation}};
        f << j.dump() << "\n";
    }
    if (rep.distortion) {
        nlohmann::json j{
            {"record", "distortion"},
            {"adversarial_vs_natural", rep.distortion->adversarial_vs_natural},
            {"preprocessed_vs_natural",
             rep.distortion->preprocessed_vs_natural}};
        f << j.dump() << "\n";
    }
    if (!f) throw ReportError("short write to report file '" + path + "'");
}

// CSV table: defenses as rows, attacks as columns, robust accuracy cells
// (two decimals).
inline void write_report_csv(const EvalReport& rep, const std::string& path) {
    std::vector<std::string> defenses, attacks;
    std::map<std::pair<std::string, std::string>, double> cell;
    for (const auto& r : rep.rows) {
        if (std::find(defenses.begin(), defenses.end(), r.defense_id) ==
            defenses.end())
            defenses.push_back(r.defense_id);
        if (std::find(attacks.begin(), attacks.end(), r.attack_id) ==
            attacks.end())
            attacks.push_back(r.attack_id);
        cell[{r.defense_id, r.attack_id}] = r.robust_accuracy;
    }
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw ReportError("cannot open report file '" + path + "'");
    f << "defense";
    for (const auto& a : attacks) f << ',' << a;
    f << "\n";
    char buf[32];
    for (const auto& d : defenses) {
        f << d;
        for (const auto& a : attacks) {
            auto it = cell.find({d, a});
            if (it == cell.end()) {
                f << ',';
            } else {
                std::snprintf(buf, sizeof buf, "%.2f", it->second);
                f << ',' << buf;
            }
        }
        f << "\n";
    }
    if (!f) throw ReportError("short write to report file '" + path + "'");
}

inline void write_train_log_jsonl(const std::vector<TrainLogRecord>& log,
                                  const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw ReportError("cannot open log file '" + path + "'");
    nlohmann::json head{{"schema_version", kReportSchemaVersion},
                        {"kind", "train_log"}};
    f << head.dump() << "\n";
    for (const auto& r : log) {
        nlohmann::json j{{"step", r.step},
                         {"epoch", r.epoch},
                         {"lr", r.lr},
                         {"seed", r.seed},
                         {"pixel", r.loss.pixel},
                         {"bce", r.loss.bce},
                         {"fsm_weighted", r.loss.fsm_weighted},
                         {"adversarial", r.loss.adversarial},
                         {"total", r.loss.total}};
        f << j.dump() << "\n";
    }
    if (!f) throw ReportError("short write to log file '" + path + "'");
}

}  // namespace jatp
