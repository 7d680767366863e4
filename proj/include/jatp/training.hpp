#pragma once

#include <optional>
#include <vector>

#include "jatp/attacks.hpp"
#include "jatp/checkpoint.hpp"
#include "jatp/config.hpp"
#include "jatp/datahub.hpp"
#include "jatp/losses.hpp"

namespace jatp {

// One machine-readable record per training step.
struct TrainLogRecord {
    int step = 0;
    int epoch = 0;
    LossBreakdown loss;
    double lr = 0.0;
    std::uint64_t seed = 0;
};

// lr(epoch) = initial_lr * factor^(number of drop epochs passed); epochs are
// 1-based, a drop at epoch d takes effect from epoch d on.
inline double lr_at_epoch(const OptimizerConfig& opt, int epoch) {
    double lr = opt.initial_lr;
    for (int d : opt.lr_drop_epochs)
        if (epoch >= d) lr *= opt.lr_drop_factor;
    return lr;
}

// SGD with momentum and weight decay:
//   v <- momentum * v + grad + weight_decay * param;  param <- param - lr * v
class SgdOptimizer {
public:
    SgdOptimizer(const OptimizerConfig& cfg) : cfg_(cfg) {}

    void attach(nn::ParamStore<float>& ps) { stores_.push_back(&ps); }

    void step(double lr) {
        if (velocity_.empty())
            for (auto* ps : stores_)
                for (std::size_t i = 0; i < ps->count(); ++i)
                    velocity_.emplace_back(ps->param(i)->value.shape());
        std::size_t vi = 0;
        for (auto* ps : stores_)
            for (std::size_t i = 0; i < ps->count(); ++i, ++vi) {
                auto& p = ps->param(i);
                auto& v = velocity_[vi];
                const float m = float(cfg_.momentum);
                const float wd = float(cfg_.weight_decay);
                const float lrf = float(lr);
                for (std::size_t j = 0; j < v.size(); ++j) {
                    v[j] = m * v[j] + p->grad[j] + wd * p->value[j];
                    p->value[j] -= lrf * v[j];
                }
            }
    }

    void zero_grads() {
        for (auto* ps : stores_) ps->zero_grads();
    }

private:
    OptimizerConfig cfg_;
    std::vector<nn::ParamStore<float>*> stores_;
    std::vector<Tensor<float>> velocity_;
};

// ---------------------------------------------------------------------------
// target pre-training

struct TargetTrainResult {
    TargetModel model;
    std::vector<TrainLogRecord> log;
    bool aborted = false;  // divergence: model holds the last good epoch
};

inline TargetTrainResult train_target(const Dataset& train, const Dataset& test,
                                      const TrainConfig& cfg,
                                      TargetStrategy strategy,
                                      const AugmentSpec& augment = {}) {
    cfg.validate();
    TargetTrainResult res{
        TargetModel(cfg.target_width, train.num_classes,
                    derive_seed(cfg.seed, "target-init"),
                    train.images.dim(1))};
    TargetModel& model = res.model;
    SgdOptimizer opt(cfg.optimizer);
    opt.attach(model.params());

    AttackSpec train_attack;
    train_attack.id = "train-pgd";
    train_attack.objective = Objective::cross_entropy;
    train_attack.scope = Scope::oblivious;
    train_attack.budget = cfg.budget;

    std::vector<Tensor<float>> last_good;
    auto snapshot = [&]() {
        last_good.clear();
        for (std::size_t i = 0; i < model.params().count(); ++i)
            last_good.push_back(model.params().param(i)->value);
    };
    auto restore = [&]() {
        for (std::size_t i = 0; i < model.params().count(); ++i)
            model.params().param(i)->value = last_good[i];
    };
    snapshot();

    int step = 0;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const double lr = lr_at_epoch(cfg.optimizer, epoch);
        Rng order_rng(derive_seed(cfg.seed, "target-batch-order",
                                  std::uint64_t(epoch)));
        Rng aug_rng(derive_seed(cfg.seed, "target-augment",
                                std::uint64_t(epoch)));
        auto batches = epoch_batches(train.size(), cfg.batch_size, order_rng);
        bool diverged = false;
        for (std::size_t bi = 0; bi < batches.size(); ++bi, ++step) {
            ImageBatch batch = train.select(batches[bi]);
            augment_batch(batch, augment, aug_rng);
            ag::Var<float> loss;
            try {
                switch (strategy) {
                    case TargetStrategy::natural: {
                        auto x = ag::leaf(batch.pixels, false);
                        loss = ag::mean(ag::cross_entropy_per_example(
                            model.logits_graph(x), batch.labels));
                        break;
                    }
                    case TargetStrategy::standard_at: {
                        Rng atk_rng(derive_seed(cfg.seed, "target-attack",
                                                std::uint64_t(epoch) * 100000 + bi));
                        ImageBatch adv =
                            craft(train_attack, nullptr, model, batch, atk_rng);
                        auto x = ag::leaf(adv.pixels, false);
                        loss = ag::mean(ag::cross_entropy_per_example(
                            model.logits_graph(x), adv.labels));
                        break;
                    }
                    case TargetStrategy::trades: {
                        // inner maximization of KL(p_nat || p_adv), same
                        // budget recipe as the training attack
                        Tensor<float> p_nat =
                            softmax_rows(model.logits(batch));
                        PixelObjective kl_obj =
                            [&](const Tensor<float>& pixels) {
                                detail::ParamGradGuard guard(model.params());
                                auto x = ag::leaf(pixels, true);
                                auto padv =
                                    ag::softmax(model.logits_graph(x));
                                auto v = ag::mean(ag::kl_per_example(
                                    ag::leaf(p_nat, false), padv));
                                ag::backward(v);
                                return std::make_pair(double(v->value[0]),
                                                      x->grad);
                            };
                        Rng atk_rng(derive_seed(cfg.seed, "target-attack",
                                                std::uint64_t(epoch) * 100000 + bi));
                        ImageBatch adv = pgd(kl_obj, batch, cfg.budget, atk_rng);
                        auto xn = ag::leaf(batch.pixels, false);
                        auto xa = ag::leaf(adv.pixels, false);
                        auto pn = ag::softmax(model.logits_graph(xn));
                        auto pa = ag::softmax(model.logits_graph(xa));
                        auto ce = ag::mean(ag::cross_entropy_per_example(
                            model.logits_graph(xn), batch.labels));
                        auto kl = ag::mean(ag::kl_per_example(pn, pa));
                        loss = ag::add(ce, ag::scale(kl, float(cfg.trades_lambda)));
                        break;
                    }
                }
            } catch (const NumericError&) {
                diverged = true;
                break;
            }
            const double lval = double(loss->value[0]);
            if (!std::isfinite(lval)) {
                diverged = true;
                break;
            }
            opt.zero_grads();
            ag::backward(loss);
            opt.step(lr);
            TrainLogRecord rec;
            rec.step = step;
            rec.epoch = epoch;
            rec.loss.total = lval;
            rec.lr = lr;
            rec.seed = cfg.seed;
            res.log.push_back(rec);
        }
        if (diverged) {
            restore();
            res.aborted = true;
            break;
        }
        snapshot();
        model.meta.epoch = epoch;
    }

    model.meta.seed = cfg.seed;
    model.meta.clean_accuracy = accuracy_percent(model, test.head(test.size()));
    {
        AttackSpec eval_attack = train_attack;
        eval_attack.id = "pgd10-eval";
        Rng rng(derive_seed(cfg.seed, "target-robust-eval"));
        ImageBatch clean = test.head(std::min(500, test.size()));
        ImageBatch adv = craft(eval_attack, nullptr, model, clean, rng);
        model.meta.robust_accuracy = accuracy_percent(model, adv);
    }
    return res;
}

// ---------------------------------------------------------------------------
// defense training

struct DefenseTrainResult {
    Preprocessor pre;
    std::vector<TrainLogRecord> log;
    // instrumentation for the Alg.-1 step-order contract: phi digest observed
    // by the crafting attack at each step, and after each update
    std::vector<std::uint64_t> phi_at_craft;
    std::vector<std::uint64_t> phi_after_update;
    bool aborted = false;
};

// One loop covers all variants; they differ in how training examples are
// crafted (oblivious vs full scope, label vs feature space) and which loss
// terms are minimized. theta is updated only by the jatp_prime variant, and
// then only on a private copy of the target.
inline DefenseTrainResult train_defense(const TargetModel& target,
                                        const Dataset& train,
                                        const TrainConfig& cfg,
                                        const Preprocessor* init = nullptr) {
    cfg.validate();
    const bool joint_update = cfg.variant == TrainVariant::jatp_prime;
    if (!joint_update && !target.frozen())
        throw ConfigError("train_defense: target must be frozen for variant " +
                          cfg::to_string(cfg.variant));
    if (!target.has_tap(cfg.tap))
        throw ConfigError("train_defense: unknown tap '" + cfg.tap + "'");

    // deep copy on warm start: a plain copy would alias the initializer's
    // parameter nodes and training would mutate the caller's model
    DefenseTrainResult res{
        init ? init->deep_copy()
             : Preprocessor(cfg.pre_width, cfg.pre_blocks,
                            derive_seed(cfg.seed, "pre-init"),
                            target.channels())};
    Preprocessor& pre = res.pre;

    // jatp_prime thaws a private copy; the caller's target stays untouched
    std::optional<TargetModel> thawed;
    if (joint_update) {
        thawed.emplace(target.deep_copy());
        thawed->set_frozen(false);
    }
    TargetModel& tgt = joint_update ? *thawed : const_cast<TargetModel&>(target);
    FullModel full(pre, tgt);

    SgdOptimizer opt(cfg.optimizer);
    opt.attach(pre.params());
    if (joint_update) opt.attach(tgt.params());

    // training attack
    AttackSpec atk;
    atk.budget = cfg.budget;
    switch (cfg.variant) {
        case TrainVariant::jatp:
        case TrainVariant::jatp_prime:
            atk.id = "train-feature-full";
            atk.objective = Objective::feature_distance;
            atk.scope = Scope::full;
            atk.tap = FeatureTap{FeatureTap::Host::full, cfg.tap};
            break;
        case TrainVariant::full_pixel:
            atk.id = "train-ce-full";
            atk.objective = Objective::cross_entropy;
            atk.scope = Scope::full;
            break;
        case TrainVariant::oblivious_pixel:
        case TrainVariant::oblivious_feature:
            atk.id = "train-ce-oblivious";
            atk.objective = Objective::cross_entropy;
            atk.scope = Scope::oblivious;
            break;
    }

    const FeatureTap tap{FeatureTap::Host::full, cfg.tap};
    std::vector<Tensor<float>> last_good;
    auto snapshot = [&]() {
        last_good.clear();
        for (std::size_t i = 0; i < pre.params().count(); ++i)
            last_good.push_back(pre.params().param(i)->value);
    };
    auto restore = [&]() {
        for (std::size_t i = 0; i < pre.params().count(); ++i)
            pre.params().param(i)->value = last_good[i];
    };
    snapshot();

    int step = 0;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const double lr = lr_at_epoch(cfg.optimizer, epoch);
        Rng order_rng(derive_seed(cfg.seed, "defense-batch-order",
                                  std::uint64_t(epoch)));
        auto batches = epoch_batches(train.size(), cfg.batch_size, order_rng);
        bool diverged = false;
        for (std::size_t bi = 0; bi < batches.size(); ++bi, ++step) {
            ImageBatch batch = train.select(batches[bi]);
            res.phi_at_craft.push_back(pre.params().digest());
            // (1) craft training examples against the current model state
            Rng atk_rng(derive_seed(cfg.seed, "defense-attack",
                                    std::uint64_t(epoch) * 100000 + bi));
            ImageBatch adv;
            try {
                adv = craft(atk, &pre, tgt, batch, atk_rng);
            } catch (const NumericError&) {
                diverged = true;
                break;
            }

            // (2)+(3) forward passes and loss
            ag::Var<float> loss;
            LossBreakdown breakdown;
            if (cfg.variant == TrainVariant::jatp ||
                cfg.variant == TrainVariant::jatp_prime) {
                JatpGraphOptions gopt;
                gopt.tap = tap;
                gopt.weights = cfg.weights;
                gopt.use_pixel = cfg.use_pixel;
                gopt.use_bce = cfg.use_bce;
                gopt.use_fsm = cfg.use_fsm;
                gopt.fsm_reference = cfg.fsm_reference;
                auto g = jatp_loss_graph(full, adv.pixels, batch.pixels,
                                         batch.labels, gopt);
                loss = g.total;
                breakdown = g.breakdown;
            } else {
                // pixel reconstruction, optionally with a feature
                // reconstruction term (alpha-weighted)
                auto xadv = ag::leaf(adv.pixels, false);
                auto xnat = ag::leaf(batch.pixels, false);
                nn::TapMap<float> taps_rec;
                auto recovered = pre.apply_graph(xadv);
                auto pix = ag::mean(ag::l2_norm_per_example(recovered, xnat));
                breakdown.pixel = double(pix->value[0]);
                if (cfg.variant == TrainVariant::oblivious_feature) {
                    tgt.logits_graph(recovered, &taps_rec);
                    nn::TapMap<float> taps_nat;
                    {
                        detail::ParamGradGuard guard(
                            const_cast<TargetModel&>(tgt).params());
                        tgt.logits_graph(xnat, &taps_nat);
                    }
                    auto feat = ag::mean(ag::mse_per_example(
                        taps_rec.at(cfg.tap),
                        ag::leaf(taps_nat.at(cfg.tap)->value, false)));
                    loss = ag::add(pix, ag::scale(feat, float(cfg.weights.alpha)));
                    breakdown.fsm_weighted =
                        cfg.weights.alpha * double(feat->value[0]);
                } else {
                    loss = pix;
                }
                breakdown.total = double(loss->value[0]);
            }
            const double lval = double(loss->value[0]);
            if (!std::isfinite(lval)) {
                diverged = true;
                break;
            }
            // (4) update
            opt.zero_grads();
            ag::backward(loss);
            opt.step(lr);
            res.phi_after_update.push_back(pre.params().digest());

            TrainLogRecord rec;
            rec.step = step;
            rec.epoch = epoch;
            rec.loss = breakdown;
            rec.lr = lr;
            rec.seed = cfg.seed;
            res.log.push_back(rec);
        }
        if (diverged) {
            restore();
            res.aborted = true;
            break;
        }
        snapshot();
        res.pre.meta.epoch = epoch;
    }
    res.pre.meta.seed = cfg.seed;
    return res;
}

}  // namespace jatp
