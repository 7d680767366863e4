#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <string>

#include "jatp/losses.hpp"
#include "jatp/models.hpp"

namespace jatp {

struct PerturbationBudget {
    float epsilon = 8.0f / 255.0f;  // L-inf radius in normalized pixel units
    float step_size = 0.01f;
    int num_steps = 10;
    bool random_start = true;

    void validate() const {
        if (!(epsilon >= 0.0f) || !std::isfinite(epsilon))
            throw ArgumentError("budget: epsilon must be finite and >= 0");
        if (!(step_size > 0.0f) || !std::isfinite(step_size))
            throw ArgumentError("budget: step_size must be finite and > 0");
        if (num_steps < 0)
            throw ArgumentError("budget: num_steps must be >= 0");
    }
};

enum class Objective { cross_entropy, dlr, feature_distance };
enum class Scope { oblivious, full };

struct AttackSpec {
    std::string id = "pgd";
    Objective objective = Objective::cross_entropy;
    Scope scope = Scope::full;
    bool bpda = false;
    PerturbationBudget budget;
    std::optional<FeatureTap> tap;  // required iff objective == feature_distance

    void validate() const {
        budget.validate();
        if (bpda && scope != Scope::full)
            throw ConfigError("attack '" + id +
                              "': bpda requires full scope (BPDA approximates "
                              "the preprocessor's gradient)");
        if (objective == Objective::feature_distance && !tap)
            throw ConfigError("attack '" + id +
                              "': feature_distance requires a tap");
    }
};

// clip candidate into the eps-box around anchor, then clamp to [0,1]
inline Tensor<float> project_linf(const Tensor<float>& candidate,
                                  const Tensor<float>& anchor, float epsilon) {
    if (!candidate.same_shape(anchor))
        throw ArgumentError("project_linf: shape mismatch");
    if (epsilon < 0.0f)
        throw ArgumentError("project_linf: negative epsilon");
    Tensor<float> out(candidate.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        float v = candidate[i];
        v = std::min(anchor[i] + epsilon, std::max(anchor[i] - epsilon, v));
        v = std::min(1.0f, std::max(0.0f, v));
        out[i] = v;
    }
    return out;
}

// A differentiable scalar objective over input pixels: returns the objective
// value and its gradient with respect to the pixels.
using PixelObjective =
    std::function<std::pair<double, Tensor<float>>(const Tensor<float>&)>;

// Iterative L-inf ascent. sign(0) = 0: exactly-zero gradient components do
// not move. Aborts on non-finite gradients.
inline ImageBatch pgd(const PixelObjective& objective, const ImageBatch& batch,
                      const PerturbationBudget& budget, Rng& rng) {
    budget.validate();
    const Tensor<float>& anchor = batch.pixels;
    Tensor<float> x = anchor;
    if (budget.random_start && budget.epsilon > 0.0f) {
        for (std::size_t i = 0; i < x.size(); ++i)
            x[i] += float(rng.uniform(-double(budget.epsilon),
                                      double(budget.epsilon)));
        x = project_linf(x, anchor, budget.epsilon);
    }
    for (int step = 0; step < budget.num_steps; ++step) {
        auto [value, grad] = objective(x);
        if (!std::isfinite(value))
            throw NumericError("pgd: non-finite objective at step " +
                               std::to_string(step));
        for (std::size_t i = 0; i < x.size(); ++i) {
            const float g = grad[i];
            if (!std::isfinite(g))
                throw NumericError("pgd: non-finite gradient at step " +
                                   std::to_string(step) + ", component " +
                                   std::to_string(i));
            if (g > 0.0f)
                x[i] += budget.step_size;
            else if (g < 0.0f)
                x[i] -= budget.step_size;
        }
        x = project_linf(x, anchor, budget.epsilon);
    }
    return ImageBatch{std::move(x), batch.labels};
}

namespace detail {

// Attacks differentiate with respect to pixels only; parameter gradients are
// switched off while crafting so conv backward skips the weight-gradient GEMM.
class ParamGradGuard {
public:
    ParamGradGuard(nn::ParamStore<float>& ps) : ps_(&ps) {
        was_ = ps.count() > 0 && ps.param(0)->requires_grad;
        ps.set_requires_grad(false);
    }
    ~ParamGradGuard() { ps_->set_requires_grad(was_); }

private:
    nn::ParamStore<float>* ps_;
    bool was_ = false;
};

// Builds the scoped, possibly BPDA-wrapped logits graph for one candidate.
// For BPDA the preprocessor runs forward-only and the gradient is taken at
// its output, i.e. the backward pass treats P as the identity.
struct ScopedForward {
    ag::Var<float> input;   // leaf the gradient is read from
    ag::Var<float> logits;  // scoped logits
    nn::TapMap<float> taps;
};

inline ScopedForward scoped_forward(const AttackSpec& spec,
                                    const Preprocessor* pre,
                                    const TargetModel& tgt,
                                    const Tensor<float>& pixels) {
    ScopedForward f;
    if (spec.scope == Scope::oblivious) {
        f.input = ag::leaf(pixels, true);
        f.logits = tgt.logits_graph(f.input, &f.taps);
    } else if (spec.bpda) {
        f.input = ag::leaf(pre->apply(pixels), true);
        f.logits = tgt.logits_graph(f.input, &f.taps);
    } else {
        f.input = ag::leaf(pixels, true);
        FullModel full(const_cast<Preprocessor&>(*pre),
                       const_cast<TargetModel&>(tgt));
        f.logits = full.logits_graph(f.input, &f.taps);
    }
    return f;
}

}  // namespace detail

// Builds the PGD objective described by `spec` and runs the attack.
// Oblivious attacks ignore the preprocessor entirely.
inline ImageBatch craft(const AttackSpec& spec, const Preprocessor* pre,
                        const TargetModel& tgt, const ImageBatch& batch,
                        Rng& rng) {
    spec.validate();
    if (spec.scope == Scope::full && pre == nullptr)
        throw ConfigError("attack '" + spec.id +
                          "': full scope requires a preprocessor");
    if (spec.objective == Objective::feature_distance &&
        !tgt.has_tap(spec.tap->layer))
        throw ConfigError("attack '" + spec.id + "': unknown tap '" +
                          spec.tap->layer + "'");
    if (spec.objective == Objective::dlr && tgt.num_classes() < 4)
        throw ConfigError("attack '" + spec.id + "': dlr requires K >= 4");

    detail::ParamGradGuard tgt_guard(const_cast<TargetModel&>(tgt).params());
    std::optional<detail::ParamGradGuard> pre_guard;
    if (pre) pre_guard.emplace(const_cast<Preprocessor*>(pre)->params());

    // Feature-distance objectives measure distortion against the anchor's
    // features, computed once up front on the same scoped path.
    Tensor<float> anchor_features;
    if (spec.objective == Objective::feature_distance) {
        auto f = detail::scoped_forward(spec, pre, tgt, batch.pixels);
        anchor_features = f.taps.at(spec.tap->layer)->value;
    }

    const std::vector<int>& labels = batch.labels;
    PixelObjective objective = [&](const Tensor<float>& pixels) {
        auto f = detail::scoped_forward(spec, pre, tgt, pixels);
        ag::Var<float> value;
        switch (spec.objective) {
            case Objective::cross_entropy:
                value = ag::mean(ag::cross_entropy_per_example(f.logits, labels));
                break;
            case Objective::dlr:
                value = ag::mean(lossops::dlr_per_example(f.logits, labels));
                break;
            case Objective::feature_distance:
                value = ag::mean(ag::mse_per_example(
                    f.taps.at(spec.tap->layer),
                    ag::leaf(anchor_features, false)));
                break;
        }
        ag::backward(value);
        return std::make_pair(double(value->value[0]), f.input->grad);
    };
    return pgd(objective, batch, spec.budget, rng);
}

// mean DLR over the batch (plain value; the graph op lives in lossops)
inline double dlr_objective(const Tensor<float>& logits,
                            const std::vector<int>& labels) {
    auto z = ag::leaf(logits, false);
    return double(ag::mean(lossops::dlr_per_example(z, labels))->value[0]);
}

}  // namespace jatp
