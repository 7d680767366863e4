#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "jatp/models.hpp"

namespace jatp {

struct LossWeights {
    double alpha = 5.0;  // FSM-regularizer weight
    double beta = 3.0;   // pixel-loss weight

    void validate() const {
        if (!(alpha >= 0.0) || !std::isfinite(alpha))
            throw ArgumentError("loss weight alpha must be finite and >= 0");
        if (!(beta >= 0.0) || !std::isfinite(beta))
            throw ArgumentError("loss weight beta must be finite and >= 0");
    }
};

struct LossBreakdown {
    double pixel = 0.0;
    double bce = 0.0;
    double fsm_weighted = 0.0;
    double adversarial = 0.0;  // bce + fsm_weighted
    double total = 0.0;        // adversarial + beta * pixel
};

// Which activations the feature similarity term compares against. The default
// compares pre-processed adversarial vs pre-processed natural activations;
// the raw variant compares against activations of the unprocessed natural
// example instead.
enum class FsmReference { preprocessed_natural, raw_natural };

namespace lossops {

// boosted cross entropy per example on probability rows, with a 1e-12 floor
// inside both logarithms: -log p_y - log(1 - max_{k!=y} p_k)
template <class T>
ag::Var<T> bce_per_example(const ag::Var<T>& probs,
                           const std::vector<int>& labels) {
    const int n = probs->value.dim(0), k = probs->value.dim(1);
    if (int(labels.size()) != n)
        throw ArgumentError("bce: batch/label size mismatch");
    const T floor = T(1e-12);
    Tensor<T> out(Shape{n});
    auto maxidx = std::make_shared<std::vector<int>>(std::size_t(n));
    for (int i = 0; i < n; ++i) {
        const T* p = probs->value.data() + std::size_t(i) * k;
        const int y = labels[std::size_t(i)];
        int m = y == 0 ? 1 : 0;
        for (int j = 0; j < k; ++j)
            if (j != y && p[j] > p[m]) m = j;
        (*maxidx)[std::size_t(i)] = m;
        out[std::size_t(i)] = -std::log(std::max(p[y], floor)) -
                              std::log(std::max(T(1) - p[m], floor));
    }
    return ag::make_op<T>(std::move(out), {probs},
                          [n, k, labels, maxidx, floor](ag::Node<T>& node) {
        auto& probs = node.parents[0];
        if (!probs->requires_grad) return;
        probs->ensure_grad();
        for (int i = 0; i < n; ++i) {
            const T g = node.grad[std::size_t(i)];
            const T* p = probs->value.data() + std::size_t(i) * k;
            T* dp = probs->grad.data() + std::size_t(i) * k;
            const int y = labels[std::size_t(i)];
            const int m = (*maxidx)[std::size_t(i)];
            if (p[y] > floor) dp[y] -= g / p[y];
            if (T(1) - p[m] > floor) dp[m] += g / (T(1) - p[m]);
        }
    });
}

// per-example DLR on logits: -(z_y - max_{i!=y} z_i) / (z_pi1 - z_pi3 + 1e-12)
template <class T>
ag::Var<T> dlr_per_example(const ag::Var<T>& logits,
                           const std::vector<int>& labels) {
    const int n = logits->value.dim(0), k = logits->value.dim(1);
    if (k < 4)
        throw ConfigError("dlr objective requires K >= 4 classes, got " +
                          std::to_string(k));
    if (int(labels.size()) != n)
        throw ArgumentError("dlr: batch/label size mismatch");
    const T stab = T(1e-12);
    Tensor<T> out(Shape{n});
    // per example: indices of max-other, pi1, pi3 (descending sort)
    auto idx = std::make_shared<std::vector<int>>(std::size_t(n) * 3);
    for (int i = 0; i < n; ++i) {
        const T* z = logits->value.data() + std::size_t(i) * k;
        const int y = labels[std::size_t(i)];
        int m = y == 0 ? 1 : 0;
        for (int j = 0; j < k; ++j)
            if (j != y && z[j] > z[m]) m = j;
        std::vector<int> ord(static_cast<std::size_t>(k));
        for (int j = 0; j < k; ++j) ord[std::size_t(j)] = j;
        std::sort(ord.begin(), ord.end(),
                  [&](int a, int b) { return z[a] > z[b] || (z[a] == z[b] && a < b); });
        const int p1 = ord[0], p3 = ord[2];
        (*idx)[std::size_t(i) * 3] = m;
        (*idx)[std::size_t(i) * 3 + 1] = p1;
        (*idx)[std::size_t(i) * 3 + 2] = p3;
        out[std::size_t(i)] = -(z[y] - z[m]) / (z[p1] - z[p3] + stab);
    }
    return ag::make_op<T>(std::move(out), {logits},
                          [n, k, labels, idx, stab](ag::Node<T>& node) {
        auto& logits = node.parents[0];
        if (!logits->requires_grad) return;
        logits->ensure_grad();
        for (int i = 0; i < n; ++i) {
            const T g = node.grad[std::size_t(i)];
            const T* z = logits->value.data() + std::size_t(i) * k;
            T* dz = logits->grad.data() + std::size_t(i) * k;
            const int y = labels[std::size_t(i)];
            const int m = (*idx)[std::size_t(i) * 3];
            const int p1 = (*idx)[std::size_t(i) * 3 + 1];
            const int p3 = (*idx)[std::size_t(i) * 3 + 2];
            const T num = z[y] - z[m];
            const T den = z[p1] - z[p3] + stab;
            dz[y] += g * (-T(1) / den);
            dz[m] += g * (T(1) / den);
            dz[p1] += g * (num / (den * den));
            dz[p3] -= g * (num / (den * den));
        }
    });
}

}  // namespace lossops

// ---------------------------------------------------------------------------
// plain scalar losses (spec surface); graph versions live in lossops / below

// mean over batch of per-example Euclidean norms of (recovered - natural)
inline double pixel_loss(const Tensor<float>& recovered,
                         const Tensor<float>& natural) {
    if (!recovered.same_shape(natural))
        throw ArgumentError("pixel_loss: shape mismatch");
    auto a = ag::leaf(recovered, false);
    auto b = ag::leaf(natural, false);
    return double(ag::mean(ag::l2_norm_per_example(a, b))->value[0]);
}

inline void validate_probability_rows(const Tensor<float>& probs) {
    const int n = probs.dim(0), k = probs.dim(1);
    for (int i = 0; i < n; ++i) {
        double s = 0;
        for (int j = 0; j < k; ++j) s += double(probs[std::size_t(i) * k + j]);
        if (std::abs(s - 1.0) > 1e-6)
            throw ArgumentError("probability row " + std::to_string(i) +
                                " sums to " + std::to_string(s));
    }
}

inline double bce_loss(const Tensor<float>& probs,
                       const std::vector<int>& labels) {
    validate_probability_rows(probs);
    auto p = ag::leaf(probs, false);
    return double(ag::mean(lossops::bce_per_example(p, labels))->value[0]);
}

inline double ce_loss(const Tensor<float>& probs,
                      const std::vector<int>& labels) {
    validate_probability_rows(probs);
    const int n = probs.dim(0), k = probs.dim(1);
    double s = 0;
    for (int i = 0; i < n; ++i)
        s += -std::log(std::max(
            double(probs[std::size_t(i) * k + labels[std::size_t(i)]]), 1e-12));
    return s / double(n);
}

// mean over all elements of squared differences
inline double fsm_loss(const Tensor<float>& adv_features,
                       const Tensor<float>& nat_features) {
    if (!adv_features.same_shape(nat_features))
        throw ArgumentError("fsm_loss: shape mismatch");
    double s = 0;
    for (std::size_t i = 0; i < adv_features.size(); ++i) {
        const double d = double(adv_features[i]) - double(nat_features[i]);
        s += d * d;
    }
    return s / double(adv_features.size());
}

inline double jatp_total(double adversarial, double pixel, double beta) {
    return adversarial + beta * pixel;
}

// ---------------------------------------------------------------------------
// JATP training objective, built as one graph so a single backward pass
// yields d(total)/d(phi). Term flags support the ablation variants.

struct JatpGraphOptions {
    FeatureTap tap;
    LossWeights weights;
    bool use_pixel = true;
    bool use_bce = true;
    bool use_fsm = true;
    FsmReference fsm_reference = FsmReference::preprocessed_natural;
};

struct JatpGraph {
    ag::Var<float> total;
    LossBreakdown breakdown;
};

inline JatpGraph jatp_loss_graph(const FullModel& full,
                                 const Tensor<float>& adv_pixels,
                                 const Tensor<float>& nat_pixels,
                                 const std::vector<int>& labels,
                                 const JatpGraphOptions& opt) {
    opt.weights.validate();
    if (!full.has_tap(opt.tap.layer))
        throw ConfigError("unknown feature tap '" + opt.tap.layer + "'");
    const auto& pre = full.preprocessor();
    const auto& tgt = full.target();

    auto xadv = ag::leaf(adv_pixels, false);
    auto xnat = ag::leaf(nat_pixels, false);

    // adversarial path
    auto recovered_adv = pre.apply_graph(xadv);
    nn::TapMap<float> taps_adv;
    auto logits_adv = tgt.logits_graph(recovered_adv, &taps_adv);
    auto probs_adv = ag::softmax(logits_adv);
    auto bce = lossops::bce_per_example(probs_adv, labels);

    // natural path (soft misclassification weight + FSM reference)
    nn::TapMap<float> taps_nat;
    auto recovered_nat = pre.apply_graph(xnat);
    auto logits_nat = tgt.logits_graph(recovered_nat, &taps_nat);
    auto wnat = ag::scale(
        ag::sub(ag::leaf(Tensor<float>(Shape{int(labels.size())}, 1.0f), false),
                ag::gather_class(ag::softmax(logits_nat), labels)),
        1.0f);

    ag::Var<float> fsm_ref;
    if (opt.fsm_reference == FsmReference::preprocessed_natural) {
        fsm_ref = taps_nat.at(opt.tap.layer);
    } else {
        nn::TapMap<float> taps_raw;
        tgt.logits_graph(xnat, &taps_raw);
        fsm_ref = taps_raw.at(opt.tap.layer);
    }
    auto fsm = ag::mse_per_example(taps_adv.at(opt.tap.layer), fsm_ref);
    auto fsm_weighted =
        ag::scale(ag::mul(fsm, wnat), float(opt.weights.alpha));

    auto pix = ag::mean(ag::l2_norm_per_example(recovered_adv, xnat));

    JatpGraph g;
    g.breakdown.bce = double(ag::mean(bce)->value[0]);
    g.breakdown.fsm_weighted = double(ag::mean(fsm_weighted)->value[0]);
    g.breakdown.pixel = double(pix->value[0]);
    g.breakdown.adversarial = g.breakdown.bce + g.breakdown.fsm_weighted;
    g.breakdown.total =
        g.breakdown.adversarial + opt.weights.beta * g.breakdown.pixel;

    ag::Var<float> adv_terms;
    if (opt.use_bce && opt.use_fsm)
        adv_terms = ag::mean(ag::add(bce, fsm_weighted));
    else if (opt.use_bce)
        adv_terms = ag::mean(bce);
    else if (opt.use_fsm)
        adv_terms = ag::mean(fsm_weighted);

    ag::Var<float> total;
    if (opt.use_pixel) {
        auto weighted_pix = ag::scale(pix, float(opt.weights.beta));
        total = adv_terms ? ag::add(adv_terms, weighted_pix) : weighted_pix;
    } else {
        total = adv_terms;
    }
    if (!total)
        throw ConfigError("jatp loss: all terms disabled");
    g.total = total;
    return g;
}

// Eq-level surface: adversarial loss mean over batch of
// { BCE_i + alpha * FSM_i * (1 - p_y(F(x_i))) }, with breakdown.
inline LossBreakdown adversarial_loss(const FullModel& full,
                                      const ImageBatch& adv_batch,
                                      const ImageBatch& nat_batch,
                                      const FeatureTap& tap, double alpha) {
    JatpGraphOptions opt;
    opt.tap = tap;
    opt.weights.alpha = alpha;
    opt.weights.beta = 0.0;
    auto g = jatp_loss_graph(full, adv_batch.pixels, nat_batch.pixels,
                             nat_batch.labels, opt);
    return g.breakdown;
}

}  // namespace jatp
