#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "gradcheck.hpp"
#include "jatp/jatp.hpp"

using namespace jatp;

TEST_CASE("pixel loss oracles") {
    // identical inputs -> 0
    Tensor<float> x(Shape{2, 1, 2, 2}, 0.4f);
    CHECK(pixel_loss(x, x) == 0.0);

    // single example, difference vector (0.3, 0.4), rest zero -> 0.5
    Tensor<float> a(Shape{1, 1, 2, 2});
    Tensor<float> b(Shape{1, 1, 2, 2});
    a[0] = 0.3f;
    a[1] = 0.4f;
    CHECK(pixel_loss(a, b) == doctest::Approx(0.5).epsilon(1e-6));

    // batch of two with per-example norms 1.0 and 3.0 -> mean 2.0
    Tensor<float> c(Shape{2, 1, 1, 1});
    Tensor<float> d(Shape{2, 1, 1, 1});
    c[0] = 1.0f;
    c[1] = 3.0f;
    CHECK(pixel_loss(c, d) == doctest::Approx(2.0).epsilon(1e-6));
}

TEST_CASE("boosted cross entropy oracles") {
    // uniform probabilities, K = 10 -> -log 0.1 - log 0.9
    Tensor<float> u(Shape{1, 10}, 0.1f);
    CHECK(bce_loss(u, {3}) == doctest::Approx(2.407946).epsilon(1e-5));

    // p_y = 0.7, max other = 0.2 -> -log 0.7 - log 0.8
    Tensor<float> p(Shape{1, 4}, std::vector<float>{0.7f, 0.2f, 0.06f, 0.04f});
    CHECK(bce_loss(p, {0}) == doctest::Approx(0.579818).epsilon(1e-5));

    // one-hot correct prediction -> 0 (floors keep both logs finite)
    Tensor<float> oh(Shape{1, 3}, std::vector<float>{0.0f, 1.0f, 0.0f});
    CHECK(bce_loss(oh, {1}) == doctest::Approx(0.0).epsilon(1e-9));

    // malformed rows are rejected
    Tensor<float> bad(Shape{1, 3}, std::vector<float>{0.5f, 0.5f, 0.5f});
    CHECK_THROWS_AS(bce_loss(bad, {0}), ArgumentError);
}

TEST_CASE("bce >= ce on random probability rows") {
    Rng rng(123);
    const int k = 10;
    for (int trial = 0; trial < 2000; ++trial) {
        Tensor<float> p(Shape{1, k});
        double s = 0;
        for (int j = 0; j < k; ++j) {
            p[std::size_t(j)] = float(-std::log(rng.uniform() + 1e-12));
            s += p[std::size_t(j)];
        }
        for (int j = 0; j < k; ++j) p[std::size_t(j)] = float(p[std::size_t(j)] / s);
        const int y = int(rng.below(k));
        CHECK(bce_loss(p, {y}) - ce_loss(p, {y}) >= -1e-9);
    }
}

TEST_CASE("feature similarity oracles") {
    Tensor<float> f1(Shape{1, 2}, std::vector<float>{1.0f, 2.0f});
    Tensor<float> f2(Shape{1, 2}, std::vector<float>{1.0f, 4.0f});
    CHECK(fsm_loss(f1, f1) == 0.0);
    CHECK(fsm_loss(f1, f2) == doctest::Approx(2.0));
    CHECK(fsm_loss(f1, f2) == fsm_loss(f2, f1));
}

TEST_CASE("combined loss arithmetic") {
    // BCE 0.6, FSM 2.0, soft weight 0.5, alpha 5 -> 0.6 + 5*2*0.5 = 5.6
    CHECK(0.6 + 5.0 * 2.0 * 0.5 == doctest::Approx(5.6));
    CHECK(jatp_total(0.0, 0.0, 3.0) == 0.0);
    CHECK(jatp_total(1.0, 0.5, 3.0) == doctest::Approx(2.5));
    LossWeights w;
    CHECK(w.alpha == 5.0);
    CHECK(w.beta == 3.0);
}

TEST_CASE("dlr oracles") {
    Tensor<float> z(Shape{1, 4}, std::vector<float>{3, 2, 1, 0});
    CHECK(dlr_objective(z, {0}) == doctest::Approx(-0.5));

    // z_y lowest -> positive (misclassified scores > 0)
    Tensor<float> z2(Shape{1, 4}, std::vector<float>{0, 3, 2, 1});
    CHECK(dlr_objective(z2, {0}) == doctest::Approx(1.5));

    // scale invariance up to the stabilizer
    Tensor<float> z3 = z;
    for (auto& v : z3.vec()) v *= 7.0f;
    CHECK(dlr_objective(z3, {0}) == doctest::Approx(-0.5).epsilon(1e-6));

    // K < 4 rejected
    Tensor<float> z4(Shape{1, 3}, std::vector<float>{1, 2, 3});
    CHECK_THROWS_AS(dlr_objective(z4, {0}), ConfigError);
}

TEST_CASE("graph bce/dlr gradients match finite differences") {
    Rng rng(5);
    auto z = ag::leaf(Tensor<double>::randn(Shape{3, 5}, rng), true);
    std::vector<int> labels{0, 2, 4};
    gradcheck::expect_ok({z}, [&] {
        return ag::mean(lossops::bce_per_example(ag::softmax(z), labels));
    });
    gradcheck::expect_ok(
        {z}, [&] { return ag::mean(lossops::dlr_per_example(z, labels)); });
}

TEST_CASE("jatp loss graph breakdown is self-consistent") {
    Rng rng(9);
    TargetModel tgt(2, 4, 11);
    tgt.set_frozen(true);
    Preprocessor pre(2, 1, 12);
    FullModel full = compose(pre, tgt);

    ImageBatch nat;
    nat.pixels = Tensor<float>::uniform(Shape{3, 3, 8, 8}, rng, 0.0f, 1.0f);
    nat.labels = {0, 1, 2};
    Tensor<float> adv = nat.pixels;
    for (auto& v : adv.vec())
        v = std::min(1.0f, std::max(0.0f, v + float(rng.uniform(-0.03, 0.03))));

    JatpGraphOptions opt;
    opt.tap = FeatureTap{FeatureTap::Host::full, "stage3"};
    auto g = jatp_loss_graph(full, adv, nat.pixels, nat.labels, opt);

    CHECK(g.breakdown.adversarial ==
          doctest::Approx(g.breakdown.bce + g.breakdown.fsm_weighted));
    CHECK(g.breakdown.total ==
          doctest::Approx(g.breakdown.adversarial +
                          opt.weights.beta * g.breakdown.pixel));
    CHECK(double(g.total->value[0]) == doctest::Approx(g.breakdown.total).epsilon(1e-5));

    // breakdown terms match the standalone loss functions
    Tensor<float> recovered = pre.apply(adv);
    CHECK(g.breakdown.pixel ==
          doctest::Approx(pixel_loss(recovered, nat.pixels)).epsilon(1e-5));
    ImageBatch advb{adv, nat.labels};
    Tensor<float> probs = softmax_rows(full.logits(advb));
    CHECK(g.breakdown.bce ==
          doctest::Approx(bce_loss(probs, nat.labels)).epsilon(1e-4));

    // unknown tap rejected
    JatpGraphOptions bad = opt;
    bad.tap.layer = "stage9";
    CHECK_THROWS_AS(jatp_loss_graph(full, adv, nat.pixels, nat.labels, bad),
                    ConfigError);
}

TEST_CASE("perfect natural prediction annihilates the fsm weight") {
    // wnat = 1 - p_y: with p_y == 1 the weighted FSM term must vanish.
    Rng rng(21);
    TargetModel tgt(2, 4, 31);
    tgt.set_frozen(true);
    Preprocessor pre = Preprocessor::identity(2, 1);
    FullModel full = compose(pre, tgt);

    ImageBatch nat;
    nat.pixels = Tensor<float>::uniform(Shape{2, 3, 8, 8}, rng, 0.0f, 1.0f);
    nat.labels = {0, 1};

    // scale the head so softmax saturates at the argmax class
    auto head_w = tgt.params().find("head.w");
    auto head_b = tgt.params().find("head.b");
    for (auto& v : head_w->value.vec()) v *= 400.0f;
    for (auto& v : head_b->value.vec()) v *= 400.0f;
    nat.labels = classify(full, nat);  // force p_y ~= 1

    ImageBatch adv = nat;
    for (auto& v : adv.pixels.vec())
        v = std::min(1.0f, std::max(0.0f, v + float(rng.uniform(-0.02, 0.02))));
    auto rec = adversarial_loss(full, adv, nat, {FeatureTap::Host::full, "stage2"},
                                5.0);
    CHECK(rec.fsm_weighted == doctest::Approx(0.0).epsilon(1e-6));
    CHECK(rec.adversarial == doctest::Approx(rec.bce + rec.fsm_weighted));
}
