#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "gradcheck.hpp"
#include "jatp/nn.hpp"

using namespace jatp;
using ag::Var;

namespace {

Var<double> dleaf(Shape shape, Rng& rng, double scale = 1.0) {
    return ag::leaf(Tensor<double>::randn(std::move(shape), rng, scale), true);
}

}  // namespace

TEST_CASE("elementwise op gradients") {
    Rng rng(1);
    auto a = dleaf(Shape{3, 4}, rng);
    auto b = dleaf(Shape{3, 4}, rng);
    gradcheck::expect_ok({a, b}, [&] { return ag::mean(ag::mul(ag::add(a, b), ag::sub(a, b))); });
    gradcheck::expect_ok({a}, [&] { return ag::sum(ag::scale(a, 2.5)); });
}

TEST_CASE("relu gradient away from the kink") {
    Rng rng(2);
    auto a = dleaf(Shape{20}, rng);
    for (auto& v : a->value.vec())
        if (std::abs(v) < 0.05) v += 0.1;  // keep clear of 0
    gradcheck::expect_ok({a}, [&] { return ag::mean(ag::relu(a)); });
}

TEST_CASE("clamp01 gradient is zero in saturated regions") {
    auto a = ag::leaf(
        Tensor<double>(Shape{4}, std::vector<double>{-0.5, 0.3, 0.7, 1.5}), true);
    auto out = ag::clamp01(a);
    CHECK(out->value[0] == 0.0);
    CHECK(out->value[3] == 1.0);
    ag::backward(ag::sum(out));
    CHECK(a->grad[0] == 0.0);
    CHECK(a->grad[1] == 1.0);
    CHECK(a->grad[2] == 1.0);
    CHECK(a->grad[3] == 0.0);
}

TEST_CASE("linear layer gradients") {
    Rng rng(3);
    auto x = dleaf(Shape{2, 5}, rng);
    auto w = dleaf(Shape{3, 5}, rng);
    auto b = dleaf(Shape{3}, rng);
    gradcheck::expect_ok({x, w, b}, [&] {
        return ag::mean(ag::mul(ag::linear(x, w, b), ag::linear(x, w, b)));
    });
}

TEST_CASE("conv2d gradients incl. stride and padding") {
    Rng rng(4);
    auto x = dleaf(Shape{2, 2, 5, 5}, rng);
    auto w = dleaf(Shape{3, 2, 3, 3}, rng, 0.5);
    auto b = dleaf(Shape{3}, rng);
    gradcheck::expect_ok({x, w, b}, [&] {
        auto y = ag::conv2d(x, w, b, 2, 1);
        return ag::mean(ag::mul(y, y));
    });
}

TEST_CASE("conv2d matches a direct convolution oracle") {
    // brute-force direct convolution, independent of im2col
    Rng rng(5);
    auto x = dleaf(Shape{1, 2, 4, 4}, rng);
    auto w = dleaf(Shape{2, 2, 3, 3}, rng);
    auto b = dleaf(Shape{2}, rng);
    auto y = ag::conv2d(x, w, b, 1, 1);
    for (int co = 0; co < 2; ++co)
        for (int oy = 0; oy < 4; ++oy)
            for (int ox = 0; ox < 4; ++ox) {
                double s = b->value[std::size_t(co)];
                for (int ci = 0; ci < 2; ++ci)
                    for (int ky = 0; ky < 3; ++ky)
                        for (int kx = 0; kx < 3; ++kx) {
                            const int iy = oy + ky - 1, ix = ox + kx - 1;
                            if (iy < 0 || iy >= 4 || ix < 0 || ix >= 4) continue;
                            s += x->value[std::size_t((ci * 4 + iy) * 4 + ix)] *
                                 w->value[std::size_t(((co * 2 + ci) * 3 + ky) * 3 + kx)];
                        }
                CHECK(y->value[std::size_t((co * 4 + oy) * 4 + ox)] ==
                      doctest::Approx(s).epsilon(1e-12));
            }
}

TEST_CASE("pooling, softmax, cross entropy gradients") {
    Rng rng(6);
    auto x = dleaf(Shape{2, 3, 4, 4}, rng);
    gradcheck::expect_ok({x}, [&] {
        auto p = ag::global_avg_pool(x);
        return ag::mean(ag::mul(p, p));
    });

    auto z = dleaf(Shape{3, 5}, rng);
    std::vector<int> labels{0, 2, 4};
    gradcheck::expect_ok({z}, [&] {
        auto p = ag::softmax(z);
        return ag::mean(ag::mul(p, p));
    });
    gradcheck::expect_ok(
        {z}, [&] { return ag::mean(ag::cross_entropy_per_example(z, labels)); });
    gradcheck::expect_ok({z}, [&] {
        return ag::mean(ag::gather_class(ag::softmax(z), labels));
    });
}

TEST_CASE("distance op gradients") {
    Rng rng(7);
    auto a = dleaf(Shape{3, 6}, rng);
    auto b = dleaf(Shape{3, 6}, rng);
    gradcheck::expect_ok({a, b}, [&] { return ag::mean(ag::mse_per_example(a, b)); });
    gradcheck::expect_ok({a, b},
                         [&] { return ag::mean(ag::l2_norm_per_example(a, b)); });

    auto za = dleaf(Shape{2, 4}, rng);
    auto zb = dleaf(Shape{2, 4}, rng);
    gradcheck::expect_ok({za, zb}, [&] {
        return ag::mean(ag::kl_per_example(ag::softmax(za), ag::softmax(zb)));
    });
}

TEST_CASE("l2 norm gradient is zero at coincident inputs") {
    auto a = ag::leaf(Tensor<double>(Shape{1, 3}, 0.5), true);
    auto b = ag::leaf(Tensor<double>(Shape{1, 3}, 0.5), false);
    auto n = ag::l2_norm_per_example(a, b);
    CHECK(n->value[0] == 0.0);
    ag::backward(ag::sum(n));
    for (std::size_t i = 0; i < 3; ++i) CHECK(a->grad[i] == 0.0);
}

TEST_CASE("gradients accumulate across shared subgraphs") {
    auto a = ag::leaf(Tensor<double>(Shape{1}, 3.0), true);
    auto y = ag::add(ag::mul(a, a), ag::scale(a, 2.0));  // a^2 + 2a
    ag::backward(ag::sum(y));
    CHECK(a->grad[0] == doctest::Approx(8.0));  // 2a + 2
}

TEST_CASE("backward requires a scalar root") {
    auto a = ag::leaf(Tensor<double>(Shape{2}, 1.0), true);
    CHECK_THROWS_AS(ag::backward(ag::relu(a)), ArgumentError);
}

TEST_CASE("small residual classifier end-to-end gradient check") {
    // a full forward through the classifier, in double precision
    nn::MiniResNet<double> net(2, 4, 99, 1);
    CHECK(net.params().numel() <= 5000);
    Rng rng(8);
    auto x = ag::leaf(Tensor<double>::uniform(Shape{2, 1, 8, 8}, rng, 0.0, 1.0),
                      true);
    std::vector<int> labels{1, 3};
    std::vector<Var<double>> leaves{x};
    for (std::size_t i = 0; i < net.params().count(); ++i)
        leaves.push_back(net.params().param(i));
    gradcheck::expect_ok(leaves, [&] {
        return ag::mean(ag::cross_entropy_per_example(net.forward(x), labels));
    });
}
