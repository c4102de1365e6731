#include <cmath>

#include "doctest.h"
#include "ticketforge/ops.hpp"
#include "ticketforge/rng.hpp"
#include "ticketforge/tensor.hpp"

using namespace ticketforge;

namespace {

Tensor<double> make2(std::vector<double> values, std::size_t rows, std::size_t cols) {
    Tensor<double> t({rows, cols});
    t.data.assign(values.begin(), values.end());
    return t;
}

}  // namespace

TEST_SUITE_BEGIN("tensor");

TEST_CASE("frobenius inner product") {
    CHECK(frobenius_inner(make2({1, 2, 3, 4}, 2, 2), make2({1, 0, 0, 1}, 2, 2)) ==
          doctest::Approx(5.0));
    CHECK(frobenius_inner(make2({1, 1, 1, 1}, 2, 2), make2({1, 1, 1, 1}, 2, 2)) ==
          doctest::Approx(4.0));

    // Hand sum cross-checked against a naive double loop.
    const auto a = make2({2, -1, 0, 3}, 2, 2);
    const auto b = make2({1, 2, 3, -1}, 2, 2);
    double naive = 0.0;
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 2; ++j) naive += a.at(i, j) * b.at(i, j);
    CHECK(naive == doctest::Approx(-3.0));
    CHECK(frobenius_inner(a, b) == doctest::Approx(naive));

    CHECK_THROWS_WITH_AS(frobenius_inner(make2({1, 2}, 1, 2), make2({1, 2, 3, 4}, 2, 2)),
                         doctest::Contains("[1,2]"), std::invalid_argument);
}

TEST_CASE("conv1d forward") {
    Tensor<double> x({4, 1});
    x.data = {1, 2, 3, 4};
    Tensor<double> w({2, 1});
    w.data = {1, 1};
    const auto out = conv1d_forward(x, w, 0.0, Activation::Identity);
    REQUIRE(out.shape == std::vector<std::size_t>{3});
    CHECK(out[0] == doctest::Approx(3));
    CHECK(out[1] == doctest::Approx(5));
    CHECK(out[2] == doctest::Approx(7));

    Tensor<double> neg({2, 1});
    neg.data = {1, -2};
    const auto relu_out = conv1d_forward(neg, w, 0.0, Activation::ReLU);
    REQUIRE(relu_out.numel() == 1);
    CHECK(relu_out[0] == 0.0);

    // Output length is n-h+1 for all valid n, h.
    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t h = 1 + rng.below(6);
        const std::size_t n = h + rng.below(500);
        Tensor<double> xt({n, 2});
        for (auto& v : xt.data) v = rng.normal();
        Tensor<double> wt({h, 2});
        for (auto& v : wt.data) v = rng.normal();
        CHECK(conv1d_forward(xt, wt, 0.1, Activation::ReLU).numel() == n - h + 1);
    }
    {
        Tensor<double> xt({500, 3});
        Tensor<double> wt({3, 3});
        CHECK(conv1d_forward(xt, wt, 0.0, Activation::Identity).numel() == 498);
    }

    Tensor<double> tiny({1, 1});
    CHECK_THROWS_WITH_AS(conv1d_forward(tiny, w, 0.0, Activation::Identity),
                         doctest::Contains("sequence shorter than filter"),
                         std::invalid_argument);
}

TEST_CASE("max pool") {
    Tensor<double> v({3});
    v.data = {3, 5, 7};
    CHECK(max_pool1(v) == 7);
    Tensor<double> neg({2});
    neg.data = {-1, -5};
    CHECK(max_pool1(neg) == -1);
    Tensor<double> tie({2});
    tie.data = {2, 2};
    CHECK(max_pool1(tie) == 2);
    CHECK(argmax_first(std::span<const double>(tie.data)) == 0);
    Tensor<double> empty({0});
    CHECK_THROWS_AS(max_pool1(empty), std::invalid_argument);
}

TEST_CASE("dropout") {
    Rng rng(11);
    Tensor<double> x({10});
    for (auto& v : x.data) v = rng.normal();

    SUBCASE("p=0 is identity") {
        CHECK(dropout(x, 0.0, Mode::Train, rng).data == x.data);
    }
    SUBCASE("eval mode is identity") {
        CHECK(dropout(x, 0.285, Mode::Eval, rng).data == x.data);
    }
    SUBCASE("p >= 1 rejected") {
        CHECK_THROWS_AS(dropout(x, 1.0, Mode::Train, rng), std::invalid_argument);
    }
    SUBCASE("drop fraction and expectation at 1e6 samples") {
        Tensor<double> big({1000000});
        big.fill(1.0);
        const auto out = dropout(big, 0.285, Mode::Train, rng);
        std::size_t dropped = 0;
        double sum = 0.0;
        for (double v : out.data) {
            if (v == 0.0) ++dropped;
            sum += v;
        }
        const double fraction = static_cast<double>(dropped) / 1e6;
        CHECK(std::fabs(fraction - 0.285) < 0.005);
        // Inverted dropout preserves the mean within 2%.
        CHECK(std::fabs(sum / 1e6 - 1.0) < 0.02);
    }
}

TEST_CASE("softmax cross entropy") {
    Tensor<double> uniform({2});
    CHECK(softmax_cross_entropy(uniform, 0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    Tensor<double> wide({2});
    wide.data = {10, -10};
    // -log sigmoid(20), evaluated in closed form.
    CHECK(softmax_cross_entropy(wide, 0) ==
          doctest::Approx(std::log1p(std::exp(-20.0))).epsilon(1e-9));
    CHECK(softmax_cross_entropy(wide, 0) == doctest::Approx(2.06e-9).epsilon(0.01));

    const auto grad = softmax_cross_entropy_grad(uniform, 1);
    CHECK(grad[0] == doctest::Approx(0.5));
    CHECK(grad[1] == doctest::Approx(-0.5));

    CHECK_THROWS_WITH_AS(softmax_cross_entropy(uniform, 2), doctest::Contains("out of range"),
                         std::invalid_argument);

    // Shift invariance: adding a constant to all logits changes nothing.
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        Tensor<double> logits({4});
        for (auto& v : logits.data) v = rng.uniform(-30, 30);
        Tensor<double> shifted = logits;
        const double c = rng.uniform(-100, 100);
        for (auto& v : shifted.data) v += c;
        const std::size_t label = rng.below(4);
        CHECK(std::fabs(softmax_cross_entropy(logits, label) -
                        softmax_cross_entropy(shifted, label)) < 1e-12);
    }
}

TEST_CASE("tensor invariants") {
    Tensor<float> t({2, 3});
    CHECK(t.numel() == 6);
    CHECK(t.shape.size() == 2);
    t.at(1, 2) = 5.0f;
    CHECK(t.data[5] == 5.0f);
    t.require_finite("t");
    t[0] = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_AS(t.require_finite("t"), NumericError);
}

TEST_CASE("rng moments and determinism") {
    Rng a(42), b(42);
    for (int i = 0; i < 1000; ++i) CHECK(a.next_u64() == b.next_u64());

    Rng rng(123);
    double sum = 0.0, sq = 0.0;
    const int n = 1000000;
    for (int i = 0; i < n; ++i) {
        const double v = rng.normal();
        sum += v;
        sq += v * v;
    }
    const double mean = sum / n;
    const double var = sq / n - mean * mean;
    CHECK(std::fabs(mean) < 0.01);
    CHECK(std::fabs(var - 1.0) < 0.02);
}

TEST_SUITE_END();
