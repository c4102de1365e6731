#include <cmath>

#include "doctest.h"
#include "ticketforge/autograd.hpp"
#include "ticketforge/rng.hpp"

using namespace ticketforge;

namespace {

// Central finite difference of a scalar function w.r.t. one input element.
template <typename Fn>
double central_diff(Fn&& f, Tensor<double>& x, std::size_t i, double step = 1e-3) {
    const double saved = x[i];
    x[i] = saved + step;
    const double hi = f();
    x[i] = saved - step;
    const double lo = f();
    x[i] = saved;
    return (hi - lo) / (2.0 * step);
}

bool close_rel(double a, double b, double rtol = 1e-3) {
    return std::fabs(a - b) <= rtol * std::max({std::fabs(a), std::fabs(b), 1e-3});
}

}  // namespace

TEST_SUITE_BEGIN("autograd");

TEST_CASE("backward of sum is all-ones") {
    GradTape<double> tape;
    Tensor<double> x({2, 3});
    Rng rng(1);
    for (auto& v : x.data) v = rng.normal();
    const auto leaf = tape.leaf(x);
    tape.backward(tape.sum(leaf));
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(tape.grad(leaf)[i] == 1.0);
}

TEST_CASE("backward of frobenius against a constant equals the constant") {
    GradTape<double> tape;
    Tensor<double> x({2, 2}), k({2, 2});
    Rng rng(2);
    for (auto& v : x.data) v = rng.normal();
    for (auto& v : k.data) v = rng.normal();
    const auto xl = tape.leaf(x);
    const auto kl = tape.leaf(k);
    tape.backward(tape.frobenius_inner(xl, kl));
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(tape.grad(xl)[i] == k[i]);
}

TEST_CASE("double consume is an error") {
    GradTape<double> tape;
    Tensor<double> x({2});
    x.data = {1, 2};
    const auto leaf = tape.leaf(x);
    const auto loss = tape.sum(leaf);
    tape.backward(loss);
    CHECK(tape.consumed());
    CHECK_THROWS_AS(tape.backward(loss), std::logic_error);
}

TEST_CASE("pooling backward deposits unit mass at the first argmax") {
    GradTape<double> tape;
    Tensor<double> x({1, 4});
    x.data = {2, 2, 1, 2};  // tie: index 0 wins
    const auto leaf = tape.leaf(x);
    const auto pooled = tape.max_pool_rows(leaf);
    tape.backward(tape.sum(pooled));
    CHECK(tape.grad(leaf)[0] == 1.0);
    CHECK(tape.grad(leaf)[1] == 0.0);
    CHECK(tape.grad(leaf)[2] == 0.0);
    CHECK(tape.grad(leaf)[3] == 0.0);

    // Finite differences on a perturbed copy confirm the tie-break rule:
    // nudging index 0 upward moves the max, nudging index 1 does not.
    Tensor<double> probe = x;
    auto pool_val = [&] {
        GradTape<double> t;
        const auto l = t.leaf(probe);
        return t.value(t.max_pool_rows(l))[0];
    };
    probe.data[0] = 2.0 + 1e-3;
    CHECK(pool_val() == doctest::Approx(2.0 + 1e-3));
    probe.data[0] = 2.0;
    probe.data[1] = 2.0 - 1e-3;
    CHECK(pool_val() == doctest::Approx(2.0));
}

TEST_CASE("gradient mass through pooling is exactly one index per row") {
    Rng rng(5);
    for (int trial = 0; trial < 30; ++trial) {
        GradTape<double> tape;
        Tensor<double> x({3, 7});
        for (auto& v : x.data) v = rng.normal();
        const auto leaf = tape.leaf(x);
        tape.backward(tape.sum(tape.max_pool_rows(leaf)));
        for (std::size_t row = 0; row < 3; ++row) {
            std::size_t nonzero = 0;
            double mass = 0.0;
            for (std::size_t c = 0; c < 7; ++c) {
                const double g = tape.grad(leaf)[row * 7 + c];
                if (g != 0.0) ++nonzero, mass += g;
            }
            CHECK(nonzero == 1);
            CHECK(mass == 1.0);
        }
    }
}

TEST_CASE("primitive gradients match central finite differences") {
    Rng rng(7);

    SUBCASE("conv1d with relu") {
        for (int trial = 0; trial < 5; ++trial) {
            Tensor<double> x({6, 3}), w({2, 2, 3}), b({2});
            for (auto& v : x.data) v = rng.normal();
            for (auto& v : w.data) v = rng.normal();
            for (auto& v : b.data) v = 0.1 * rng.normal();

            auto loss_of = [&] {
                GradTape<double> t;
                const auto xl = t.leaf(x), wl = t.leaf(w), bl = t.leaf(b);
                return t.value(t.sum(t.conv1d(xl, wl, bl, Activation::ReLU)))[0];
            };
            GradTape<double> tape;
            const auto xl = tape.leaf(x), wl = tape.leaf(w), bl = tape.leaf(b);
            tape.backward(tape.sum(tape.conv1d(xl, wl, bl, Activation::ReLU)));

            for (std::size_t i = 0; i < x.numel(); ++i)
                CHECK(close_rel(tape.grad(xl)[i], central_diff(loss_of, x, i)));
            for (std::size_t i = 0; i < w.numel(); ++i)
                CHECK(close_rel(tape.grad(wl)[i], central_diff(loss_of, w, i)));
            for (std::size_t i = 0; i < b.numel(); ++i)
                CHECK(close_rel(tape.grad(bl)[i], central_diff(loss_of, b, i)));
        }
    }

    SUBCASE("affine, relu and cross entropy") {
        Tensor<double> x({5}), w({5, 3}), b({3});
        for (auto& v : x.data) v = rng.normal();
        for (auto& v : w.data) v = rng.normal();
        for (auto& v : b.data) v = 0.1 * rng.normal();
        auto loss_of = [&] {
            GradTape<double> t;
            const auto xl = t.leaf(x), wl = t.leaf(w), bl = t.leaf(b);
            return t.value(t.softmax_cross_entropy(t.relu(t.affine(xl, wl, bl)), 1))[0];
        };
        GradTape<double> tape;
        const auto xl = tape.leaf(x), wl = tape.leaf(w), bl = tape.leaf(b);
        tape.backward(tape.softmax_cross_entropy(tape.relu(tape.affine(xl, wl, bl)), 1));
        for (std::size_t i = 0; i < x.numel(); ++i)
            CHECK(close_rel(tape.grad(xl)[i], central_diff(loss_of, x, i)));
        for (std::size_t i = 0; i < w.numel(); ++i)
            CHECK(close_rel(tape.grad(wl)[i], central_diff(loss_of, w, i)));
        for (std::size_t i = 0; i < b.numel(); ++i)
            CHECK(close_rel(tape.grad(bl)[i], central_diff(loss_of, b, i)));
    }

    SUBCASE("embedding gather scatters gradients to the right rows") {
        Tensor<double> table({4, 2});
        for (auto& v : table.data) v = rng.normal();
        const std::vector<std::int32_t> ids = {2, 0, 2};
        auto loss_of = [&] {
            GradTape<double> t;
            return t.value(t.sum(t.embedding_rows(t.leaf(table), ids)))[0];
        };
        GradTape<double> tape;
        const auto tl = tape.leaf(table);
        tape.backward(tape.sum(tape.embedding_rows(tl, ids)));
        for (std::size_t i = 0; i < table.numel(); ++i)
            CHECK(close_rel(tape.grad(tl)[i], central_diff(loss_of, table, i)));
        CHECK(tape.grad(tl).at(2, 0) == 2.0);  // row 2 gathered twice
        CHECK(tape.grad(tl).at(1, 0) == 0.0);  // row 1 never gathered
    }
}

TEST_CASE("dropout expectation is preserved on the tape") {
    Rng rng(9);
    Tensor<double> x({100000});
    x.fill(1.0);
    GradTape<double> tape;
    const auto leaf = tape.leaf(x);
    const auto dropped = tape.dropout(leaf, 0.285, rng);
    double sum = 0.0;
    for (double v : tape.value(dropped).data) sum += v;
    CHECK(std::fabs(sum / 100000.0 - 1.0) < 0.02);
}

TEST_SUITE_END();
