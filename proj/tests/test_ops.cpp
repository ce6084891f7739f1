#include <doctest.h>

#include <cmath>

#include "attnd/errors.hpp"
#include "attnd/gradcheck.hpp"
#include "attnd/ops.hpp"
#include "attnd/rng.hpp"

using namespace attnd;
using namespace attnd::ops;

namespace {

Tensor randn(std::vector<size_t> shape, Rng& rng, bool requires_grad = true) {
    Tensor t(std::move(shape), 0.0, requires_grad);
    for (double& v : t.data()) v = rng.normal();
    return t;
}

Tensor identity(size_t n) {
    Tensor t({n, n});
    for (size_t i = 0; i < n; ++i) t.mut(i, i) = 1.0;
    return t;
}

}  // namespace

TEST_CASE("matmul basics") {
    Rng rng(1);
    Tensor x = randn({3, 3}, rng, false);
    Tensor ix = matmul(identity(3), x);
    CHECK(ix.data() == x.data());

    Tensor a({2, 2}, {1, 2, 3, 4});
    Tensor b({2, 1}, {1, 1});
    Tensor c = matmul(a, b);
    CHECK(c.at(0, 0) == 3.0);
    CHECK(c.at(1, 0) == 7.0);

    CHECK_THROWS_WITH_AS(matmul(Tensor({2, 3}), Tensor({2, 3})), doctest::Contains("[2x3]"),
                         DimensionError);
}

TEST_CASE("matmul gradient vs finite differences") {
    Rng rng(2);
    Tensor b = randn({4, 2}, rng, false);
    auto f = [&](const Tensor& a) { return sum_all(matmul(a, b)); };
    const GradCheckReport r = grad_check(f, randn({3, 4}, rng), 1e-5, 1e-6);
    CHECK(r.pass);
}

TEST_CASE("softmax examples") {
    Tensor z({4}, {0.0, 0.0, 0.0, 0.0});
    Tensor s = softmax_last(z);
    for (size_t i = 0; i < 4; ++i) CHECK(s.at(i) == 0.25);

    Tensor l({3}, {std::log(1.0), std::log(2.0), std::log(3.0)});
    Tensor s2 = softmax_last(l);
    CHECK(s2.at(0) == doctest::Approx(1.0 / 6).epsilon(1e-12));
    CHECK(s2.at(1) == doctest::Approx(2.0 / 6).epsilon(1e-12));
    CHECK(s2.at(2) == doctest::Approx(3.0 / 6).epsilon(1e-12));
}

TEST_CASE("softmax shift invariance") {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor x = randn({6}, rng, false);
        const double c = 10.0 * rng.normal();
        Tensor shifted({6});
        for (size_t i = 0; i < 6; ++i) shifted.data()[i] = x.data()[i] + c;
        Tensor a = softmax_last(x), b = softmax_last(shifted);
        for (size_t i = 0; i < 6; ++i) CHECK(a.at(i) == doctest::Approx(b.at(i)).epsilon(1e-12));
    }
}

TEST_CASE("softmax is a distribution for all finite inputs") {
    Rng rng(4);
    for (int trial = 0; trial < 100; ++trial) {
        const size_t n = 1 + rng.uniform_int(12);
        Tensor x(std::vector<size_t>{n});
        for (double& v : x.data()) v = 500.0 * rng.normal();  // extreme logits
        Tensor s = softmax_last(x);
        double sum = 0.0;
        for (double v : s.data()) {
            CHECK(v >= 0.0);
            sum += v;
        }
        CHECK(std::fabs(sum - 1.0) <= 1e-9);
    }
}

TEST_CASE("softmax over a middle axis") {
    Rng rng(5);
    Tensor x = randn({2, 3, 2}, rng, false);
    Tensor s = softmax(x, 1);
    for (size_t i = 0; i < 2; ++i) {
        for (size_t k = 0; k < 2; ++k) {
            double sum = 0.0;
            for (size_t j = 0; j < 3; ++j) sum += s.at(i, j, k);
            CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
        }
    }
}

TEST_CASE("softmax of a permuted slice is the permuted softmax, bit-exact") {
    Rng rng(6);
    Tensor x = randn({8}, rng, false);
    const std::vector<size_t> perm = {5, 2, 7, 0, 3, 6, 1, 4};
    Tensor px({8});
    for (size_t i = 0; i < 8; ++i) px.data()[i] = x.data()[perm[i]];
    Tensor s = softmax_last(x), ps = softmax_last(px);
    for (size_t i = 0; i < 8; ++i) CHECK(ps.at(i) == s.at(perm[i]));
}

TEST_CASE("layer_norm examples") {
    SUBCASE("constant slice maps to zero") {
        Tensor x({1, 4}, 3.7);
        Tensor g({4}, 1.0), b({4}, 0.0);
        Tensor y = layer_norm(x, g, b);
        for (double v : y.data()) CHECK(v == 0.0);
    }
    SUBCASE("two-point slice with tiny eps") {
        Tensor x({1, 2}, {1.0, 3.0});
        Tensor g({2}, 1.0), b({2}, 0.0);
        Tensor y = layer_norm(x, g, b, 1e-12);
        CHECK(y.at(0, 0) == doctest::Approx(-1.0).epsilon(1e-9));
        CHECK(y.at(0, 1) == doctest::Approx(1.0).epsilon(1e-9));
    }
    SUBCASE("gradient vs finite differences on random 2x4") {
        Rng rng(7);
        Tensor g = randn({4}, rng, false), b = randn({4}, rng, false);
        auto f = [&](const Tensor& x) { return sum_all(mul(layer_norm(x, g, b), x)); };
        const GradCheckReport r = grad_check(f, randn({2, 4}, rng), 1e-5, 1e-6);
        CHECK(r.pass);
    }
    SUBCASE("eps must be positive") {
        Tensor x({1, 2}, 0.0);
        CHECK_THROWS_AS(layer_norm(x, Tensor({2}, 1.0), Tensor({2}), 0.0), InputError);
    }
}

TEST_CASE("cross_entropy_prob clamps zero probabilities") {
    Tensor p({4}, {0.0, 1.0, 0.0, 0.0});
    CHECK(cross_entropy_prob(p, 1).value() == 0.0);
    CHECK(cross_entropy_prob(p, 0).value() == doctest::Approx(-std::log(1e-12)));
    CHECK_THROWS_AS(cross_entropy_prob(p, 9), InputError);
}

TEST_CASE("forward_kl examples and errors") {
    Tensor u({4}, 0.25);
    CHECK(forward_kl(u, u).value() == 0.0);
    Tensor p({4}, {1.0, 0.0, 0.0, 0.0});
    // the 1e-12 log clamp shifts the exact ln 4 by ~3e-12
    CHECK(std::fabs(forward_kl(p, u).value() - std::log(4.0)) <= 1e-9);
    Tensor p2({2}, {0.5, 0.5});
    Tensor q2({2}, {0.25, 0.75});
    const double expected = 0.5 * std::log(2.0) + 0.5 * std::log(2.0 / 3.0);
    CHECK(forward_kl(p2, q2).value() == doctest::Approx(expected).epsilon(1e-12));
    CHECK(expected == doctest::Approx(0.143841).epsilon(1e-5));
    CHECK_THROWS_AS(forward_kl(p, p2), DimensionError);
}

TEST_CASE("embedding lookup gathers rows and scatters gradients") {
    Tensor table({3, 2}, {1, 2, 3, 4, 5, 6}, true);
    Tensor out = embedding(table, {2, 0, 2});
    CHECK(out.at(0, 0) == 5.0);
    CHECK(out.at(1, 1) == 2.0);
    Tensor loss = sum_all(out);
    loss.backward();
    CHECK(table.grad()[0] == 1.0);  // row 0 used once
    CHECK(table.grad()[2] == 0.0);  // row 1 never used
    CHECK(table.grad()[4] == 2.0);  // row 2 used twice
    CHECK_THROWS_AS(embedding(table, {3}), InputError);
}

TEST_CASE("slices, concat and transpose round-trip gradients") {
    Rng rng(8);
    SUBCASE("slice_cols") {
        auto f = [](const Tensor& x) { return sum_all(mul(slice_cols(x, 1, 3), slice_cols(x, 1, 3))); };
        CHECK(grad_check(f, randn({3, 4}, rng), 1e-5, 1e-6).pass);
    }
    SUBCASE("slice_rows + concat_rows") {
        auto f = [](const Tensor& x) {
            Tensor top = slice_rows(x, 0, 1);
            Tensor rest = slice_rows(x, 1, 3);
            return sum_all(mul(concat_rows(rest, top), concat_rows(rest, top)));
        };
        CHECK(grad_check(f, randn({3, 2}, rng), 1e-5, 1e-6).pass);
    }
    SUBCASE("transpose") {
        Tensor a = randn({2, 3}, rng, false);
        Tensor t = transpose(a);
        CHECK(t.at(2, 1) == a.at(1, 2));
    }
}

// Autodiff vs central differences across every primitive on randomized small
// shapes; this is the per-op dual route the rest of the project leans on.
TEST_CASE("property: all primitives pass gradient checks on random shapes") {
    Rng rng(1234);
    int cases = 0;
    auto shape2 = [&]() {
        return std::vector<size_t>{1 + rng.uniform_int(4), 1 + rng.uniform_int(4)};
    };
    for (int trial = 0; trial < 15; ++trial) {
        {
            const size_t m = 1 + rng.uniform_int(3), k = 1 + rng.uniform_int(3),
                         n = 1 + rng.uniform_int(3);
            Tensor b = randn({k, n}, rng, false);
            auto f = [&](const Tensor& a) { return sum_all(mul(matmul(a, b), matmul(a, b))); };
            CHECK(grad_check(f, randn({m, k}, rng), 1e-5, 1e-5).pass);
            ++cases;
        }
        {
            auto s = shape2();
            Tensor b = randn(s, rng, false);
            auto f = [&](const Tensor& a) { return sum_all(mul(add(a, b), mul(a, b))); };
            CHECK(grad_check(f, randn(s, rng), 1e-5, 1e-5).pass);
            ++cases;
        }
        {
            auto s = shape2();
            auto f = [](const Tensor& x) { return sum_all(mul(gelu(x), gelu(x))); };
            CHECK(grad_check(f, randn(s, rng), 1e-5, 1e-5).pass);
            ++cases;
        }
        {
            auto s = shape2();
            auto f = [](const Tensor& x) { return sum_all(tanh_t(x)); };
            CHECK(grad_check(f, randn(s, rng), 1e-5, 1e-5).pass);
            ++cases;
        }
        {
            auto s = shape2();
            auto f = [](const Tensor& x) { return sum_all(mul(softmax_last(x), x)); };
            CHECK(grad_check(f, randn(s, rng), 1e-5, 1e-5).pass);
            ++cases;
        }
        {
            auto s = shape2();
            Tensor row = randn({s[1]}, rng, false);
            auto f = [&](const Tensor& x) { return sum_all(mul(add_row(x, row), x)); };
            CHECK(grad_check(f, randn(s, rng), 1e-5, 1e-5).pass);
            ++cases;
        }
        {
            const size_t n = 2 + rng.uniform_int(5);
            Tensor logits = randn({n}, rng, false);
            Tensor q = softmax_last(logits);
            auto f = [&](const Tensor& x) { return forward_kl(softmax_last(x), q); };
            CHECK(grad_check(f, randn({n}, rng), 1e-5, 1e-5).pass);
            ++cases;
        }
        {
            const size_t n = 2 + rng.uniform_int(5);
            const size_t idx = rng.uniform_int(n);
            auto f = [&](const Tensor& x) { return cross_entropy_prob(softmax_last(x), idx); };
            CHECK(grad_check(f, randn({n}, rng), 1e-5, 1e-5).pass);
            ++cases;
        }
    }
    CHECK(cases >= 100);
}

TEST_CASE("property: forward_kl is nonnegative on random simplex pairs") {
    Rng rng(77);
    for (int trial = 0; trial < 300; ++trial) {
        const size_t n = 2 + rng.uniform_int(40);
        auto simplex = [&]() {
            Tensor t(std::vector<size_t>{n});
            double sum = 0.0;
            for (double& v : t.data()) {
                v = -std::log(std::max(rng.uniform01(), 1e-300));
                sum += v;
            }
            for (double& v : t.data()) v /= sum;
            return t;
        };
        CHECK(forward_kl(simplex(), simplex()).value() >= -1e-12);
    }
}
