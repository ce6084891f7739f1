#include <doctest.h>

#include "attnd/errors.hpp"
#include "attnd/gradcheck.hpp"
#include "attnd/ops.hpp"
#include "attnd/rng.hpp"
#include "attnd/tensor.hpp"

using namespace attnd;

namespace {

Tensor randn(std::vector<size_t> shape, Rng& rng, bool requires_grad = true) {
    Tensor t(std::move(shape), 0.0, requires_grad);
    for (double& v : t.data()) v = rng.normal();
    return t;
}

}  // namespace

TEST_CASE("tensor shape/data invariants") {
    Tensor t({2, 3}, 1.5);
    CHECK(t.size() == 6);
    CHECK(t.rank() == 2);
    CHECK(t.at(1, 2) == 1.5);
    CHECK_THROWS_AS(Tensor({2, 0}), DimensionError);
    CHECK_THROWS_AS(Tensor({2, 3}, {1.0, 2.0}), DimensionError);
    CHECK_THROWS_AS(Tensor(std::vector<size_t>{}), DimensionError);
}

TEST_CASE("grad buffer matches shape after backward") {
    Rng rng(3);
    Tensor x = randn({3, 4}, rng);
    Tensor loss = ops::sum_all(ops::mul(x, x));
    loss.backward();
    CHECK(x.grad().size() == x.size());
    for (size_t i = 0; i < x.size(); ++i) {
        CHECK(x.grad()[i] == doctest::Approx(2.0 * x.data()[i]).epsilon(1e-12));
    }
}

TEST_CASE("backward of sum gives ones") {
    Tensor x({5}, 2.0, true);
    Tensor loss = ops::sum_all(x);
    loss.backward();
    for (double g : x.grad()) CHECK(g == 1.0);
}

TEST_CASE("backward requires a scalar") {
    Tensor x({3}, 1.0, true);
    Tensor y = ops::scale(x, 2.0);
    CHECK_THROWS_AS(y.backward(), StateError);
}

TEST_CASE("repeated backward without reset is a state error") {
    Tensor x({2}, 1.0, true);
    Tensor loss = ops::sum_all(x);
    loss.backward();
    CHECK_THROWS_AS(loss.backward(), StateError);
    loss.zero_grad();  // resets the root
    CHECK_NOTHROW(loss.backward());
}

TEST_CASE("gradient accumulation is additive and zero_grad resets") {
    Tensor x({2}, 3.0, true);
    Tensor l1 = ops::sum_all(x);
    l1.backward();
    Tensor l2 = ops::sum_all(ops::scale(x, 2.0));
    l2.backward();
    CHECK(x.grad()[0] == 3.0);  // 1 + 2
    x.zero_grad();
    CHECK(x.grad()[0] == 0.0);
}

TEST_CASE("cross-entropy of softmax has the closed-form gradient") {
    // loss = CE(softmax(z), k)  =>  dz = softmax(z) - onehot(k)
    Rng rng(11);
    Tensor z = randn({4}, rng);
    const size_t k = 2;
    Tensor p = ops::softmax_last(z);
    Tensor loss = ops::cross_entropy_prob(p, k);
    loss.backward();
    for (size_t i = 0; i < 4; ++i) {
        const double expected = p.at(i) - (i == k ? 1.0 : 0.0);
        CHECK(z.grad()[i] == doctest::Approx(expected).epsilon(1e-9));
    }
}

TEST_CASE("backward is deterministic bit for bit") {
    auto run = [](uint64_t seed) {
        Rng rng(seed);
        Tensor a = randn({4, 4}, rng);
        Tensor b = randn({4, 4}, rng);
        Tensor loss = ops::sum_all(ops::mul(ops::matmul(a, b), ops::add(a, b)));
        loss.backward();
        return std::make_pair(a.grad(), b.grad());
    };
    const auto first = run(99);
    const auto second = run(99);
    CHECK(first.first == second.first);
    CHECK(first.second == second.second);
}

TEST_CASE("frozen subgraphs are pruned at record time") {
    Tensor a({2, 2}, 1.0, false);
    Tensor b({2, 2}, 2.0, false);
    Tensor c = ops::matmul(a, b);
    CHECK_FALSE(c.needs_grad());
    CHECK(c.node()->parents.empty());
}

TEST_CASE("grad_check passes on smooth closed-form cases") {
    Rng rng(5);
    SUBCASE("sum of squares") {
        auto f = [](const Tensor& x) { return ops::sum_all(ops::mul(x, x)); };
        const GradCheckReport r = grad_check(f, randn({5}, rng), 1e-5, 1e-6);
        CHECK(r.pass);
    }
    SUBCASE("constant function") {
        auto f = [](const Tensor& x) { return ops::scale(ops::sum_all(ops::scale(x, 0.0)), 1.0); };
        const GradCheckReport r = grad_check(f, randn({4}, rng), 1e-5, 1e-12);
        CHECK(r.pass);
        CHECK(r.max_rel_err == 0.0);
    }
    SUBCASE("kl of softmax against a fixed target") {
        Tensor q({5}, {0.4, 0.3, 0.1, 0.1, 0.1});
        auto f = [&](const Tensor& x) { return ops::forward_kl(ops::softmax_last(x), q); };
        const GradCheckReport r = grad_check(f, randn({5}, rng), 1e-5, 1e-5);
        CHECK(r.pass);
    }
}
