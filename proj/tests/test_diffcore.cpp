#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mvgs/common/rng.hpp"
#include "mvgs/diff/gradcheck.hpp"
#include "mvgs/diff/tape.hpp"

using namespace mvgs;
using namespace mvgs::diff;

namespace {

NDArray random_array(Shape s, Rng& rng, double scale = 1.0) {
    NDArray a(std::move(s));
    for (auto& x : a.data) x = scale * rng.normal();
    return a;
}

}  // namespace

TEST_CASE("closed-form forward values") {
    Tape t;
    Value x = t.constant(NDArray::scalar(0.0));
    CHECK(softplus(x).val()[0] == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    Value eye = t.constant(NDArray::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1}));
    Value v = t.constant(NDArray::from({3, 1}, {2.0, -1.5, 0.25}));
    Value mv = matmul(eye, v);
    for (int i = 0; i < 3; ++i) CHECK(mv.val()[i] == v.val()[i]);

    Value logits = t.constant(NDArray::from({1, 3}, {0.7, 0.7, 0.7}));
    Value sm = softmax_rows(logits);
    for (int i = 0; i < 3; ++i) CHECK(sm.val()[i] == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
}

TEST_CASE("backward basics") {
    SUBCASE("sum gives all-ones") {
        Tape t;
        Value x = t.leaf(NDArray(Shape{3, 4}, 2.5));
        Value y = sum_all(x);
        t.backward(y);
        for (int64_t i = 0; i < 12; ++i) CHECK(x.grad()[i] == 1.0);
    }
    SUBCASE("product of scalars") {
        Tape t;
        Value x = t.leaf(NDArray::scalar(3.0));
        Value y = t.leaf(NDArray::scalar(-2.0));
        t.backward(mul(x, y));
        CHECK(x.grad()[0] == -2.0);
        CHECK(y.grad()[0] == 3.0);
    }
    SUBCASE("sigmoid'(0) = 0.25") {
        Tape t;
        Value x = t.leaf(NDArray::scalar(0.0));
        t.backward(sigmoid(x));
        CHECK(x.grad()[0] == doctest::Approx(0.25).epsilon(1e-14));
    }
    SUBCASE("unreachable leaf has no grad") {
        Tape t;
        Value x = t.leaf(NDArray::scalar(1.0));
        Value y = t.leaf(NDArray::scalar(2.0));
        t.backward(mul(x, x));
        CHECK(!y.node()->has_grad);
    }
    SUBCASE("non-scalar root rejected") {
        Tape t;
        Value x = t.leaf(NDArray(Shape{2}, 1.0));
        CHECK_THROWS(t.backward(x));
    }
}

TEST_CASE("check_gradient on quadratics and constants") {
    Rng rng(7);
    NDArray x = random_array({5}, rng);
    const double err = check_gradient(
        [](Tape&, const Value& v) { return sum_all(square(v)); }, x, 1e-5);
    CHECK(err < 1e-7);

    const double cerr = check_gradient(
        [](Tape& t, const Value&) { return t.constant(NDArray::scalar(4.0)); }, x, 1e-5);
    CHECK(cerr == 0.0);
}

TEST_CASE("chain rule matches central differences for every primitive") {
    Rng rng(11);
    const double tol = 1e-6;
    auto check = [&](const std::string& name, const ScalarFn& f, NDArray x, double step = 1e-6) {
        INFO(name);
        CHECK(check_gradient(f, x, step) < tol);
    };

    NDArray a = random_array({3, 4}, rng);
    NDArray b = random_array({3, 4}, rng);
    NDArray pos = random_array({3, 4}, rng);
    for (auto& v : pos.data) v = std::abs(v) + 0.5;

    check("add", [&](Tape& t, const Value& v) { return sum_all(square(add(v, t.constant(b)))); }, a);
    check("add_broadcast", [&](Tape& t, const Value& v) {
        return sum_all(square(add(t.constant(a), v)));
    }, random_array({4}, rng));
    check("sub", [&](Tape& t, const Value& v) { return sum_all(square(sub(t.constant(b), v))); }, a);
    check("mul", [&](Tape& t, const Value& v) { return sum_all(square(mul(v, t.constant(b)))); }, a);
    check("mul_broadcast_small", [&](Tape& t, const Value& v) {
        return sum_all(square(mul(t.constant(a), v)));
    }, random_array({4}, rng));
    check("div", [&](Tape& t, const Value& v) { return sum_all(div(t.constant(a), v)); }, pos);
    check("neg", [&](Tape&, const Value& v) { return sum_all(square(neg(v))); }, a);
    check("sin", [&](Tape&, const Value& v) { return sum_all(sin(v)); }, a);
    check("cos", [&](Tape&, const Value& v) { return sum_all(cos(v)); }, a);
    check("exp", [&](Tape&, const Value& v) { return sum_all(exp(v)); }, a);
    check("log", [&](Tape&, const Value& v) { return sum_all(log(v)); }, pos);
    check("sqrt", [&](Tape&, const Value& v) { return sum_all(sqrt(v)); }, pos);
    check("tanh", [&](Tape&, const Value& v) { return sum_all(tanh(v)); }, a);
    check("sigmoid", [&](Tape&, const Value& v) { return sum_all(sigmoid(v)); }, a);
    check("softplus", [&](Tape&, const Value& v) { return sum_all(softplus(v)); }, a);
    check("leaky_relu", [&](Tape&, const Value& v) { return sum_all(square(leaky_relu(v, 0.2))); }, a);
    check("clamp", [&](Tape&, const Value& v) { return sum_all(square(clamp(v, -0.4, 0.4))); }, a);
    NDArray w42 = random_array({4, 2}, rng);
    check("matmul_lhs", [&](Tape& t, const Value& v) {
        return sum_all(square(matmul(v, t.constant(w42))));
    }, a);
    check("matmul_rhs", [&](Tape& t, const Value& v) {
        return sum_all(square(matmul(t.constant(a), v)));
    }, random_array({4, 2}, rng));
    check("transpose", [&](Tape&, const Value& v) { return sum_all(square(transpose2d(v))); }, a);
    check("reshape", [&](Tape&, const Value& v) { return sum_all(square(reshape(v, {2, 6}))); }, a);
    check("mean_all", [&](Tape&, const Value& v) { return mean_all(square(v)); }, a);
    check("sum_last", [&](Tape&, const Value& v) { return sum_all(square(sum_last(v))); }, a);
    check("repeat_last", [&](Tape&, const Value& v) {
        return sum_all(square(repeat_last(v, 5)));
    }, random_array({3, 1}, rng));
    check("softmax", [&](Tape& t, const Value& v) {
        return sum_all(mul(softmax_rows(v), t.constant(b)));
    }, a);
    check("gather", [&](Tape&, const Value& v) {
        return sum_all(square(gather_rows(v, {2, 0, 0, -1, 1})));
    }, a);
    check("scatter", [&](Tape&, const Value& v) {
        auto idx = std::make_shared<const std::vector<int>>(std::vector<int>{4, 1, 1});
        return sum_all(square(scatter_rows(v, idx, 6)));
    }, a);
    check("concat", [&](Tape& t, const Value& v) {
        return sum_all(square(concat_rows({v, t.constant(b)})));
    }, a);
    check("slice_last", [&](Tape&, const Value& v) { return sum_all(square(slice_last(v, 1, 3))); }, a);
}

TEST_CASE("shape mismatch rejected with shapes named") {
    Tape t;
    Value a = t.constant(NDArray(Shape{2, 3}, 1.0));
    Value b = t.constant(NDArray(Shape{3, 3}, 1.0));
    CHECK_THROWS_WITH_AS(add(a, b),
                         doctest::Contains("[2,3]"), std::invalid_argument);
    CHECK_THROWS_AS(matmul(a, a), std::invalid_argument);
    // inner broadcasting is not supported, only trailing-suffix
    Value c = t.constant(NDArray(Shape{2, 1}, 1.0));
    CHECK_THROWS_AS(add(a, c), std::invalid_argument);
}

TEST_CASE("detach stops gradient flow") {
    Tape t;
    Value x = t.leaf(NDArray::scalar(2.0));
    Value y = mul(detach(square(x)), x);  // y = c * x with c = 4
    t.backward(y);
    CHECK(x.grad()[0] == 4.0);
}

TEST_CASE("determinism and replay") {
    auto run = [](std::vector<double>* grads) {
        Tape t;
        Rng rng(42);
        Value x = t.leaf(random_array({6, 6}, rng));
        Value w = t.constant(random_array({6, 6}, rng));
        Value y = sum_all(tanh(matmul(x, w)));
        t.backward(y);
        if (grads) *grads = x.grad().data;
        return y.val()[0];
    };
    std::vector<double> g1, g2;
    const double v1 = run(&g1);
    const double v2 = run(&g2);
    CHECK(v1 == v2);
    CHECK(g1 == g2);

    Tape t;
    Rng rng(1);
    Value x = t.leaf(random_array({4, 4}, rng));
    Value y = sum_all(exp(mul(x, x)));
    t.backward(y);
    CHECK(t.replay_matches());
}

TEST_CASE("accumulation modes agree within fp bounds and reproduce exactly") {
    Rng rng(3);
    NDArray x0 = random_array({8}, rng);
    auto run = [&](bool sorted) {
        Tape t;
        t.sorted_accumulation = sorted;
        Value x = t.leaf(x0);
        // x used by three consumers -> three contributions accumulate
        Value y = sum_all(add(add(square(x), sin(x)), mul(x, x)));
        t.backward(y);
        return x.grad().data;
    };
    auto gfast1 = run(false), gfast2 = run(false);
    auto gsort1 = run(true), gsort2 = run(true);
    CHECK(gfast1 == gfast2);
    CHECK(gsort1 == gsort2);
    for (size_t i = 0; i < gfast1.size(); ++i)
        CHECK(gfast1[i] == doctest::Approx(gsort1[i]).epsilon(1e-14));
}

TEST_CASE("f32 mode rounds values and stays deterministic") {
    set_precision(Precision::f32);
    Tape t;
    Value x = t.constant(NDArray::scalar(1.0 / 3.0));
    Value y = mul(x, x);
    CHECK(static_cast<double>(static_cast<float>(y.val()[0])) == y.val()[0]);
    set_precision(Precision::f64);
}

TEST_CASE("double backward: gradient of a gradient norm") {
    // y = sum(x^3); g = dy/dx = 3x^2; r = sum(g^2) = 9 sum(x^4); dr/dx = 36 x^3.
    Tape t;
    NDArray x0 = NDArray::from({3}, {0.5, -1.25, 2.0});
    Value x = t.leaf(x0);
    Value y = sum_all(mul(mul(x, x), x));
    auto grads = t.backward_graph(y);
    Value g = grads.at(x.id());
    Value r = sum_all(square(g));
    t.backward(r);
    for (int i = 0; i < 3; ++i)
        CHECK(x.grad()[i] == doctest::Approx(36.0 * std::pow(x0[i], 3)).epsilon(1e-12));
}
