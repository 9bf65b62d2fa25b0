#include <doctest.h>

#include <cmath>
#include <random>

#include "voxa/adam.hpp"
#include "voxa/gradcheck.hpp"
#include "voxa/losses.hpp"
#include "voxa/ops_spatial.hpp"

using namespace voxa;

TEST_CASE("silu at zero is zero") {
    Tensor<double> x(NdArray<double>::scalar(0.0));
    CHECK(silu(x).val().v[0] == 0.0);
}

TEST_CASE("softmax over a length-1 axis is 1") {
    Tensor<double> x(NdArray<double>::from({2, 1}, {3.7, -2.0}));
    auto s = softmax(x, 1);
    CHECK(s.val().v[0] == doctest::Approx(1.0));
    CHECK(s.val().v[1] == doctest::Approx(1.0));
}

TEST_CASE("softmax rows sum to one") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> d(0, 2);
    NdArray<double> a({4, 7});
    for (auto& v : a.v) v = d(rng);
    auto s = softmax(Tensor<double>(a), 1);
    for (int r = 0; r < 4; ++r) {
        double sum = 0;
        for (int c = 0; c < 7; ++c) sum += s.val().v[std::size_t(r * 7 + c)];
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("group_norm of a constant channel group is zeros") {
    NdArray<double> a({1, 4, 5}, 2.5);
    auto g = group_norm(Tensor<double>(a), 4);
    for (double v : g.val().v) CHECK(std::abs(v) < 1e-9);
}

TEST_CASE("backward of x*x at x=3 gives 6") {
    Tape<double> tape;
    auto x = tape.leaf(NdArray<double>::scalar(3.0), true);
    auto y = mul(x, x);
    tape.backward(y);
    CHECK(tape.grad_of(x).v[0] == doctest::Approx(6.0));
}

TEST_CASE("a leaf feeding two branches sums both path gradients") {
    // y = x + x^2 -> dy/dx = 1 + 2x
    Tape<double> tape;
    auto x = tape.leaf(NdArray<double>::scalar(1.5), true);
    auto y = add(x, mul(x, x));
    tape.backward(y);
    CHECK(tape.grad_of(x).v[0] == doctest::Approx(1.0 + 2.0 * 1.5));
}

TEST_CASE("tape refuses double consumption and non-scalar roots") {
    Tape<double> tape;
    auto x = tape.leaf(NdArray<double>({2, 2}, 1.0), true);
    auto y = sum_all(x);
    tape.backward(y);
    CHECK_THROWS(tape.backward(y));

    Tape<double> tape2;
    auto x2 = tape2.leaf(NdArray<double>({2, 2}, 1.0), true);
    auto y2 = scale(x2, 2.0);
    CHECK_THROWS_AS(tape2.backward(y2), ShapeError);
}

TEST_CASE("linear layer gradients match finite differences") {
    CHECK(run_gradcheck("linear") < 1e-4);
}

TEST_CASE("conv3d gradients match finite differences") {
    CHECK(run_gradcheck("conv3d") < 1e-4);
}

TEST_CASE("softmax composed with cross_entropy matches finite differences") {
    CHECK(run_gradcheck("softmax_cross_entropy_chain") < 1e-4);
}

TEST_CASE("unknown gradcheck kind is rejected") {
    CHECK_THROWS_AS(run_gradcheck("definitely_not_an_op"), std::invalid_argument);
}

TEST_CASE("cross_entropy of uniform logits is ln(V)") {
    NdArray<double> logits({2, 9}, 0.3);
    auto l = cross_entropy(Tensor<double>(logits), {4, 7}, {1, 1});
    CHECK(l.val().v[0] == doctest::Approx(std::log(9.0)).epsilon(1e-9));
}

TEST_CASE("cross_entropy closed form for logits (10,0)") {
    NdArray<double> logits = NdArray<double>::from({1, 2}, {10.0, 0.0});
    auto l = cross_entropy(Tensor<double>(logits), {0}, {1});
    CHECK(l.val().v[0] == doctest::Approx(std::log(1.0 + std::exp(-10.0))).epsilon(1e-9));
}

TEST_CASE("cross_entropy averages positions and skips padding") {
    NdArray<double> logits = NdArray<double>::from({3, 2}, {2.0, 0.0, 0.0, 3.0, 50.0, 0.0});
    auto both = cross_entropy(Tensor<double>(logits), {0, 1, 1}, {1, 1, 0});
    const double l1 = std::log(1.0 + std::exp(-2.0));
    const double l2 = std::log(1.0 + std::exp(-3.0));
    CHECK(both.val().v[0] == doctest::Approx(0.5 * (l1 + l2)).epsilon(1e-9));

    CHECK_THROWS_AS(cross_entropy(Tensor<double>(logits), {0, 2, 0}, {1, 1, 1}), ShapeError);
}

TEST_CASE("soft dice loss endpoints and half-overlap value") {
    NdArray<double> target({20}, 0.0);
    for (int i = 0; i < 10; ++i) target.v[std::size_t(i)] = 1.0;

    NdArray<double> match = target;
    for (auto& v : match.v) v = std::clamp(v, 1e-9, 1.0 - 1e-9);
    CHECK(soft_dice_loss(Tensor<double>(match), target).val().v[0] < 1e-5);

    NdArray<double> anti = target;
    for (auto& v : anti.v) v = std::clamp(1.0 - v, 1e-9, 1.0 - 1e-9);
    CHECK(soft_dice_loss(Tensor<double>(anti), target).val().v[0] > 1.0 - 1e-5);

    NdArray<double> half({20}, 0.5);
    CHECK(soft_dice_loss(Tensor<double>(half), target).val().v[0] ==
          doctest::Approx(0.5).epsilon(1e-5));
}

TEST_CASE("backward is linear in the loss combination") {
    auto run = [](double a, double b) {
        Tape<double> tape;
        auto x = tape.leaf(NdArray<double>::from({3}, {0.4, -1.2, 2.0}), true);
        auto l1 = sum_all(mul(x, x));
        auto l2 = sum_all(silu(x));
        auto total = add(scale(l1, a), scale(l2, b));
        tape.backward(total);
        return tape.grad_of(x);
    };
    auto g1 = run(1.0, 0.0);
    auto g2 = run(0.0, 1.0);
    auto gc = run(1.7, -0.6);
    for (int i = 0; i < 3; ++i)
        CHECK(gc.v[std::size_t(i)] ==
              doctest::Approx(1.7 * g1.v[std::size_t(i)] - 0.6 * g2.v[std::size_t(i)]).epsilon(1e-6));
}

TEST_CASE("every registered op passes its finite-difference check") {
    for (const auto& entry : gradcheck_registry()) {
        INFO(entry.name);
        CHECK(entry.run() < 1e-4);
    }
}

TEST_CASE("repeated forward+backward is bit-identical") {
    auto run = [] {
        Tape<float> tape;
        std::mt19937_64 rng(11);
        auto x = tape.leaf(normal_init<float>({2, 3, 4, 4, 3}, 1.0, rng), true);
        auto w = tape.leaf(normal_init<float>({4, 3, 3, 3, 3}, 0.3, rng), true);
        auto b = tape.leaf(normal_init<float>({4}, 0.1, rng), true);
        auto y = conv3d(x, w, b);
        auto z = sum_all(silu(group_norm(y, 4)));
        tape.backward(z);
        return std::pair{z.val().v[0], tape.grad_of(w).v};
    };
    auto [v1, g1] = run();
    auto [v2, g2] = run();
    CHECK(v1 == v2);
    CHECK(g1 == g2);
}

TEST_CASE("adam leaves parameters unchanged under zero gradient") {
    ParamStore<float> store;
    auto& p = store.add("w", NdArray<float>::from({3}, {1.f, -2.f, 0.5f}));
    auto state = AdamState<float>::for_params(store);
    const auto before = p.value->v;
    adam_step(store, state, {.lr = 1e-2});
    CHECK(p.value->v == before);
    CHECK(state.t == 1);
}

TEST_CASE("adam first-step magnitude is about lr") {
    ParamStore<float> store;
    auto& p = store.add("w", NdArray<float>::from({2}, {1.f, 1.f}));
    p.grad.v = {0.37f, -4.0f};
    auto state = AdamState<float>::for_params(store);
    adam_step(store, state, {.lr = 1e-3});
    CHECK(p.value->v[0] == doctest::Approx(1.f - 1e-3).epsilon(1e-4));
    CHECK(p.value->v[1] == doctest::Approx(1.f + 1e-3).epsilon(1e-4));
}

TEST_CASE("adam under a constant gradient moves monotonically against it") {
    ParamStore<float> store;
    auto& p = store.add("w", NdArray<float>::from({1}, {0.f}));
    auto state = AdamState<float>::for_params(store);
    float prev = 0.f;
    for (int t = 0; t < 5; ++t) {
        p.grad.v[0] = 2.0f;
        adam_step(store, state, {.lr = 1e-2});
        CHECK(p.value->v[0] < prev);
        prev = p.value->v[0];
        p.zero_grad();
    }
    CHECK(state.t == 5);
}

TEST_CASE("parameter gradients accumulate across backward calls") {
    ParamStore<float> store;
    auto& p = store.add("w", NdArray<float>::from({1}, {2.f}));
    for (int pass = 0; pass < 3; ++pass) {
        Tape<float> tape;
        auto w = tape.param(p);
        tape.backward(mul(w, w));
    }
    CHECK(p.grad.v[0] == doctest::Approx(3 * 2 * 2.f));
}

TEST_CASE("max_pool3d ceil mode keeps edge windows") {
    NdArray<float> a({1, 1, 1, 1, 5});
    a.v = {1.f, 5.f, 2.f, 9.f, 3.f};
    auto p = max_pool3d(Tensor<float>(a), {1, 1, 2});
    REQUIRE(p.shape() == std::vector<int>{1, 1, 1, 1, 3});
    CHECK(p.val().v[0] == 5.f);
    CHECK(p.val().v[1] == 9.f);
    CHECK(p.val().v[2] == 3.f);
}

TEST_CASE("trilinear_resize doubling matches the resample convention") {
    NdArray<float> a({1, 1, 1, 1, 4});
    a.v = {0.f, 1.f, 2.f, 3.f};
    auto r = trilinear_resize(Tensor<float>(a), {1, 1, 8}, {1.0, 1.0, 0.5});
    for (int k = 0; k < 8; ++k) {
        const double f = std::clamp((k + 0.5) * 0.5 - 0.5, 0.0, 3.0);
        CHECK(r.val().v[std::size_t(k)] == doctest::Approx(f).epsilon(1e-6));
    }
}

TEST_CASE("ops off tape return plain values") {
    Tensor<float> a(NdArray<float>({2, 2}, 1.f));
    Tensor<float> b(NdArray<float>({2, 2}, 2.f));
    auto c = add(a, b);
    CHECK_FALSE(c.on_tape());
    CHECK(c.val().v[0] == 3.f);
}
