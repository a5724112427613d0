#include <doctest.h>

#include "demorph/ops.hpp"
#include "demorph/tape.hpp"
#include "demorph/tensor.hpp"
#include "test_helpers.hpp"

using namespace demorph;

TEST_CASE("tensor shape/data invariant") {
    CHECK_THROWS_AS(Tensor({2, 3}, {1.0, 2.0}), ShapeError);
    CHECK_THROWS_AS(Tensor({0, 3}, {}), ShapeError);
    Tensor t = Tensor::zeros({2, 3});
    CHECK(t.size() == 6);
}

TEST_CASE("ensure_finite rejects NaN and Inf") {
    Tensor t = Tensor::zeros({3});
    t.data[1] = std::nan("");
    CHECK_THROWS_AS(ensure_finite(t, "test"), NumericError);
    t.data[1] = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(ensure_finite(t, "test"), NumericError);
}

TEST_CASE("backward of sum(x) is all ones") {
    Rng rng(1);
    Tensor x = testutil::random_tensor({4, 5}, rng);
    Tape tape;
    tape.watch(x);
    Tensor loss = sum_all(&tape, x);
    auto grads = tape.backward(loss);
    REQUIRE(x.grad_id >= 0);
    for (double g : grads[static_cast<size_t>(x.grad_id)]) CHECK(g == 1.0);
}

TEST_CASE("backward of sum(x*x) is 2x") {
    Rng rng(2);
    Tensor x = testutil::random_tensor({7}, rng);
    Tape tape;
    tape.watch(x);
    Tensor loss = sum_all(&tape, mul(&tape, x, x));
    auto grads = tape.backward(loss);
    const auto& g = grads[static_cast<size_t>(x.grad_id)];
    for (size_t i = 0; i < g.size(); ++i) CHECK(g[i] == doctest::Approx(2.0 * x.data[i]).epsilon(1e-14));
}

TEST_CASE("backward on a detached tensor is a usage error") {
    Tensor x = Tensor::zeros({1});
    Tape tape;
    CHECK_THROWS_AS(tape.backward(x), TapeError);
}

TEST_CASE("backward requires a scalar and consumes the tape") {
    Rng rng(3);
    Tensor x = testutil::random_tensor({3}, rng);
    Tape tape;
    tape.watch(x);
    Tensor y = mul(&tape, x, x);
    CHECK_THROWS_AS(tape.backward(y), TapeError);  // not scalar

    Tensor loss = sum_all(&tape, y);
    auto grads = tape.backward(loss);
    CHECK(grads.size() == tape.num_nodes());
    CHECK(tape.consumed());
    CHECK_THROWS_AS(tape.backward(loss), TapeError);
}

TEST_CASE("side branches not feeding the loss stay untouched") {
    Rng rng(4);
    Tensor x = testutil::random_tensor({3}, rng);
    Tensor z = testutil::random_tensor({3}, rng);
    Tape tape;
    tape.watch(x);
    tape.watch(z);
    Tensor unused = mul(&tape, z, z);  // recorded but unreachable from loss
    Tensor loss = sum_all(&tape, x);
    auto grads = tape.backward(loss);
    CHECK(grads[static_cast<size_t>(unused.grad_id)].empty());
    CHECK(grads[static_cast<size_t>(z.grad_id)].empty());
    CHECK(grads[static_cast<size_t>(x.grad_id)].size() == 3);
}

TEST_CASE("gradients accumulate when a tensor fans out") {
    Tensor x({1}, {3.0});
    Tape tape;
    tape.watch(x);
    Tensor y = add(&tape, x, x);  // dy/dx = 2
    Tensor loss = sum_all(&tape, y);
    auto grads = tape.backward(loss);
    CHECK(grads[static_cast<size_t>(x.grad_id)][0] == 2.0);
}

TEST_CASE("identical seed gives bit-identical forward and backward") {
    auto run = [](uint64_t seed) {
        Rng rng(seed);
        Tensor x = testutil::random_tensor({2, 3, 4, 4}, rng);
        Tensor k = testutil::random_tensor({2, 3, 3, 3}, rng, 0.3);
        Tape tape;
        tape.watch(x);
        tape.watch(k);
        Tensor y = silu(&tape, conv2d(&tape, x, k, 1, 1));
        Tensor loss = mean_all(&tape, mul(&tape, y, y));
        auto grads = tape.backward(loss);
        return std::make_tuple(y.data, loss.data[0], grads[static_cast<size_t>(x.grad_id)],
                               grads[static_cast<size_t>(k.grad_id)]);
    };
    auto a = run(99), b = run(99);
    CHECK(std::get<0>(a) == std::get<0>(b));
    CHECK(std::get<1>(a) == std::get<1>(b));
    CHECK(std::get<2>(a) == std::get<2>(b));
    CHECK(std::get<3>(a) == std::get<3>(b));
}
