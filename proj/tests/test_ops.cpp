#include <doctest.h>

#include "demorph/ops.hpp"
#include "test_helpers.hpp"

using namespace demorph;

namespace {

// Tape gradient of a scalar-valued graph w.r.t. one chosen input.
template <typename BuildFn>
std::vector<double> tape_grad(BuildFn&& build, Tensor& wrt) {
    Tape tape;
    tape.watch(wrt);
    Tensor loss = build(&tape, wrt);
    auto grads = tape.backward(loss);
    return grads[static_cast<size_t>(wrt.grad_id)];
}

}  // namespace

TEST_CASE("conv2d identity kernel reproduces the input") {
    Rng rng(21);
    Tensor x = testutil::random_tensor({1, 1, 3, 3}, rng);
    Tensor k({1, 1, 1, 1}, {1.0});
    Tensor y = conv2d(nullptr, x, k, 1, 0);
    CHECK(y.shape == Shape{1, 1, 3, 3});
    CHECK(max_abs_diff(x, y) == 0.0);
}

TEST_CASE("conv2d hand-computed 2x2 example") {
    Tensor x({1, 1, 2, 2}, {1, 2, 3, 4});
    Tensor k({1, 1, 2, 2}, {1, 0, 0, 1});
    Tensor y = conv2d(nullptr, x, k, 1, 0);
    REQUIRE(y.shape == Shape{1, 1, 1, 1});
    CHECK(y.data[0] == 5.0);  // 1*1 + 4*1
}

TEST_CASE("conv2d geometry and errors") {
    Rng rng(22);
    Tensor x = testutil::random_tensor({2, 3, 9, 9}, rng);
    Tensor k = testutil::random_tensor({4, 3, 3, 3}, rng);
    Tensor y = conv2d(nullptr, x, k, 2, 1);
    CHECK(y.shape == Shape{2, 4, 5, 5});  // floor((9+2-3)/2)+1

    Tensor bad_k = testutil::random_tensor({4, 2, 3, 3}, rng);
    CHECK_THROWS_AS(conv2d(nullptr, x, bad_k, 1, 1), ShapeError);
    Tensor huge_k = testutil::random_tensor({1, 3, 12, 12}, rng);
    CHECK_THROWS_AS(conv2d(nullptr, x, huge_k, 1, 0), ShapeError);
}

TEST_CASE("conv2d finite-difference gradients") {
    Rng rng(23);
    Tensor x = testutil::random_tensor({2, 2, 5, 5}, rng);
    Tensor k = testutil::random_tensor({3, 2, 3, 3}, rng, 0.5);

    auto loss_of_kernel = [&](const Tensor& kk) {
        return sum_all(nullptr, conv2d(nullptr, x, kk, 2, 1)).data[0];
    };
    auto ad_k = tape_grad(
        [&](Tape* t, Tensor& kk) { return sum_all(t, conv2d(t, x, kk, 2, 1)); }, k);
    auto fd_k = testutil::finite_diff(loss_of_kernel, k);
    CHECK(testutil::max_rel_err(ad_k, fd_k) < 1e-5);

    auto loss_of_input = [&](const Tensor& xx) {
        return sum_all(nullptr, conv2d(nullptr, xx, k, 2, 1)).data[0];
    };
    auto ad_x = tape_grad(
        [&](Tape* t, Tensor& xx) { return sum_all(t, conv2d(t, xx, k, 2, 1)); }, x);
    auto fd_x = testutil::finite_diff(loss_of_input, x);
    CHECK(testutil::max_rel_err(ad_x, fd_x) < 1e-5);
}

TEST_CASE("conv_transpose2d expands a single pixel to the kernel") {
    Tensor x({1, 1, 1, 1}, {2.5});
    Tensor k({1, 1, 2, 2}, {1, 2, 3, 4});
    Tensor y = conv_transpose2d(nullptr, x, k, 1, 0);
    REQUIRE(y.shape == Shape{1, 1, 2, 2});
    for (int i = 0; i < 4; ++i) CHECK(y.data[static_cast<size_t>(i)] == 2.5 * k.data[static_cast<size_t>(i)]);
}

TEST_CASE("conv_transpose2d finite-difference gradients") {
    Rng rng(24);
    Tensor x = testutil::random_tensor({2, 3, 4, 4}, rng);
    Tensor k = testutil::random_tensor({3, 2, 4, 4}, rng, 0.5);
    auto mk_loss = [&](Tape* t, const Tensor& xx, const Tensor& kk) {
        Tensor y = conv_transpose2d(t, xx, kk, 2, 1);
        return mean_all(t, mul(t, y, y));
    };
    auto ad_k = tape_grad([&](Tape* t, Tensor& kk) { return mk_loss(t, x, kk); }, k);
    auto fd_k = testutil::finite_diff(
        [&](const Tensor& kk) { return mk_loss(nullptr, x, kk).data[0]; }, k);
    CHECK(testutil::max_rel_err(ad_k, fd_k) < 1e-5);

    auto ad_x = tape_grad([&](Tape* t, Tensor& xx) { return mk_loss(t, xx, k); }, x);
    auto fd_x = testutil::finite_diff(
        [&](const Tensor& xx) { return mk_loss(nullptr, xx, k).data[0]; }, x);
    CHECK(testutil::max_rel_err(ad_x, fd_x) < 1e-5);
}

TEST_CASE("batch_norm constant input normalizes to zero") {
    Tensor x = Tensor::full({3, 2, 4, 4}, 0.7);
    Tensor gamma = Tensor::full({2}, 1.0);
    Tensor beta = Tensor::zeros({2});
    auto state = make_batch_norm_state(2);
    Tensor y = batch_norm(nullptr, x, gamma, beta, state, BnMode::train);
    for (double v : y.data) CHECK(std::abs(v) < 1e-9);  // up to fp residue of the mean
}

TEST_CASE("batch_norm gamma=0 yields beta") {
    Rng rng(25);
    Tensor x = testutil::random_tensor({2, 3, 4, 4}, rng);
    Tensor gamma = Tensor::zeros({3});
    Tensor beta({3}, {0.1, -0.2, 0.3});
    auto state = make_batch_norm_state(3);
    Tensor y = batch_norm(nullptr, x, gamma, beta, state, BnMode::train);
    for (int64_t c = 0; c < 3; ++c)
        for (int64_t b = 0; b < 2; ++b)
            for (int64_t h = 0; h < 4; ++h)
                for (int64_t w = 0; w < 4; ++w)
                    CHECK(y.at4(b, c, h, w) == beta.data[static_cast<size_t>(c)]);
}

TEST_CASE("batch_norm train output has mean 0 variance 1 per channel") {
    Rng rng(26);
    Tensor x = testutil::random_tensor({8, 3, 6, 6}, rng, 2.0);
    Tensor gamma = Tensor::full({3}, 1.0);
    Tensor beta = Tensor::zeros({3});
    auto state = make_batch_norm_state(3);
    Tensor y = batch_norm(nullptr, x, gamma, beta, state, BnMode::train);
    int64_t n = 8 * 6 * 6;
    for (int64_t c = 0; c < 3; ++c) {
        double m = 0.0, v = 0.0;
        for (int64_t b = 0; b < 8; ++b)
            for (int64_t h = 0; h < 6; ++h)
                for (int64_t w = 0; w < 6; ++w) m += y.at4(b, c, h, w);
        m /= static_cast<double>(n);
        for (int64_t b = 0; b < 8; ++b)
            for (int64_t h = 0; h < 6; ++h)
                for (int64_t w = 0; w < 6; ++w) {
                    double d = y.at4(b, c, h, w) - m;
                    v += d * d;
                }
        v /= static_cast<double>(n);
        CHECK(std::abs(m) < 1e-6);
        CHECK(std::abs(v - 1.0) < 1e-4);  // eps in the denominator shifts variance slightly
    }
}

TEST_CASE("batch_norm eval mode is pure and uses running stats") {
    Rng rng(27);
    Tensor gamma = Tensor::full({2}, 1.5);
    Tensor beta = Tensor::full({2}, 0.25);
    auto state = make_batch_norm_state(2);
    // push some batches through to move the running stats
    for (int i = 0; i < 3; ++i) {
        Tensor x = testutil::random_tensor({4, 2, 3, 3}, rng);
        batch_norm(nullptr, x, gamma, beta, state, BnMode::train);
    }
    auto mean_before = state.running_mean.data;
    auto var_before = state.running_var.data;
    Tensor x = testutil::random_tensor({4, 2, 3, 3}, rng);
    Tensor y1 = batch_norm(nullptr, x, gamma, beta, state, BnMode::eval);
    Tensor y2 = batch_norm(nullptr, x, gamma, beta, state, BnMode::eval);
    CHECK(state.running_mean.data == mean_before);
    CHECK(state.running_var.data == var_before);
    CHECK(y1.data == y2.data);
}

TEST_CASE("batch_norm survives a single-sample zero-variance batch") {
    Tensor x = Tensor::full({1, 2, 1, 1}, 3.0);
    Tensor gamma = Tensor::full({2}, 1.0);
    Tensor beta = Tensor::zeros({2});
    auto state = make_batch_norm_state(2);
    Tensor y = batch_norm(nullptr, x, gamma, beta, state, BnMode::train);
    for (double v : y.data) CHECK(std::isfinite(v));
}

TEST_CASE("batch_norm channel mismatch is an error") {
    Tensor x = Tensor::zeros({1, 3, 2, 2});
    Tensor gamma = Tensor::full({2}, 1.0);
    Tensor beta = Tensor::zeros({2});
    auto state = make_batch_norm_state(2);
    CHECK_THROWS_AS(batch_norm(nullptr, x, gamma, beta, state, BnMode::train), ShapeError);
}

TEST_CASE("batch_norm finite-difference gradients in train mode") {
    Rng rng(28);
    Tensor x = testutil::random_tensor({3, 2, 3, 3}, rng);
    Tensor gamma({2}, {1.2, 0.8});
    Tensor beta({2}, {0.1, -0.1});
    auto loss = [&](Tape* t, const Tensor& xx, const Tensor& g, const Tensor& bt) {
        auto state = make_batch_norm_state(2);  // fresh state: train output ignores it
        Tensor y = batch_norm(t, xx, g, bt, state, BnMode::train);
        Tensor w = Tensor::zeros(y.shape);
        for (size_t i = 0; i < w.data.size(); ++i) w.data[i] = 0.1 + 0.01 * static_cast<double>(i % 7);
        return sum_all(t, mul(t, y, w));  // weighted sum exercises all grad paths
    };
    auto ad_x = tape_grad([&](Tape* t, Tensor& xx) { return loss(t, xx, gamma, beta); }, x);
    auto fd_x = testutil::finite_diff(
        [&](const Tensor& xx) { return loss(nullptr, xx, gamma, beta).data[0]; }, x);
    CHECK(testutil::max_rel_err(ad_x, fd_x) < 1e-5);

    auto ad_g = tape_grad([&](Tape* t, Tensor& g) { return loss(t, x, g, beta); }, gamma);
    auto fd_g = testutil::finite_diff(
        [&](const Tensor& g) { return loss(nullptr, x, g, beta).data[0]; }, gamma);
    CHECK(testutil::max_rel_err(ad_g, fd_g) < 1e-5);

    auto ad_b = tape_grad([&](Tape* t, Tensor& bt) { return loss(t, x, gamma, bt); }, beta);
    auto fd_b = testutil::finite_diff(
        [&](const Tensor& bt) { return loss(nullptr, x, gamma, bt).data[0]; }, beta);
    CHECK(testutil::max_rel_err(ad_b, fd_b) < 1e-5);
}

TEST_CASE("silu, add, mul, scale, channel bias, concat, linear gradients") {
    Rng rng(29);
    Tensor x = testutil::random_tensor({2, 3, 4, 4}, rng);

    auto silu_loss = [&](Tape* t, const Tensor& xx) { return sum_all(t, silu(t, xx)); };
    auto ad = tape_grad(silu_loss, x);
    auto fd = testutil::finite_diff(
        [&](const Tensor& xx) { return silu_loss(nullptr, xx).data[0]; }, x);
    CHECK(testutil::max_rel_err(ad, fd) < 1e-5);

    Tensor b = testutil::random_tensor({2, 3, 4, 4}, rng);
    auto mul_loss = [&](Tape* t, const Tensor& xx) { return sum_all(t, mul(t, xx, b)); };
    ad = tape_grad(mul_loss, x);
    fd = testutil::finite_diff([&](const Tensor& xx) { return mul_loss(nullptr, xx).data[0]; }, x);
    CHECK(testutil::max_rel_err(ad, fd) < 1e-5);

    auto scale_loss = [&](Tape* t, const Tensor& xx) { return sum_all(t, scale(t, xx, -2.5)); };
    ad = tape_grad(scale_loss, x);
    for (double g : ad) CHECK(g == -2.5);

    Tensor vb = testutil::random_tensor({2, 3}, rng);
    auto bias_loss = [&](Tape* t, const Tensor& vv) {
        Tensor y = add_channel_bias(t, x, vv);
        return mean_all(t, mul(t, y, y));
    };
    ad = tape_grad(bias_loss, vb);
    fd = testutil::finite_diff([&](const Tensor& vv) { return bias_loss(nullptr, vv).data[0]; }, vb);
    CHECK(testutil::max_rel_err(ad, fd) < 1e-5);

    Tensor vc = testutil::random_tensor({3}, rng);
    auto bias1_loss = [&](Tape* t, const Tensor& vv) {
        Tensor y = add_channel_bias(t, x, vv);
        return mean_all(t, mul(t, y, y));
    };
    ad = tape_grad(bias1_loss, vc);
    fd = testutil::finite_diff([&](const Tensor& vv) { return bias1_loss(nullptr, vv).data[0]; },
                               vc);
    CHECK(testutil::max_rel_err(ad, fd) < 1e-5);

    Tensor other = testutil::random_tensor({2, 2, 4, 4}, rng);
    auto concat_loss = [&](Tape* t, const Tensor& xx) {
        Tensor y = concat_channels(t, xx, other);
        return mean_all(t, mul(t, y, y));
    };
    ad = tape_grad(concat_loss, x);
    fd = testutil::finite_diff([&](const Tensor& xx) { return concat_loss(nullptr, xx).data[0]; },
                               x);
    CHECK(testutil::max_rel_err(ad, fd) < 1e-5);

    Tensor xi = testutil::random_tensor({4, 5}, rng);
    Tensor w = testutil::random_tensor({3, 5}, rng, 0.5);
    Tensor bias = testutil::random_tensor({3}, rng, 0.1);
    auto lin_loss = [&](Tape* t, const Tensor& ww) {
        Tensor y = linear(t, xi, ww, bias);
        return mean_all(t, mul(t, y, y));
    };
    ad = tape_grad(lin_loss, w);
    fd = testutil::finite_diff([&](const Tensor& ww) { return lin_loss(nullptr, ww).data[0]; }, w);
    CHECK(testutil::max_rel_err(ad, fd) < 1e-5);
}

TEST_CASE("sinusoidal embedding basics") {
    Tensor e0 = sinusoidal_time_embedding(0, 8);
    for (int i = 0; i < 8; i += 2) {
        CHECK(e0.data[static_cast<size_t>(i)] == 0.0);
        CHECK(e0.data[static_cast<size_t>(i + 1)] == 1.0);
    }
    CHECK_THROWS_AS(sinusoidal_time_embedding(0, 7), ConfigError);
    CHECK_THROWS_AS(sinusoidal_time_embedding(-1, 8), ConfigError);

    // range and distinctness for all steps of the working schedule
    std::vector<Tensor> embs;
    for (int t = 0; t <= 300; ++t) {
        Tensor e = sinusoidal_time_embedding(t, 32);
        for (double v : e.data) {
            CHECK(v <= 1.0);
            CHECK(v >= -1.0);
        }
        embs.push_back(std::move(e));
    }
    for (size_t i = 0; i < embs.size(); ++i)
        for (size_t j = i + 1; j < embs.size(); ++j)
            CHECK(max_abs_diff(embs[i], embs[j]) > 1e-9);
}

TEST_CASE("l1 loss values and gradients") {
    Rng rng(30);
    Tensor a = testutil::random_tensor({4, 4}, rng);
    CHECK(l1_loss(nullptr, a, a).data[0] == 0.0);

    Tensor shifted = a;
    for (auto& v : shifted.data) v += 0.37;
    CHECK(l1_loss(nullptr, shifted, a).data[0] == doctest::Approx(0.37).epsilon(1e-12));

    // brute-force oracle
    Tensor b = testutil::random_tensor({4, 4}, rng);
    double expect = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) expect += std::abs(a.data[i] - b.data[i]);
    expect /= static_cast<double>(a.size());
    CHECK(std::abs(l1_loss(nullptr, a, b).data[0] - expect) < 1e-12);

    Tensor c = Tensor::zeros({2, 2});
    CHECK_THROWS_AS(l1_loss(nullptr, a, c), ShapeError);

    // gradient away from kinks
    Tensor target = a;
    for (size_t i = 0; i < target.data.size(); ++i)
        target.data[i] += (i % 2 == 0 ? 0.2 : -0.2) + 0.01 * static_cast<double>(i);
    auto ad = tape_grad([&](Tape* t, Tensor& aa) { return l1_loss(t, aa, target); }, a);
    auto fd = testutil::finite_diff(
        [&](const Tensor& aa) { return l1_loss(nullptr, aa, target).data[0]; }, a);
    CHECK(testutil::max_rel_err(ad, fd) < 1e-5);

    // per-sample variant equals manual slicing
    Tensor pa = testutil::random_tensor({3, 2, 2, 2}, rng);
    Tensor pb = testutil::random_tensor({3, 2, 2, 2}, rng);
    Tensor per = l1_per_sample(nullptr, pa, pb);
    REQUIRE(per.shape == Shape{3});
    for (int64_t s = 0; s < 3; ++s) {
        double e = 0.0;
        for (int64_t i = 0; i < 8; ++i)
            e += std::abs(pa.data[static_cast<size_t>(s * 8 + i)] -
                          pb.data[static_cast<size_t>(s * 8 + i)]);
        CHECK(per.data[static_cast<size_t>(s)] == doctest::Approx(e / 8.0).epsilon(1e-14));
    }
}

TEST_CASE("gradient correctness across ops on 20 random instances") {
    // the umbrella property: tape vs central differences for a composite
    // graph touching conv, bn, silu, bias, l1
    for (uint64_t trial = 0; trial < 20; ++trial) {
        Rng rng(1000 + trial);
        Tensor x = testutil::random_tensor({1, 2, 4, 4}, rng);
        Tensor k = testutil::random_tensor({2, 2, 3, 3}, rng, 0.4);
        Tensor target = testutil::random_tensor({1, 2, 4, 4}, rng, 0.5);
        for (size_t i = 0; i < target.data.size(); ++i)
            target.data[i] += target.data[i] >= 0 ? 0.3 : -0.3;  // keep |pred-target| off 0

        auto build = [&](Tape* t, const Tensor& kk) {
            Tensor y = conv2d(t, x, kk, 1, 1);
            y = silu(t, y);
            return l1_loss(t, y, target);
        };
        auto ad = tape_grad([&](Tape* t, Tensor& kk) { return build(t, kk); }, k);
        auto fd = testutil::finite_diff(
            [&](const Tensor& kk) { return build(nullptr, kk).data[0]; }, k);
        CHECK(testutil::max_rel_err(ad, fd) < 1e-4);
    }
}
