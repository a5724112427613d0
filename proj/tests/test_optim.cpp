#include <doctest.h>

#include <cmath>

#include "demorph/optim.hpp"
#include "test_helpers.hpp"

using namespace demorph;

namespace {

// Minimal manual gradient plumbing: one parameter with grad_id 0.
GradBuffers grads_for(const std::vector<double>& g) { return GradBuffers{g}; }

}  // namespace

TEST_CASE("zero gradient leaves params unchanged") {
    Tensor w({3}, {1.0, -2.0, 0.5});
    w.grad_id = 0;
    ParamRefs refs{{"w", &w}};
    AdamState st;
    auto before = w.data;
    for (int i = 0; i < 5; ++i) adam_step(refs, grads_for({0.0, 0.0, 0.0}), st);
    CHECK(w.data == before);
    CHECK(st.step == 5);
    for (double m : st.m.at("w")) CHECK(m == 0.0);
}

TEST_CASE("moments decay toward zero once gradients stop") {
    Tensor w({1}, {0.0});
    w.grad_id = 0;
    ParamRefs refs{{"w", &w}};
    AdamState st;
    adam_step(refs, grads_for({1.0}), st);
    double prev = std::abs(st.m.at("w")[0]);
    for (int i = 0; i < 10; ++i) {
        adam_step(refs, grads_for({0.0}), st);
        double cur = std::abs(st.m.at("w")[0]);
        CHECK(cur < prev);
        prev = cur;
    }
}

TEST_CASE("first step with unit gradient moves by exactly lr (bias corrected)") {
    Tensor w({1}, {0.0});
    w.grad_id = 0;
    ParamRefs refs{{"w", &w}};
    AdamState st;  // lr 1e-3
    adam_step(refs, grads_for({1.0}), st);
    // mhat = vhat = 1 at step 1, so the step is lr/(1+eps)
    CHECK(std::abs(-w.data[0] - st.lr) < 1e-7 * st.lr);
}

TEST_CASE("adam descends (w-3)^2 from 0 within 200 steps at lr 0.1") {
    Tensor w({1}, {0.0});
    w.grad_id = 0;
    ParamRefs refs{{"w", &w}};
    AdamState st;
    st.lr = 0.1;
    for (int i = 0; i < 200; ++i) adam_step(refs, grads_for({2.0 * (w.data[0] - 3.0)}), st);
    CHECK(std::abs(w.data[0] - 3.0) < 0.05);
}

TEST_CASE("non-finite gradient aborts the whole update") {
    Tensor w({2}, {1.0, 2.0});
    w.grad_id = 0;
    Tensor u({1}, {5.0});
    u.grad_id = 1;
    ParamRefs refs{{"w", &w}, {"u", &u}};
    AdamState st;
    GradBuffers g{{0.5, std::nan("")}, {1.0}};
    auto w_before = w.data;
    auto u_before = u.data;
    CHECK_THROWS_AS(adam_step(refs, g, st), NumericError);
    CHECK(w.data == w_before);
    CHECK(u.data == u_before);  // aborted before touching anything
    CHECK(st.step == 0);
}

TEST_CASE("missing gradient buffer counts as zero") {
    Tensor w({2}, {1.0, 2.0});
    w.grad_id = 3;  // beyond the buffers we pass
    ParamRefs refs{{"w", &w}};
    AdamState st;
    adam_step(refs, GradBuffers{}, st);
    CHECK(w.data == std::vector<double>{1.0, 2.0});
}
