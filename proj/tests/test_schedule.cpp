#include <doctest.h>

#include <cmath>
#include <sstream>

#include "demorph/ops.hpp"
#include "demorph/schedule.hpp"
#include "test_helpers.hpp"

using namespace demorph;

namespace {

// Edge schedule with externally chosen tables (the builder forbids these).
NoiseSchedule manual_schedule(std::vector<double> betas) {
    NoiseSchedule s;
    s.T = static_cast<int>(betas.size());
    s.betas = std::move(betas);
    double abar = 1.0;
    for (double b : s.betas) {
        s.alphas.push_back(1.0 - b);
        double prev = abar;
        abar *= 1.0 - b;
        s.alpha_bars.push_back(abar);
        s.tilde_betas.push_back(s.tilde_betas.empty() ? b : (1.0 - prev) / (1.0 - abar) * b);
    }
    return s;
}

}  // namespace

TEST_CASE("linear schedule endpoints and shape") {
    auto s = build_linear_schedule(300, 1e-4, 0.02);
    CHECK(s.betas.front() == 1e-4);
    CHECK(s.betas.back() == 0.02);
    CHECK(s.betas.size() == 300);

    auto two = build_linear_schedule(2, 0.1, 0.3);
    CHECK(two.betas == std::vector<double>{0.1, 0.3});

    CHECK_THROWS_AS(build_linear_schedule(1, 1e-4, 0.02), ConfigError);
    CHECK_THROWS_AS(build_linear_schedule(10, 0.02, 1e-4), ConfigError);
    CHECK_THROWS_AS(build_linear_schedule(10, 0.0, 0.02), ConfigError);
    CHECK_THROWS_AS(build_linear_schedule(10, 0.5, 1.0), ConfigError);
}

TEST_CASE("schedule table identities") {
    auto s = build_linear_schedule(300, 1e-4, 0.02);
    // brute-force product, multiplied in reverse order for independence
    for (int t = 1; t <= 300; ++t) {
        double p = 1.0;
        for (int u = t; u >= 1; --u) p *= 1.0 - s.beta(u);
        CHECK(std::abs(s.alpha_bar(t) - p) < 1e-12);
    }
    for (int t = 2; t <= 300; ++t) {
        CHECK(s.beta(t) >= s.beta(t - 1));                       // nondecreasing betas
        CHECK(s.alpha_bar(t) < s.alpha_bar(t - 1));              // strictly decreasing abar
        CHECK(std::abs(s.alpha_bar(t) - s.alpha_bar(t - 1) * s.alpha(t)) < 1e-12);
        CHECK(s.tilde_beta(t) <= s.beta(t));
    }
    CHECK(s.tilde_beta(1) == s.beta(1));
    // variance preservation as stored-table arithmetic
    for (int t = 1; t <= 300; ++t) CHECK(s.alpha_bar(t) + (1.0 - s.alpha_bar(t)) == 1.0);
    // terminal signal retention of this schedule, pinned as a regression value
    CHECK(s.alpha_bar(300) == doctest::Approx(0.0480584289442939).epsilon(1e-12));
    CHECK_THROWS_AS(s.beta(0), std::out_of_range);
    CHECK_THROWS_AS(s.beta(301), std::out_of_range);
}

TEST_CASE("noise draws are reproducible and standard normal") {
    auto d1 = make_noise_draw({1, 16, 16}, 77);
    auto d2 = make_noise_draw({1, 16, 16}, 77);
    CHECK(d1.eps.data == d2.eps.data);
    auto d3 = make_noise_draw({1, 16, 16}, 78);
    CHECK(d1.eps.data != d3.eps.data);

    auto big = make_noise_draw({100000}, 5);
    double m = 0.0, v = 0.0;
    for (double x : big.eps.data) m += x;
    m /= 1e5;
    for (double x : big.eps.data) v += (x - m) * (x - m);
    v /= 1e5 - 1;
    CHECK(std::abs(m) < 4.0 / std::sqrt(1e5));      // 4 standard errors
    CHECK(std::abs(v - 1.0) < 4.0 * std::sqrt(2.0 / 1e5));
}

TEST_CASE("forward_step formula and edge cases") {
    auto s = build_linear_schedule(10, 0.01, 0.2);
    Rng rng(41);
    Tensor x = testutil::random_tensor({2, 3}, rng);

    // x_prev = 0 gives exactly sqrt(beta)*eps
    auto draw = make_noise_draw({2, 3}, 9);
    Tensor zero = Tensor::zeros({2, 3});
    Tensor out = forward_step(zero, 4, draw, s);
    for (size_t i = 0; i < out.data.size(); ++i)
        CHECK(out.data[i] == std::sqrt(s.beta(4)) * draw.eps.data[i]);

    // vanishing beta keeps the input
    auto tiny = manual_schedule({1e-12, 1e-12});
    Tensor kept = forward_step(x, 1, draw, tiny);
    CHECK(max_abs_diff(kept, x) < 1e-5);

    CHECK_THROWS_AS(forward_step(x, 0, draw, s), std::out_of_range);
    CHECK_THROWS_AS(forward_step(x, 11, draw, s), std::out_of_range);

    // empirical variance of scalar outputs matches (1-beta)*var(x) + beta
    Rng mc(42);
    int t = 7;
    double x0 = 1.3;
    int n = 100000;
    double mean = 0.0, var = 0.0;
    std::vector<double> samples(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        NoiseDraw d{Tensor({1}, {mc.normal()}), 0};
        Tensor xt = forward_step(Tensor({1}, {x0}), t, d, s);
        samples[static_cast<size_t>(i)] = xt.data[0];
        mean += xt.data[0];
    }
    mean /= n;
    for (double v2 : samples) var += (v2 - mean) * (v2 - mean);
    var /= n - 1;
    double se_var = s.beta(t) * std::sqrt(2.0 / (n - 1));
    CHECK(std::abs(var - s.beta(t)) < 3.0 * se_var);  // var(x_prev)=0 here
    CHECK(std::abs(mean - std::sqrt(1.0 - s.beta(t)) * x0) < 3.0 * std::sqrt(s.beta(t) / n));
}

TEST_CASE("q_sample closed form") {
    auto s = build_linear_schedule(50, 1e-3, 0.05);
    Rng rng(43);
    Tensor x0 = testutil::random_tensor({1, 4, 4}, rng);

    // degenerate all-zero-beta schedule returns x0 exactly
    auto ident = manual_schedule({0.0, 0.0, 0.0});
    auto draw = make_noise_draw({1, 4, 4}, 3);
    Tensor same = q_sample(x0, 3, draw, ident);
    CHECK(same.data == x0.data);

    // unit-variance input stays unit variance under the closed form
    Rng mc(44);
    int t = 25;
    int n = 100000;
    double mean = 0.0, var = 0.0;
    std::vector<double> samples(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        double xv = mc.normal();  // var 1 input
        NoiseDraw d{Tensor({1}, {mc.normal()}), 0};
        samples[static_cast<size_t>(i)] = q_sample(Tensor({1}, {xv}), t, d, s).data[0];
        mean += samples[static_cast<size_t>(i)];
    }
    mean /= n;
    for (double v : samples) var += (v - mean) * (v - mean);
    var /= n - 1;
    CHECK(std::abs(var - 1.0) < 4.0 * std::sqrt(2.0 / (n - 1)));

    // chained forward steps match the closed form in distribution
    Rng mc2(45);
    int tt = 20;
    double x0s = 0.7;
    int n2 = 50000;
    double m_ch = 0.0, v_ch = 0.0;
    std::vector<double> chain(static_cast<size_t>(n2));
    for (int i = 0; i < n2; ++i) {
        Tensor x({1}, {x0s});
        for (int u = 1; u <= tt; ++u) {
            NoiseDraw d{Tensor({1}, {mc2.normal()}), 0};
            x = forward_step(x, u, d, s);
        }
        chain[static_cast<size_t>(i)] = x.data[0];
        m_ch += x.data[0];
    }
    m_ch /= n2;
    for (double v : chain) v_ch += (v - m_ch) * (v - m_ch);
    v_ch /= n2 - 1;
    double mean_cf = std::sqrt(s.alpha_bar(tt)) * x0s;
    double var_cf = 1.0 - s.alpha_bar(tt);
    CHECK(std::abs(m_ch - mean_cf) < 4.0 * std::sqrt(var_cf / n2));
    CHECK(std::abs(v_ch - var_cf) < 4.0 * var_cf * std::sqrt(2.0 / (n2 - 1)));
}

TEST_CASE("posterior parameters") {
    auto s = build_linear_schedule(30, 1e-3, 0.04);

    Tensor zero = Tensor::zeros({2, 2});
    auto [mu0, tb0] = posterior_params(zero, zero, 5, s);
    for (double v : mu0.data) CHECK(v == 0.0);
    CHECK(tb0 == doctest::Approx(s.tilde_beta(5)));

    // t=1 collapses to the clean image deterministically
    Rng rng(46);
    Tensor x0 = testutil::random_tensor({2, 2}, rng);
    Tensor xt = testutil::random_tensor({2, 2}, rng);
    auto [mu1, tb1] = posterior_params(xt, x0, 1, s);
    CHECK(mu1.data == x0.data);
    CHECK(tb1 == 0.0);

    // coefficient recomputation oracle on constant images
    for (int t : {2, 10, 30}) {
        Tensor ones = Tensor::full({1, 1}, 1.0);
        auto [mu, tb] = posterior_params(ones, ones, t, s);
        double c0 = std::sqrt(s.alpha_bar(t - 1)) * s.beta(t) / (1.0 - s.alpha_bar(t));
        double ct = std::sqrt(s.alpha(t)) * (1.0 - s.alpha_bar(t - 1)) / (1.0 - s.alpha_bar(t));
        CHECK(mu.data[0] == doctest::Approx(c0 + ct).epsilon(1e-14));
        CHECK(tb == doctest::Approx((1.0 - s.alpha_bar(t - 1)) / (1.0 - s.alpha_bar(t)) * s.beta(t))
                        .epsilon(1e-14));
    }

    // Bayes check at t=2 by completing the square on a numeric instance
    double x0v = 0.3, x2v = 0.7;
    auto [mu, tb] = posterior_params(Tensor({1}, {x2v}), Tensor({1}, {x0v}), 2, s);
    double a2 = s.alpha(2), b2 = s.beta(2), ab1 = s.alpha_bar(1);
    double prec = a2 / b2 + 1.0 / (1.0 - ab1);
    double tb_direct = 1.0 / prec;
    double mu_direct = tb_direct * (std::sqrt(a2) * x2v / b2 + std::sqrt(ab1) * x0v / (1.0 - ab1));
    CHECK(mu.data[0] == doctest::Approx(mu_direct).epsilon(1e-12));
    CHECK(tb == doctest::Approx(tb_direct).epsilon(1e-12));
}

TEST_CASE("reverse_step") {
    auto s = build_linear_schedule(300, 1e-4, 0.02);
    Rng rng(47);
    Tensor x0_hat = testutil::random_tensor({1, 3, 3}, rng);
    Tensor x_t = testutil::random_tensor({1, 3, 3}, rng);

    // terminal step is the clean estimate, exactly, ignoring the draw
    auto draw = make_noise_draw({1, 3, 3}, 1);
    Tensor last = reverse_step(x_t, x0_hat, 1, draw, s);
    CHECK(last.data == x0_hat.data);

    // zero posterior variance makes the step deterministic
    auto det = manual_schedule({0.5, 0.0});
    Tensor out = reverse_step(x_t, x0_hat, 2, draw, det);
    auto [mu, tb] = posterior_params(x_t, x0_hat, 2, det);
    CHECK(tb == 0.0);
    CHECK(out.data == mu.data);

    // oracle-conditioned reconstruction: with the true x0 supplied, the
    // chain walks from pure noise back to x0
    Rng img_rng(48);
    Tensor x0 = testutil::random_uniform_tensor({1, 16, 16}, img_rng, 0.0, 1.0);
    Rng chain_rng(49);
    auto fresh = [&]() {
        NoiseDraw d{Tensor::zeros({1, 16, 16}), 0};
        for (auto& v : d.eps.data) v = chain_rng.normal();
        return d;
    };
    Tensor x = q_sample(x0, 300, fresh(), s);
    Tensor before_terminal;
    for (int t = 300; t >= 1; --t) {
        if (t == 1) before_terminal = x;
        x = reverse_step(x, x0, t, fresh(), s);
    }
    CHECK(l1_loss(nullptr, before_terminal, x0).data[0] < 0.05);
    CHECK(x.data == x0.data);  // terminal step emits x0_hat
}

TEST_CASE("schedule csv dump") {
    auto s = build_linear_schedule(5, 0.01, 0.05);
    std::ostringstream os;
    write_schedule_csv(s, os);
    std::istringstream is(os.str());
    std::string header;
    std::getline(is, header);
    CHECK(header == "t,beta,alpha,alpha_bar,tilde_beta");
    int rows = 0;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        ++rows;
        // round-trip the beta column exactly
        auto c1 = line.find(',');
        auto c2 = line.find(',', c1 + 1);
        int t = std::stoi(line.substr(0, c1));
        double beta = std::strtod(line.substr(c1 + 1, c2 - c1 - 1).c_str(), nullptr);
        CHECK(beta == s.beta(t));
    }
    CHECK(rows == 5);
}
