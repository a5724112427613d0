#include "demorph/schedule.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>

#include "demorph/rng.hpp"

namespace demorph {

NoiseSchedule build_linear_schedule(int T, double beta_start, double beta_end) {
    if (T < 2) throw ConfigError("schedule: T must be >= 2, got " + std::to_string(T));
    if (!(0.0 < beta_start && beta_start < beta_end && beta_end < 1.0))
        throw ConfigError("schedule: need 0 < beta_start < beta_end < 1, got " +
                          std::to_string(beta_start) + ".." + std::to_string(beta_end));
    NoiseSchedule s;
    s.T = T;
    s.betas.resize(static_cast<size_t>(T));
    s.alphas.resize(static_cast<size_t>(T));
    s.alpha_bars.resize(static_cast<size_t>(T));
    s.tilde_betas.resize(static_cast<size_t>(T));
    double step = (beta_end - beta_start) / static_cast<double>(T - 1);
    double abar = 1.0;
    for (int i = 0; i < T; ++i) {
        auto ii = static_cast<size_t>(i);
        s.betas[ii] = beta_start + static_cast<double>(i) * step;
        s.alphas[ii] = 1.0 - s.betas[ii];
        double abar_prev = abar;
        abar *= s.alphas[ii];
        s.alpha_bars[ii] = abar;
        // t = 1 has no previous step; tilde_beta_1 = beta_1 by convention.
        s.tilde_betas[ii] = i == 0 ? s.betas[0] : (1.0 - abar_prev) / (1.0 - abar) * s.betas[ii];
    }
    return s;
}

NoiseDraw make_noise_draw(const Shape& shape, uint64_t seed) {
    NoiseDraw d;
    d.seed = seed;
    d.eps = Tensor::zeros(shape);
    Rng rng(seed);
    for (auto& v : d.eps.data) v = rng.normal();
    return d;
}

NoiseDraw zero_noise_draw(const Shape& shape) { return NoiseDraw{Tensor::zeros(shape), 0}; }

Tensor forward_step(const Tensor& x_prev, int t, const NoiseDraw& draw, const NoiseSchedule& sched) {
    require_same_shape(x_prev, draw.eps, "forward_step");
    double b = sched.beta(t);
    double ca = std::sqrt(1.0 - b), cb = std::sqrt(b);
    Tensor out = Tensor::zeros(x_prev.shape);
    for (size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = ca * x_prev.data[i] + cb * draw.eps.data[i];
    ensure_finite(out, "forward_step");
    return out;
}

Tensor q_sample(const Tensor& x0, int t, const NoiseDraw& draw, const NoiseSchedule& sched) {
    require_same_shape(x0, draw.eps, "q_sample");
    double abar = sched.alpha_bar(t);
    double ca = std::sqrt(abar), cb = std::sqrt(1.0 - abar);
    Tensor out = Tensor::zeros(x0.shape);
    for (size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = ca * x0.data[i] + cb * draw.eps.data[i];
    ensure_finite(out, "q_sample");
    return out;
}

std::pair<Tensor, double> posterior_params(const Tensor& x_t, const Tensor& x0, int t,
                                           const NoiseSchedule& sched) {
    require_same_shape(x_t, x0, "posterior_params");
    if (t == 1) return {x0, 0.0};
    double beta = sched.beta(t);
    double abar = sched.alpha_bar(t);
    double abar_prev = sched.alpha_bar(t - 1);
    double c0 = std::sqrt(abar_prev) * beta / (1.0 - abar);
    double ct = std::sqrt(sched.alpha(t)) * (1.0 - abar_prev) / (1.0 - abar);
    Tensor mu = Tensor::zeros(x_t.shape);
    for (size_t i = 0; i < mu.data.size(); ++i)
        mu.data[i] = c0 * x0.data[i] + ct * x_t.data[i];
    ensure_finite(mu, "posterior_params");
    return {std::move(mu), sched.tilde_beta(t)};
}

Tensor reverse_step(const Tensor& x_t, const Tensor& x0_hat, int t, const NoiseDraw& draw,
                    const NoiseSchedule& sched, ReverseVariance variance) {
    require_same_shape(x_t, x0_hat, "reverse_step");
    if (t == 1) return x0_hat;  // terminal step emits the clean estimate, no noise
    require_same_shape(x_t, draw.eps, "reverse_step");
    auto [mu, tb] = posterior_params(x_t, x0_hat, t, sched);
    double var = variance == ReverseVariance::posterior ? tb : sched.beta(t);
    double sd = std::sqrt(var);
    for (size_t i = 0; i < mu.data.size(); ++i) mu.data[i] += sd * draw.eps.data[i];
    ensure_finite(mu, "reverse_step");
    return mu;
}

void write_schedule_csv(const NoiseSchedule& sched, std::ostream& os) {
    os << "t,beta,alpha,alpha_bar,tilde_beta\n";
    char buf[160];
    for (int t = 1; t <= sched.T; ++t) {
        std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g\n", t, sched.beta(t),
                      sched.alpha(t), sched.alpha_bar(t), sched.tilde_beta(t));
        os << buf;
    }
}

}  // namespace demorph
