#pragma once

#include <cstdint>
#include <iosfwd>
#include <utility>

#include "demorph/tensor.hpp"

namespace demorph {

// Variance schedule tables for a T-step diffusion chain. Steps are 1..T
// externally; tables are 0-based, so entry for step t lives at index t-1.
struct NoiseSchedule {
    int T = 0;
    std::vector<double> betas;        // beta_t
    std::vector<double> alphas;       // 1 - beta_t
    std::vector<double> alpha_bars;   // prod_{s<=t} alpha_s
    std::vector<double> tilde_betas;  // (1-abar_{t-1})/(1-abar_t)*beta_t; index 0 = beta_1

    double beta(int t) const { return betas.at(check(t)); }
    double alpha(int t) const { return alphas.at(check(t)); }
    double alpha_bar(int t) const { return alpha_bars.at(check(t)); }
    double tilde_beta(int t) const { return tilde_betas.at(check(t)); }

private:
    size_t check(int t) const {
        if (t < 1 || t > T)
            throw std::out_of_range("schedule step " + std::to_string(t) + " outside 1.." +
                                    std::to_string(T));
        return static_cast<size_t>(t - 1);
    }
};

// betas[i] = beta_start + i*(beta_end-beta_start)/(T-1)
NoiseSchedule build_linear_schedule(int T, double beta_start, double beta_end);

// One reproducible standard-normal field. Build via make_noise_draw for a
// fresh seeded stream, or fill eps yourself for chained/zero draws.
struct NoiseDraw {
    Tensor eps;
    uint64_t seed = 0;
};
NoiseDraw make_noise_draw(const Shape& shape, uint64_t seed);
NoiseDraw zero_noise_draw(const Shape& shape);

// q(x_t | x_{t-1}): sqrt(1-beta_t)*x_prev + sqrt(beta_t)*eps
Tensor forward_step(const Tensor& x_prev, int t, const NoiseDraw& draw, const NoiseSchedule& sched);

// q(x_t | x_0): sqrt(abar_t)*x0 + sqrt(1-abar_t)*eps
Tensor q_sample(const Tensor& x0, int t, const NoiseDraw& draw, const NoiseSchedule& sched);

// Posterior q(x_{t-1} | x_t, x0) mean and variance. t = 1 returns (x0, 0).
std::pair<Tensor, double> posterior_params(const Tensor& x_t, const Tensor& x0, int t,
                                           const NoiseSchedule& sched);

// Variance used when sampling the reverse transition: the posterior
// tilde-beta (default) or the forward beta_t alternative.
enum class ReverseVariance { posterior, beta };

// Sample of x_{t-1} given x_t and a clean-image estimate. t = 1 returns
// x0_hat deterministically.
Tensor reverse_step(const Tensor& x_t, const Tensor& x0_hat, int t, const NoiseDraw& draw,
                    const NoiseSchedule& sched,
                    ReverseVariance variance = ReverseVariance::posterior);

// Plain-text dump `t,beta,alpha,alpha_bar,tilde_beta` for cross-implementation diffing.
void write_schedule_csv(const NoiseSchedule& sched, std::ostream& os);

}  // namespace demorph
