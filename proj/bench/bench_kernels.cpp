// Compares the OpenMP conv kernels against the serial reference over the
// shapes the de-morpher actually runs, reporting time, speedup and the
// worst relative disagreement.

#include <cmath>
#include <cstdio>
#include <vector>

#include <omp.h>

#include "demorph/kernels.hpp"
#include "demorph/rng.hpp"

using namespace demorph;

namespace {

std::vector<double> random_vec(size_t n, Rng& rng) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.normal();
    return v;
}

double max_rel_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double worst = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        double scale = std::max({std::abs(a[i]), std::abs(b[i]), 1e-9});
        worst = std::max(worst, std::abs(a[i] - b[i]) / scale);
    }
    return worst;
}

template <typename Fn>
double time_best_of(int reps, Fn&& fn) {
    double best = 1e300;
    for (int r = 0; r < reps; ++r) {
        double t0 = omp_get_wtime();
        fn();
        best = std::min(best, omp_get_wtime() - t0);
    }
    return best;
}

struct Case {
    const char* name;
    int64_t B, C, H, F, K, stride, pad;
    bool transpose;
};

}  // namespace

int main() {
    Rng rng(42);
    std::printf("threads: %d\n", omp_get_max_threads());
    std::printf("%-28s %12s %12s %9s %12s\n", "kernel", "serial_ms", "omp_ms", "speedup",
                "max_rel_diff");

    const Case cases[] = {
        {"conv 16x1x32x32 k3 s2", 16, 1, 32, 32, 3, 2, 1, false},
        {"conv 16x32x16x16 k3 s2", 16, 32, 16, 64, 3, 2, 1, false},
        {"conv 16x64x8x8 k3 s2", 16, 64, 8, 128, 3, 2, 1, false},
        {"conv 16x128x4x4 k3 s1", 16, 128, 4, 128, 3, 1, 1, false},
        {"convt 16x256x4x4 k4 s2", 16, 256, 4, 64, 4, 2, 1, true},
        {"convt 16x128x8x8 k4 s2", 16, 128, 8, 32, 4, 2, 1, true},
        {"convt 16x64x16x16 k4 s2", 16, 64, 16, 32, 4, 2, 1, true},
    };

    for (const auto& c : cases) {
        ConvDims d = c.transpose ? convt2d_dims(c.B, c.C, c.H, c.H, c.F, c.K, c.stride, c.pad)
                                 : conv2d_dims(c.B, c.C, c.H, c.H, c.F, c.K, c.stride, c.pad);
        auto in = random_vec(static_cast<size_t>(d.B * d.C * d.H * d.W), rng);
        auto ker = random_vec(static_cast<size_t>((c.transpose ? d.C * d.F : d.F * d.C) * d.K * d.K),
                              rng);
        std::vector<double> out_ref(static_cast<size_t>(d.B * d.F * d.OH * d.OW));
        std::vector<double> out_omp(out_ref.size());

        double t_ref, t_omp;
        if (c.transpose) {
            t_ref = time_best_of(3, [&] {
                refkernels::convt2d_fwd(in.data(), ker.data(), out_ref.data(), d);
            });
            t_omp = time_best_of(3, [&] {
                kernels::convt2d_fwd(in.data(), ker.data(), out_omp.data(), d);
            });
        } else {
            t_ref = time_best_of(3, [&] {
                refkernels::conv2d_fwd(in.data(), ker.data(), out_ref.data(), d);
            });
            t_omp = time_best_of(3, [&] {
                kernels::conv2d_fwd(in.data(), ker.data(), out_omp.data(), d);
            });
        }
        std::printf("%-28s %12.3f %12.3f %8.2fx %12.3g\n", c.name, t_ref * 1e3, t_omp * 1e3,
                    t_ref / t_omp, max_rel_diff(out_ref, out_omp));

        // gradient kernels on the same geometry
        auto gout = random_vec(out_ref.size(), rng);
        std::vector<double> gin_ref(in.size()), gin_omp(in.size());
        std::vector<double> gker_ref(ker.size()), gker_omp(ker.size());
        if (c.transpose) {
            double tr = time_best_of(3, [&] {
                refkernels::convt2d_dgrad(gout.data(), ker.data(), gin_ref.data(), d);
                refkernels::convt2d_wgrad(gout.data(), in.data(), gker_ref.data(), d);
            });
            double to = time_best_of(3, [&] {
                kernels::convt2d_dgrad(gout.data(), ker.data(), gin_omp.data(), d);
                kernels::convt2d_wgrad(gout.data(), in.data(), gker_omp.data(), d);
            });
            std::printf("%-28s %12.3f %12.3f %8.2fx %12.3g\n", "  backward", tr * 1e3, to * 1e3,
                        tr / to,
                        std::max(max_rel_diff(gin_ref, gin_omp), max_rel_diff(gker_ref, gker_omp)));
        } else {
            double tr = time_best_of(3, [&] {
                refkernels::conv2d_dgrad(gout.data(), ker.data(), gin_ref.data(), d);
                refkernels::conv2d_wgrad(gout.data(), in.data(), gker_ref.data(), d);
            });
            double to = time_best_of(3, [&] {
                kernels::conv2d_dgrad(gout.data(), ker.data(), gin_omp.data(), d);
                kernels::conv2d_wgrad(gout.data(), in.data(), gker_omp.data(), d);
            });
            std::printf("%-28s %12.3f %12.3f %8.2fx %12.3g\n", "  backward", tr * 1e3, to * 1e3,
                        tr / to,
                        std::max(max_rel_diff(gin_ref, gin_omp), max_rel_diff(gker_ref, gker_omp)));
        }
    }
    return 0;
}
