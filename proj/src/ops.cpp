#include "demorph/ops.hpp"

#include <algorithm>
#include <cmath>

namespace demorph {

namespace {

constexpr int64_t kOmpThreshold = 1 << 15;

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline void axpy(std::vector<double>& dst, const std::vector<double>& src) {
    for (size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

BatchNormState make_batch_norm_state(int64_t channels) {
    return BatchNormState{Tensor::zeros({channels}), Tensor::full({channels}, 1.0)};
}

Tensor conv2d(Tape* tape, const Tensor& input, const Tensor& kernel, int stride, int pad) {
    require_rank(input, 4, "conv2d input");
    require_rank(kernel, 4, "conv2d kernel");
    if (kernel.shape[2] != kernel.shape[3])
        throw ShapeError("conv2d: kernel must be square, got " + shape_str(kernel.shape));
    if (kernel.shape[1] != input.shape[1])
        throw ShapeError("conv2d: kernel channels " + std::to_string(kernel.shape[1]) +
                         " do not match input channels " + std::to_string(input.shape[1]));
    ConvDims d = conv2d_dims(input.shape[0], input.shape[1], input.shape[2], input.shape[3],
                             kernel.shape[0], kernel.shape[2], stride, pad);

    Tensor out = Tensor::zeros({d.B, d.F, d.OH, d.OW});
    kernels::conv2d_fwd(input.data.data(), kernel.data.data(), out.data.data(), d);
    ensure_finite(out, "conv2d");

    int pi = tape ? tape->handle_of(input) : -1;
    int pk = tape ? tape->handle_of(kernel) : -1;
    if (tape && (pi >= 0 || pk >= 0)) {
        std::vector<int> parents;
        if (pi >= 0) parents.push_back(pi);
        if (pk >= 0) parents.push_back(pk);
        out.grad_id = tape->record(
            parents, out.size(),
            [d, pi, pk, in = input.data, ker = kernel.data](const std::vector<double>& g,
                                                            GradBuffers& grads) {
                if (pi >= 0) {
                    std::vector<double> gin(in.size());
                    kernels::conv2d_dgrad(g.data(), ker.data(), gin.data(), d);
                    axpy(grads[static_cast<size_t>(pi)], gin);
                }
                if (pk >= 0) {
                    std::vector<double> gker(ker.size());
                    kernels::conv2d_wgrad(g.data(), in.data(), gker.data(), d);
                    axpy(grads[static_cast<size_t>(pk)], gker);
                }
            });
        out.grad_tape = tape->id();
    }
    return out;
}

Tensor conv_transpose2d(Tape* tape, const Tensor& input, const Tensor& kernel, int stride,
                        int pad) {
    require_rank(input, 4, "conv_transpose2d input");
    require_rank(kernel, 4, "conv_transpose2d kernel");
    if (kernel.shape[2] != kernel.shape[3])
        throw ShapeError("conv_transpose2d: kernel must be square, got " + shape_str(kernel.shape));
    if (kernel.shape[0] != input.shape[1])
        throw ShapeError("conv_transpose2d: kernel in-channels " + std::to_string(kernel.shape[0]) +
                         " do not match input channels " + std::to_string(input.shape[1]));
    ConvDims d = convt2d_dims(input.shape[0], input.shape[1], input.shape[2], input.shape[3],
                              kernel.shape[1], kernel.shape[2], stride, pad);

    Tensor out = Tensor::zeros({d.B, d.F, d.OH, d.OW});
    kernels::convt2d_fwd(input.data.data(), kernel.data.data(), out.data.data(), d);
    ensure_finite(out, "conv_transpose2d");

    int pi = tape ? tape->handle_of(input) : -1;
    int pk = tape ? tape->handle_of(kernel) : -1;
    if (tape && (pi >= 0 || pk >= 0)) {
        std::vector<int> parents;
        if (pi >= 0) parents.push_back(pi);
        if (pk >= 0) parents.push_back(pk);
        out.grad_id = tape->record(
            parents, out.size(),
            [d, pi, pk, in = input.data, ker = kernel.data](const std::vector<double>& g,
                                                            GradBuffers& grads) {
                if (pi >= 0) {
                    std::vector<double> gin(in.size());
                    kernels::convt2d_dgrad(g.data(), ker.data(), gin.data(), d);
                    axpy(grads[static_cast<size_t>(pi)], gin);
                }
                if (pk >= 0) {
                    std::vector<double> gker(ker.size());
                    kernels::convt2d_wgrad(g.data(), in.data(), gker.data(), d);
                    axpy(grads[static_cast<size_t>(pk)], gker);
                }
            });
        out.grad_tape = tape->id();
    }
    return out;
}

Tensor batch_norm(Tape* tape, const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  BatchNormState& state, BnMode mode, double momentum, double eps) {
    require_rank(x, 4, "batch_norm");
    int64_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
    if (gamma.size() != C || beta.size() != C)
        throw ShapeError("batch_norm: gamma/beta length must match channel count " +
                         std::to_string(C));
    if (state.running_mean.size() != C || state.running_var.size() != C)
        throw ShapeError("batch_norm: running stats length must match channel count");

    const int64_t n = B * H * W;  // reduction size per channel
    std::vector<double> mean(static_cast<size_t>(C)), invstd(static_cast<size_t>(C));

    if (mode == BnMode::train) {
        std::vector<double> var(static_cast<size_t>(C));
#pragma omp parallel for schedule(static)
        for (int64_t c = 0; c < C; ++c) {
            double m = 0.0;
            for (int64_t b = 0; b < B; ++b)
                for (int64_t h = 0; h < H; ++h)
                    for (int64_t w = 0; w < W; ++w) m += x.at4(b, c, h, w);
            m /= static_cast<double>(n);
            double v = 0.0;
            for (int64_t b = 0; b < B; ++b)
                for (int64_t h = 0; h < H; ++h)
                    for (int64_t w = 0; w < W; ++w) {
                        double dlt = x.at4(b, c, h, w) - m;
                        v += dlt * dlt;
                    }
            v /= static_cast<double>(n);
            mean[static_cast<size_t>(c)] = m;
            var[static_cast<size_t>(c)] = v;
            invstd[static_cast<size_t>(c)] = 1.0 / std::sqrt(v + eps);
        }
        for (int64_t c = 0; c < C; ++c) {
            auto ci = static_cast<size_t>(c);
            state.running_mean.data[ci] =
                (1.0 - momentum) * state.running_mean.data[ci] + momentum * mean[ci];
            state.running_var.data[ci] =
                (1.0 - momentum) * state.running_var.data[ci] + momentum * var[ci];
        }
    } else {
        for (int64_t c = 0; c < C; ++c) {
            auto ci = static_cast<size_t>(c);
            mean[ci] = state.running_mean.data[ci];
            invstd[ci] = 1.0 / std::sqrt(state.running_var.data[ci] + eps);
        }
    }

    Tensor out = Tensor::zeros(x.shape);
    std::vector<double> xhat(x.data.size());
#pragma omp parallel for collapse(2) schedule(static) if (x.size() > kOmpThreshold)
    for (int64_t b = 0; b < B; ++b) {
        for (int64_t c = 0; c < C; ++c) {
            auto ci = static_cast<size_t>(c);
            for (int64_t h = 0; h < H; ++h)
                for (int64_t w = 0; w < W; ++w) {
                    size_t i = static_cast<size_t>(((b * C + c) * H + h) * W + w);
                    double xh = (x.data[i] - mean[ci]) * invstd[ci];
                    xhat[i] = xh;
                    out.data[i] = gamma.data[ci] * xh + beta.data[ci];
                }
        }
    }
    ensure_finite(out, "batch_norm");

    int px = tape ? tape->handle_of(x) : -1;
    int pg = tape ? tape->handle_of(gamma) : -1;
    int pb = tape ? tape->handle_of(beta) : -1;
    if (tape && (px >= 0 || pg >= 0 || pb >= 0)) {
        std::vector<int> parents;
        if (px >= 0) parents.push_back(px);
        if (pg >= 0) parents.push_back(pg);
        if (pb >= 0) parents.push_back(pb);
        bool train = mode == BnMode::train;
        out.grad_id = tape->record(
            parents, out.size(),
            [B, C, H, W, n, px, pg, pb, train, xhat = std::move(xhat), invstd, gam = gamma.data](
                const std::vector<double>& g, GradBuffers& grads) {
                // per-channel reductions of g and g*xhat
                std::vector<double> sum_g(static_cast<size_t>(C), 0.0);
                std::vector<double> sum_gx(static_cast<size_t>(C), 0.0);
#pragma omp parallel for schedule(static)
                for (int64_t c = 0; c < C; ++c) {
                    double sg = 0.0, sgx = 0.0;
                    for (int64_t b = 0; b < B; ++b)
                        for (int64_t h = 0; h < H; ++h)
                            for (int64_t w = 0; w < W; ++w) {
                                size_t i = static_cast<size_t>(((b * C + c) * H + h) * W + w);
                                sg += g[i];
                                sgx += g[i] * xhat[i];
                            }
                    sum_g[static_cast<size_t>(c)] = sg;
                    sum_gx[static_cast<size_t>(c)] = sgx;
                }
                if (px >= 0) {
                    auto& gx = grads[static_cast<size_t>(px)];
#pragma omp parallel for collapse(2) schedule(static) if (static_cast<int64_t>(g.size()) > kOmpThreshold)
                    for (int64_t b = 0; b < B; ++b) {
                        for (int64_t c = 0; c < C; ++c) {
                            auto ci = static_cast<size_t>(c);
                            double mg = sum_g[ci] / static_cast<double>(n);
                            double mgx = sum_gx[ci] / static_cast<double>(n);
                            for (int64_t h = 0; h < H; ++h)
                                for (int64_t w = 0; w < W; ++w) {
                                    size_t i = static_cast<size_t>(((b * C + c) * H + h) * W + w);
                                    double d = train ? (g[i] - mg - xhat[i] * mgx) : g[i];
                                    gx[i] += gam[ci] * invstd[ci] * d;
                                }
                        }
                    }
                }
                if (pg >= 0)
                    for (int64_t c = 0; c < C; ++c)
                        grads[static_cast<size_t>(pg)][static_cast<size_t>(c)] +=
                            sum_gx[static_cast<size_t>(c)];
                if (pb >= 0)
                    for (int64_t c = 0; c < C; ++c)
                        grads[static_cast<size_t>(pb)][static_cast<size_t>(c)] +=
                            sum_g[static_cast<size_t>(c)];
            });
        out.grad_tape = tape->id();
    }
    return out;
}

Tensor silu(Tape* tape, const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape);
    int64_t N = x.size();
#pragma omp parallel for schedule(static) if (N > kOmpThreshold)
    for (int64_t i = 0; i < N; ++i) {
        double s = sigmoid(x.data[static_cast<size_t>(i)]);
        out.data[static_cast<size_t>(i)] = x.data[static_cast<size_t>(i)] * s;
    }
    ensure_finite(out, "silu");
    int px = tape ? tape->handle_of(x) : -1;
    if (tape && px >= 0) {
        out.grad_id = tape->record({px}, out.size(),
                                   [px, xv = x.data](const std::vector<double>& g, GradBuffers& grads) {
                                       auto& gx = grads[static_cast<size_t>(px)];
                                       int64_t n = static_cast<int64_t>(xv.size());
#pragma omp parallel for schedule(static) if (n > kOmpThreshold)
                                       for (int64_t i = 0; i < n; ++i) {
                                           auto ii = static_cast<size_t>(i);
                                           double s = sigmoid(xv[ii]);
                                           gx[ii] += g[ii] * (s * (1.0 + xv[ii] * (1.0 - s)));
                                       }
                                   });
        out.grad_tape = tape->id();
    }
    return out;
}

Tensor add(Tape* tape, const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    Tensor out = Tensor::zeros(a.shape);
    int64_t N = a.size();
#pragma omp parallel for schedule(static) if (N > kOmpThreshold)
    for (int64_t i = 0; i < N; ++i)
        out.data[static_cast<size_t>(i)] = a.data[static_cast<size_t>(i)] + b.data[static_cast<size_t>(i)];
    ensure_finite(out, "add");
    int pa = tape ? tape->handle_of(a) : -1;
    int pb = tape ? tape->handle_of(b) : -1;
    if (tape && (pa >= 0 || pb >= 0)) {
        std::vector<int> parents;
        if (pa >= 0) parents.push_back(pa);
        if (pb >= 0) parents.push_back(pb);
        out.grad_id =
            tape->record(parents, out.size(), [pa, pb](const std::vector<double>& g, GradBuffers& grads) {
                if (pa >= 0) axpy(grads[static_cast<size_t>(pa)], g);
                if (pb >= 0) axpy(grads[static_cast<size_t>(pb)], g);
            });
        out.grad_tape = tape->id();
    }
    return out;
}

Tensor mul(Tape* tape, const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    Tensor out = Tensor::zeros(a.shape);
    int64_t N = a.size();
#pragma omp parallel for schedule(static) if (N > kOmpThreshold)
    for (int64_t i = 0; i < N; ++i)
        out.data[static_cast<size_t>(i)] = a.data[static_cast<size_t>(i)] * b.data[static_cast<size_t>(i)];
    ensure_finite(out, "mul");
    int pa = tape ? tape->handle_of(a) : -1;
    int pb = tape ? tape->handle_of(b) : -1;
    if (tape && (pa >= 0 || pb >= 0)) {
        std::vector<int> parents;
        if (pa >= 0) parents.push_back(pa);
        if (pb >= 0) parents.push_back(pb);
        out.grad_id = tape->record(
            parents, out.size(),
            [pa, pb, av = a.data, bv = b.data](const std::vector<double>& g, GradBuffers& grads) {
                if (pa >= 0) {
                    auto& ga = grads[static_cast<size_t>(pa)];
                    for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
                }
                if (pb >= 0) {
                    auto& gb = grads[static_cast<size_t>(pb)];
                    for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
                }
            });
        out.grad_tape = tape->id();
    }
    return out;
}

Tensor scale(Tape* tape, const Tensor& x, double c) {
    Tensor out = Tensor::zeros(x.shape);
    for (size_t i = 0; i < x.data.size(); ++i) out.data[i] = x.data[i] * c;
    ensure_finite(out, "scale");
    int px = tape ? tape->handle_of(x) : -1;
    if (tape && px >= 0) {
        out.grad_id =
            tape->record({px}, out.size(), [px, c](const std::vector<double>& g, GradBuffers& grads) {
                auto& gx = grads[static_cast<size_t>(px)];
                for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * c;
            });
        out.grad_tape = tape->id();
    }
    return out;
}

Tensor add_channel_bias(Tape* tape, const Tensor& x, const Tensor& v) {
    require_rank(x, 4, "add_channel_bias");
    int64_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
    bool per_sample;
    if (v.rank() == 1 && v.shape[0] == C) {
        per_sample = false;
    } else if (v.rank() == 2 && v.shape[0] == B && v.shape[1] == C) {
        per_sample = true;
    } else {
        throw ShapeError("add_channel_bias: bias must be [C] or [B,C], got " + shape_str(v.shape) +
                         " for x " + shape_str(x.shape));
    }
    Tensor out = Tensor::zeros(x.shape);
#pragma omp parallel for collapse(2) schedule(static) if (x.size() > kOmpThreshold)
    for (int64_t b = 0; b < B; ++b) {
        for (int64_t c = 0; c < C; ++c) {
            double bias = per_sample ? v.data[static_cast<size_t>(b * C + c)]
                                     : v.data[static_cast<size_t>(c)];
            for (int64_t h = 0; h < H; ++h)
                for (int64_t w = 0; w < W; ++w) {
                    size_t i = static_cast<size_t>(((b * C + c) * H + h) * W + w);
                    out.data[i] = x.data[i] + bias;
                }
        }
    }
    ensure_finite(out, "add_channel_bias");
    int px = tape ? tape->handle_of(x) : -1;
    int pv = tape ? tape->handle_of(v) : -1;
    if (tape && (px >= 0 || pv >= 0)) {
        std::vector<int> parents;
        if (px >= 0) parents.push_back(px);
        if (pv >= 0) parents.push_back(pv);
        out.grad_id = tape->record(
            parents, out.size(),
            [B, C, H, W, px, pv, per_sample](const std::vector<double>& g, GradBuffers& grads) {
                if (px >= 0) axpy(grads[static_cast<size_t>(px)], g);
                if (pv >= 0) {
                    auto& gv = grads[static_cast<size_t>(pv)];
                    for (int64_t b = 0; b < B; ++b)
                        for (int64_t c = 0; c < C; ++c) {
                            double s = 0.0;
                            for (int64_t h = 0; h < H; ++h)
                                for (int64_t w = 0; w < W; ++w)
                                    s += g[static_cast<size_t>(((b * C + c) * H + h) * W + w)];
                            if (per_sample)
                                gv[static_cast<size_t>(b * C + c)] += s;
                            else
                                gv[static_cast<size_t>(c)] += s;
                        }
                }
            });
        out.grad_tape = tape->id();
    }
    return out;
}

Tensor concat_channels(Tape* tape, const Tensor& a, const Tensor& b) {
    require_rank(a, 4, "concat_channels");
    require_rank(b, 4, "concat_channels");
    if (a.shape[0] != b.shape[0] || a.shape[2] != b.shape[2] || a.shape[3] != b.shape[3])
        throw ShapeError("concat_channels: incompatible shapes " + shape_str(a.shape) + " vs " +
                         shape_str(b.shape));
    int64_t B = a.shape[0], Ca = a.shape[1], Cb = b.shape[1], H = a.shape[2], W = a.shape[3];
    Tensor out = Tensor::zeros({B, Ca + Cb, H, W});
    int64_t plane = H * W;
    for (int64_t bi = 0; bi < B; ++bi) {
        std::copy_n(a.data.begin() + bi * Ca * plane, Ca * plane,
                    out.data.begin() + bi * (Ca + Cb) * plane);
        std::copy_n(b.data.begin() + bi * Cb * plane, Cb * plane,
                    out.data.begin() + bi * (Ca + Cb) * plane + Ca * plane);
    }
    int pa = tape ? tape->handle_of(a) : -1;
    int pb = tape ? tape->handle_of(b) : -1;
    if (tape && (pa >= 0 || pb >= 0)) {
        std::vector<int> parents;
        if (pa >= 0) parents.push_back(pa);
        if (pb >= 0) parents.push_back(pb);
        out.grad_id = tape->record(
            parents, out.size(),
            [B, Ca, Cb, plane, pa, pb](const std::vector<double>& g, GradBuffers& grads) {
                for (int64_t bi = 0; bi < B; ++bi) {
                    if (pa >= 0) {
                        auto& ga = grads[static_cast<size_t>(pa)];
                        for (int64_t i = 0; i < Ca * plane; ++i)
                            ga[static_cast<size_t>(bi * Ca * plane + i)] +=
                                g[static_cast<size_t>(bi * (Ca + Cb) * plane + i)];
                    }
                    if (pb >= 0) {
                        auto& gb = grads[static_cast<size_t>(pb)];
                        for (int64_t i = 0; i < Cb * plane; ++i)
                            gb[static_cast<size_t>(bi * Cb * plane + i)] +=
                                g[static_cast<size_t>(bi * (Ca + Cb) * plane + Ca * plane + i)];
                    }
                }
            });
        out.grad_tape = tape->id();
    }
    return out;
}

Tensor linear(Tape* tape, const Tensor& x, const Tensor& w, const Tensor& b) {
    require_rank(x, 2, "linear x");
    require_rank(w, 2, "linear w");
    require_rank(b, 1, "linear b");
    int64_t B = x.shape[0], I = x.shape[1], O = w.shape[0];
    if (w.shape[1] != I)
        throw ShapeError("linear: w " + shape_str(w.shape) + " does not match x " + shape_str(x.shape));
    if (b.shape[0] != O) throw ShapeError("linear: bias length must equal out dim");

    Tensor out = Tensor::zeros({B, O});
    for (int64_t bi = 0; bi < B; ++bi)
        for (int64_t o = 0; o < O; ++o) {
            double acc = b.data[static_cast<size_t>(o)];
            for (int64_t i = 0; i < I; ++i)
                acc += x.data[static_cast<size_t>(bi * I + i)] * w.data[static_cast<size_t>(o * I + i)];
            out.data[static_cast<size_t>(bi * O + o)] = acc;
        }
    ensure_finite(out, "linear");

    int px = tape ? tape->handle_of(x) : -1;
    int pw = tape ? tape->handle_of(w) : -1;
    int pb = tape ? tape->handle_of(b) : -1;
    if (tape && (px >= 0 || pw >= 0 || pb >= 0)) {
        std::vector<int> parents;
        if (px >= 0) parents.push_back(px);
        if (pw >= 0) parents.push_back(pw);
        if (pb >= 0) parents.push_back(pb);
        out.grad_id = tape->record(
            parents, out.size(),
            [B, I, O, px, pw, pb, xv = x.data, wv = w.data](const std::vector<double>& g,
                                                            GradBuffers& grads) {
                if (px >= 0) {
                    auto& gx = grads[static_cast<size_t>(px)];
                    for (int64_t bi = 0; bi < B; ++bi)
                        for (int64_t i = 0; i < I; ++i) {
                            double acc = 0.0;
                            for (int64_t o = 0; o < O; ++o)
                                acc += g[static_cast<size_t>(bi * O + o)] *
                                       wv[static_cast<size_t>(o * I + i)];
                            gx[static_cast<size_t>(bi * I + i)] += acc;
                        }
                }
                if (pw >= 0) {
                    auto& gw = grads[static_cast<size_t>(pw)];
                    for (int64_t o = 0; o < O; ++o)
                        for (int64_t i = 0; i < I; ++i) {
                            double acc = 0.0;
                            for (int64_t bi = 0; bi < B; ++bi)
                                acc += g[static_cast<size_t>(bi * O + o)] *
                                       xv[static_cast<size_t>(bi * I + i)];
                            gw[static_cast<size_t>(o * I + i)] += acc;
                        }
                }
                if (pb >= 0) {
                    auto& gb = grads[static_cast<size_t>(pb)];
                    for (int64_t o = 0; o < O; ++o) {
                        double acc = 0.0;
                        for (int64_t bi = 0; bi < B; ++bi) acc += g[static_cast<size_t>(bi * O + o)];
                        gb[static_cast<size_t>(o)] += acc;
                    }
                }
            });
        out.grad_tape = tape->id();
    }
    return out;
}

Tensor sum_all(Tape* tape, const Tensor& x) {
    double s = 0.0;
    for (double v : x.data) s += v;
    Tensor out({1}, {s});
    ensure_finite(out, "sum_all");
    int px = tape ? tape->handle_of(x) : -1;
    if (tape && px >= 0) {
        out.grad_id = tape->record({px}, 1, [px](const std::vector<double>& g, GradBuffers& grads) {
            auto& gx = grads[static_cast<size_t>(px)];
            for (auto& v : gx) v += g[0];
        });
        out.grad_tape = tape->id();
    }
    return out;
}

Tensor mean_all(Tape* tape, const Tensor& x) {
    double s = 0.0;
    for (double v : x.data) s += v;
    double inv = 1.0 / static_cast<double>(x.size());
    Tensor out({1}, {s * inv});
    ensure_finite(out, "mean_all");
    int px = tape ? tape->handle_of(x) : -1;
    if (tape && px >= 0) {
        out.grad_id = tape->record({px}, 1, [px, inv](const std::vector<double>& g, GradBuffers& grads) {
            auto& gx = grads[static_cast<size_t>(px)];
            for (auto& v : gx) v += g[0] * inv;
        });
        out.grad_tape = tape->id();
    }
    return out;
}

namespace {

// Shared body of l1_loss / l1_per_sample; groups = 1 gives the full mean.
Tensor l1_grouped(Tape* tape, const Tensor& pred, const Tensor& target, int64_t groups,
                  const char* op) {
    require_same_shape(pred, target, op);
    int64_t N = pred.size();
    int64_t per = N / groups;
    Tensor out = Tensor::zeros({groups});
    for (int64_t gidx = 0; gidx < groups; ++gidx) {
        double s = 0.0;
        for (int64_t i = gidx * per; i < (gidx + 1) * per; ++i)
            s += std::abs(pred.data[static_cast<size_t>(i)] - target.data[static_cast<size_t>(i)]);
        out.data[static_cast<size_t>(gidx)] = s / static_cast<double>(per);
    }
    ensure_finite(out, op);
    int pp = tape ? tape->handle_of(pred) : -1;
    int pt = tape ? tape->handle_of(target) : -1;
    if (tape && (pp >= 0 || pt >= 0)) {
        std::vector<int> parents;
        if (pp >= 0) parents.push_back(pp);
        if (pt >= 0) parents.push_back(pt);
        out.grad_id = tape->record(
            parents, groups,
            [per, groups, pp, pt, pv = pred.data, tv = target.data](const std::vector<double>& g,
                                                                    GradBuffers& grads) {
                double invper = 1.0 / static_cast<double>(per);
                for (int64_t gidx = 0; gidx < groups; ++gidx) {
                    double go = g[static_cast<size_t>(gidx)] * invper;
                    for (int64_t i = gidx * per; i < (gidx + 1) * per; ++i) {
                        auto ii = static_cast<size_t>(i);
                        double d = pv[ii] - tv[ii];
                        double sgn = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);  // subgrad at 0 is 0
                        if (pp >= 0) grads[static_cast<size_t>(pp)][ii] += go * sgn;
                        if (pt >= 0) grads[static_cast<size_t>(pt)][ii] -= go * sgn;
                    }
                }
            });
        out.grad_tape = tape->id();
    }
    return out;
}

}  // namespace

Tensor l1_loss(Tape* tape, const Tensor& pred, const Tensor& target) {
    return l1_grouped(tape, pred, target, 1, "l1_loss");
}

Tensor l1_per_sample(Tape* tape, const Tensor& pred, const Tensor& target) {
    if (pred.rank() < 2) throw ShapeError("l1_per_sample: need a batch dimension");
    return l1_grouped(tape, pred, target, pred.shape[0], "l1_per_sample");
}

Tensor sinusoidal_time_embedding(int t, int dim) {
    if (dim <= 0 || dim % 2 != 0)
        throw ConfigError("sinusoidal_time_embedding: dim must be positive and even, got " +
                          std::to_string(dim));
    if (t < 0) throw ConfigError("sinusoidal_time_embedding: t must be >= 0");
    Tensor out = Tensor::zeros({dim});
    for (int i = 0; i < dim / 2; ++i) {
        double freq = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(dim));
        out.data[static_cast<size_t>(2 * i)] = std::sin(static_cast<double>(t) * freq);
        out.data[static_cast<size_t>(2 * i + 1)] = std::cos(static_cast<double>(t) * freq);
    }
    return out;
}

Tensor clamp01(const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape);
    for (size_t i = 0; i < x.data.size(); ++i) out.data[i] = std::clamp(x.data[i], 0.0, 1.0);
    return out;
}

Tensor stack_images(const std::vector<Tensor>& images) {
    if (images.empty()) throw ShapeError("stack_images: empty batch");
    const Shape& s = images[0].shape;
    if (s.size() != 3) throw ShapeError("stack_images: expected [C,H,W] images");
    Tensor out = Tensor::zeros({static_cast<int64_t>(images.size()), s[0], s[1], s[2]});
    int64_t per = numel(s);
    for (size_t b = 0; b < images.size(); ++b) {
        if (images[b].shape != s) throw ShapeError("stack_images: ragged batch");
        std::copy(images[b].data.begin(), images[b].data.end(),
                  out.data.begin() + static_cast<int64_t>(b) * per);
    }
    return out;
}

Tensor slice_image(const Tensor& batch, int64_t b) {
    require_rank(batch, 4, "slice_image");
    if (b < 0 || b >= batch.shape[0]) throw ShapeError("slice_image: batch index out of range");
    Shape s{batch.shape[1], batch.shape[2], batch.shape[3]};
    int64_t per = numel(s);
    std::vector<double> d(batch.data.begin() + b * per, batch.data.begin() + (b + 1) * per);
    return Tensor(std::move(s), std::move(d));
}

}  // namespace demorph
