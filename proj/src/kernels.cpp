#include "demorph/kernels.hpp"

#include <string>
#include <utility>
#include <vector>

namespace demorph {

ConvDims conv2d_dims(int64_t B, int64_t C, int64_t H, int64_t W, int64_t F, int64_t K,
                     int64_t stride, int64_t pad) {
    if (stride < 1) throw ShapeError("conv2d: stride must be >= 1, got " + std::to_string(stride));
    if (pad < 0) throw ShapeError("conv2d: pad must be >= 0");
    if (K > H + 2 * pad || K > W + 2 * pad)
        throw ShapeError("conv2d: kernel " + std::to_string(K) + " exceeds padded input " +
                         std::to_string(H + 2 * pad) + "x" + std::to_string(W + 2 * pad));
    ConvDims d{B, C, H, W, F, K, stride, pad, 0, 0};
    d.OH = (H + 2 * pad - K) / stride + 1;
    d.OW = (W + 2 * pad - K) / stride + 1;
    return d;
}

ConvDims convt2d_dims(int64_t B, int64_t C, int64_t H, int64_t W, int64_t F, int64_t K,
                      int64_t stride, int64_t pad) {
    if (stride < 1) throw ShapeError("conv_transpose2d: stride must be >= 1");
    if (pad < 0) throw ShapeError("conv_transpose2d: pad must be >= 0");
    ConvDims d{B, C, H, W, F, K, stride, pad, 0, 0};
    d.OH = (H - 1) * stride - 2 * pad + K;
    d.OW = (W - 1) * stride - 2 * pad + K;
    if (d.OH < 1 || d.OW < 1) throw ShapeError("conv_transpose2d: geometry yields empty output");
    return d;
}

namespace {

inline int64_t idx4(int64_t a, int64_t b, int64_t c, int64_t d, int64_t eb, int64_t ec,
                    int64_t ed) {
    return ((a * eb + b) * ec + c) * ed + d;
}

inline int64_t ceil_div(int64_t a, int64_t b) { return a >= 0 ? (a + b - 1) / b : -((-a) / b); }
inline int64_t floor_div(int64_t a, int64_t b) { return a >= 0 ? a / b : -((-a + b - 1) / b); }

// Valid kernel-tap range for the gather direction src = dst*stride - pad + k:
// k in [lo,hi) keeps src inside [0,ext).
inline void tap_bounds(int64_t dst, int64_t stride, int64_t pad, int64_t K, int64_t ext,
                       int64_t& lo, int64_t& hi) {
    lo = std::max<int64_t>(0, pad - dst * stride);
    hi = std::min<int64_t>(K, ext + pad - dst * stride);
}

// Taps for the scatter-inverse direction src = (dst + pad - k)/stride: the
// (k, src) pairs with k ascending, precomputed once per destination index.
using TapList = std::vector<std::pair<int64_t, int64_t>>;

std::vector<TapList> inverse_taps(int64_t dst_ext, int64_t src_ext, int64_t stride, int64_t pad,
                                  int64_t K) {
    std::vector<TapList> taps(static_cast<size_t>(dst_ext));
    for (int64_t d = 0; d < dst_ext; ++d) {
        int64_t k0 = (d + pad) % stride;
        for (int64_t k = k0; k < K; k += stride) {
            int64_t s = (d + pad - k) / stride;
            if (s >= 0 && s < src_ext) taps[static_cast<size_t>(d)].emplace_back(k, s);
        }
    }
    return taps;
}

}  // namespace

namespace kernels {

void conv2d_fwd(const double* in, const double* ker, double* out, const ConvDims& d) {
#pragma omp parallel for collapse(2) schedule(static)
    for (int64_t b = 0; b < d.B; ++b) {
        for (int64_t f = 0; f < d.F; ++f) {
            for (int64_t oh = 0; oh < d.OH; ++oh) {
                int64_t kh_lo, kh_hi;
                tap_bounds(oh, d.stride, d.pad, d.K, d.H, kh_lo, kh_hi);
                for (int64_t ow = 0; ow < d.OW; ++ow) {
                    int64_t kw_lo, kw_hi;
                    tap_bounds(ow, d.stride, d.pad, d.K, d.W, kw_lo, kw_hi);
                    double acc = 0.0;
                    for (int64_t c = 0; c < d.C; ++c) {
                        const double* in_bc = in + idx4(b, c, 0, 0, d.C, d.H, d.W);
                        const double* ker_fc = ker + idx4(f, c, 0, 0, d.C, d.K, d.K);
                        for (int64_t kh = kh_lo; kh < kh_hi; ++kh) {
                            int64_t ih = oh * d.stride - d.pad + kh;
                            const double* in_row = in_bc + ih * d.W + ow * d.stride - d.pad;
                            const double* ker_row = ker_fc + kh * d.K;
                            for (int64_t kw = kw_lo; kw < kw_hi; ++kw)
                                acc += in_row[kw] * ker_row[kw];
                        }
                    }
                    out[idx4(b, f, oh, ow, d.F, d.OH, d.OW)] = acc;
                }
            }
        }
    }
}

void conv2d_dgrad(const double* gout, const double* ker, double* gin, const ConvDims& d) {
    auto taps_h = inverse_taps(d.H, d.OH, d.stride, d.pad, d.K);
    auto taps_w = inverse_taps(d.W, d.OW, d.stride, d.pad, d.K);
#pragma omp parallel for collapse(2) schedule(static)
    for (int64_t b = 0; b < d.B; ++b) {
        for (int64_t c = 0; c < d.C; ++c) {
            for (int64_t ih = 0; ih < d.H; ++ih) {
                const auto& th = taps_h[static_cast<size_t>(ih)];
                for (int64_t iw = 0; iw < d.W; ++iw) {
                    const auto& tw = taps_w[static_cast<size_t>(iw)];
                    double acc = 0.0;
                    for (int64_t f = 0; f < d.F; ++f) {
                        const double* gout_bf = gout + idx4(b, f, 0, 0, d.F, d.OH, d.OW);
                        const double* ker_fc = ker + idx4(f, c, 0, 0, d.C, d.K, d.K);
                        for (auto [kh, oh] : th)
                            for (auto [kw, ow] : tw)
                                acc += gout_bf[oh * d.OW + ow] * ker_fc[kh * d.K + kw];
                    }
                    gin[idx4(b, c, ih, iw, d.C, d.H, d.W)] = acc;
                }
            }
        }
    }
}

void conv2d_wgrad(const double* gout, const double* in, double* gker, const ConvDims& d) {
#pragma omp parallel for collapse(2) schedule(static)
    for (int64_t f = 0; f < d.F; ++f) {
        for (int64_t c = 0; c < d.C; ++c) {
            for (int64_t kh = 0; kh < d.K; ++kh) {
                int64_t oh_lo = std::max<int64_t>(0, ceil_div(d.pad - kh, d.stride));
                int64_t oh_hi = std::min(d.OH, floor_div(d.H - 1 + d.pad - kh, d.stride) + 1);
                for (int64_t kw = 0; kw < d.K; ++kw) {
                    int64_t ow_lo = std::max<int64_t>(0, ceil_div(d.pad - kw, d.stride));
                    int64_t ow_hi = std::min(d.OW, floor_div(d.W - 1 + d.pad - kw, d.stride) + 1);
                    double acc = 0.0;
                    for (int64_t b = 0; b < d.B; ++b) {
                        const double* gout_bf = gout + idx4(b, f, 0, 0, d.F, d.OH, d.OW);
                        const double* in_bc = in + idx4(b, c, 0, 0, d.C, d.H, d.W);
                        for (int64_t oh = oh_lo; oh < oh_hi; ++oh) {
                            int64_t ih = oh * d.stride - d.pad + kh;
                            const double* in_row = in_bc + ih * d.W - d.pad + kw;
                            const double* gout_row = gout_bf + oh * d.OW;
                            for (int64_t ow = ow_lo; ow < ow_hi; ++ow)
                                acc += gout_row[ow] * in_row[ow * d.stride];
                        }
                    }
                    gker[idx4(f, c, kh, kw, d.C, d.K, d.K)] = acc;
                }
            }
        }
    }
}

void convt2d_fwd(const double* in, const double* ker, double* out, const ConvDims& d) {
    auto taps_h = inverse_taps(d.OH, d.H, d.stride, d.pad, d.K);
    auto taps_w = inverse_taps(d.OW, d.W, d.stride, d.pad, d.K);
#pragma omp parallel for collapse(2) schedule(static)
    for (int64_t b = 0; b < d.B; ++b) {
        for (int64_t f = 0; f < d.F; ++f) {
            for (int64_t oh = 0; oh < d.OH; ++oh) {
                const auto& th = taps_h[static_cast<size_t>(oh)];
                for (int64_t ow = 0; ow < d.OW; ++ow) {
                    const auto& tw = taps_w[static_cast<size_t>(ow)];
                    double acc = 0.0;
                    for (int64_t c = 0; c < d.C; ++c) {
                        const double* in_bc = in + idx4(b, c, 0, 0, d.C, d.H, d.W);
                        const double* ker_cf = ker + idx4(c, f, 0, 0, d.F, d.K, d.K);
                        for (auto [kh, ih] : th)
                            for (auto [kw, iw] : tw)
                                acc += in_bc[ih * d.W + iw] * ker_cf[kh * d.K + kw];
                    }
                    out[idx4(b, f, oh, ow, d.F, d.OH, d.OW)] = acc;
                }
            }
        }
    }
}

void convt2d_dgrad(const double* gout, const double* ker, double* gin, const ConvDims& d) {
#pragma omp parallel for collapse(2) schedule(static)
    for (int64_t b = 0; b < d.B; ++b) {
        for (int64_t c = 0; c < d.C; ++c) {
            for (int64_t ih = 0; ih < d.H; ++ih) {
                int64_t kh_lo, kh_hi;
                tap_bounds(ih, d.stride, d.pad, d.K, d.OH, kh_lo, kh_hi);
                for (int64_t iw = 0; iw < d.W; ++iw) {
                    int64_t kw_lo, kw_hi;
                    tap_bounds(iw, d.stride, d.pad, d.K, d.OW, kw_lo, kw_hi);
                    double acc = 0.0;
                    for (int64_t f = 0; f < d.F; ++f) {
                        const double* gout_bf = gout + idx4(b, f, 0, 0, d.F, d.OH, d.OW);
                        const double* ker_cf = ker + idx4(c, f, 0, 0, d.F, d.K, d.K);
                        for (int64_t kh = kh_lo; kh < kh_hi; ++kh) {
                            int64_t oh = ih * d.stride - d.pad + kh;
                            const double* gout_row = gout_bf + oh * d.OW + iw * d.stride - d.pad;
                            const double* ker_row = ker_cf + kh * d.K;
                            for (int64_t kw = kw_lo; kw < kw_hi; ++kw)
                                acc += gout_row[kw] * ker_row[kw];
                        }
                    }
                    gin[idx4(b, c, ih, iw, d.C, d.H, d.W)] = acc;
                }
            }
        }
    }
}

void convt2d_wgrad(const double* gout, const double* in, double* gker, const ConvDims& d) {
#pragma omp parallel for collapse(2) schedule(static)
    for (int64_t c = 0; c < d.C; ++c) {
        for (int64_t f = 0; f < d.F; ++f) {
            for (int64_t kh = 0; kh < d.K; ++kh) {
                int64_t ih_lo = std::max<int64_t>(0, ceil_div(d.pad - kh, d.stride));
                int64_t ih_hi = std::min(d.H, floor_div(d.OH - 1 + d.pad - kh, d.stride) + 1);
                for (int64_t kw = 0; kw < d.K; ++kw) {
                    int64_t iw_lo = std::max<int64_t>(0, ceil_div(d.pad - kw, d.stride));
                    int64_t iw_hi = std::min(d.W, floor_div(d.OW - 1 + d.pad - kw, d.stride) + 1);
                    double acc = 0.0;
                    for (int64_t b = 0; b < d.B; ++b) {
                        const double* in_bc = in + idx4(b, c, 0, 0, d.C, d.H, d.W);
                        const double* gout_bf = gout + idx4(b, f, 0, 0, d.F, d.OH, d.OW);
                        for (int64_t ih = ih_lo; ih < ih_hi; ++ih) {
                            int64_t oh = ih * d.stride - d.pad + kh;
                            const double* gout_row = gout_bf + oh * d.OW - d.pad + kw;
                            const double* in_row = in_bc + ih * d.W;
                            for (int64_t iw = iw_lo; iw < iw_hi; ++iw)
                                acc += in_row[iw] * gout_row[iw * d.stride];
                        }
                    }
                    gker[idx4(c, f, kh, kw, d.F, d.K, d.K)] = acc;
                }
            }
        }
    }
}

}  // namespace kernels

// Serial reference: direct transcription of the defining sums, scatter form
// where that is the natural reading. Kept for tests and the benchmark.
namespace refkernels {

void conv2d_fwd(const double* in, const double* ker, double* out, const ConvDims& d) {
    for (int64_t i = 0; i < d.B * d.F * d.OH * d.OW; ++i) out[i] = 0.0;
    for (int64_t b = 0; b < d.B; ++b)
        for (int64_t f = 0; f < d.F; ++f)
            for (int64_t c = 0; c < d.C; ++c)
                for (int64_t oh = 0; oh < d.OH; ++oh)
                    for (int64_t ow = 0; ow < d.OW; ++ow)
                        for (int64_t kh = 0; kh < d.K; ++kh)
                            for (int64_t kw = 0; kw < d.K; ++kw) {
                                int64_t ih = oh * d.stride - d.pad + kh;
                                int64_t iw = ow * d.stride - d.pad + kw;
                                if (ih < 0 || ih >= d.H || iw < 0 || iw >= d.W) continue;
                                out[idx4(b, f, oh, ow, d.F, d.OH, d.OW)] +=
                                    in[idx4(b, c, ih, iw, d.C, d.H, d.W)] *
                                    ker[idx4(f, c, kh, kw, d.C, d.K, d.K)];
                            }
}

void conv2d_dgrad(const double* gout, const double* ker, double* gin, const ConvDims& d) {
    for (int64_t i = 0; i < d.B * d.C * d.H * d.W; ++i) gin[i] = 0.0;
    for (int64_t b = 0; b < d.B; ++b)
        for (int64_t f = 0; f < d.F; ++f)
            for (int64_t c = 0; c < d.C; ++c)
                for (int64_t oh = 0; oh < d.OH; ++oh)
                    for (int64_t ow = 0; ow < d.OW; ++ow)
                        for (int64_t kh = 0; kh < d.K; ++kh)
                            for (int64_t kw = 0; kw < d.K; ++kw) {
                                int64_t ih = oh * d.stride - d.pad + kh;
                                int64_t iw = ow * d.stride - d.pad + kw;
                                if (ih < 0 || ih >= d.H || iw < 0 || iw >= d.W) continue;
                                gin[idx4(b, c, ih, iw, d.C, d.H, d.W)] +=
                                    gout[idx4(b, f, oh, ow, d.F, d.OH, d.OW)] *
                                    ker[idx4(f, c, kh, kw, d.C, d.K, d.K)];
                            }
}

void conv2d_wgrad(const double* gout, const double* in, double* gker, const ConvDims& d) {
    for (int64_t i = 0; i < d.F * d.C * d.K * d.K; ++i) gker[i] = 0.0;
    for (int64_t b = 0; b < d.B; ++b)
        for (int64_t f = 0; f < d.F; ++f)
            for (int64_t c = 0; c < d.C; ++c)
                for (int64_t oh = 0; oh < d.OH; ++oh)
                    for (int64_t ow = 0; ow < d.OW; ++ow)
                        for (int64_t kh = 0; kh < d.K; ++kh)
                            for (int64_t kw = 0; kw < d.K; ++kw) {
                                int64_t ih = oh * d.stride - d.pad + kh;
                                int64_t iw = ow * d.stride - d.pad + kw;
                                if (ih < 0 || ih >= d.H || iw < 0 || iw >= d.W) continue;
                                gker[idx4(f, c, kh, kw, d.C, d.K, d.K)] +=
                                    gout[idx4(b, f, oh, ow, d.F, d.OH, d.OW)] *
                                    in[idx4(b, c, ih, iw, d.C, d.H, d.W)];
                            }
}

// Fractionally-strided scatter: every input pixel stamps the kernel onto
// the output at stride offsets.
void convt2d_fwd(const double* in, const double* ker, double* out, const ConvDims& d) {
    for (int64_t i = 0; i < d.B * d.F * d.OH * d.OW; ++i) out[i] = 0.0;
    for (int64_t b = 0; b < d.B; ++b)
        for (int64_t c = 0; c < d.C; ++c)
            for (int64_t f = 0; f < d.F; ++f)
                for (int64_t ih = 0; ih < d.H; ++ih)
                    for (int64_t iw = 0; iw < d.W; ++iw)
                        for (int64_t kh = 0; kh < d.K; ++kh)
                            for (int64_t kw = 0; kw < d.K; ++kw) {
                                int64_t oh = ih * d.stride - d.pad + kh;
                                int64_t ow = iw * d.stride - d.pad + kw;
                                if (oh < 0 || oh >= d.OH || ow < 0 || ow >= d.OW) continue;
                                out[idx4(b, f, oh, ow, d.F, d.OH, d.OW)] +=
                                    in[idx4(b, c, ih, iw, d.C, d.H, d.W)] *
                                    ker[idx4(c, f, kh, kw, d.F, d.K, d.K)];
                            }
}

void convt2d_dgrad(const double* gout, const double* ker, double* gin, const ConvDims& d) {
    for (int64_t i = 0; i < d.B * d.C * d.H * d.W; ++i) gin[i] = 0.0;
    for (int64_t b = 0; b < d.B; ++b)
        for (int64_t c = 0; c < d.C; ++c)
            for (int64_t f = 0; f < d.F; ++f)
                for (int64_t ih = 0; ih < d.H; ++ih)
                    for (int64_t iw = 0; iw < d.W; ++iw)
                        for (int64_t kh = 0; kh < d.K; ++kh)
                            for (int64_t kw = 0; kw < d.K; ++kw) {
                                int64_t oh = ih * d.stride - d.pad + kh;
                                int64_t ow = iw * d.stride - d.pad + kw;
                                if (oh < 0 || oh >= d.OH || ow < 0 || ow >= d.OW) continue;
                                gin[idx4(b, c, ih, iw, d.C, d.H, d.W)] +=
                                    gout[idx4(b, f, oh, ow, d.F, d.OH, d.OW)] *
                                    ker[idx4(c, f, kh, kw, d.F, d.K, d.K)];
                            }
}

void convt2d_wgrad(const double* gout, const double* in, double* gker, const ConvDims& d) {
    for (int64_t i = 0; i < d.C * d.F * d.K * d.K; ++i) gker[i] = 0.0;
    for (int64_t b = 0; b < d.B; ++b)
        for (int64_t c = 0; c < d.C; ++c)
            for (int64_t f = 0; f < d.F; ++f)
                for (int64_t ih = 0; ih < d.H; ++ih)
                    for (int64_t iw = 0; iw < d.W; ++iw)
                        for (int64_t kh = 0; kh < d.K; ++kh)
                            for (int64_t kw = 0; kw < d.K; ++kw) {
                                int64_t oh = ih * d.stride - d.pad + kh;
                                int64_t ow = iw * d.stride - d.pad + kw;
                                if (oh < 0 || oh >= d.OH || ow < 0 || ow >= d.OW) continue;
                                gker[idx4(c, f, kh, kw, d.F, d.K, d.K)] +=
                                    in[idx4(b, c, ih, iw, d.C, d.H, d.W)] *
                                    gout[idx4(b, f, oh, ow, d.F, d.OH, d.OW)];
                            }
}

}  // namespace refkernels

}  // namespace demorph
