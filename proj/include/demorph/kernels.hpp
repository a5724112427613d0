#pragma once

#include <cstdint>

#include "demorph/tensor.hpp"

namespace demorph {

// Geometry of a (transpose-)convolution call. H,W are input extents,
// OH,OW output extents. Kernel layout is [F,C,K,K] for conv2d and
// [C,F,K,K] for conv_transpose2d.
struct ConvDims {
    int64_t B, C, H, W;  // input
    int64_t F, K;        // filters, square kernel extent
    int64_t stride, pad;
    int64_t OH, OW;  // output
};

ConvDims conv2d_dims(int64_t B, int64_t C, int64_t H, int64_t W, int64_t F, int64_t K,
                     int64_t stride, int64_t pad);
ConvDims convt2d_dims(int64_t B, int64_t C, int64_t H, int64_t W, int64_t F, int64_t K,
                      int64_t stride, int64_t pad);

// Production kernels: OpenMP-parallel over disjoint output elements, each
// element reduced serially in a fixed order, so results are bit-identical
// across thread counts and to repeated runs.
namespace kernels {

void conv2d_fwd(const double* in, const double* ker, double* out, const ConvDims& d);
void conv2d_dgrad(const double* gout, const double* ker, double* gin, const ConvDims& d);
void conv2d_wgrad(const double* gout, const double* in, double* gker, const ConvDims& d);

void convt2d_fwd(const double* in, const double* ker, double* out, const ConvDims& d);
void convt2d_dgrad(const double* gout, const double* ker, double* gin, const ConvDims& d);
void convt2d_wgrad(const double* gout, const double* in, double* gker, const ConvDims& d);

}  // namespace kernels

// Serial reference: direct transcription of the defining sums (scatter
// form where that is the natural reading). Kept for tests and the
// kernel benchmark; not used on the production path.
namespace refkernels {

void conv2d_fwd(const double* in, const double* ker, double* out, const ConvDims& d);
void conv2d_dgrad(const double* gout, const double* ker, double* gin, const ConvDims& d);
void conv2d_wgrad(const double* gout, const double* in, double* gker, const ConvDims& d);

void convt2d_fwd(const double* in, const double* ker, double* out, const ConvDims& d);
void convt2d_dgrad(const double* gout, const double* ker, double* gin, const ConvDims& d);
void convt2d_wgrad(const double* gout, const double* in, double* gker, const ConvDims& d);

}  // namespace refkernels

}  // namespace demorph
