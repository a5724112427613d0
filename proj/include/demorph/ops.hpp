#pragma once

#include "demorph/kernels.hpp"
#include "demorph/tape.hpp"
#include "demorph/tensor.hpp"

namespace demorph {

// Every op takes the active tape as first argument; pass nullptr for pure
// inference (nothing recorded, outputs detached). Inputs are never mutated.

enum class BnMode { train, eval };

struct BatchNormState {
    Tensor running_mean;  // [C]
    Tensor running_var;   // [C], biased estimator, matches train normalization
};
BatchNormState make_batch_norm_state(int64_t channels);

// input [B,C,H,W], kernel [F,C,K,K] -> [B,F,OH,OW]
Tensor conv2d(Tape* tape, const Tensor& input, const Tensor& kernel, int stride, int pad);

// input [B,C,H,W], kernel [C,F,K,K] -> [B,F,(H-1)*s-2p+K, ...]; adjoint of
// conv2d at matching geometry.
Tensor conv_transpose2d(Tape* tape, const Tensor& input, const Tensor& kernel, int stride, int pad);

// x [B,C,H,W]; gamma, beta [C]. Train mode normalizes by batch statistics
// and folds them into the running stats (momentum); eval mode is a pure
// function of x and the running stats.
Tensor batch_norm(Tape* tape, const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  BatchNormState& state, BnMode mode, double momentum = 0.1, double eps = 1e-5);

Tensor silu(Tape* tape, const Tensor& x);
Tensor add(Tape* tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape* tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape* tape, const Tensor& x, double c);

// x [B,C,H,W] + v broadcast over spatial dims; v is [C] or [B,C].
Tensor add_channel_bias(Tape* tape, const Tensor& x, const Tensor& v);

// [B,Ca,H,W] ++ [B,Cb,H,W] -> [B,Ca+Cb,H,W]
Tensor concat_channels(Tape* tape, const Tensor& a, const Tensor& b);

// x [B,I], w [O,I], b [O] -> [B,O]
Tensor linear(Tape* tape, const Tensor& x, const Tensor& w, const Tensor& b);

Tensor sum_all(Tape* tape, const Tensor& x);   // -> [1]
Tensor mean_all(Tape* tape, const Tensor& x);  // -> [1]

// Mean absolute difference; subgradient at 0 is 0.
Tensor l1_loss(Tape* tape, const Tensor& pred, const Tensor& target);
// Per-sample mean |pred-target| over all non-batch dims -> [B].
Tensor l1_per_sample(Tape* tape, const Tensor& pred, const Tensor& target);

// entry 2i = sin(t / 10000^(2i/dim)), entry 2i+1 = cos(...); dim must be even.
Tensor sinusoidal_time_embedding(int t, int dim);

Tensor clamp01(const Tensor& x);

// Batch plumbing for [1,H,W] images <-> [B,1,H,W] batches.
Tensor stack_images(const std::vector<Tensor>& images);
Tensor slice_image(const Tensor& batch, int64_t b);

}  // namespace demorph
