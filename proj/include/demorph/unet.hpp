#pragma once

#include <array>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "demorph/morphops.hpp"
#include "demorph/ops.hpp"
#include "demorph/optim.hpp"
#include "demorph/rng.hpp"
#include "demorph/schedule.hpp"

namespace demorph::net {

struct UNetConfig {
    int img_size = 32;
    int in_channels = 1;
    int n_stages = 3;     // stride-2 encoder stages; spatial extent halves per stage
    int base_width = 32;  // channels double per stage
    int time_embed_dim = 64;
    int T = 300;
};

struct ConvBnBlock {
    Tensor w;  // conv or transpose-conv weights
    Tensor gamma, beta;
    BatchNormState bn;
};

// Shared encoder + latent, two decoders of identical shape but independent
// values. Both decoders consume the same latent tensor and the same skip
// tensors; the time embedding is projected and added at every resolution
// (projections shared between the branches).
struct BranchedUNetParams {
    UNetConfig cfg;

    std::vector<ConvBnBlock> enc;  // stride-2 3x3 convs
    ConvBnBlock latent;            // stride-1 3x3 conv at the bottleneck
    std::vector<ConvBnBlock> dec1, dec2;  // stride-2 4x4 transpose convs
    Tensor head1_w, head1_b, head2_w, head2_b;  // 1x1 output projections

    Tensor time_base_w, time_base_b;            // ted -> ted
    std::vector<Tensor> time_enc_w, time_enc_b; // ted -> stage channels
    Tensor time_lat_w, time_lat_b;
    std::vector<Tensor> time_dec_w, time_dec_b; // shared by both branches

    static BranchedUNetParams init(const UNetConfig& cfg, uint64_t seed);

    void for_each_param(const std::function<void(const std::string&, Tensor&)>& fn);
    void for_each_state(const std::function<void(const std::string&, Tensor&)>& fn);
    ParamRefs param_refs();
    int64_t param_count();
};

// x [B,in_channels,H,W] with one step index per sample, 0 <= t <= T.
// Returns the two branch predictions, each shaped like x.
std::pair<Tensor, Tensor> unet_forward(Tape* tape, BranchedUNetParams& params, const Tensor& x,
                                       const std::vector<int>& ts, BnMode mode);
// Single-image inference: [C,H,W] at step t, eval-mode stats, no tape.
std::pair<Tensor, Tensor> unet_forward(BranchedUNetParams& params, const Tensor& x, int t);

enum class Pairing { direct, swapped };

// min[ L1(i1,o1)+L1(i2,o2), L1(i1,o2)+L1(i2,o1) ]; ties resolve to direct.
struct CrossroadResult {
    Tensor loss;  // scalar, on the tape if inputs were
    Pairing pairing;
};
CrossroadResult crossroad_loss(Tape* tape, const Tensor& i1, const Tensor& i2, const Tensor& o1,
                               const Tensor& o2);

// Batched form: per-sample min, mean over the batch.
struct BatchCrossroad {
    Tensor loss;  // [1]
    std::vector<Pairing> pairings;
};
BatchCrossroad crossroad_loss_batch(Tape* tape, const Tensor& i1, const Tensor& i2,
                                    const Tensor& o1, const Tensor& o2);

struct TrainConfig {
    int T = 300;
    int epochs = 300;
    double lr = 1e-3;
    int batch_size = 16;
    int img_size = 32;
    uint64_t seed = 0;
    int time_embed_dim = 64;
    int n_stages = 3;
    int base_width = 32;

    UNetConfig unet() const {
        return UNetConfig{img_size, 1, n_stages, base_width, time_embed_dim, T};
    }
};

struct EpochStats {
    double mean_loss = 0.0;
    double pairing_flip_rate = 0.0;  // fraction of samples resolved to the swapped pairing
    int n_batches = 0;
};

// One pass over the manifest's train split: per sample draw t ~ U{1..T} and
// three independent noise fields, noise morph and bona fides to step t, run
// the net on the noisy morph and the cross-road loss against the noisy bona
// fides, then one Adam update per batch.
EpochStats train_epoch(BranchedUNetParams& params, const morphops::DatasetManifest& manifest,
                       const NoiseSchedule& sched, const TrainConfig& cfg, AdamState& adam,
                       Rng& rng);

struct DemorphOutput {
    Tensor o1, o2;  // clamped to [0,1]
    Pairing pairing = Pairing::direct;
    std::array<double, 2> per_output_losses{0.0, 0.0};
};

// Default inference: single pass at t = 0 on the clean input.
DemorphOutput demorph_direct(BranchedUNetParams& params, const Tensor& x);

// Optional trace of the iterative refinement, sampled every `stride` steps.
struct IterativeTrace {
    std::vector<int> ts;
    std::vector<Tensor> pred1, pred2;  // branch predictions at step t
    std::vector<Tensor> est1, est2;    // running reverse-chain estimates
};

// Experimental mode walking the noisy-input trajectory t = T..1, refining a
// running estimate per branch with reverse_step, then taking the final
// output from the t = 0 pass. With zero_noise the result is bit-identical
// to demorph_direct.
DemorphOutput demorph_iterative(BranchedUNetParams& params, const Tensor& x,
                                const NoiseSchedule& sched, uint64_t seed, bool zero_noise = false,
                                IterativeTrace* trace = nullptr, int trace_stride = 50);

// Checkpoint container: magic "SDMF", u32 version, JSON config block, then
// named little-endian float64 records (params, batch-norm stats, Adam
// moments). Round-trips bit-exactly.
struct Checkpoint {
    TrainConfig cfg;
    int epoch = 0;
    BranchedUNetParams params;
    AdamState adam;
};
void save_checkpoint(BranchedUNetParams& params, const AdamState& adam, const TrainConfig& cfg,
                     int epoch, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace demorph::net
