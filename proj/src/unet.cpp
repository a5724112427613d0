#include "demorph/unet.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

#include <json.hpp>

using ordered_json = nlohmann::ordered_json;

namespace demorph::net {

namespace {

Tensor kaiming_conv(Rng& rng, Shape shape, int64_t fan_in) {
    Tensor t = Tensor::zeros(std::move(shape));
    double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (auto& v : t.data) v = sd * rng.normal();
    return t;
}

std::vector<int64_t> stage_widths(const UNetConfig& cfg) {
    std::vector<int64_t> w(static_cast<size_t>(cfg.n_stages));
    for (int i = 0; i < cfg.n_stages; ++i) w[static_cast<size_t>(i)] = cfg.base_width << i;
    return w;
}

// Decoder stage j (j = 0 deepest) consumes concat(y, skip) and emits
// out_ch[j]; the last stage lands back at base_width.
std::vector<int64_t> decoder_out_channels(const UNetConfig& cfg) {
    auto w = stage_widths(cfg);
    std::vector<int64_t> out(static_cast<size_t>(cfg.n_stages));
    for (int j = 0; j < cfg.n_stages; ++j) {
        int i = cfg.n_stages - 1 - j;
        out[static_cast<size_t>(j)] = i > 0 ? w[static_cast<size_t>(i - 1)] : cfg.base_width;
    }
    return out;
}

void check_config(const UNetConfig& cfg) {
    if (cfg.n_stages < 1) throw ConfigError("unet: need at least one stage");
    if (cfg.base_width < 1) throw ConfigError("unet: base_width must be positive");
    if (cfg.time_embed_dim < 2 || cfg.time_embed_dim % 2 != 0)
        throw ConfigError("unet: time_embed_dim must be even and >= 2");
    int down = 1 << cfg.n_stages;
    if (cfg.img_size % down != 0 || cfg.img_size / down < 1)
        throw ConfigError("unet: img_size " + std::to_string(cfg.img_size) + " not divisible by 2^" +
                          std::to_string(cfg.n_stages));
}

}  // namespace

BranchedUNetParams BranchedUNetParams::init(const UNetConfig& cfg, uint64_t seed) {
    check_config(cfg);
    BranchedUNetParams p;
    p.cfg = cfg;
    Rng rng(mix_seed(seed, 0x07e7));
    auto widths = stage_widths(cfg);
    int64_t ted = cfg.time_embed_dim;

    auto make_block = [&](int64_t cin, int64_t cout, int64_t k, bool transpose) {
        ConvBnBlock b;
        b.w = transpose ? kaiming_conv(rng, {cin, cout, k, k}, cin * k * k)
                        : kaiming_conv(rng, {cout, cin, k, k}, cin * k * k);
        b.gamma = Tensor::full({cout}, 1.0);
        b.beta = Tensor::zeros({cout});
        b.bn = make_batch_norm_state(cout);
        return b;
    };
    auto make_linear = [&](int64_t in, int64_t out, Tensor& w, Tensor& b) {
        w = kaiming_conv(rng, {out, in}, in);
        b = Tensor::zeros({out});
    };

    for (int i = 0; i < cfg.n_stages; ++i) {
        int64_t cin = i == 0 ? cfg.in_channels : widths[static_cast<size_t>(i - 1)];
        p.enc.push_back(make_block(cin, widths[static_cast<size_t>(i)], 3, false));
    }
    int64_t cz = widths[static_cast<size_t>(cfg.n_stages - 1)];
    p.latent = make_block(cz, cz, 3, false);

    make_linear(ted, ted, p.time_base_w, p.time_base_b);
    p.time_enc_w.resize(static_cast<size_t>(cfg.n_stages));
    p.time_enc_b.resize(static_cast<size_t>(cfg.n_stages));
    for (int i = 0; i < cfg.n_stages; ++i)
        make_linear(ted, widths[static_cast<size_t>(i)], p.time_enc_w[static_cast<size_t>(i)],
                    p.time_enc_b[static_cast<size_t>(i)]);
    make_linear(ted, cz, p.time_lat_w, p.time_lat_b);

    auto dec_out = decoder_out_channels(cfg);
    p.time_dec_w.resize(static_cast<size_t>(cfg.n_stages));
    p.time_dec_b.resize(static_cast<size_t>(cfg.n_stages));
    for (int j = 0; j < cfg.n_stages; ++j)
        make_linear(ted, dec_out[static_cast<size_t>(j)], p.time_dec_w[static_cast<size_t>(j)],
                    p.time_dec_b[static_cast<size_t>(j)]);

    auto build_decoder = [&]() {
        std::vector<ConvBnBlock> dec;
        int64_t ch = cz;
        for (int j = 0; j < cfg.n_stages; ++j) {
            int i = cfg.n_stages - 1 - j;
            int64_t skip_ch = widths[static_cast<size_t>(i)];
            dec.push_back(make_block(ch + skip_ch, dec_out[static_cast<size_t>(j)], 4, true));
            ch = dec_out[static_cast<size_t>(j)];
        }
        return dec;
    };
    p.dec1 = build_decoder();
    p.dec2 = build_decoder();

    p.head1_w = kaiming_conv(rng, {1, cfg.base_width, 1, 1}, cfg.base_width);
    p.head1_b = Tensor::zeros({1});
    p.head2_w = kaiming_conv(rng, {1, cfg.base_width, 1, 1}, cfg.base_width);
    p.head2_b = Tensor::zeros({1});
    return p;
}

void BranchedUNetParams::for_each_param(
    const std::function<void(const std::string&, Tensor&)>& fn) {
    auto block = [&](const std::string& prefix, ConvBnBlock& b, const char* conv_name) {
        fn(prefix + "." + conv_name + ".w", b.w);
        fn(prefix + ".bn.gamma", b.gamma);
        fn(prefix + ".bn.beta", b.beta);
    };
    for (size_t i = 0; i < enc.size(); ++i) block("enc" + std::to_string(i), enc[i], "conv");
    block("latent", latent, "conv");
    fn("time.base.w", time_base_w);
    fn("time.base.b", time_base_b);
    for (size_t i = 0; i < time_enc_w.size(); ++i) {
        fn("time.enc" + std::to_string(i) + ".w", time_enc_w[i]);
        fn("time.enc" + std::to_string(i) + ".b", time_enc_b[i]);
    }
    fn("time.lat.w", time_lat_w);
    fn("time.lat.b", time_lat_b);
    for (size_t j = 0; j < time_dec_w.size(); ++j) {
        fn("time.dec" + std::to_string(j) + ".w", time_dec_w[j]);
        fn("time.dec" + std::to_string(j) + ".b", time_dec_b[j]);
    }
    for (size_t j = 0; j < dec1.size(); ++j) block("dec1." + std::to_string(j), dec1[j], "convt");
    for (size_t j = 0; j < dec2.size(); ++j) block("dec2." + std::to_string(j), dec2[j], "convt");
    fn("head1.w", head1_w);
    fn("head1.b", head1_b);
    fn("head2.w", head2_w);
    fn("head2.b", head2_b);
}

void BranchedUNetParams::for_each_state(
    const std::function<void(const std::string&, Tensor&)>& fn) {
    auto block = [&](const std::string& prefix, ConvBnBlock& b) {
        fn(prefix + ".bn.mean", b.bn.running_mean);
        fn(prefix + ".bn.var", b.bn.running_var);
    };
    for (size_t i = 0; i < enc.size(); ++i) block("enc" + std::to_string(i), enc[i]);
    block("latent", latent);
    for (size_t j = 0; j < dec1.size(); ++j) block("dec1." + std::to_string(j), dec1[j]);
    for (size_t j = 0; j < dec2.size(); ++j) block("dec2." + std::to_string(j), dec2[j]);
}

ParamRefs BranchedUNetParams::param_refs() {
    ParamRefs refs;
    for_each_param([&](const std::string& name, Tensor& t) { refs.push_back({name, &t}); });
    return refs;
}

int64_t BranchedUNetParams::param_count() {
    int64_t n = 0;
    for_each_param([&](const std::string&, Tensor& t) { n += t.size(); });
    return n;
}

std::pair<Tensor, Tensor> unet_forward(Tape* tape, BranchedUNetParams& p, const Tensor& x,
                                       const std::vector<int>& ts, BnMode mode) {
    const UNetConfig& cfg = p.cfg;
    require_rank(x, 4, "unet_forward");
    if (x.shape[1] != cfg.in_channels || x.shape[2] != cfg.img_size || x.shape[3] != cfg.img_size)
        throw ShapeError("unet_forward: input " + shape_str(x.shape) + " does not match config " +
                         std::to_string(cfg.img_size));
    int64_t B = x.shape[0];
    if (static_cast<int64_t>(ts.size()) != B)
        throw ShapeError("unet_forward: need one step index per sample");
    for (int t : ts)
        if (t < 0 || t > cfg.T)
            throw std::out_of_range("unet_forward: step " + std::to_string(t) + " outside 0.." +
                                    std::to_string(cfg.T));

    // shared time embedding -> base MLP
    Tensor emb = Tensor::zeros({B, static_cast<int64_t>(cfg.time_embed_dim)});
    for (int64_t b = 0; b < B; ++b) {
        Tensor e = sinusoidal_time_embedding(ts[static_cast<size_t>(b)], cfg.time_embed_dim);
        std::copy(e.data.begin(), e.data.end(),
                  emb.data.begin() + b * cfg.time_embed_dim);
    }
    Tensor h = silu(tape, linear(tape, emb, p.time_base_w, p.time_base_b));

    // encoder: stride-2 conv -> BN -> +time -> SiLU, skips kept per stage
    Tensor y = x;
    std::vector<Tensor> skips;
    for (size_t i = 0; i < p.enc.size(); ++i) {
        y = conv2d(tape, y, p.enc[i].w, 2, 1);
        y = batch_norm(tape, y, p.enc[i].gamma, p.enc[i].beta, p.enc[i].bn, mode);
        y = add_channel_bias(tape, y, linear(tape, h, p.time_enc_w[i], p.time_enc_b[i]));
        y = silu(tape, y);
        skips.push_back(y);
    }

    Tensor z = conv2d(tape, y, p.latent.w, 1, 1);
    z = batch_norm(tape, z, p.latent.gamma, p.latent.beta, p.latent.bn, mode);
    z = add_channel_bias(tape, z, linear(tape, h, p.time_lat_w, p.time_lat_b));
    z = silu(tape, z);

    // both branches read the same latent and the same skips
    auto run_decoder = [&](std::vector<ConvBnBlock>& dec, Tensor& head_w, Tensor& head_b) {
        Tensor d = z;
        for (size_t j = 0; j < dec.size(); ++j) {
            size_t i = dec.size() - 1 - j;
            d = concat_channels(tape, d, skips[i]);
            d = conv_transpose2d(tape, d, dec[j].w, 2, 1);
            d = batch_norm(tape, d, dec[j].gamma, dec[j].beta, dec[j].bn, mode);
            d = add_channel_bias(tape, d, linear(tape, h, p.time_dec_w[j], p.time_dec_b[j]));
            d = silu(tape, d);
        }
        d = conv2d(tape, d, head_w, 1, 0);
        return add_channel_bias(tape, d, head_b);
    };
    Tensor o1 = run_decoder(p.dec1, p.head1_w, p.head1_b);
    Tensor o2 = run_decoder(p.dec2, p.head2_w, p.head2_b);
    return {std::move(o1), std::move(o2)};
}

std::pair<Tensor, Tensor> unet_forward(BranchedUNetParams& p, const Tensor& x, int t) {
    require_rank(x, 3, "unet_forward");
    Tensor batch = stack_images({x});
    auto [o1, o2] = unet_forward(nullptr, p, batch, {t}, BnMode::eval);
    return {slice_image(o1, 0), slice_image(o2, 0)};
}

CrossroadResult crossroad_loss(Tape* tape, const Tensor& i1, const Tensor& i2, const Tensor& o1,
                               const Tensor& o2) {
    require_same_shape(i1, i2, "crossroad_loss");
    require_same_shape(i1, o1, "crossroad_loss");
    require_same_shape(i1, o2, "crossroad_loss");
    Tensor direct = add(tape, l1_loss(tape, o1, i1), l1_loss(tape, o2, i2));
    Tensor swapped = add(tape, l1_loss(tape, o2, i1), l1_loss(tape, o1, i2));
    if (direct.data[0] <= swapped.data[0]) return {std::move(direct), Pairing::direct};
    return {std::move(swapped), Pairing::swapped};
}

BatchCrossroad crossroad_loss_batch(Tape* tape, const Tensor& i1, const Tensor& i2,
                                    const Tensor& o1, const Tensor& o2) {
    require_same_shape(i1, i2, "crossroad_loss_batch");
    require_same_shape(i1, o1, "crossroad_loss_batch");
    require_same_shape(i1, o2, "crossroad_loss_batch");
    int64_t B = i1.shape[0];
    Tensor d11 = l1_per_sample(tape, o1, i1);
    Tensor d22 = l1_per_sample(tape, o2, i2);
    Tensor d21 = l1_per_sample(tape, o2, i1);
    Tensor d12 = l1_per_sample(tape, o1, i2);
    Tensor sum_direct = add(tape, d11, d22);
    Tensor sum_swapped = add(tape, d21, d12);

    Tensor mask_direct = Tensor::zeros({B});
    Tensor mask_swapped = Tensor::zeros({B});
    std::vector<Pairing> pairings(static_cast<size_t>(B));
    for (int64_t b = 0; b < B; ++b) {
        bool direct = sum_direct.data[static_cast<size_t>(b)] <=
                      sum_swapped.data[static_cast<size_t>(b)];
        pairings[static_cast<size_t>(b)] = direct ? Pairing::direct : Pairing::swapped;
        (direct ? mask_direct : mask_swapped).data[static_cast<size_t>(b)] = 1.0;
    }
    Tensor picked = add(tape, mul(tape, mask_direct, sum_direct), mul(tape, mask_swapped, sum_swapped));
    return {mean_all(tape, picked), std::move(pairings)};
}

EpochStats train_epoch(BranchedUNetParams& params, const morphops::DatasetManifest& manifest,
                       const NoiseSchedule& sched, const TrainConfig& cfg, AdamState& adam,
                       Rng& rng) {
    const auto& train = manifest.train;
    if (train.empty()) throw ConfigError("train_epoch: empty train split");
    if (manifest.img_size != cfg.img_size)
        throw ConfigError("train_epoch: manifest img_size " + std::to_string(manifest.img_size) +
                          " does not match config " + std::to_string(cfg.img_size));

    std::vector<size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);

    ParamRefs refs = params.param_refs();
    EpochStats stats;
    double loss_sum = 0.0;
    int64_t flips = 0;

    int64_t n = static_cast<int64_t>(train.size());
    int64_t bs = cfg.batch_size;
    for (int64_t start = 0; start < n; start += bs) {
        int64_t bend = std::min(start + bs, n);
        int64_t B = bend - start;

        std::vector<Tensor> xs, i1s, i2s;
        std::vector<int> ts;
        xs.reserve(static_cast<size_t>(B));
        for (int64_t k = start; k < bend; ++k) {
            const auto& s = train[order[static_cast<size_t>(k)]];
            int t = static_cast<int>(rng.uniform_int(1, cfg.T));
            ts.push_back(t);
            auto draw = [&]() {
                NoiseDraw d{Tensor::zeros(s.x.shape), 0};
                for (auto& v : d.eps.data) v = rng.normal();
                return d;
            };
            xs.push_back(q_sample(s.x, t, draw(), sched));
            i1s.push_back(q_sample(s.i1, t, draw(), sched));
            i2s.push_back(q_sample(s.i2, t, draw(), sched));
        }
        Tensor xb = stack_images(xs), i1b = stack_images(i1s), i2b = stack_images(i2s);

        Tape tape;
        for (auto& r : refs) tape.watch(*r.tensor);
        auto [o1, o2] = unet_forward(&tape, params, xb, ts, BnMode::train);
        BatchCrossroad cr = crossroad_loss_batch(&tape, i1b, i2b, o1, o2);
        double loss = cr.loss.data[0];
        GradBuffers grads = tape.backward(cr.loss);
        adam_step(refs, grads, adam);

        loss_sum += loss * static_cast<double>(B);
        for (Pairing pr : cr.pairings) flips += pr == Pairing::swapped ? 1 : 0;
        stats.n_batches += 1;
    }
    stats.mean_loss = loss_sum / static_cast<double>(n);
    stats.pairing_flip_rate = static_cast<double>(flips) / static_cast<double>(n);
    return stats;
}

DemorphOutput demorph_direct(BranchedUNetParams& params, const Tensor& x) {
    auto [p1, p2] = unet_forward(params, x, 0);
    DemorphOutput out;
    out.o1 = clamp01(p1);
    out.o2 = clamp01(p2);
    return out;
}

DemorphOutput demorph_iterative(BranchedUNetParams& params, const Tensor& x,
                                const NoiseSchedule& sched, uint64_t seed, bool zero_noise,
                                IterativeTrace* trace, int trace_stride) {
    require_rank(x, 3, "demorph_iterative");
    Rng noise_rng(mix_seed(seed, 0x17));
    auto draw = [&]() {
        NoiseDraw d{Tensor::zeros(x.shape), 0};
        if (!zero_noise)
            for (auto& v : d.eps.data) v = noise_rng.normal();
        return d;
    };

    Tensor est1, est2;
    for (int t = sched.T; t >= 1; --t) {
        Tensor x_t = q_sample(x, t, draw(), sched);
        auto [p1, p2] = unet_forward(params, x_t, t);
        // the branch prediction is the step-t state of its reverse chain;
        // the clean estimate it implies refines the running estimate
        est1 = reverse_step(p1, clamp01(p1), t, draw(), sched);
        est2 = reverse_step(p2, clamp01(p2), t, draw(), sched);
        if (trace && (t % trace_stride == 0 || t == 1 || t == sched.T)) {
            trace->ts.push_back(t);
            trace->pred1.push_back(p1);
            trace->pred2.push_back(p2);
            trace->est1.push_back(est1);
            trace->est2.push_back(est2);
        }
    }

    auto [f1, f2] = unet_forward(params, x, 0);
    DemorphOutput out;
    out.o1 = clamp01(f1);
    out.o2 = clamp01(f2);
    out.per_output_losses = {l1_loss(nullptr, out.o1, est1).data[0],
                             l1_loss(nullptr, out.o2, est2).data[0]};
    return out;
}

namespace {

constexpr char kMagic[4] = {'S', 'D', 'M', 'F'};
constexpr uint32_t kVersion = 1;

void put_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<char*>(b), 4);
}
void put_u64(std::ostream& os, uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<char*>(b), 8);
}
uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw CheckpointError("checkpoint: truncated file");
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
    return v;
}
uint64_t get_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) throw CheckpointError("checkpoint: truncated file");
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    return v;
}

void put_record(std::ostream& os, const std::string& name, const Shape& shape,
                const std::vector<double>& data) {
    put_u32(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(os, static_cast<uint32_t>(shape.size()));
    for (int64_t e : shape) put_u64(os, static_cast<uint64_t>(e));
    // raw little-endian doubles; this build targets little-endian hosts
    os.write(reinterpret_cast<const char*>(data.data()),
             static_cast<std::streamsize>(data.size() * sizeof(double)));
}

struct Record {
    std::string name;
    Shape shape;
    std::vector<double> data;
};

Record get_record(std::istream& is) {
    Record r;
    uint32_t name_len = get_u32(is);
    r.name.resize(name_len);
    is.read(r.name.data(), name_len);
    uint32_t rank = get_u32(is);
    for (uint32_t i = 0; i < rank; ++i) r.shape.push_back(static_cast<int64_t>(get_u64(is)));
    int64_t n = numel(r.shape);
    r.data.resize(static_cast<size_t>(n));
    is.read(reinterpret_cast<char*>(r.data.data()),
            static_cast<std::streamsize>(r.data.size() * sizeof(double)));
    if (!is) throw CheckpointError("checkpoint: truncated record '" + r.name + "'");
    return r;
}

}  // namespace

void save_checkpoint(BranchedUNetParams& params, const AdamState& adam, const TrainConfig& cfg,
                     int epoch, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("save_checkpoint: cannot open " + path);
    os.write(kMagic, 4);
    put_u32(os, kVersion);

    ordered_json j;
    j["epoch"] = epoch;
    j["train"] = {{"T", cfg.T},
                  {"epochs", cfg.epochs},
                  {"lr", cfg.lr},
                  {"batch_size", cfg.batch_size},
                  {"img_size", cfg.img_size},
                  {"seed", cfg.seed},
                  {"time_embed_dim", cfg.time_embed_dim},
                  {"n_stages", cfg.n_stages},
                  {"base_width", cfg.base_width}};
    j["adam"] = {{"lr", adam.lr},
                 {"beta1", adam.beta1},
                 {"beta2", adam.beta2},
                 {"eps", adam.eps},
                 {"step", adam.step}};
    std::string cfg_json = j.dump();
    put_u64(os, cfg_json.size());
    os.write(cfg_json.data(), static_cast<std::streamsize>(cfg_json.size()));

    std::vector<std::pair<std::string, Tensor*>> records;
    params.for_each_param([&](const std::string& n, Tensor& t) { records.emplace_back(n, &t); });
    params.for_each_state([&](const std::string& n, Tensor& t) { records.emplace_back(n, &t); });

    uint64_t n_records = records.size();
    for (const auto& [name, t] : records) {
        if (adam.m.count(name)) n_records += 2;
        (void)t;
    }
    put_u64(os, n_records);
    for (const auto& [name, t] : records) put_record(os, name, t->shape, t->data);
    for (const auto& [name, t] : records) {
        auto mit = adam.m.find(name);
        if (mit == adam.m.end()) continue;
        put_record(os, "adam.m:" + name, t->shape, mit->second);
        put_record(os, "adam.v:" + name, t->shape, adam.v.at(name));
    }
    if (!os) throw IoError("save_checkpoint: short write to " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CheckpointError("load_checkpoint: cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0)
        throw CheckpointError("load_checkpoint: bad magic in " + path);
    uint32_t version = get_u32(is);
    if (version != kVersion)
        throw CheckpointError("load_checkpoint: unsupported format version " +
                              std::to_string(version));

    uint64_t json_len = get_u64(is);
    std::string cfg_json(json_len, '\0');
    is.read(cfg_json.data(), static_cast<std::streamsize>(json_len));
    if (!is) throw CheckpointError("load_checkpoint: truncated config block");
    ordered_json j = ordered_json::parse(cfg_json, nullptr, false);
    if (j.is_discarded()) throw CheckpointError("load_checkpoint: invalid config block");

    Checkpoint ck;
    try {
        ck.epoch = j.at("epoch").get<int>();
        const auto& tj = j.at("train");
        ck.cfg.T = tj.at("T").get<int>();
        ck.cfg.epochs = tj.at("epochs").get<int>();
        ck.cfg.lr = tj.at("lr").get<double>();
        ck.cfg.batch_size = tj.at("batch_size").get<int>();
        ck.cfg.img_size = tj.at("img_size").get<int>();
        ck.cfg.seed = tj.at("seed").get<uint64_t>();
        ck.cfg.time_embed_dim = tj.at("time_embed_dim").get<int>();
        ck.cfg.n_stages = tj.at("n_stages").get<int>();
        ck.cfg.base_width = tj.at("base_width").get<int>();
        const auto& aj = j.at("adam");
        ck.adam.lr = aj.at("lr").get<double>();
        ck.adam.beta1 = aj.at("beta1").get<double>();
        ck.adam.beta2 = aj.at("beta2").get<double>();
        ck.adam.eps = aj.at("eps").get<double>();
        ck.adam.step = aj.at("step").get<int64_t>();
    } catch (const ordered_json::exception& e) {
        throw CheckpointError(std::string("load_checkpoint: config block missing fields: ") +
                              e.what());
    }

    ck.params = BranchedUNetParams::init(ck.cfg.unet(), 0);

    std::map<std::string, Tensor*> slots;
    ck.params.for_each_param([&](const std::string& n, Tensor& t) { slots[n] = &t; });
    ck.params.for_each_state([&](const std::string& n, Tensor& t) { slots[n] = &t; });

    uint64_t n_records = get_u64(is);
    std::set<std::string> seen;
    for (uint64_t i = 0; i < n_records; ++i) {
        Record r = get_record(is);
        if (r.name.rfind("adam.m:", 0) == 0 || r.name.rfind("adam.v:", 0) == 0) {
            bool is_m = r.name[5] == 'm';
            std::string pname = r.name.substr(7);
            if (!slots.count(pname))
                throw CheckpointError("load_checkpoint: moment for unknown parameter '" + pname +
                                      "'");
            (is_m ? ck.adam.m : ck.adam.v)[pname] = std::move(r.data);
            continue;
        }
        auto it = slots.find(r.name);
        if (it == slots.end())
            throw CheckpointError("load_checkpoint: unknown record '" + r.name + "'");
        if (it->second->shape != r.shape)
            throw CheckpointError("load_checkpoint: shape mismatch for '" + r.name + "': file " +
                                  shape_str(r.shape) + " vs model " + shape_str(it->second->shape));
        it->second->data = std::move(r.data);
        seen.insert(r.name);
    }
    for (const auto& [name, t] : slots) {
        (void)t;
        if (!seen.count(name))
            throw CheckpointError("load_checkpoint: missing record '" + name + "'");
    }
    return ck;
}

}  // namespace demorph::net
