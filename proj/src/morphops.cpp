#include "demorph/morphops.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>

#include <json.hpp>

#include "demorph/ops.hpp"
#include "demorph/rng.hpp"

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace demorph::morphops {

namespace {

struct Range {
    double lo, hi;
};

constexpr Range kFaceRx{0.24, 0.38};
constexpr Range kFaceRy{0.30, 0.44};
constexpr Range kEyeDx{0.09, 0.18};
constexpr Range kEyeY{0.38, 0.46};
constexpr Range kEyeR{0.028, 0.058};
constexpr Range kPupilFrac{0.35, 0.60};
constexpr Range kBrowAngle{-0.30, 0.30};
constexpr Range kBrowLen{0.05, 0.10};
constexpr Range kMouthY{0.70, 0.76};
constexpr Range kMouthW{0.07, 0.14};
constexpr Range kMouthCurve{-0.55, 0.55};
constexpr Range kNoseLen{0.10, 0.18};
constexpr Range kSkin{0.45, 0.92};
constexpr Range kHairTone{0.02, 0.55};
constexpr Range kHairH{0.10, 0.22};
constexpr Range kBackgroundTone{0.03, 0.22};
constexpr double kFaceCy = 0.52;
constexpr double kMouthCurveScale = 0.06;
constexpr double kMouthHalfThick = 0.008;
constexpr double kHogWeight = 0.5;
constexpr double kGenuineWarp = 0.075;  // capture-style jitter for genuine calibration pairs
constexpr double kPi = 3.14159265358979323846;

double clamp_param(double v, Range r, const char* name, bool& warned) {
    if (v < r.lo || v > r.hi) {
        if (!warned) {
            std::cerr << "render_identity: parameter " << name << "=" << v
                      << " outside [" << r.lo << "," << r.hi << "], clamping\n";
            warned = true;
        }
        return std::clamp(v, r.lo, r.hi);
    }
    return v;
}

IdentitySpec clamp_spec(const IdentitySpec& in) {
    bool warned = false;
    IdentitySpec s = in;
    s.face_rx = clamp_param(s.face_rx, kFaceRx, "face_rx", warned);
    s.face_ry = clamp_param(s.face_ry, kFaceRy, "face_ry", warned);
    s.eye_dx = clamp_param(s.eye_dx, kEyeDx, "eye_dx", warned);
    s.eye_y = clamp_param(s.eye_y, kEyeY, "eye_y", warned);
    s.eye_r = clamp_param(s.eye_r, kEyeR, "eye_r", warned);
    s.pupil_frac = clamp_param(s.pupil_frac, kPupilFrac, "pupil_frac", warned);
    s.brow_angle = clamp_param(s.brow_angle, kBrowAngle, "brow_angle", warned);
    s.brow_len = clamp_param(s.brow_len, kBrowLen, "brow_len", warned);
    s.mouth_y = clamp_param(s.mouth_y, kMouthY, "mouth_y", warned);
    s.mouth_w = clamp_param(s.mouth_w, kMouthW, "mouth_w", warned);
    s.mouth_curve = clamp_param(s.mouth_curve, kMouthCurve, "mouth_curve", warned);
    s.nose_len = clamp_param(s.nose_len, kNoseLen, "nose_len", warned);
    s.skin = clamp_param(s.skin, kSkin, "skin", warned);
    s.hair_tone = clamp_param(s.hair_tone, kHairTone, "hair_tone", warned);
    s.hair_h = clamp_param(s.hair_h, kHairH, "hair_h", warned);
    s.bg = clamp_param(s.bg, kBackgroundTone, "bg", warned);
    return s;
}

double sd_ellipse(double px, double py, double cx, double cy, double rx, double ry) {
    double qx = (px - cx) / rx, qy = (py - cy) / ry;
    return (std::sqrt(qx * qx + qy * qy) - 1.0) * std::min(rx, ry);
}

double sd_segment(double px, double py, double ax, double ay, double bx, double by) {
    double vx = bx - ax, vy = by - ay;
    double wx = px - ax, wy = py - ay;
    double denom = vx * vx + vy * vy;
    double t = denom > 0.0 ? std::clamp((wx * vx + wy * vy) / denom, 0.0, 1.0) : 0.0;
    double dx = wx - t * vx, dy = wy - t * vy;
    return std::sqrt(dx * dx + dy * dy);
}

inline double coverage(double d, double aa) { return std::clamp(0.5 - d / aa, 0.0, 1.0); }

inline void paint(double& val, double tone, double cov) { val += (tone - val) * cov; }

// Three sinusoidal modes per displacement component; max |d| <= strength_px.
struct WarpField {
    double amp[2][3], kx[2][3], ky[2][3], ph[2][3];

    WarpField(double strength_px, uint64_t seed) {
        Rng rng(seed);
        for (int comp = 0; comp < 2; ++comp) {
            double w[3], sum = 0.0;
            for (int m = 0; m < 3; ++m) {
                w[m] = rng.uniform(0.5, 1.0);
                sum += w[m];
                kx[comp][m] = static_cast<double>(rng.uniform_int(1, 2));
                ky[comp][m] = static_cast<double>(rng.uniform_int(1, 2));
                ph[comp][m] = rng.uniform(0.0, 2.0 * kPi);
            }
            for (int m = 0; m < 3; ++m) amp[comp][m] = strength_px * w[m] / sum;
        }
    }

    // u,v are normalized coordinates; result in pixel units
    double dx(double u, double v) const { return eval(0, u, v); }
    double dy(double u, double v) const { return eval(1, u, v); }

private:
    double eval(int comp, double u, double v) const {
        double s = 0.0;
        for (int m = 0; m < 3; ++m)
            s += amp[comp][m] *
                 std::sin(2.0 * kPi * (kx[comp][m] * u + ky[comp][m] * v) + ph[comp][m]);
        return s;
    }
};

double sample_bilinear(const Tensor& img, double x, double y) {
    int64_t H = img.shape[1], W = img.shape[2];
    x = std::clamp(x, 0.0, static_cast<double>(W - 1));
    y = std::clamp(y, 0.0, static_cast<double>(H - 1));
    int64_t x0 = static_cast<int64_t>(std::floor(x));
    int64_t y0 = static_cast<int64_t>(std::floor(y));
    int64_t x1 = std::min(x0 + 1, W - 1);
    int64_t y1 = std::min(y0 + 1, H - 1);
    double fx = x - static_cast<double>(x0), fy = y - static_cast<double>(y0);
    auto at = [&](int64_t yy, int64_t xx) { return img.data[static_cast<size_t>(yy * W + xx)]; };
    double top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
    double bot = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
    return top * (1.0 - fy) + bot * fy;
}

void require_image(const Tensor& img, const char* op) {
    if (img.rank() != 3 || img.shape[0] != 1)
        throw ShapeError(std::string(op) + ": expected [1,H,W] image, got " + shape_str(img.shape));
}

std::string id_path(int id) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "images/id_%04d.pgm", id);
    return buf;
}

std::string morph_path(std::pair<int, int> ids) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "images/morph_%04d_%04d.pgm", ids.first, ids.second);
    return buf;
}

ordered_json sample_entry(const MorphSample& s) {
    ordered_json e;
    e["x"] = s.is_morph ? morph_path(s.ids) : id_path(s.ids.first);
    e["i1"] = id_path(s.ids.first);
    e["i2"] = id_path(s.ids.second);
    e["is_morph"] = s.is_morph;
    e["id1"] = s.ids.first;
    e["id2"] = s.ids.second;
    return e;
}

}  // namespace

IdentitySpec sample_identity(uint64_t seed) {
    Rng rng(seed);
    IdentitySpec s;
    s.seed = seed;
    s.face_rx = rng.uniform(kFaceRx.lo, kFaceRx.hi);
    s.face_ry = rng.uniform(kFaceRy.lo, kFaceRy.hi);
    s.eye_dx = rng.uniform(kEyeDx.lo, kEyeDx.hi);
    s.eye_y = rng.uniform(kEyeY.lo, kEyeY.hi);
    s.eye_r = rng.uniform(kEyeR.lo, kEyeR.hi);
    s.pupil_frac = rng.uniform(kPupilFrac.lo, kPupilFrac.hi);
    s.brow_angle = rng.uniform(kBrowAngle.lo, kBrowAngle.hi);
    s.brow_len = rng.uniform(kBrowLen.lo, kBrowLen.hi);
    s.mouth_y = rng.uniform(kMouthY.lo, kMouthY.hi);
    s.mouth_w = rng.uniform(kMouthW.lo, kMouthW.hi);
    s.mouth_curve = rng.uniform(kMouthCurve.lo, kMouthCurve.hi);
    s.nose_len = rng.uniform(kNoseLen.lo, kNoseLen.hi);
    s.skin = rng.uniform(kSkin.lo, kSkin.hi);
    s.hair_tone = rng.uniform(kHairTone.lo, kHairTone.hi);
    s.hair_h = rng.uniform(kHairH.lo, kHairH.hi);
    s.bg = rng.uniform(kBackgroundTone.lo, kBackgroundTone.hi);
    return s;
}

Tensor render_identity(const IdentitySpec& spec, int size) {
    if (size != 16 && size != 32 && size != 64)
        throw ConfigError("render_identity: size must be 16, 32 or 64, got " + std::to_string(size));
    IdentitySpec s = clamp_spec(spec);
    double aa = 1.0 / static_cast<double>(size);

    // Mouth polyline, sampled once.
    constexpr int kMouthPts = 17;
    double mx[kMouthPts], my[kMouthPts];
    for (int k = 0; k < kMouthPts; ++k) {
        double t = -1.0 + 2.0 * static_cast<double>(k) / (kMouthPts - 1);
        mx[k] = 0.5 + t * s.mouth_w;
        my[k] = s.mouth_y + s.mouth_curve * kMouthCurveScale * (t * t - 0.5);
    }

    double face_top = kFaceCy - s.face_ry;
    double hairline = face_top + s.hair_h;
    double brow_y = s.eye_y - 0.065;
    double nose_top = s.eye_y + 0.06;

    Tensor img = Tensor::full({1, size, size}, s.bg);
    for (int y = 0; y < size; ++y) {
        double v = (static_cast<double>(y) + 0.5) * aa;
        for (int x = 0; x < size; ++x) {
            double u = (static_cast<double>(x) + 0.5) * aa;
            double& px = img.data[static_cast<size_t>(y * size + x)];

            // head (hair) oval, then the face oval clipped below the hairline
            paint(px, s.hair_tone,
                  coverage(sd_ellipse(u, v, 0.5, 0.50, s.face_rx * 1.05, s.face_ry * 1.05), aa));
            double cface = coverage(sd_ellipse(u, v, 0.5, kFaceCy, s.face_rx, s.face_ry), aa) *
                           std::clamp(0.5 + (v - hairline) / aa, 0.0, 1.0);
            paint(px, s.skin, cface);

            for (int side = -1; side <= 1; side += 2) {
                double ex = 0.5 + side * s.eye_dx;
                paint(px, 0.93,
                      coverage(sd_ellipse(u, v, ex, s.eye_y, s.eye_r * 1.25, s.eye_r * 0.85), aa));
                paint(px, 0.08,
                      coverage(sd_ellipse(u, v, ex, s.eye_y, s.eye_r * s.pupil_frac,
                                          s.eye_r * s.pupil_frac),
                               aa));
                double ca = std::cos(side * s.brow_angle), sa = std::sin(side * s.brow_angle);
                paint(px, 0.15,
                      coverage(sd_segment(u, v, ex - ca * s.brow_len, brow_y - sa * s.brow_len,
                                          ex + ca * s.brow_len, brow_y + sa * s.brow_len) -
                                   0.0065,
                               aa));
            }

            paint(px, s.skin - 0.18,
                  coverage(sd_segment(u, v, 0.5, nose_top, 0.5, nose_top + s.nose_len) - 0.005, aa));

            double dmouth = 1e9;
            for (int k = 0; k + 1 < kMouthPts; ++k)
                dmouth = std::min(dmouth, sd_segment(u, v, mx[k], my[k], mx[k + 1], my[k + 1]));
            paint(px, 0.20, coverage(dmouth - kMouthHalfThick, aa));

            px = std::clamp(px, 0.0, 1.0);
        }
    }
    return img;
}

PixelBox mouth_region(int size) {
    // Widest mouth + thickness + the 1px anti-aliasing skirt at the
    // smallest supported size, with margin.
    double u0 = 0.5 - (kMouthW.hi + kMouthHalfThick + 0.07);
    double u1 = 0.5 + (kMouthW.hi + kMouthHalfThick + 0.07);
    double v0 = kMouthY.lo - (0.5 * kMouthCurveScale * 0.55 + kMouthHalfThick + 0.07);
    double v1 = kMouthY.hi + (0.5 * kMouthCurveScale * 0.55 + kMouthHalfThick + 0.07);
    return PixelBox{static_cast<int>(std::floor(u0 * size)), static_cast<int>(std::ceil(u1 * size)),
                    static_cast<int>(std::floor(v0 * size)), static_cast<int>(std::ceil(v1 * size))};
}

Tensor warp_image(const Tensor& img, double strength, uint64_t seed) {
    require_image(img, "warp_image");
    int64_t H = img.shape[1], W = img.shape[2];
    WarpField f(strength * static_cast<double>(W), seed);
    Tensor out = Tensor::zeros(img.shape);
    for (int64_t y = 0; y < H; ++y) {
        double v = (static_cast<double>(y) + 0.5) / static_cast<double>(H);
        for (int64_t x = 0; x < W; ++x) {
            double u = (static_cast<double>(x) + 0.5) / static_cast<double>(W);
            out.data[static_cast<size_t>(y * W + x)] = sample_bilinear(
                img, static_cast<double>(x) + f.dx(u, v), static_cast<double>(y) + f.dy(u, v));
        }
    }
    return clamp01(out);
}

Tensor morph(const Tensor& i1, const Tensor& i2, double blend, double warp_strength,
             uint64_t seed) {
    require_image(i1, "morph");
    require_same_shape(i1, i2, "morph");
    if (blend < 0.0 || blend > 1.0)
        throw ConfigError("morph: blend must be in [0,1], got " + std::to_string(blend));
    int64_t H = i1.shape[1], W = i1.shape[2];
    WarpField f(warp_strength * static_cast<double>(W), seed);
    Tensor out = Tensor::zeros(i1.shape);
    for (int64_t y = 0; y < H; ++y) {
        double v = (static_cast<double>(y) + 0.5) / static_cast<double>(H);
        for (int64_t x = 0; x < W; ++x) {
            double u = (static_cast<double>(x) + 0.5) / static_cast<double>(W);
            double dx = 0.5 * f.dx(u, v), dy = 0.5 * f.dy(u, v);
            // opposite half-displacements pull both faces toward a shared geometry
            double a = sample_bilinear(i1, static_cast<double>(x) + dx, static_cast<double>(y) + dy);
            double b = sample_bilinear(i2, static_cast<double>(x) - dx, static_cast<double>(y) - dy);
            out.data[static_cast<size_t>(y * W + x)] = blend * a + (1.0 - blend) * b;
        }
    }
    return clamp01(out);
}

DatasetManifest make_dataset(int n_ids, int n_morphs, int size, uint64_t seed, double blend,
                             double warp_strength) {
    if (n_ids < 4) throw ConfigError("make_dataset: need n_ids >= 4, got " + std::to_string(n_ids));
    int64_t max_pairs = static_cast<int64_t>(n_ids) * (n_ids - 1) / 2;
    if (n_morphs < 1 || n_morphs > max_pairs)
        throw ConfigError("make_dataset: n_morphs " + std::to_string(n_morphs) +
                          " infeasible for " + std::to_string(n_ids) + " identities (max " +
                          std::to_string(max_pairs) + ")");
    int train_count = n_morphs * 4 / 5;
    if (train_count < 1 || train_count == n_morphs)
        throw ConfigError("make_dataset: n_morphs " + std::to_string(n_morphs) +
                          " leaves an empty split at 80/20");

    std::vector<Tensor> imgs(static_cast<size_t>(n_ids));
#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < n_ids; ++i)
        imgs[static_cast<size_t>(i)] =
            render_identity(sample_identity(mix_seed(seed, 0x1D, static_cast<uint64_t>(i))), size);

    std::vector<std::pair<int, int>> pairs;
    pairs.reserve(static_cast<size_t>(max_pairs));
    for (int i = 0; i < n_ids; ++i)
        for (int j = i + 1; j < n_ids; ++j) pairs.emplace_back(i, j);
    Rng shuffler(mix_seed(seed, 0xA1));
    shuffler.shuffle(pairs);
    pairs.resize(static_cast<size_t>(n_morphs));

    std::vector<MorphSample> samples(static_cast<size_t>(n_morphs));
#pragma omp parallel for schedule(dynamic)
    for (int k = 0; k < n_morphs; ++k) {
        auto [a, b] = pairs[static_cast<size_t>(k)];
        MorphSample s;
        s.x = morph(imgs[static_cast<size_t>(a)], imgs[static_cast<size_t>(b)], blend,
                    warp_strength, mix_seed(seed, 0x30, static_cast<uint64_t>(k)));
        s.i1 = imgs[static_cast<size_t>(a)];
        s.i2 = imgs[static_cast<size_t>(b)];
        s.is_morph = true;
        s.ids = {a, b};
        samples[static_cast<size_t>(k)] = std::move(s);
    }

    DatasetManifest m;
    m.seed = seed;
    m.n_ids = n_ids;
    m.img_size = size;
    m.blend = blend;
    m.warp_strength = warp_strength;
    m.train.assign(samples.begin(), samples.begin() + train_count);
    m.test.assign(samples.begin() + train_count, samples.end());

    std::set<int> held_out;
    for (const auto& s : m.test) {
        held_out.insert(s.ids.first);
        held_out.insert(s.ids.second);
    }
    for (int id : held_out) {
        MorphSample s;
        s.x = imgs[static_cast<size_t>(id)];
        s.i1 = s.x;
        s.i2 = s.x;
        s.is_morph = false;
        s.ids = {id, id};
        m.test.push_back(std::move(s));
    }

    validate_manifest(m);
    return m;
}

void validate_manifest(const DatasetManifest& m) {
    auto norm = [](std::pair<int, int> p) {
        return p.first <= p.second ? p : std::pair<int, int>{p.second, p.first};
    };
    std::set<std::pair<int, int>> train_pairs;
    for (const auto& s : m.train) {
        if (!s.is_morph) throw ConfigError("manifest: train split must contain only morphs");
        train_pairs.insert(norm(s.ids));
    }
    for (const auto& s : m.test) {
        if (s.is_morph && train_pairs.count(norm(s.ids)))
            throw ConfigError("manifest: identity pair (" + std::to_string(s.ids.first) + "," +
                              std::to_string(s.ids.second) + ") appears in both splits");
    }
    auto check_sample = [](const MorphSample& s) {
        for (const Tensor* t : {&s.x, &s.i1, &s.i2})
            for (double v : t->data)
                if (v < 0.0 || v > 1.0)
                    throw NumericError("manifest: pixel value outside [0,1]");
        if (!s.is_morph) {
            if (s.ids.first != s.ids.second || s.x.data != s.i1.data || s.x.data != s.i2.data)
                throw ConfigError("manifest: bona fide sample must satisfy x == i1 == i2");
        }
    };
    for (const auto& s : m.train) check_sample(s);
    for (const auto& s : m.test) check_sample(s);
}

std::vector<double> comparator_embed(const Tensor& img) {
    require_image(img, "comparator_embed");
    int64_t H = img.shape[1], W = img.shape[2];
    if (H % 8 != 0 || W % 8 != 0)
        throw ShapeError("comparator_embed: image extents must be multiples of 8, got " +
                         shape_str(img.shape));
    std::vector<double> feat(96, 0.0);

    // 8x8 box downsample, mean-subtracted
    int64_t ch = H / 8, cw = W / 8;
    for (int64_t by = 0; by < 8; ++by)
        for (int64_t bx = 0; bx < 8; ++bx) {
            double s = 0.0;
            for (int64_t y = by * ch; y < (by + 1) * ch; ++y)
                for (int64_t x = bx * cw; x < (bx + 1) * cw; ++x)
                    s += img.data[static_cast<size_t>(y * W + x)];
            feat[static_cast<size_t>(by * 8 + bx)] = s / static_cast<double>(ch * cw);
        }
    double mean = 0.0;
    for (int i = 0; i < 64; ++i) mean += feat[static_cast<size_t>(i)];
    mean /= 64.0;
    for (int i = 0; i < 64; ++i) feat[static_cast<size_t>(i)] -= mean;

    // four quadrant oriented-gradient histograms, 8 bins over [0,pi)
    double hist[4][8] = {};
    for (int64_t y = 1; y + 1 < H; ++y)
        for (int64_t x = 1; x + 1 < W; ++x) {
            auto at = [&](int64_t yy, int64_t xx) {
                return img.data[static_cast<size_t>(yy * W + xx)];
            };
            double gx = 0.5 * (at(y, x + 1) - at(y, x - 1));
            double gy = 0.5 * (at(y + 1, x) - at(y - 1, x));
            double mag = std::sqrt(gx * gx + gy * gy);
            if (mag < 1e-12) continue;
            double ang = std::atan2(gy, gx);
            if (ang < 0.0) ang += kPi;
            if (ang >= kPi) ang -= kPi;
            int bin = std::min(7, static_cast<int>(ang / kPi * 8.0));
            int block = (y >= H / 2 ? 2 : 0) + (x >= W / 2 ? 1 : 0);
            hist[block][bin] += mag;
        }
    for (int b = 0; b < 4; ++b) {
        double s = 0.0;
        for (int k = 0; k < 8; ++k) s += hist[b][k];
        if (s > 1e-12)
            for (int k = 0; k < 8; ++k)
                feat[static_cast<size_t>(64 + b * 8 + k)] = kHogWeight * hist[b][k] / s;
    }

    double norm = 0.0;
    for (double f : feat) norm += f * f;
    norm = std::sqrt(norm);
    if (norm < 1e-12) return std::vector<double>(96, 0.0);
    for (double& f : feat) f /= norm;
    return feat;
}

ComparatorScore compare(const Tensor& a, const Tensor& b, double tau) {
    auto ea = comparator_embed(a), eb = comparator_embed(b);
    double dot = 0.0;
    for (size_t i = 0; i < ea.size(); ++i) dot += ea[i] * eb[i];
    return ComparatorScore{dot, tau};
}

bool is_match(const ComparatorScore& s) { return s.score > s.tau; }

ComparatorCalibration calibrate_comparator(int n_pairs, int size, uint64_t seed,
                                           double target_fmr) {
    if (n_pairs < 20) throw ConfigError("calibrate_comparator: need at least 20 pairs");
    std::vector<double> impostor(static_cast<size_t>(n_pairs));
    std::vector<double> genuine(static_cast<size_t>(n_pairs));
#pragma omp parallel for schedule(dynamic)
    for (int k = 0; k < n_pairs; ++k) {
        auto ku = static_cast<uint64_t>(k);
        Tensor a = render_identity(sample_identity(mix_seed(seed, 0x1001, 2 * ku)), size);
        Tensor b = render_identity(sample_identity(mix_seed(seed, 0x1001, 2 * ku + 1)), size);
        impostor[static_cast<size_t>(k)] = compare(a, b, 0.0).score;

        Tensor g = render_identity(sample_identity(mix_seed(seed, 0x2002, ku)), size);
        Tensor g1 = warp_image(g, kGenuineWarp, mix_seed(seed, 0x3003, 2 * ku));
        Tensor g2 = warp_image(g, kGenuineWarp, mix_seed(seed, 0x3003, 2 * ku + 1));
        genuine[static_cast<size_t>(k)] = compare(g1, g2, 0.0).score;
    }
    std::sort(impostor.begin(), impostor.end());
    std::sort(genuine.begin(), genuine.end());
    auto rank = static_cast<size_t>(
        std::clamp(static_cast<int>(std::ceil((1.0 - target_fmr) * n_pairs)) - 1, 0, n_pairs - 1));
    double tau = impostor[rank];
    int fm = 0;
    for (double s : impostor)
        if (s > tau) ++fm;
    double med = n_pairs % 2 == 1
                     ? genuine[static_cast<size_t>(n_pairs / 2)]
                     : 0.5 * (genuine[static_cast<size_t>(n_pairs / 2 - 1)] +
                              genuine[static_cast<size_t>(n_pairs / 2)]);
    return ComparatorCalibration{tau, med, static_cast<double>(fm) / n_pairs};
}

void write_pgm(const Tensor& img, const std::string& path) {
    require_image(img, "write_pgm");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("write_pgm: cannot open " + path);
    int64_t H = img.shape[1], W = img.shape[2];
    os << "P5\n" << W << " " << H << "\n255\n";
    std::vector<unsigned char> bytes(static_cast<size_t>(H * W));
    for (size_t i = 0; i < bytes.size(); ++i) {
        double v = std::clamp(img.data[i], 0.0, 1.0);
        bytes[i] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw IoError("write_pgm: short write to " + path);
}

Tensor read_pgm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("read_pgm: cannot open " + path);
    std::string magic;
    is >> magic;
    if (magic != "P5") throw IoError("read_pgm: " + path + " is not binary PGM");
    auto next_int = [&]() {
        // skip whitespace and '#' comments
        int c = is.peek();
        while (c == '#' || std::isspace(c)) {
            if (c == '#') is.ignore(1 << 16, '\n');
            else is.get();
            c = is.peek();
        }
        int64_t v;
        if (!(is >> v)) throw IoError("read_pgm: bad header in " + path);
        return v;
    };
    int64_t W = next_int(), H = next_int(), maxval = next_int();
    if (W <= 0 || H <= 0 || maxval <= 0 || maxval > 255)
        throw IoError("read_pgm: unsupported header in " + path);
    is.get();  // the single whitespace after maxval
    std::vector<unsigned char> bytes(static_cast<size_t>(W * H));
    is.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (is.gcount() != static_cast<std::streamsize>(bytes.size()))
        throw IoError("read_pgm: truncated pixel data in " + path);
    Tensor img = Tensor::zeros({1, H, W});
    for (size_t i = 0; i < bytes.size(); ++i)
        img.data[i] = static_cast<double>(bytes[i]) / static_cast<double>(maxval);
    return img;
}

std::string manifest_json(const DatasetManifest& m) {
    ordered_json j;
    j["seed"] = m.seed;
    j["n_ids"] = m.n_ids;
    j["img_size"] = m.img_size;
    j["blend"] = m.blend;
    j["warp_strength"] = m.warp_strength;
    int test_morphs = 0;
    for (const auto& s : m.test) test_morphs += s.is_morph ? 1 : 0;
    j["counts"] = {{"train_morphs", m.train.size()},
                   {"test_morphs", test_morphs},
                   {"test_bonafide", m.test.size() - static_cast<size_t>(test_morphs)}};
    j["train"] = ordered_json::array();
    for (const auto& s : m.train) j["train"].push_back(sample_entry(s));
    j["test"] = ordered_json::array();
    for (const auto& s : m.test) j["test"].push_back(sample_entry(s));
    return j.dump(2) + "\n";
}

void save_dataset(const DatasetManifest& m, const std::string& dir) {
    fs::create_directories(fs::path(dir) / "images");
    auto write_once = [&](const std::string& rel, const Tensor& img) {
        fs::path p = fs::path(dir) / rel;
        if (!fs::exists(p)) write_pgm(img, p.string());
    };
    for (const auto* split : {&m.train, &m.test}) {
        for (const auto& s : *split) {
            write_once(id_path(s.ids.first), s.i1);
            write_once(id_path(s.ids.second), s.i2);
            if (s.is_morph) write_once(morph_path(s.ids), s.x);
        }
    }
    std::ofstream os(fs::path(dir) / "manifest.json");
    if (!os) throw IoError("save_dataset: cannot write manifest in " + dir);
    os << manifest_json(m);
}

DatasetManifest load_dataset(const std::string& dir) {
    std::ifstream is(fs::path(dir) / "manifest.json");
    if (!is) throw IoError("load_dataset: no manifest.json in " + dir);
    ordered_json j = ordered_json::parse(is, nullptr, true);
    DatasetManifest m;
    m.seed = j.at("seed").get<uint64_t>();
    m.n_ids = j.at("n_ids").get<int>();
    m.img_size = j.at("img_size").get<int>();
    m.blend = j.at("blend").get<double>();
    m.warp_strength = j.at("warp_strength").get<double>();
    auto load_split = [&](const char* key, std::vector<MorphSample>& out) {
        for (const auto& e : j.at(key)) {
            MorphSample s;
            s.x = read_pgm((fs::path(dir) / e.at("x").get<std::string>()).string());
            s.i1 = read_pgm((fs::path(dir) / e.at("i1").get<std::string>()).string());
            s.i2 = read_pgm((fs::path(dir) / e.at("i2").get<std::string>()).string());
            s.is_morph = e.at("is_morph").get<bool>();
            s.ids = {e.at("id1").get<int>(), e.at("id2").get<int>()};
            out.push_back(std::move(s));
        }
    };
    load_split("train", m.train);
    load_split("test", m.test);
    validate_manifest(m);
    return m;
}

uint64_t fnv1a64(const std::string& bytes) {
    uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

}  // namespace demorph::morphops
