#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "demorph/tensor.hpp"

namespace demorph::morphops {

// Procedural grayscale face. All geometry is in normalized image units
// (fractions of the image extent), so a spec renders the same face at any
// size. Rendering is a pure function of the spec.
struct IdentitySpec {
    uint64_t seed = 0;
    double face_rx = 0.31;     // [0.26, 0.36] face-oval semi-axes
    double face_ry = 0.37;     // [0.32, 0.42]
    double eye_dx = 0.135;     // [0.10, 0.17] eye offset from center
    double eye_y = 0.42;       // [0.38, 0.46] eye row
    double eye_r = 0.042;      // [0.030, 0.055]
    double pupil_frac = 0.47;  // [0.35, 0.60] pupil radius / eye radius
    double brow_angle = 0.0;   // [-0.30, 0.30] rad, mirrored across center
    double brow_len = 0.075;   // [0.05, 0.10] half-length
    double mouth_y = 0.73;     // [0.70, 0.76] mouth row
    double mouth_w = 0.105;    // [0.07, 0.14] half-width
    double mouth_curve = 0.0;  // [-0.55, 0.55]
    double nose_len = 0.14;    // [0.10, 0.18]
    double skin = 0.70;        // [0.45, 0.92] face tone
    double hair_tone = 0.22;   // [0.02, 0.55]
    double hair_h = 0.15;      // [0.10, 0.22] hair band height
    double bg = 0.10;          // [0.03, 0.22] backdrop tone
};

// Uniform draw of every field from its documented range.
IdentitySpec sample_identity(uint64_t seed);

// Deterministic anti-aliased render, values in [0,1]. Out-of-range params
// are clamped back into range with a stderr warning. size must be a
// multiple of 8 (the comparator's downsample grid).
Tensor render_identity(const IdentitySpec& spec, int size);

// Pixel box guaranteed to contain every pixel the mouth parameters can
// influence (used to verify feature locality).
struct PixelBox {
    int x0, x1, y0, y1;  // half-open
};
PixelBox mouth_region(int size);

// Smooth low-frequency displacement warp of a single image (bilinear,
// clamp-to-edge). strength is the max displacement as a fraction of width.
Tensor warp_image(const Tensor& img, double strength, uint64_t seed);

// X = blend*warp(i1) + (1-blend)*warp(i2), both pulled toward a midpoint
// geometry by opposite halves of one seeded displacement field.
Tensor morph(const Tensor& i1, const Tensor& i2, double blend, double warp_strength,
             uint64_t seed);

struct MorphSample {
    Tensor x, i1, i2;  // [1,S,S]; bona fide samples have x == i1 == i2 bitwise
    bool is_morph = false;
    std::pair<int, int> ids{-1, -1};
};

struct DatasetManifest {
    std::vector<MorphSample> train;  // morphs only
    std::vector<MorphSample> test;   // held-out morphs + one bona fide per held-out identity
    uint64_t seed = 0;
    int n_ids = 0;
    int img_size = 0;
    double blend = 0.5;
    double warp_strength = 0.15;
};

// Renders n_ids identities, morphs n_morphs distinct unordered pairs at
// blend 0.5, splits morphs 80/20 by pair, and adds one bona fide sample per
// identity appearing in the test pairs.
DatasetManifest make_dataset(int n_ids, int n_morphs, int size, uint64_t seed, double blend = 0.5,
                             double warp_strength = 0.15);

// Split hygiene + pixel-range checks; throws on violation. make_dataset
// runs this before returning.
void validate_manifest(const DatasetManifest& m);

// 96-dim unit-norm embedding: 8x8 box downsample (mean-subtracted) plus
// four per-quadrant oriented-gradient histograms. All-zero images embed to
// the zero vector.
std::vector<double> comparator_embed(const Tensor& img);

struct ComparatorScore {
    double score = 0.0;  // cosine similarity in [-1,1]
    double tau = 0.0;
};
ComparatorScore compare(const Tensor& a, const Tensor& b, double tau);
bool is_match(const ComparatorScore& s);

struct ComparatorCalibration {
    double tau = 0.0;             // impostor-quantile threshold at the target FMR
    double genuine_median = 0.0;  // median same-identity score under capture-style warps
    double realized_fmr = 0.0;
};
// tau is the (1-target_fmr) quantile of scores over n_pairs random impostor
// identity pairs; the genuine population is the same identity under two
// independent small warps.
ComparatorCalibration calibrate_comparator(int n_pairs, int size, uint64_t seed,
                                           double target_fmr = 0.05);

// 8-bit binary PGM (P5).
void write_pgm(const Tensor& img, const std::string& path);
Tensor read_pgm(const std::string& path);

std::string manifest_json(const DatasetManifest& m);  // paths resolved relative to a save dir
void save_dataset(const DatasetManifest& m, const std::string& dir);
DatasetManifest load_dataset(const std::string& dir);

uint64_t fnv1a64(const std::string& bytes);

}  // namespace demorph::morphops
