#include <doctest.h>

#include <filesystem>
#include <set>

#include "demorph/morphops.hpp"
#include "demorph/ops.hpp"
#include "test_helpers.hpp"

using namespace demorph;
using namespace demorph::morphops;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const char* tag) {
    fs::path p = fs::temp_directory_path() / (std::string("demorph_test_") + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

}  // namespace

TEST_CASE("render is a pure function of the spec") {
    auto spec = sample_identity(1234);
    Tensor a = render_identity(spec, 32);
    Tensor b = render_identity(spec, 32);
    CHECK(a.data == b.data);
    for (double v : a.data) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    CHECK_THROWS_AS(render_identity(spec, 24), ConfigError);
}

TEST_CASE("distinct seeds draw distinct parameters") {
    auto a = sample_identity(1);
    auto b = sample_identity(2);
    CHECK(a.face_rx != b.face_rx);
    CHECK(a.mouth_w != b.mouth_w);
}

TEST_CASE("mouth curvature only touches the documented mouth box") {
    auto spec = sample_identity(55);
    auto spec2 = spec;
    spec2.mouth_curve = spec.mouth_curve > 0.0 ? -0.5 : 0.5;
    for (int size : {32, 64}) {
        Tensor a = render_identity(spec, size);
        Tensor b = render_identity(spec2, size);
        PixelBox box = mouth_region(size);
        bool any_diff = false;
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) {
                double d = std::abs(a.data[static_cast<size_t>(y * size + x)] -
                                    b.data[static_cast<size_t>(y * size + x)]);
                if (d > 1e-12) {
                    any_diff = true;
                    bool inside = x >= box.x0 && x < box.x1 && y >= box.y0 && y < box.y1;
                    CAPTURE(x);
                    CAPTURE(y);
                    CHECK(inside);
                }
            }
        CHECK(any_diff);
    }
}

TEST_CASE("out-of-range params are clamped, not fatal") {
    auto spec = sample_identity(9);
    spec.mouth_w = 5.0;
    Tensor img = render_identity(spec, 32);  // prints one warning
    for (double v : img.data) CHECK(std::isfinite(v));
}

TEST_CASE("500 random identities have no near-duplicates") {
    const int n = 500;
    std::vector<std::vector<double>> embs(n);
#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < n; ++i)
        embs[static_cast<size_t>(i)] =
            comparator_embed(render_identity(sample_identity(10000 + static_cast<uint64_t>(i)), 32));
    double worst = -1.0;
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            double s = testutil::dot(embs[static_cast<size_t>(i)], embs[static_cast<size_t>(j)]);
            worst = std::max(worst, s);
        }
    CHECK(worst < 0.999);
}

TEST_CASE("morph identities") {
    auto a = render_identity(sample_identity(3), 32);
    auto b = render_identity(sample_identity(4), 32);

    Tensor self = morph(a, a, 0.5, 0.0, 77);
    CHECK(max_abs_diff(self, a) < 1e-12);

    Tensor only1 = morph(a, b, 1.0, 0.0, 77);
    CHECK(only1.data == a.data);

    Tensor c0 = Tensor::zeros({1, 32, 32});
    Tensor c1 = Tensor::full({1, 32, 32}, 1.0);
    Tensor mid = morph(c0, c1, 0.5, 0.15, 3);
    for (double v : mid.data) CHECK(v == doctest::Approx(0.5).epsilon(1e-12));

    CHECK_THROWS_AS(morph(a, b, 1.5, 0.1, 0), ConfigError);
    Tensor small = Tensor::zeros({1, 16, 16});
    CHECK_THROWS_AS(morph(a, small, 0.5, 0.1, 0), ShapeError);
}

TEST_CASE("warp_image with zero strength is the identity") {
    auto a = render_identity(sample_identity(5), 32);
    Tensor w = warp_image(a, 0.0, 123);
    CHECK(w.data == a.data);
}

TEST_CASE("morph score symmetry at blend 0.5") {
    // B(M(a,b),a) and B(M(b,a),b) are identically distributed when the warp
    // seeds match; paired over 200 pairs the mean difference is ~0
    const int n = 200;
    std::vector<double> diffs(n);
#pragma omp parallel for schedule(dynamic)
    for (int k = 0; k < n; ++k) {
        auto ku = static_cast<uint64_t>(k);
        Tensor a = render_identity(sample_identity(mix_seed(1, 0xAA, 2 * ku)), 32);
        Tensor b = render_identity(sample_identity(mix_seed(1, 0xAA, 2 * ku + 1)), 32);
        uint64_t warp_seed = mix_seed(2, 0xBB, ku);
        double s1 = compare(morph(a, b, 0.5, 0.15, warp_seed), a, 0).score;
        double s2 = compare(morph(b, a, 0.5, 0.15, warp_seed), b, 0).score;
        diffs[static_cast<size_t>(k)] = s1 - s2;
    }
    double mean = 0.0, var = 0.0;
    for (double d : diffs) mean += d;
    mean /= n;
    for (double d : diffs) var += (d - mean) * (d - mean);
    var /= n - 1;
    double se = std::sqrt(var / n);
    CHECK(std::abs(mean) < 4.0 * se + 1e-6);
}

TEST_CASE("make_dataset split arithmetic and hygiene") {
    auto m = make_dataset(10, 20, 16, 42);
    CHECK(m.train.size() == 16);
    int test_morphs = 0;
    std::set<int> held;
    for (const auto& s : m.test)
        if (s.is_morph) {
            ++test_morphs;
            held.insert(s.ids.first);
            held.insert(s.ids.second);
        }
    CHECK(test_morphs == 4);
    CHECK(m.test.size() == 4 + held.size());  // one bona fide per held-out identity

    std::set<std::pair<int, int>> train_pairs;
    for (const auto& s : m.train) train_pairs.insert(s.ids);
    for (const auto& s : m.test)
        if (s.is_morph) CHECK(train_pairs.count(s.ids) == 0);

    for (const auto& s : m.test)
        if (!s.is_morph) {
            CHECK(s.x.data == s.i1.data);
            CHECK(s.x.data == s.i2.data);
        }

    CHECK_THROWS_AS(make_dataset(3, 2, 16, 0), ConfigError);
    CHECK_THROWS_AS(make_dataset(10, 46, 16, 0), ConfigError);  // max pairs = 45
    CHECK_THROWS_AS(make_dataset(10, 2, 16, 0), ConfigError);   // empty test split
}

TEST_CASE("same seed regenerates an identical manifest") {
    auto m1 = make_dataset(8, 10, 16, 7);
    auto m2 = make_dataset(8, 10, 16, 7);
    CHECK(fnv1a64(manifest_json(m1)) == fnv1a64(manifest_json(m2)));
    auto m3 = make_dataset(8, 10, 16, 8);
    CHECK(fnv1a64(manifest_json(m1)) != fnv1a64(manifest_json(m3)));
    // pixel-level determinism as well
    CHECK(m1.train[0].x.data == m2.train[0].x.data);
}

TEST_CASE("comparator embedding basics") {
    auto a = render_identity(sample_identity(21), 32);
    auto e = comparator_embed(a);
    CHECK(e.size() == 96);
    CHECK(testutil::dot(e, e) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(compare(a, a, 0.5).score == doctest::Approx(1.0).epsilon(1e-12));

    Tensor zero = Tensor::zeros({1, 32, 32});
    auto ez = comparator_embed(zero);
    for (double v : ez) CHECK(v == 0.0);
    CHECK(compare(zero, a, 0.5).score == 0.0);

    ComparatorScore s{0.6, 0.5};
    CHECK(is_match(s));
    s.score = 0.5;
    CHECK_FALSE(is_match(s));
}

TEST_CASE("comparator is robust to 1% uniform noise") {
    Rng rng(22);
    int ok = 0;
    for (int i = 0; i < 100; ++i) {
        Tensor a = render_identity(sample_identity(500 + static_cast<uint64_t>(i)), 32);
        Tensor noisy = a;
        for (auto& v : noisy.data) v = std::clamp(v + 0.01 * rng.uniform(-1.0, 1.0), 0.0, 1.0);
        if (compare(a, noisy, 0).score > 0.99) ++ok;
    }
    CHECK(ok == 100);
}

TEST_CASE("distinct identities score below a same-identity re-render") {
    int ok = 0;
    const int n = 500;
    std::vector<int> oks(n);
#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < n; ++i) {
        auto iu = static_cast<uint64_t>(i);
        Tensor a = render_identity(sample_identity(mix_seed(3, 1, iu)), 32);
        Tensor b = render_identity(sample_identity(mix_seed(3, 2, iu)), 32);
        double same = compare(a, render_identity(sample_identity(mix_seed(3, 1, iu)), 32), 0).score;
        double cross = compare(a, b, 0).score;
        oks[static_cast<size_t>(i)] = cross < same ? 1 : 0;
    }
    for (int v : oks) ok += v;
    CHECK(ok >= 475);  // >= 95%
}

TEST_CASE("calibration pins the impostor false-match rate at 5%") {
    auto cal = calibrate_comparator(1000, 32, 99);
    CHECK(cal.realized_fmr >= 0.04);
    CHECK(cal.realized_fmr <= 0.06);
    CHECK(cal.genuine_median > cal.tau);  // genuine pairs sit above the impostor quantile
}

TEST_CASE("morphs match both constituents at the calibrated threshold") {
    auto cal = calibrate_comparator(1000, 32, 99);
    const int n = 150;
    std::vector<int> ok(n);
#pragma omp parallel for schedule(dynamic)
    for (int k = 0; k < n; ++k) {
        auto ku = static_cast<uint64_t>(k);
        Tensor a = render_identity(sample_identity(mix_seed(7, 1, ku)), 32);
        Tensor b = render_identity(sample_identity(mix_seed(7, 2, ku)), 32);
        Tensor x = morph(a, b, 0.5, 0.15, mix_seed(7, 3, ku));
        bool hit = is_match(compare(x, a, cal.tau)) && is_match(compare(x, b, cal.tau));
        ok[static_cast<size_t>(k)] = hit ? 1 : 0;
    }
    int hits = 0;
    for (int v : ok) hits += v;
    CAPTURE(cal.tau);
    CHECK(hits >= static_cast<int>(0.9 * n));  // successful morph attack rate
}

TEST_CASE("pgm round trip") {
    auto dir = temp_dir("pgm");
    auto img = render_identity(sample_identity(31), 32);
    std::string path = (dir / "img.pgm").string();
    write_pgm(img, path);
    Tensor back = read_pgm(path);
    REQUIRE(back.shape == img.shape);
    CHECK(max_abs_diff(img, back) <= 0.5 / 255.0 + 1e-12);  // 8-bit quantization
    CHECK_THROWS_AS(read_pgm((dir / "missing.pgm").string()), IoError);
}

TEST_CASE("dataset save/load round trip") {
    auto dir = temp_dir("dataset");
    auto m = make_dataset(8, 10, 16, 13);
    save_dataset(m, dir.string());
    auto back = load_dataset(dir.string());
    CHECK(back.train.size() == m.train.size());
    CHECK(back.test.size() == m.test.size());
    CHECK(back.seed == m.seed);
    CHECK(back.img_size == m.img_size);
    for (size_t i = 0; i < m.train.size(); ++i) {
        CHECK(back.train[i].ids == m.train[i].ids);
        CHECK(back.train[i].is_morph == m.train[i].is_morph);
        CHECK(max_abs_diff(back.train[i].x, m.train[i].x) <= 0.5 / 255.0 + 1e-12);
    }
    // bona fide bitwise identity survives the round trip
    for (const auto& s : back.test)
        if (!s.is_morph) {
            CHECK(s.x.data == s.i1.data);
            CHECK(s.x.data == s.i2.data);
        }
}
