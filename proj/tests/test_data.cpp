#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>

#include "debm/data.hpp"

using namespace debm;

namespace {
std::string tmp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}
}  // namespace

TEST_CASE("gaussian_mixture: CLT mean bound at a single center") {
    Rng rng(1);
    const int n = 40000;
    const double std = 0.1;
    Dataset ds = gaussian_mixture(n, {{0.0, 0.0}}, std, rng);
    CHECK(ds.size() == n);
    double mx = 0, my = 0;
    for (int i = 0; i < n; ++i) {
        mx += ds.samples.data[size_t(i) * 2];
        my += ds.samples.data[size_t(i) * 2 + 1];
    }
    double bound = 4.0 * std / std::sqrt(double(n));
    CHECK(std::abs(mx / n) < bound);
    CHECK(std::abs(my / n) < bound);
}

TEST_CASE("gaussian_mixture: component frequencies within 3% for k=4") {
    Rng rng(2);
    const int n = 100000;
    auto centers = circle_centers(4, 10.0);  // far apart vs std
    Dataset ds = gaussian_mixture(n, centers, 0.1, rng);
    std::vector<int> counts(4, 0);
    for (int i = 0; i < n; ++i) {
        double x = ds.samples.data[size_t(i) * 2], y = ds.samples.data[size_t(i) * 2 + 1];
        int best = 0;
        double bd = 1e30;
        for (int k = 0; k < 4; ++k) {
            double d = (x - centers[k][0]) * (x - centers[k][0]) + (y - centers[k][1]) * (y - centers[k][1]);
            if (d < bd) {
                bd = d;
                best = k;
            }
        }
        counts[best]++;
    }
    for (int k = 0; k < 4; ++k) CHECK(std::abs(double(counts[k]) / n - 0.25) < 0.03);
}

TEST_CASE("gaussian_mixture: tiny std degenerates to the centers") {
    Rng rng(3);
    auto centers = circle_centers(3, 1.0);
    Dataset ds = gaussian_mixture(500, centers, 1e-12, rng);
    for (int i = 0; i < ds.size(); ++i) {
        double x = ds.samples.data[size_t(i) * 2], y = ds.samples.data[size_t(i) * 2 + 1];
        double best = 1e30;
        for (auto& c : centers)
            best = std::min(best, std::hypot(x - c[0], y - c[1]));
        CHECK(best < 1e-5);
    }
    CHECK_THROWS_AS(gaussian_mixture(0, centers, 0.1, rng), ConfigError);
    CHECK_THROWS_AS(gaussian_mixture(5, {}, 0.1, rng), ConfigError);
    CHECK_THROWS_AS(gaussian_mixture(5, centers, 0.0, rng), ConfigError);
}

TEST_CASE("rings: exact radius at zero noise, centered mean, bimodal radii") {
    Rng rng(4);
    Dataset one = rings(2000, {1.0}, 0.0, rng);
    double mx = 0, my = 0;
    for (int i = 0; i < one.size(); ++i) {
        double x = one.samples.data[size_t(i) * 2], y = one.samples.data[size_t(i) * 2 + 1];
        CHECK(std::abs(std::hypot(x, y) - 1.0) < 1e-6);
        mx += x;
        my += y;
    }
    // mean -> origin by symmetry; coordinates bounded by 1 so CLT bound applies
    double bound = 4.0 / std::sqrt(2000.0);
    CHECK(std::abs(mx / one.size()) < bound);
    CHECK(std::abs(my / one.size()) < bound);

    Dataset two = rings(40000, {0.5, 2.0}, 0.02, rng);
    // radius histogram peaks at the two radii
    std::map<int, int> hist;  // bucket = round(r * 10)
    for (int i = 0; i < two.size(); ++i) {
        double r = std::hypot(two.samples.data[size_t(i) * 2], two.samples.data[size_t(i) * 2 + 1]);
        hist[int(std::lround(r * 10))]++;
    }
    int peak1 = hist[5], peak2 = hist[20];
    for (auto& [bucket, c] : hist) {
        if (bucket == 5 || bucket == 20) continue;
        CHECK(c < peak1);
        CHECK(c < peak2);
    }
}

TEST_CASE("DET1 roundtrip is bit-exact, including scalars; file size formula") {
    Rng rng(5);
    for (const Shape& s : {Shape{3, 4, 5}, Shape{7}, Shape{}}) {
        Tensor t(s);
        for (auto& v : t.data) v = rng.gaussianf();
        std::string path = tmp_path("debm_det1_test.det1");
        save_tensor(path, t);
        Tensor back = load_tensor(path);
        CHECK(back.shape == t.shape);
        CHECK(back.data == t.data);
        auto size = std::filesystem::file_size(path);
        CHECK(size == 12 + 4 * t.shape.size() + 4 * size_t(t.numel()));
    }
}

TEST_CASE("DET1 rejects bad magic and truncation with position info") {
    std::string path = tmp_path("debm_det1_bad.det1");
    {
        std::ofstream os(path, std::ios::binary);
        os << "NOPE";
    }
    try {
        load_tensor(path);
        FAIL("expected IoError");
    } catch (const IoError& e) {
        CHECK(std::string(e.what()).find("magic") != std::string::npos);
    }

    // valid header for a {2,2} tensor but truncated payload
    Tensor t = Tensor::from({2, 2}, {1, 2, 3, 4});
    save_tensor(path, t);
    auto full = std::filesystem::file_size(path);
    std::filesystem::resize_file(path, full - 6);
    try {
        load_tensor(path);
        FAIL("expected IoError");
    } catch (const IoError& e) {
        CHECK(std::string(e.what()).find("truncated") != std::string::npos);
        CHECK(std::string(e.what()).find("offset") != std::string::npos);
    }
}

TEST_CASE("scale_to_range: endpoints, midpoint, inverse") {
    Tensor t = Tensor::from({3}, {0.0f, 127.5f, 255.0f});
    Tensor s = scale_to_range(t, 0.0, 255.0);
    CHECK(s.data[0] == doctest::Approx(-1.0));
    CHECK(s.data[1] == doctest::Approx(0.0));
    CHECK(s.data[2] == doctest::Approx(1.0));
    Tensor back = scale_to_range(s, -1.0, 1.0, 0.0, 255.0);
    for (int i = 0; i < 3; ++i) CHECK(back.data[i] == doctest::Approx(t.data[i]).epsilon(1e-6));
}

TEST_CASE("flip_augment: p=0 identity, p=1 involution, p=0.5 fraction") {
    Rng rng(6);
    Tensor batch({16, 1, 4, 6});
    for (auto& v : batch.data) v = rng.gaussianf();

    Tensor keep = flip_augment(batch, 0.0, rng);
    CHECK(keep.data == batch.data);

    Tensor flip = flip_augment(batch, 1.0, rng);
    CHECK(flip.data != batch.data);
    Tensor twice = flip_augment(flip, 1.0, rng);
    CHECK(twice.data == batch.data);

    Tensor vec({8, 3});
    CHECK_THROWS_AS(flip_augment(vec, 0.5, rng), ShapeError);

    // flip fraction over many single-row samples
    const int n = 10000;
    Tensor wide({n, 1, 1, 2});
    for (int i = 0; i < n; ++i) {
        wide.data[size_t(i) * 2] = 0.0f;
        wide.data[size_t(i) * 2 + 1] = 1.0f;
    }
    Tensor mixed = flip_augment(wide, 0.5, rng);
    int flipped = 0;
    for (int i = 0; i < n; ++i) flipped += mixed.data[size_t(i) * 2] == 1.0f;
    CHECK(std::abs(double(flipped) / n - 0.5) < 0.02);
}

TEST_CASE("PGM/PPM roundtrip at 8-bit resolution") {
    std::string pgm = tmp_path("debm_test.pgm");
    Tensor g({1, 3, 5});
    for (int i = 0; i < 15; ++i) g.data[size_t(i)] = float(i * 17 % 256);
    save_pgm(pgm, g, 0.0, 255.0);
    Tensor gb = load_pgm(pgm);
    CHECK(gb.shape == g.shape);
    CHECK(gb.data == g.data);

    std::string ppm = tmp_path("debm_test.ppm");
    Tensor c({3, 2, 2});
    for (int i = 0; i < 12; ++i) c.data[size_t(i)] = float(i * 21 % 256);
    save_ppm(ppm, c, 0.0, 255.0);
    Tensor cb = load_ppm(ppm);
    CHECK(cb.shape == c.shape);
    CHECK(cb.data == c.data);

    CHECK_THROWS_AS(load_pgm(ppm), IoError);
}

TEST_CASE("load_dir stacks consistent files and scales images to [-1,1]") {
    namespace fs = std::filesystem;
    std::string dir = tmp_path("debm_dataset_dir");
    fs::remove_all(dir);
    fs::create_directories(dir);
    Rng rng(7);
    for (int i = 0; i < 3; ++i) {
        Tensor img({1, 8, 8});
        for (auto& v : img.data) v = float(rng.uniform_int(256));
        save_pgm(dir + "/img_" + std::to_string(i) + ".pgm", img, 0.0, 255.0);
    }
    Dataset ds = load_dir(dir);
    CHECK(ds.size() == 3);
    CHECK(ds.data_shape == Shape{1, 8, 8});
    for (float v : ds.samples.data) {
        CHECK(v >= -1.0f);
        CHECK(v <= 1.0f);
    }
    fs::remove_all(dir);
}
