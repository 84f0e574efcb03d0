#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>

#include "debm/noise.hpp"

using namespace debm;

TEST_CASE("build_schedule: paper regime endpoints and constant ratio") {
    auto s = build_schedule(1.0, 0.01, 128);
    CHECK(s.levels() == 128);
    CHECK(s.sigmas.front() == 1.0);
    CHECK(s.sigmas.back() == 0.01);
    double ratio = s.sigmas[1] / s.sigmas[0];
    for (int i = 0; i + 1 < s.levels(); ++i) {
        double r = s.sigmas[i + 1] / s.sigmas[i];
        CHECK(std::abs(r / ratio - 1.0) < 1e-6);
        CHECK(s.sigmas[i + 1] <= s.sigmas[i]);
    }
}

TEST_CASE("build_schedule: degenerate and 3-level cases") {
    auto flat = build_schedule(1.0, 1.0, 8);
    for (double v : flat.sigmas) CHECK(v == 1.0);

    auto three = build_schedule(1.0, 0.01, 3);
    CHECK(three.sigmas[0] == doctest::Approx(1.0));
    CHECK(three.sigmas[1] == doctest::Approx(0.1).epsilon(1e-9));  // geometric mean of endpoints
    CHECK(three.sigmas[2] == doctest::Approx(0.01));
}

TEST_CASE("build_schedule rejects bad arguments") {
    CHECK_THROWS_AS(build_schedule(1.0, 0.01, 1), ConfigError);
    CHECK_THROWS_AS(build_schedule(1.0, 0.0, 4), ConfigError);
    CHECK_THROWS_AS(build_schedule(-1.0, -2.0, 4), ConfigError);
    CHECK_THROWS_AS(build_schedule(0.01, 1.0, 4), ConfigError);
}

TEST_CASE("sample_sigmas draws uniformly from the schedule") {
    auto s = build_schedule(1.0, 0.01, 4);
    Rng rng(99);
    CHECK(sample_sigmas(s, 0, rng).empty());

    const int n = 100000;
    auto draws = sample_sigmas(s, n, rng);
    std::map<double, int> counts;
    for (double v : draws) {
        bool member = false;
        for (double lv : s.sigmas) member |= (v == lv);
        REQUIRE(member);
        counts[v]++;
    }
    for (const auto& [v, c] : counts) CHECK(std::abs(double(c) / n - 0.25) < 0.02);
}

TEST_CASE("perturb: zero noise, shape preservation, seeded determinism") {
    Tensor x = Tensor::from({2, 2}, {1, 2, 3, 4});
    Rng rng(1);
    Tensor same = perturb(x, 0.0, rng);
    CHECK(same.data == x.data);

    Rng r1(5), r2(5);
    Tensor a = perturb(x, 0.3, r1);
    Tensor b = perturb(x, 0.3, r2);
    CHECK(a.shape == x.shape);
    CHECK(a.data == b.data);
    CHECK_THROWS_AS(perturb(x, -1.0, r1), ConfigError);
}

TEST_CASE("perturb: CLT mean bound and 5% variance over 1e5 draws") {
    const int n = 100000;
    const double sigma = 0.7;
    Tensor x = Tensor::from({4}, {0.5f, -1.0f, 2.0f, 0.0f});
    Rng rng(2024);
    std::vector<double> mean(4, 0.0), var(4, 0.0);
    for (int i = 0; i < n; ++i) {
        Tensor xt = perturb(x, sigma, rng);
        for (int j = 0; j < 4; ++j) {
            double d = double(xt.data[j]) - x.data[j];
            mean[j] += d;
            var[j] += d * d;
        }
    }
    double bound = 4.0 * sigma / std::sqrt(double(n));
    for (int j = 0; j < 4; ++j) {
        CHECK(std::abs(mean[j] / n) < bound);
        CHECK(std::abs(var[j] / n / (sigma * sigma) - 1.0) < 0.05);
    }
}
