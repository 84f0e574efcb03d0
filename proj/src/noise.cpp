#include "debm/noise.hpp"

#include <cmath>

#include "debm/errors.hpp"

namespace debm {

NoiseSchedule build_schedule(double sigma_max, double sigma_min, int levels) {
    if (levels < 2) throw ConfigError("noise schedule needs at least 2 levels, got " + std::to_string(levels));
    if (!(sigma_min > 0.0) || !(sigma_max > 0.0)) throw ConfigError("noise schedule sigmas must be positive");
    if (sigma_max < sigma_min) throw ConfigError("noise schedule needs sigma_max >= sigma_min");
    NoiseSchedule s;
    s.sigmas.resize(static_cast<size_t>(levels));
    double log_max = std::log(sigma_max);
    double log_min = std::log(sigma_min);
    for (int i = 0; i < levels; ++i)
        s.sigmas[static_cast<size_t>(i)] = std::exp(log_max + (log_min - log_max) * i / (levels - 1));
    s.sigmas.front() = sigma_max;  // endpoints exact
    s.sigmas.back() = sigma_min;
    return s;
}

std::vector<double> sample_sigmas(const NoiseSchedule& schedule, int n, Rng& rng) {
    if (n < 0) throw ConfigError("sample_sigmas: negative count");
    std::vector<double> out(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i)
        out[static_cast<size_t>(i)] = schedule.sigmas[rng.uniform_int(static_cast<uint64_t>(schedule.levels()))];
    return out;
}

Tensor gaussian_like(const Shape& shape, double sigma, Rng& rng) {
    if (sigma < 0.0) throw ConfigError("gaussian_like: negative sigma");
    Tensor eps(shape);
    for (auto& v : eps.data) v = static_cast<float>(sigma * rng.gaussian());
    return eps;
}

Tensor perturb(const Tensor& x, double sigma, Rng& rng) {
    if (sigma < 0.0) throw ConfigError("perturb: negative sigma");
    Tensor out = x;
    for (auto& v : out.data) v = static_cast<float>(v + sigma * rng.gaussian());
    return out;
}

}  // namespace debm
