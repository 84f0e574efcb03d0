#pragma once

#include <vector>

#include "debm/rng.hpp"
#include "debm/tensor.hpp"

namespace debm {

// Geometric sequence of noise standard deviations, largest first.
struct NoiseSchedule {
    std::vector<double> sigmas;

    int levels() const { return static_cast<int>(sigmas.size()); }
    double max_sigma() const { return sigmas.front(); }
    double min_sigma() const { return sigmas.back(); }
};

// sigmas[0] = sigma_max, sigmas[S-1] = sigma_min, constant ratio.
NoiseSchedule build_schedule(double sigma_max, double sigma_min, int levels);

// n independent uniform draws from the schedule's levels.
std::vector<double> sample_sigmas(const NoiseSchedule& schedule, int n, Rng& rng);

// x + eps with eps ~ N(0, sigma^2 I).
Tensor perturb(const Tensor& x, double sigma, Rng& rng);

// The noise draw itself, for callers that pin eps.
Tensor gaussian_like(const Shape& shape, double sigma, Rng& rng);

}  // namespace debm
