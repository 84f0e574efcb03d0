#pragma once

#include <span>
#include <string>
#include <vector>

#include "debm/models.hpp"
#include "debm/rng.hpp"
#include "debm/tensor.hpp"

namespace debm {

// Score implied by the denoiser: (r(x_tilde, sigma) - x_tilde) / sigma^2.
// Accepts one point or a batch.
Tensor dae_score(const Model& model, const Tensor& x_tilde, double sigma);

// Exact score of N(mu, Sigma + sigma^2 I) at x_tilde:
// -(Sigma + sigma^2 I)^{-1} (x_tilde - mu). mu is [d], Sigma [d,d] positive
// definite; x_tilde one point or a batch.
Tensor analytic_gaussian_score(const Tensor& mu, const Tensor& sigma_mat, double sigma, const Tensor& x_tilde);

// log N(x; mu, Sigma + sigma^2 I) up to shared constants (for oracle checks)
double gaussian_log_density(const Tensor& mu, const Tensor& sigma_mat, double sigma, const Tensor& x);

struct ScoreField {
    Tensor points;     // [n, d] evaluation points (x_tilde)
    Tensor estimated;  // [n, d] dae_score
    Tensor oracle;     // [n, d] analytic score
    double mean_cos_sim = 0.0;
    double median_rel_l2 = 0.0;
};
ScoreField score_field(const Model& model, const Tensor& points, double sigma, const Tensor& mu,
                       const Tensor& sigma_mat);
void write_score_field_csv(const std::string& path, const ScoreField& f);

// Compares the autodiff grad of the texture energy against the explicit
// two-term decomposition (residual minus its vector-Jacobian image), at one
// point with eps fixed by `seed`.
struct GradIdentityReport {
    double rel_err = 0.0;
    double autodiff_norm = 0.0;
    double decomposition_norm = 0.0;
};
GradIdentityReport grad_identity_check(const Model& model, const Tensor& x, double sigma, uint64_t seed);

// Singular values of the reconstruction Jacobian dr/dx at x (sorted
// descending). Data dimensionality must be <= 64.
std::vector<double> jacobian_spectrum(const Model& model, const Tensor& x, double sigma);

// P(random positive > random negative), ties counted one half.
double auroc(std::span<const double> pos, std::span<const double> neg);

// Squared maximum mean discrepancy with a Gaussian kernel
// k(x,y) = exp(-|x-y|^2 / (2 bw^2)). The unbiased U-statistic can dip below
// zero on finite samples; the biased V-statistic is >= 0 up to rounding.
double mmd(const Tensor& a, const Tensor& b, double bandwidth, bool unbiased = true);
double median_pairwise_distance(const Tensor& a, const Tensor& b);

struct ModeCoverage {
    std::vector<double> fractions;  // per-center mass within radius
    double unassigned = 0.0;
};
ModeCoverage mode_coverage(const Tensor& samples, const std::vector<std::vector<double>>& centers, double radius);

// OOD critic: -U^c(x_i, sigma) per sample, averaged over eps_draws noise
// draws. Higher means more in-distribution; values are always <= 0.
std::vector<double> ood_score(const Model& model, const Tensor& batch, double sigma, int eps_draws, Rng& rng);

struct OodReport {
    std::vector<double> in_scores, out_scores;
    double auroc_value = 0.0;
    double sigma = 0.0;
};
OodReport ood_report(const Model& model, const Tensor& in_set, const Tensor& out_set, double sigma,
                     int eps_draws, Rng& rng);
void write_ood_csv(const std::string& path, const OodReport& r);

}  // namespace debm
