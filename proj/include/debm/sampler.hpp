#pragma once

#include <utility>
#include <vector>

#include "debm/models.hpp"
#include "debm/noise.hpp"
#include "debm/rng.hpp"
#include "debm/tensor.hpp"

namespace debm {

enum class SigmaPolicy { Annealed, Fixed };

struct SamplerConfig {
    int latent_steps = 20;  // K
    int data_steps = 90;    // T
    double eta1 = 0.1;
    double eta2 = 0.01;
    SigmaPolicy policy = SigmaPolicy::Annealed;
    double sigma_fixed = 0.01;
    // annealed: geometric sweep over the chain steps, largest first.
    // The latent stage explores from anneal_max; the data stage starts at
    // data_anneal_max, a finer scale, since its init h(z^K) is already
    // semantically placed and only needs texture refinement.
    double anneal_max = 1.0;
    double anneal_min = 0.01;
    double data_anneal_max = 0.2;
    // annealed chains use eta * sigma_t^2 per level, the usual step scaling
    // for multi-scale Langevin; energy gradients carry a 1/sigma^2 factor,
    // so this keeps displacements comparable across levels. Fixed-sigma
    // chains always use eta as given.
    bool scale_step_with_sigma = true;
    // cap on the L2 norm of the drift term eta * grad per step; keeps chains
    // finite when an untrained energy spikes. 0 disables the cap.
    double max_step = 1.0;
    double noise_scale = 1.0;  // 0 disables the injected noise (diagnostics)
    bool record_trajectory = false;
};

void validate_sampler_config(const SamplerConfig& cfg);

// sigma used by step t of a chain sweeping [hi, lo] geometrically
double sigma_at_step(const SamplerConfig& cfg, double hi, double lo, int t, int steps);
// step size used at that sigma
double eta_at_step(const SamplerConfig& cfg, double sigma, double eta);

struct Chain {
    std::vector<Tensor> states;    // steps+1 states when recorded, else {final}
    std::vector<double> energies;  // aligned with states
    uint64_t seed = 0;

    const Tensor& final_state() const { return states.back(); }
};

// Generic Langevin core: x <- x - eta_t grad + sqrt(2 eta_t) * noise_scale * e.
// grad_fn(state, step, rng) returns (gradient, energy at state); it may draw
// from the rng (fresh eps per step). eta_fn(step) gives the step size.
template <class GradFn, class EtaFn>
Chain langevin_chain_schedule(const Tensor& x0, int steps, EtaFn&& eta_fn, double noise_scale, GradFn&& grad_fn,
                              Rng rng, bool record, double max_step = 0.0) {
    Chain chain;
    chain.states.reserve(record ? static_cast<size_t>(steps) + 1 : 1);
    Tensor x = x0;
    for (int t = 0; t < steps; ++t) {
        auto [grad, energy] = grad_fn(x, t, rng);
        if (record) {
            chain.states.push_back(x);
            chain.energies.push_back(energy);
        }
        double eta = eta_fn(t);
        double drift_scale = eta;
        if (max_step > 0.0) {
            double gn = l2_norm(grad);
            if (eta * gn > max_step) drift_scale = max_step / gn;
        }
        double amp = std::sqrt(2.0 * eta) * noise_scale;
        for (int64_t i = 0; i < x.numel(); ++i) {
            double step = -drift_scale * static_cast<double>(grad.data[static_cast<size_t>(i)]);
            if (noise_scale != 0.0) step += amp * rng.gaussian();
            x.data[static_cast<size_t>(i)] = static_cast<float>(x.data[static_cast<size_t>(i)] + step);
        }
    }
    auto [grad, energy] = grad_fn(x, steps, rng);  // energy of the final state
    (void)grad;
    chain.states.push_back(std::move(x));
    chain.energies.push_back(energy);
    return chain;
}

template <class GradFn>
Chain langevin_chain(const Tensor& x0, int steps, double eta, double noise_scale, GradFn&& grad_fn, Rng rng,
                     bool record) {
    return langevin_chain_schedule(
        x0, steps, [eta](int) { return eta; }, noise_scale, std::forward<GradFn>(grad_fn), rng, record);
}

// Latent-space chain on the semantic energy (fresh eps per step).
Chain langevin_latent(const Model& model, const Tensor& z0, const SamplerConfig& cfg, Rng rng);

// Data-space chain on the texture energy.
Chain langevin_data(const Model& model, const Tensor& x0, const SamplerConfig& cfg, Rng rng);

struct TwoStageResult {
    Tensor latent_final;  // z^K                        [n, latent]
    Tensor semantic;      // h(z^K), the semantic images [n, data...]
    Tensor samples;       // x^T after texture refinement [n, data...]
    std::vector<Chain> latent_chains;  // populated when cfg.record_trajectory
    std::vector<Chain> data_chains;
};

// Stage 1: z^0 ~ N(0, I), K latent steps; x^0 = h(z^K).
// Stage 2: T data steps from x^0.
TwoStageResult two_stage_sample(const Model& model, int n, const SamplerConfig& cfg, Rng rng);

}  // namespace debm
