#include "debm/sampler.hpp"

#include <cmath>

#include "debm/errors.hpp"

namespace debm {

void validate_sampler_config(const SamplerConfig& cfg) {
    if (cfg.latent_steps < 0 || cfg.data_steps < 0) throw ConfigError("sampler: step counts must be >= 0");
    if (!(cfg.eta1 > 0.0) || !(cfg.eta2 > 0.0)) throw ConfigError("sampler: step sizes must be positive");
    if (cfg.policy == SigmaPolicy::Fixed && !(cfg.sigma_fixed > 0.0))
        throw ConfigError("sampler: fixed sigma must be positive");
    if (cfg.policy == SigmaPolicy::Annealed) {
        if (!(cfg.anneal_min > 0.0) || cfg.anneal_max < cfg.anneal_min)
            throw ConfigError("sampler: annealed sweep needs anneal_max >= anneal_min > 0");
        if (cfg.data_anneal_max < cfg.anneal_min)
            throw ConfigError("sampler: data_anneal_max must be >= anneal_min");
    }
    if (cfg.noise_scale < 0.0) throw ConfigError("sampler: negative noise scale");
    if (cfg.max_step < 0.0) throw ConfigError("sampler: negative max_step");
}

double sigma_at_step(const SamplerConfig& cfg, double hi, double lo, int t, int steps) {
    if (cfg.policy == SigmaPolicy::Fixed) return cfg.sigma_fixed;
    if (steps <= 1) return lo;
    if (t >= steps) t = steps - 1;  // final-state energy uses the last level
    double f = static_cast<double>(t) / (steps - 1);
    return hi * std::pow(lo / hi, f);  // non-increasing
}

double eta_at_step(const SamplerConfig& cfg, double sigma, double eta) {
    if (cfg.policy == SigmaPolicy::Fixed || !cfg.scale_step_with_sigma) return eta;
    return eta * sigma * sigma;
}

Chain langevin_latent(const Model& model, const Tensor& z0, const SamplerConfig& cfg, Rng rng) {
    validate_sampler_config(cfg);
    uint64_t seed_key = rng.next_u64();
    Rng stream(seed_key);
    auto grad_fn = [&](const Tensor& z, int t, Rng& r) {
        double sigma = sigma_at_step(cfg, cfg.anneal_max, cfg.anneal_min, t, cfg.latent_steps);
        Tensor eps = gaussian_like(model.arch().data_shape, sigma, r);
        double energy = 0.0;
        Tensor g = model.grad_semantic_energy(z, sigma, eps, &energy);
        return std::make_pair(std::move(g), energy);
    };
    auto eta_fn = [&](int t) {
        return eta_at_step(cfg, sigma_at_step(cfg, cfg.anneal_max, cfg.anneal_min, t, cfg.latent_steps), cfg.eta1);
    };
    Chain c = langevin_chain_schedule(z0, cfg.latent_steps, eta_fn, cfg.noise_scale, grad_fn, stream,
                                      cfg.record_trajectory, cfg.max_step);
    c.seed = seed_key;
    return c;
}

Chain langevin_data(const Model& model, const Tensor& x0, const SamplerConfig& cfg, Rng rng) {
    validate_sampler_config(cfg);
    uint64_t seed_key = rng.next_u64();
    Rng stream(seed_key);
    double hi = std::max(cfg.data_anneal_max, cfg.anneal_min);
    auto grad_fn = [&](const Tensor& x, int t, Rng& r) {
        double sigma = sigma_at_step(cfg, hi, cfg.anneal_min, t, cfg.data_steps);
        Tensor eps = gaussian_like(model.arch().data_shape, sigma, r);
        double energy = 0.0;
        Tensor g = model.grad_texture_energy(x, sigma, eps, &energy);
        return std::make_pair(std::move(g), energy);
    };
    auto eta_fn = [&](int t) {
        return eta_at_step(cfg, sigma_at_step(cfg, hi, cfg.anneal_min, t, cfg.data_steps), cfg.eta2);
    };
    Chain c = langevin_chain_schedule(x0, cfg.data_steps, eta_fn, cfg.noise_scale, grad_fn, stream,
                                      cfg.record_trajectory, cfg.max_step);
    c.seed = seed_key;
    return c;
}

TwoStageResult two_stage_sample(const Model& model, int n, const SamplerConfig& cfg, Rng rng) {
    if (n < 1) throw ConfigError("two_stage_sample: n must be >= 1");
    validate_sampler_config(cfg);
    const Shape& ds = model.arch().data_shape;
    Shape batch_shape = ds;
    batch_shape.insert(batch_shape.begin(), n);

    TwoStageResult out;
    out.latent_final = Tensor({n, model.arch().latent_dim});
    out.semantic = Tensor(batch_shape);
    out.samples = Tensor(batch_shape);
    if (cfg.record_trajectory) {
        out.latent_chains.resize(static_cast<size_t>(n));
        out.data_chains.resize(static_cast<size_t>(n));
    }

#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i) {
        Rng chain_rng = rng.fork(static_cast<uint64_t>(i));
        Tensor z0({model.arch().latent_dim});
        for (auto& v : z0.data) v = chain_rng.gaussianf();

        Chain latent = langevin_latent(model, z0, cfg, chain_rng.fork(1));
        Tensor x0 = model.semantic_decode(latent.final_state());
        Chain data = langevin_data(model, x0, cfg, chain_rng.fork(2));

        set_batch_item(out.latent_final, {model.arch().latent_dim}, i, latent.final_state());
        set_batch_item(out.semantic, ds, i, x0);
        set_batch_item(out.samples, ds, i, data.final_state());
        if (cfg.record_trajectory) {
            out.latent_chains[static_cast<size_t>(i)] = std::move(latent);
            out.data_chains[static_cast<size_t>(i)] = std::move(data);
        }
    }
    return out;
}

}  // namespace debm
