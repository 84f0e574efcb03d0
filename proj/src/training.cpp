#include "debm/training.hpp"

#include <cmath>
#include <cstdio>

#include "debm/errors.hpp"

namespace debm {

void validate_train_config(const TrainConfig& cfg) {
    if (cfg.recon_steps < 1) throw ConfigError("train: recon_steps must be >= 1");
    if (cfg.batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (!(cfg.learning_rate > 0.0)) throw ConfigError("train: learning_rate must be positive");
    if (cfg.epochs < 0) throw ConfigError("train: epochs must be >= 0");
    if (cfg.grad_clip < 0.0) throw ConfigError("train: grad_clip must be >= 0 (0 disables)");
    if (!(cfg.adam_beta1 >= 0.0 && cfg.adam_beta1 < 1.0) || !(cfg.adam_beta2 >= 0.0 && cfg.adam_beta2 < 1.0))
        throw ConfigError("train: adam betas must lie in [0,1)");
    if (!(cfg.adam_eps > 0.0)) throw ConfigError("train: adam_eps must be positive");
    validate_sampler_config(cfg.sampler);
}

OptimizerState make_optimizer(const Model& model) {
    OptimizerState st;
    st.slots.resize(static_cast<size_t>(model.num_params()));
    return st;
}

void adam_step(OptimizerState& st, Model& model, const GradVec& grads, double lr, double beta1, double beta2,
               double eps) {
    if (static_cast<int>(st.slots.size()) != model.num_params() ||
        static_cast<int>(grads.size()) != model.num_params())
        throw ConfigError("adam_step: optimizer/model/gradient sizes disagree");
    st.step_count++;
    for (int i = 0; i < model.num_params(); ++i) {
        const Tensor& g = grads[static_cast<size_t>(i)];
        if (g.empty()) continue;
        if (g.shape != model.param(i).shape)
            throw ShapeError("adam_step: gradient shape " + shape_str(g.shape) + " vs parameter " +
                             shape_str(model.param(i).shape));
        OptimizerState::Slot& s = st.slots[static_cast<size_t>(i)];
        if (s.m.empty()) {
            s.m = Tensor(g.shape);
            s.v = Tensor(g.shape);
        }
        s.t++;
        double bc1 = 1.0 - std::pow(beta1, static_cast<double>(s.t));
        double bc2 = 1.0 - std::pow(beta2, static_cast<double>(s.t));
        Tensor& p = model.param_mut(i);
        for (size_t j = 0; j < g.data.size(); ++j) {
            double gj = g.data[j];
            double mj = beta1 * s.m.data[j] + (1.0 - beta1) * gj;
            double vj = beta2 * s.v.data[j] + (1.0 - beta2) * gj * gj;
            s.m.data[j] = static_cast<float>(mj);
            s.v.data[j] = static_cast<float>(vj);
            p.data[j] = static_cast<float>(p.data[j] - lr * (mj / bc1) / (std::sqrt(vj / bc2) + eps));
        }
    }
}

double grad_norm(const GradVec& grads) {
    double s = 0.0;
    for (const Tensor& g : grads)
        for (float v : g.data) s += static_cast<double>(v) * v;
    return std::sqrt(s);
}

void clip_grads(GradVec& grads, double max_norm) {
    if (!(max_norm > 0.0)) return;
    double n = grad_norm(grads);
    if (n <= max_norm) return;
    float s = static_cast<float>(max_norm / n);
    for (Tensor& g : grads)
        for (float& v : g.data) v *= s;
}

// ---- batch helpers ----

namespace {

void check_batch(const Model& model, const Tensor& batch, std::span<const double> sigmas) {
    int n = batch_count(batch, model.arch().data_shape);
    if (static_cast<int>(sigmas.size()) != n)
        throw ConfigError("batch of " + std::to_string(n) + " needs as many sigmas, got " +
                          std::to_string(sigmas.size()));
}

// deterministic sum of per-sample gradient vectors (double accumulators,
// fixed sample order regardless of thread count)
GradVec sum_grads(const std::vector<GradVec>& per_sample, int num_params, double scale_num = 1.0) {
    GradVec out(static_cast<size_t>(num_params));
    std::vector<double> acc;
    for (int p = 0; p < num_params; ++p) {
        bool any = false;
        for (const auto& gs : per_sample) {
            const Tensor& g = gs[static_cast<size_t>(p)];
            if (g.empty()) continue;
            if (!any) {
                acc.assign(g.data.size(), 0.0);
                out[static_cast<size_t>(p)] = Tensor(g.shape);
                any = true;
            }
            for (size_t j = 0; j < g.data.size(); ++j) acc[j] += g.data[j];
        }
        if (any) {
            Tensor& o = out[static_cast<size_t>(p)];
            for (size_t j = 0; j < o.data.size(); ++j) o.data[j] = static_cast<float>(acc[j] * scale_num);
        }
    }
    return out;
}

}  // namespace

double dae_loss(const Model& model, const Tensor& batch, std::span<const double> sigmas, Rng& rng) {
    check_batch(model, batch, sigmas);
    int n = batch.shape[0];
    uint64_t key = rng.next_u64();
    std::vector<double> vals(static_cast<size_t>(n));
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i) {
        Rng s = Rng(key).fork(static_cast<uint64_t>(i));
        double dae = 0.0;
        model.recon_grads(batch_item(batch, model.arch().data_shape, i), sigmas[static_cast<size_t>(i)], s, &dae,
                          nullptr, nullptr, nullptr);
        vals[static_cast<size_t>(i)] = dae;
    }
    double acc = 0.0;
    for (double v : vals) acc += v;
    return acc / n;
}

double decoder_loss(const Model& model, const Tensor& batch, std::span<const double> sigmas, Rng& rng) {
    check_batch(model, batch, sigmas);
    int n = batch.shape[0];
    uint64_t key = rng.next_u64();
    std::vector<double> vals(static_cast<size_t>(n));
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i) {
        Rng s = Rng(key).fork(static_cast<uint64_t>(i));
        double dec = 0.0;
        model.recon_grads(batch_item(batch, model.arch().data_shape, i), sigmas[static_cast<size_t>(i)], s, nullptr,
                          &dec, nullptr, nullptr);
        vals[static_cast<size_t>(i)] = dec;
    }
    double acc = 0.0;
    for (double v : vals) acc += v;
    return acc / n;
}

// ---- phase gradients ----

GradVec semantic_phase_gradient(const Model& model, const Tensor& pos_codes, const Tensor& neg_codes,
                                std::span<const double> sigmas, Rng& rng, PhaseStats* stats) {
    Shape zs = {model.arch().latent_dim};
    int n = batch_count(pos_codes, zs);
    if (batch_count(neg_codes, zs) != n) throw ConfigError("semantic phase: positive/negative counts differ");
    if (static_cast<int>(sigmas.size()) != n) throw ConfigError("semantic phase: sigma count mismatch");
    uint64_t key = rng.next_u64();

    std::vector<GradVec> pos(static_cast<size_t>(n)), neg(static_cast<size_t>(n));
    std::vector<double> epos(static_cast<size_t>(n)), eneg(static_cast<size_t>(n));
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i) {
        Rng s = Rng(key).fork(static_cast<uint64_t>(i));
        double sg = sigmas[static_cast<size_t>(i)];
        // one eps per pair: coincident positives/negatives cancel exactly
        Tensor ep = gaussian_like(model.arch().data_shape, sg, s);
        pos[static_cast<size_t>(i)] = model.grad_semantic_energy_gamma(batch_item(pos_codes, zs, i), sg, ep,
                                                                       &epos[static_cast<size_t>(i)]);
        neg[static_cast<size_t>(i)] = model.grad_semantic_energy_gamma(batch_item(neg_codes, zs, i), sg, ep,
                                                                       &eneg[static_cast<size_t>(i)]);
    }
    GradVec gp = sum_grads(pos, model.num_params());
    GradVec gn = sum_grads(neg, model.num_params());
    for (size_t p = 0; p < gp.size(); ++p) {
        if (gp[p].empty()) continue;
        for (size_t j = 0; j < gp[p].data.size(); ++j) gp[p].data[j] -= gn[p].data[j];
    }
    if (stats) {
        double sp = 0, sn = 0;
        for (int i = 0; i < n; ++i) {
            sp += epos[static_cast<size_t>(i)];
            sn += eneg[static_cast<size_t>(i)];
        }
        stats->e_pos = sp / n;
        stats->e_neg = sn / n;
    }
    return gp;
}

GradVec texture_phase_gradient(const Model& model, const Tensor& pos, const Tensor& neg,
                               std::span<const double> sigmas, Rng& rng, PhaseStats* stats) {
    const Shape& ds = model.arch().data_shape;
    int n = batch_count(pos, ds);
    if (batch_count(neg, ds) != n) throw ConfigError("texture phase: positive/negative counts differ");
    if (static_cast<int>(sigmas.size()) != n) throw ConfigError("texture phase: sigma count mismatch");
    uint64_t key = rng.next_u64();

    std::vector<GradVec> gpos(static_cast<size_t>(n)), gneg(static_cast<size_t>(n));
    std::vector<double> epos(static_cast<size_t>(n)), eneg(static_cast<size_t>(n));
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i) {
        Rng s = Rng(key).fork(static_cast<uint64_t>(i));
        double sg = sigmas[static_cast<size_t>(i)];
        Tensor ep = gaussian_like(ds, sg, s);
        gpos[static_cast<size_t>(i)] =
            model.grad_texture_energy_phi(batch_item(pos, ds, i), sg, ep, &epos[static_cast<size_t>(i)]);
        gneg[static_cast<size_t>(i)] =
            model.grad_texture_energy_phi(batch_item(neg, ds, i), sg, ep, &eneg[static_cast<size_t>(i)]);
    }
    GradVec gp = sum_grads(gpos, model.num_params());
    GradVec gn = sum_grads(gneg, model.num_params());
    for (size_t p = 0; p < gp.size(); ++p) {
        if (gp[p].empty()) continue;
        for (size_t j = 0; j < gp[p].data.size(); ++j) gp[p].data[j] -= gn[p].data[j];
    }
    if (stats) {
        double sp = 0, sn = 0;
        for (int i = 0; i < n; ++i) {
            sp += epos[static_cast<size_t>(i)];
            sn += eneg[static_cast<size_t>(i)];
        }
        stats->e_pos = sp / n;
        stats->e_neg = sn / n;
    }
    return gp;
}

namespace {

// positive codes z_i = f(x_i + eps_i, sigma_i)
Tensor positive_codes(const Model& model, const Tensor& batch, std::span<const double> sigmas, uint64_t key) {
    const Shape& ds = model.arch().data_shape;
    int n = batch.shape[0];
    Tensor z({n, model.arch().latent_dim});
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i) {
        Rng s = Rng(key).fork(static_cast<uint64_t>(i));
        Tensor xt = perturb(batch_item(batch, ds, i), sigmas[static_cast<size_t>(i)], s);
        set_batch_item(z, {model.arch().latent_dim}, i, model.encode(xt, sigmas[static_cast<size_t>(i)]));
    }
    return z;
}

Tensor latent_negatives(const Model& model, int n, const SamplerConfig& cfg, uint64_t key) {
    Tensor zk({n, model.arch().latent_dim});
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i) {
        Rng s = Rng(key).fork(static_cast<uint64_t>(i));
        Tensor z0({model.arch().latent_dim});
        for (auto& v : z0.data) v = s.gaussianf();
        Chain c = langevin_latent(model, z0, cfg, s.fork(1));
        set_batch_item(zk, {model.arch().latent_dim}, i, c.final_state());
    }
    return zk;
}

}  // namespace

GradVec semantic_phase_update(const Model& model, const Tensor& batch, std::span<const double> sigmas,
                              const SamplerConfig& cfg, Rng& rng, PhaseStats* stats) {
    check_batch(model, batch, sigmas);
    Tensor zpos = positive_codes(model, batch, sigmas, rng.next_u64());
    Tensor zneg = latent_negatives(model, batch.shape[0], cfg, rng.next_u64());
    return semantic_phase_gradient(model, zpos, zneg, sigmas, rng, stats);
}

GradVec texture_phase_update(const Model& model, const Tensor& batch, std::span<const double> sigmas,
                             const SamplerConfig& cfg, Rng& rng, PhaseStats* stats) {
    check_batch(model, batch, sigmas);
    SamplerConfig scfg = cfg;
    scfg.record_trajectory = false;
    TwoStageResult two = two_stage_sample(model, batch.shape[0], scfg, Rng(rng.next_u64()));
    return texture_phase_gradient(model, batch, two.samples, sigmas, rng, stats);
}

EbmPhaseResult ebm_phase(const Model& model, const Tensor& batch, std::span<const double> sigmas,
                         const SamplerConfig& cfg, Rng& rng) {
    check_batch(model, batch, sigmas);
    SamplerConfig scfg = cfg;
    scfg.record_trajectory = false;
    Tensor zpos = positive_codes(model, batch, sigmas, rng.next_u64());
    TwoStageResult two = two_stage_sample(model, batch.shape[0], scfg, Rng(rng.next_u64()));

    EbmPhaseResult out;
    out.dgamma = semantic_phase_gradient(model, zpos, two.latent_final, sigmas, rng, &out.sem);
    out.dphi = texture_phase_gradient(model, batch, two.samples, sigmas, rng, &out.tex);
    return out;
}

// ---- metrics ----

const char* const kMetricsHeader = "epoch,phase,loss_dae,loss_dec,e_pos_sem,e_neg_sem,e_pos_tex,e_neg_tex";

namespace {
void append_field(std::string& s, double v) {
    s += ',';
    if (std::isnan(v)) return;
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    s += buf;
}
}  // namespace

std::string metrics_csv_row(const MetricsRow& row) {
    std::string s = std::to_string(row.epoch) + "," + row.phase;
    append_field(s, row.loss_dae);
    append_field(s, row.loss_dec);
    append_field(s, row.e_pos_sem);
    append_field(s, row.e_neg_sem);
    append_field(s, row.e_pos_tex);
    append_field(s, row.e_neg_tex);
    return s;
}

// ---- training loop ----

namespace {

Tensor gather_batch(const Dataset& data, const std::vector<int>& idx) {
    Shape bs = data.data_shape;
    bs.insert(bs.begin(), static_cast<int>(idx.size()));
    Tensor out(bs);
    for (size_t i = 0; i < idx.size(); ++i) set_batch_item(out, data.data_shape, static_cast<int>(i), data.item(idx[i]));
    return out;
}

std::vector<int> draw_indices(int n, int total, Rng& rng) {
    std::vector<int> idx(static_cast<size_t>(n));
    for (auto& v : idx) v = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(total)));
    return idx;
}

void check_finite(double v, const char* what, int epoch) {
    if (!std::isfinite(v))
        throw DivergenceError(std::string(what) + " became non-finite at epoch " + std::to_string(epoch));
}

}  // namespace

void train(Model& model, const Dataset& data, const NoiseSchedule& schedule, const TrainConfig& cfg,
           const MetricsSink& sink, const EpochHook& hook) {
    validate_train_config(cfg);
    if (data.size() < 1) throw ConfigError("train: dataset is empty");
    if (data.data_shape != model.arch().data_shape)
        throw ConfigError("train: dataset shape " + shape_str(data.data_shape) + " vs model " +
                          shape_str(model.arch().data_shape));

    OptimizerState opt = make_optimizer(model);
    Rng root(cfg.seed);
    const double nan = std::nan("");
    const int nparams = model.num_params();

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng erng = root.fork(static_cast<uint64_t>(epoch));

        for (int l = 0; l < cfg.recon_steps; ++l) {
            Rng srng = erng.fork(static_cast<uint64_t>(l));
            std::vector<int> idx = draw_indices(cfg.batch_size, data.size(), srng);
            Tensor batch = gather_batch(data, idx);
            std::vector<double> sigmas = sample_sigmas(schedule, cfg.batch_size, srng);

            uint64_t key = srng.next_u64();
            int n = cfg.batch_size;
            std::vector<GradVec> phi(static_cast<size_t>(n)), gam(static_cast<size_t>(n));
            std::vector<double> daev(static_cast<size_t>(n)), decv(static_cast<size_t>(n));
#pragma omp parallel for schedule(static)
            for (int i = 0; i < n; ++i) {
                Rng s = Rng(key).fork(static_cast<uint64_t>(i));
                model.recon_grads(batch_item(batch, data.data_shape, i), sigmas[static_cast<size_t>(i)], s,
                                  &daev[static_cast<size_t>(i)], &decv[static_cast<size_t>(i)],
                                  &phi[static_cast<size_t>(i)], &gam[static_cast<size_t>(i)]);
            }
            double dae = 0.0, dec = 0.0;
            for (int i = 0; i < n; ++i) {
                dae += daev[static_cast<size_t>(i)];
                dec += decv[static_cast<size_t>(i)];
            }
            dae /= n;
            dec /= n;
            check_finite(dae, "dae loss", epoch);
            check_finite(dec, "decoder loss", epoch);

            // joint step: phi from the DAE loss, gamma from the decoder loss
            GradVec gphi = sum_grads(phi, nparams, 1.0 / n);
            GradVec ggam = sum_grads(gam, nparams, 1.0 / n);
            for (size_t p = 0; p < gphi.size(); ++p)
                if (gphi[p].empty() && !ggam[p].empty()) gphi[p] = std::move(ggam[p]);
            if (cfg.grad_clip > 0.0) clip_grads(gphi, cfg.grad_clip);
            adam_step(opt, model, gphi, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);

            if (sink) sink({epoch, "recon", dae, dec, nan, nan, nan, nan});
        }

        Rng prng = erng.fork(0x0ebfu);
        std::vector<int> idx = draw_indices(cfg.batch_size, data.size(), prng);
        Tensor batch = gather_batch(data, idx);
        std::vector<double> sigmas = sample_sigmas(schedule, cfg.batch_size, prng);

        EbmPhaseResult ph = ebm_phase(model, batch, sigmas, cfg.sampler, prng);
        check_finite(ph.sem.e_pos, "semantic positive energy", epoch);
        check_finite(ph.sem.e_neg, "semantic negative energy", epoch);
        check_finite(ph.tex.e_pos, "texture positive energy", epoch);
        check_finite(ph.tex.e_neg, "texture negative energy", epoch);

        // Adam consumes batch-mean gradients; the phase ops return sums
        float inv_n = 1.0f / static_cast<float>(cfg.batch_size);
        for (Tensor& g : ph.dgamma)
            for (float& v : g.data) v *= inv_n;
        for (Tensor& g : ph.dphi)
            for (float& v : g.data) v *= inv_n;
        if (cfg.grad_clip > 0.0) {
            clip_grads(ph.dgamma, cfg.grad_clip);
            clip_grads(ph.dphi, cfg.grad_clip);
        }
        adam_step(opt, model, ph.dgamma, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
        adam_step(opt, model, ph.dphi, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);

        for (int i = 0; i < model.num_params(); ++i)
            if (!model.param(i).all_finite())
                throw DivergenceError("parameter '" + model.param_name(i) + "' became non-finite at epoch " +
                                      std::to_string(epoch));

        if (sink) sink({epoch, "ebm", nan, nan, ph.sem.e_pos, ph.sem.e_neg, ph.tex.e_pos, ph.tex.e_neg});
        if (hook) hook(epoch, model);
    }
}

}  // namespace debm
