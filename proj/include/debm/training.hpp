#pragma once

#include <functional>
#include <span>
#include <string>

#include "debm/data.hpp"
#include "debm/models.hpp"
#include "debm/noise.hpp"
#include "debm/sampler.hpp"

namespace debm {

struct TrainConfig {
    int recon_steps = 3;  // L reconstruction iterations per epoch
    int batch_size = 128;
    double learning_rate = 5e-5;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    int epochs = 0;
    double grad_clip = 0.0;  // 0 disables; > 0 clips the global grad norm
    SamplerConfig sampler;
    uint64_t seed = 0;
};

void validate_train_config(const TrainConfig& cfg);

struct OptimizerState {
    struct Slot {
        Tensor m, v;
        int64_t t = 0;
    };
    std::vector<Slot> slots;  // aligned with the model's parameter registry
    int64_t step_count = 0;
};

OptimizerState make_optimizer(const Model& model);

// Standard Adam with bias correction. Parameters without a gradient entry
// keep their moments untouched, so phase-wise updates leave the other group
// bit-identical.
void adam_step(OptimizerState& st, Model& model, const GradVec& grads, double lr, double beta1 = 0.9,
               double beta2 = 0.999, double eps = 1e-8);

double grad_norm(const GradVec& grads);
void clip_grads(GradVec& grads, double max_norm);

// Mean over the batch of |r(x_i + eps_i, sigma_i) - x_i|^2 (sum over dims).
double dae_loss(const Model& model, const Tensor& batch, std::span<const double> sigmas, Rng& rng);
// Mean over the batch of |h(f(x_i + eps_i, sigma_i)) - x_i|^2.
double decoder_loss(const Model& model, const Tensor& batch, std::span<const double> sigmas, Rng& rng);

struct PhaseStats {
    double e_pos = 0.0;
    double e_neg = 0.0;
};

// Positive-minus-negative energy gradients (sums over the batch), given the
// positive and negative samples explicitly.
GradVec semantic_phase_gradient(const Model& model, const Tensor& pos_codes, const Tensor& neg_codes,
                                std::span<const double> sigmas, Rng& rng, PhaseStats* stats = nullptr);
GradVec texture_phase_gradient(const Model& model, const Tensor& pos, const Tensor& neg,
                               std::span<const double> sigmas, Rng& rng, PhaseStats* stats = nullptr);

// Full phase updates: positives from the data batch, negatives from fresh
// chains. Only gamma (semantic) / phi (texture) entries are populated.
GradVec semantic_phase_update(const Model& model, const Tensor& batch, std::span<const double> sigmas,
                              const SamplerConfig& cfg, Rng& rng, PhaseStats* stats = nullptr);
GradVec texture_phase_update(const Model& model, const Tensor& batch, std::span<const double> sigmas,
                             const SamplerConfig& cfg, Rng& rng, PhaseStats* stats = nullptr);

// One EBM phase sharing a single two-stage chain set: z^K feeds the semantic
// negatives and x^T the texture negatives.
struct EbmPhaseResult {
    GradVec dgamma, dphi;
    PhaseStats sem, tex;
};
EbmPhaseResult ebm_phase(const Model& model, const Tensor& batch, std::span<const double> sigmas,
                         const SamplerConfig& cfg, Rng& rng);

// One CSV record per update: recon rows carry the losses, ebm rows the
// phase energies; absent fields are NaN and serialize as empty.
struct MetricsRow {
    int epoch = 0;
    std::string phase;
    double loss_dae, loss_dec, e_pos_sem, e_neg_sem, e_pos_tex, e_neg_tex;
};
extern const char* const kMetricsHeader;
std::string metrics_csv_row(const MetricsRow& row);

using MetricsSink = std::function<void(const MetricsRow&)>;
using EpochHook = std::function<void(int epoch, const Model&)>;

// Algorithm: per epoch, L reconstruction steps minimizing dae+decoder loss,
// then one EBM phase (semantic update on gamma, texture update on phi).
// Throws DivergenceError when a loss or parameter goes non-finite.
void train(Model& model, const Dataset& data, const NoiseSchedule& schedule, const TrainConfig& cfg,
           const MetricsSink& sink = {}, const EpochHook& hook = {});

}  // namespace debm
