#pragma once

#include <memory>
#include <string>
#include <vector>

#include "debm/program.hpp"
#include "debm/rng.hpp"
#include "debm/tensor.hpp"

namespace debm {

enum class DataKind { Vector, Image };

// Desk-scale shapes. Vector data: encoder d+1 -> hidden -> hidden -> latent
// with one skip from the first hidden layer into the decoder. Image data:
// a stem conv plus three stride-2 stages with skip connections at every
// resolution; spatial extents must be divisible by 8.
struct Architecture {
    DataKind kind = DataKind::Vector;
    Shape data_shape = {2};  // {d} or {c,h,w}
    int latent_dim = 2;
    int hidden = 64;  // MLP width / base channel count

    int data_dim() const { return static_cast<int>(shape_numel(data_shape)); }
    bool operator==(const Architecture&) const = default;
};

void validate_architecture(const Architecture& a);

struct EnergyValue {
    double value = 0.0;
    double sigma = 0.0;
    uint64_t eps_seed = 0;  // 0 when the caller fixed eps
};

// Gradients aligned with the model's parameter registry; an empty tensor
// means "no gradient for this parameter".
using GradVec = std::vector<Tensor>;

// The DAE r = g_beta(f_alpha(x_tilde, sigma)) with U-net skips, the
// semantic decoder h_gamma, and the two energies built on them. Parameters
// are grouped: phi = (alpha, beta) drives the DAE, gamma the semantic
// decoder. All evaluations are deterministic given (params, inputs, eps).
class Model {
public:
    Model(const Architecture& arch, uint64_t init_seed);

    const Architecture& arch() const { return arch_; }
    int data_dim() const { return arch_.data_dim(); }

    // parameter registry (fixed documented order: enc.*, dec.*, sem.*)
    int num_params() const { return static_cast<int>(values_.size()); }
    const std::string& param_name(int i) const;
    const Tensor& param(int i) const { return values_[static_cast<size_t>(i)]; }
    Tensor& param_mut(int i);  // bumps the parameter version stamp
    int param_index(std::string_view name) const;
    const std::vector<int>& phi_indices() const { return phi_; }
    const std::vector<int>& alpha_indices() const { return alpha_; }
    const std::vector<int>& gamma_indices() const { return gamma_; }
    int64_t total_param_count() const;

    // checkpoint I/O: magic "DEBM", version, architecture descriptor, then
    // every parameter tensor as a DET1 record in registry order
    void save(const std::string& path) const;
    static Model load(const std::string& path);

    // forward maps (accept one item or a batch with a leading n axis)
    Tensor encode(const Tensor& x_tilde, double sigma) const;
    Tensor reconstruct(const Tensor& x_tilde, double sigma) const;
    Tensor semantic_decode(const Tensor& z) const;

    // energies; sigma must be positive. The rng overloads draw
    // eps ~ N(0, sigma^2 I) and record the draw key.
    EnergyValue texture_energy(const Tensor& x, double sigma, Rng& rng) const;
    EnergyValue texture_energy(const Tensor& x, double sigma, const Tensor& eps) const;
    EnergyValue semantic_energy(const Tensor& z, double sigma, Rng& rng) const;
    EnergyValue semantic_energy(const Tensor& z, double sigma, const Tensor& eps) const;

    // exact gradients at fixed eps
    Tensor grad_texture_energy(const Tensor& x, double sigma, const Tensor& eps, double* energy = nullptr) const;
    Tensor grad_semantic_energy(const Tensor& z, double sigma, const Tensor& eps, double* energy = nullptr) const;

    // parameter-side gradients for the training phases
    GradVec grad_texture_energy_phi(const Tensor& x, double sigma, const Tensor& eps,
                                    double* energy = nullptr) const;
    GradVec grad_semantic_energy_gamma(const Tensor& z, double sigma, const Tensor& eps,
                                       double* energy = nullptr) const;

    // one reconstruction-phase sample: dae = |r - x|^2, dec = |h(f(x~)) - x|^2,
    // with d(dae)/d(phi) and d(dec)/d(gamma)
    void recon_grads(const Tensor& x, double sigma, Rng& rng, double* dae, double* dec, GradVec* phi_grads,
                     GradVec* gamma_grads) const;

    // programs exposed for the oracle suite
    const std::shared_ptr<const Program>& recon_program() const;
    const std::shared_ptr<const Program>& vjp_program() const;  // output "dot" = <u, r(x_tilde, sigma)>

    uint64_t params_stamp() const { return stamp_; }

private:
    struct Programs;
    explicit Model(const Architecture& arch);  // uninitialized values

    Architecture arch_;
    std::shared_ptr<const Programs> progs_;
    std::vector<Tensor> values_;
    std::vector<int> phi_, alpha_, gamma_;
    uint64_t stamp_ = 0;
};

}  // namespace debm
