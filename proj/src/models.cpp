#include "debm/models.hpp"

#include <atomic>
#include <cmath>
#include <cstring>
#include <fstream>
#include <unordered_map>

#include "debm/data.hpp"
#include "debm/errors.hpp"
#include "debm/noise.hpp"

namespace debm {

namespace {

std::atomic<uint64_t> g_param_stamp{1};

struct ParamDef {
    std::string name;
    Shape shape;
    int group;  // 0 alpha (encoder), 1 beta (decoder), 2 gamma (semantic decoder)
};

std::vector<ParamDef> make_param_defs(const Architecture& a) {
    std::vector<ParamDef> defs;
    auto w = [&](const std::string& n, Shape s, int g) { defs.push_back({n + ".w", std::move(s), g}); };
    auto b = [&](const std::string& n, Shape s, int g) { defs.push_back({n + ".b", std::move(s), g}); };
    auto layer = [&](const std::string& n, Shape ws, Shape bs, int g) {
        w(n, std::move(ws), g);
        b(n, std::move(bs), g);
    };
    if (a.kind == DataKind::Vector) {
        int d = a.data_shape[0], nh = a.hidden, dz = a.latent_dim;
        layer("enc.0", {nh, d + 1}, {nh}, 0);
        layer("enc.1", {nh, nh}, {nh}, 0);
        layer("enc.2", {dz, nh}, {dz}, 0);
        layer("dec.0", {nh, dz}, {nh}, 1);
        layer("dec.1", {nh, 2 * nh}, {nh}, 1);
        layer("dec.2", {d, nh}, {d}, 1);
        layer("sem.0", {nh, dz}, {nh}, 2);
        layer("sem.1", {nh, nh}, {nh}, 2);
        layer("sem.2", {d, nh}, {d}, 2);
    } else {
        int c = a.data_shape[0], h = a.data_shape[1], wd = a.data_shape[2];
        int bc = a.hidden, dz = a.latent_dim;
        int h8 = h / 8, w8 = wd / 8;
        int nf = 4 * bc * h8 * w8;
        layer("enc.0", {bc, c + 1, 3, 3}, {bc}, 0);
        layer("enc.1", {2 * bc, bc, 3, 3}, {2 * bc}, 0);
        layer("enc.2", {4 * bc, 2 * bc, 3, 3}, {4 * bc}, 0);
        layer("enc.3", {4 * bc, 4 * bc, 3, 3}, {4 * bc}, 0);
        layer("enc.4", {dz, nf}, {dz}, 0);
        layer("dec.0", {nf, dz}, {nf}, 1);
        layer("dec.1", {4 * bc, 2 * bc, 3, 3}, {2 * bc}, 1);  // transpose
        layer("dec.2", {2 * bc, 6 * bc, 3, 3}, {2 * bc}, 1);
        layer("dec.3", {2 * bc, bc, 3, 3}, {bc}, 1);  // transpose
        layer("dec.4", {bc, 3 * bc, 3, 3}, {bc}, 1);
        layer("dec.5", {bc, bc, 3, 3}, {bc}, 1);  // transpose
        layer("dec.6", {bc, 2 * bc, 3, 3}, {bc}, 1);
        layer("dec.7", {c, bc, 3, 3}, {c}, 1);
        layer("sem.0", {nf, dz}, {nf}, 2);
        layer("sem.1", {4 * bc, 2 * bc, 3, 3}, {2 * bc}, 2);  // transpose
        layer("sem.2", {2 * bc, 2 * bc, 3, 3}, {2 * bc}, 2);
        layer("sem.3", {2 * bc, bc, 3, 3}, {bc}, 2);  // transpose
        layer("sem.4", {bc, bc, 3, 3}, {bc}, 2);
        layer("sem.5", {bc, bc, 3, 3}, {bc}, 2);  // transpose
        layer("sem.6", {bc, bc, 3, 3}, {bc}, 2);
        layer("sem.7", {c, bc, 3, 3}, {c}, 2);
    }
    return defs;
}

// memoizing creator of parameter input nodes inside one program
struct ParamInputs {
    ProgramBuilder& b;
    const std::vector<ParamDef>& defs;
    const std::unordered_map<std::string, int>& index;
    std::unordered_map<std::string, int> made;
    std::vector<std::pair<int, int>> binds;  // (input node, registry idx)

    int operator()(const std::string& name) {
        auto it = made.find(name);
        if (it != made.end()) return it->second;
        auto di = index.find(name);
        if (di == index.end()) throw ShapeError("unknown parameter '" + name + "'");
        int id = b.input(name, defs[static_cast<size_t>(di->second)].shape);
        made.emplace(name, id);
        binds.emplace_back(id, di->second);
        return id;
    }
};

struct EncOut {
    int z;
    std::vector<int> skips;
};

EncOut build_encoder(ProgramBuilder& b, const Architecture& a, ParamInputs& P, int x_tilde, int log_sigma) {
    if (a.kind == DataKind::Vector) {
        int cat = b.concat_channels(x_tilde, b.reshape(log_sigma, {1}));
        int h1 = b.silu(b.dense(cat, P("enc.0.w"), P("enc.0.b")));
        int h2 = b.silu(b.dense(h1, P("enc.1.w"), P("enc.1.b")));
        int z = b.dense(h2, P("enc.2.w"), P("enc.2.b"));
        return {z, {h1}};
    }
    int h = a.data_shape[1], w = a.data_shape[2];
    int cat = b.concat_channels(x_tilde, b.broadcast_channel(log_sigma, h, w));
    int s0 = b.silu(b.conv2d(cat, P("enc.0.w"), P("enc.0.b"), 1, Padding::Same));
    int s1 = b.silu(b.conv2d(s0, P("enc.1.w"), P("enc.1.b"), 2, Padding::Same));
    int s2 = b.silu(b.conv2d(s1, P("enc.2.w"), P("enc.2.b"), 2, Padding::Same));
    int s3 = b.silu(b.conv2d(s2, P("enc.3.w"), P("enc.3.b"), 2, Padding::Same));
    int flat = b.reshape(s3, {static_cast<int>(shape_numel(b.shape_of(s3)))});
    int z = b.dense(flat, P("enc.4.w"), P("enc.4.b"));
    return {z, {s0, s1, s2}};
}

int build_decoder(ProgramBuilder& b, const Architecture& a, ParamInputs& P, int z, const std::vector<int>& skips) {
    if (a.kind == DataKind::Vector) {
        int u1 = b.silu(b.dense(z, P("dec.0.w"), P("dec.0.b")));
        int cat = b.concat_channels(u1, skips[0]);
        int u2 = b.silu(b.dense(cat, P("dec.1.w"), P("dec.1.b")));
        return b.dense(u2, P("dec.2.w"), P("dec.2.b"));
    }
    int h = a.data_shape[1], w = a.data_shape[2];
    int bc = a.hidden;
    int t3 = b.silu(b.dense(z, P("dec.0.w"), P("dec.0.b")));
    int t3r = b.reshape(t3, {4 * bc, h / 8, w / 8});
    int u2 = b.silu(b.conv2d_transpose(t3r, P("dec.1.w"), P("dec.1.b"), 2, Padding::Same, h / 4, w / 4));
    int v2 = b.silu(b.conv2d(b.concat_channels(u2, skips[2]), P("dec.2.w"), P("dec.2.b"), 1, Padding::Same));
    int u1 = b.silu(b.conv2d_transpose(v2, P("dec.3.w"), P("dec.3.b"), 2, Padding::Same, h / 2, w / 2));
    int v1 = b.silu(b.conv2d(b.concat_channels(u1, skips[1]), P("dec.4.w"), P("dec.4.b"), 1, Padding::Same));
    int u0 = b.silu(b.conv2d_transpose(v1, P("dec.5.w"), P("dec.5.b"), 2, Padding::Same, h, w));
    int v0 = b.silu(b.conv2d(b.concat_channels(u0, skips[0]), P("dec.6.w"), P("dec.6.b"), 1, Padding::Same));
    return b.conv2d(v0, P("dec.7.w"), P("dec.7.b"), 1, Padding::Same);
}

int build_semantic_decoder(ProgramBuilder& b, const Architecture& a, ParamInputs& P, int z) {
    if (a.kind == DataKind::Vector) {
        int v1 = b.silu(b.dense(z, P("sem.0.w"), P("sem.0.b")));
        int v2 = b.silu(b.dense(v1, P("sem.1.w"), P("sem.1.b")));
        return b.dense(v2, P("sem.2.w"), P("sem.2.b"));
    }
    int h = a.data_shape[1], w = a.data_shape[2];
    int bc = a.hidden;
    int t3 = b.silu(b.dense(z, P("sem.0.w"), P("sem.0.b")));
    int t3r = b.reshape(t3, {4 * bc, h / 8, w / 8});
    int u2 = b.silu(b.conv2d_transpose(t3r, P("sem.1.w"), P("sem.1.b"), 2, Padding::Same, h / 4, w / 4));
    int v2 = b.silu(b.conv2d(u2, P("sem.2.w"), P("sem.2.b"), 1, Padding::Same));
    int u1 = b.silu(b.conv2d_transpose(v2, P("sem.3.w"), P("sem.3.b"), 2, Padding::Same, h / 2, w / 2));
    int v1 = b.silu(b.conv2d(u1, P("sem.4.w"), P("sem.4.b"), 1, Padding::Same));
    int u0 = b.silu(b.conv2d_transpose(v1, P("sem.5.w"), P("sem.5.b"), 2, Padding::Same, h, w));
    int v0 = b.silu(b.conv2d(u0, P("sem.6.w"), P("sem.6.b"), 1, Padding::Same));
    return b.conv2d(v0, P("sem.7.w"), P("sem.7.b"), 1, Padding::Same);
}

}  // namespace

void validate_architecture(const Architecture& a) {
    if (a.latent_dim < 1) throw ConfigError("architecture: latent_dim must be >= 1");
    if (a.hidden < 1) throw ConfigError("architecture: hidden must be >= 1");
    if (a.kind == DataKind::Vector) {
        if (a.data_shape.size() != 1 || a.data_shape[0] < 1)
            throw ConfigError("architecture: vector data shape must be [d], got " + shape_str(a.data_shape));
    } else {
        if (a.data_shape.size() != 3) throw ConfigError("architecture: image data shape must be [c,h,w]");
        int h = a.data_shape[1], w = a.data_shape[2];
        if (a.data_shape[0] < 1 || h < 8 || w < 8 || h % 8 || w % 8 || h > 64 || w > 64)
            throw ConfigError("architecture: image extents must be multiples of 8 in [8,64], got " +
                              shape_str(a.data_shape));
    }
}

struct Model::Programs {
    std::vector<ParamDef> defs;
    std::unordered_map<std::string, int> def_index;

    struct P {
        std::shared_ptr<const Program> prog;
        std::vector<std::pair<int, int>> binds;
        std::vector<int> phi_inputs, phi_idx;      // parameter inputs in group phi
        std::vector<int> gamma_inputs, gamma_idx;  // ... and gamma
    };
    P recon, semdec, texture, semantic, loss, vjp;

    int recon_x = -1, recon_ls = -1, recon_z = -1, recon_r = -1;
    int semdec_z = -1, semdec_xh = -1;
    int tex_x = -1, tex_eps = -1, tex_ls = -1, tex_isq = -1, tex_e = -1, tex_r = -1;
    int sem_z = -1, sem_eps = -1, sem_ls = -1, sem_isq = -1, sem_e = -1, sem_xh = -1;
    int loss_x = -1, loss_eps = -1, loss_ls = -1, loss_dae = -1, loss_dec = -1;
    int vjp_u = -1, vjp_x = -1, vjp_ls = -1, vjp_dot = -1;

    static std::shared_ptr<const Programs> build(const Architecture& a);

    void fill_groups(P& p) {
        for (auto [in, idx] : p.binds) {
            int g = defs[static_cast<size_t>(idx)].group;
            if (g == 2) {
                p.gamma_inputs.push_back(in);
                p.gamma_idx.push_back(idx);
            } else {
                p.phi_inputs.push_back(in);
                p.phi_idx.push_back(idx);
            }
        }
    }
};

std::shared_ptr<const Model::Programs> Model::Programs::build(const Architecture& a) {
    auto out = std::make_shared<Model::Programs>();
    out->defs = make_param_defs(a);
    for (size_t i = 0; i < out->defs.size(); ++i) out->def_index.emplace(out->defs[i].name, static_cast<int>(i));
    float d_half = 0.5f * static_cast<float>(a.data_dim());
    float d_full = static_cast<float>(a.data_dim());

    {  // recon: x_tilde, log_sigma -> z, r
        ProgramBuilder b;
        ParamInputs P{b, out->defs, out->def_index, {}, {}};
        out->recon_x = b.input("x_tilde", a.data_shape);
        out->recon_ls = b.input("log_sigma", {});
        EncOut e = build_encoder(b, a, P, out->recon_x, out->recon_ls);
        int r = build_decoder(b, a, P, e.z, e.skips);
        b.mark_output("z", e.z);
        b.mark_output("r", r);
        out->recon_z = e.z;
        out->recon_r = r;
        out->recon.prog = b.build();
        out->recon.binds = std::move(P.binds);
        out->fill_groups(out->recon);
    }
    {  // semdec: z -> x_hat
        ProgramBuilder b;
        ParamInputs P{b, out->defs, out->def_index, {}, {}};
        out->semdec_z = b.input("z", {a.latent_dim});
        int xh = build_semantic_decoder(b, a, P, out->semdec_z);
        b.mark_output("x_hat", xh);
        out->semdec_xh = xh;
        out->semdec.prog = b.build();
        out->semdec.binds = std::move(P.binds);
        out->fill_groups(out->semdec);
    }
    {  // texture energy: |x - r(x+eps, sigma)|^2 / (2 sigma^2)
        ProgramBuilder b;
        ParamInputs P{b, out->defs, out->def_index, {}, {}};
        out->tex_x = b.input("x", a.data_shape);
        out->tex_eps = b.input("eps", a.data_shape);
        out->tex_ls = b.input("log_sigma", {});
        out->tex_isq = b.input("inv_sigma_sq", {});
        int xt = b.add(out->tex_x, out->tex_eps);
        EncOut e = build_encoder(b, a, P, xt, out->tex_ls);
        int r = build_decoder(b, a, P, e.z, e.skips);
        int u = b.mul(b.scale(b.mse(out->tex_x, r), d_half), out->tex_isq);
        b.mark_output("energy", u);
        b.mark_output("r", r);
        out->tex_e = u;
        out->tex_r = r;
        out->texture.prog = b.build();
        out->texture.binds = std::move(P.binds);
        out->fill_groups(out->texture);
    }
    {  // semantic energy: |h(z) - r(h(z)+eps, sigma)|^2 / (2 sigma^2)
        ProgramBuilder b;
        ParamInputs P{b, out->defs, out->def_index, {}, {}};
        out->sem_z = b.input("z", {a.latent_dim});
        out->sem_eps = b.input("eps", a.data_shape);
        out->sem_ls = b.input("log_sigma", {});
        out->sem_isq = b.input("inv_sigma_sq", {});
        int xh = build_semantic_decoder(b, a, P, out->sem_z);
        int xt = b.add(xh, out->sem_eps);
        EncOut e = build_encoder(b, a, P, xt, out->sem_ls);
        int r = build_decoder(b, a, P, e.z, e.skips);
        int u = b.mul(b.scale(b.mse(xh, r), d_half), out->sem_isq);
        b.mark_output("energy", u);
        b.mark_output("x_hat", xh);
        out->sem_e = u;
        out->sem_xh = xh;
        out->semantic.prog = b.build();
        out->semantic.binds = std::move(P.binds);
        out->fill_groups(out->semantic);
    }
    {  // joint reconstruction losses (sum over dims per sample)
        ProgramBuilder b;
        ParamInputs P{b, out->defs, out->def_index, {}, {}};
        out->loss_x = b.input("x", a.data_shape);
        out->loss_eps = b.input("eps", a.data_shape);
        out->loss_ls = b.input("log_sigma", {});
        int xt = b.add(out->loss_x, out->loss_eps);
        EncOut e = build_encoder(b, a, P, xt, out->loss_ls);
        int r = build_decoder(b, a, P, e.z, e.skips);
        int xh = build_semantic_decoder(b, a, P, e.z);
        out->loss_dae = b.scale(b.mse(r, out->loss_x), d_full);
        out->loss_dec = b.scale(b.mse(xh, out->loss_x), d_full);
        b.mark_output("dae", out->loss_dae);
        b.mark_output("dec", out->loss_dec);
        out->loss.prog = b.build();
        out->loss.binds = std::move(P.binds);
        out->fill_groups(out->loss);
    }
    {  // vjp: <u, r(x_tilde, sigma)> for explicit Jacobian work
        ProgramBuilder b;
        ParamInputs P{b, out->defs, out->def_index, {}, {}};
        out->vjp_u = b.input("u", a.data_shape);
        out->vjp_x = b.input("x_tilde", a.data_shape);
        out->vjp_ls = b.input("log_sigma", {});
        EncOut e = build_encoder(b, a, P, out->vjp_x, out->vjp_ls);
        int r = build_decoder(b, a, P, e.z, e.skips);
        int dotn = b.sum(b.mul(out->vjp_u, r));
        b.mark_output("dot", dotn);
        out->vjp_dot = dotn;
        out->vjp.prog = b.build();
        out->vjp.binds = std::move(P.binds);
        out->fill_groups(out->vjp);
    }
    return out;
}

namespace {

struct WsEntry {
    std::unique_ptr<Workspace> ws;
    const void* model = nullptr;
    uint64_t stamp = 0;
};

WsEntry& ws_entry(const std::shared_ptr<const Program>& prog) {
    thread_local std::unordered_map<const Program*, WsEntry> cache;
    if (cache.size() > 64) cache.clear();
    WsEntry& e = cache[prog.get()];
    if (!e.ws) {
        e.ws = std::make_unique<Workspace>(prog);
        e.model = nullptr;
    }
    return e;
}

// Rebinds parameter tensors only when (model, version stamp) changed since
// the cached workspace was last used.
Workspace& bind_params(const void* key, uint64_t stamp, const std::vector<Tensor>& values,
                       const std::shared_ptr<const Program>& prog,
                       const std::vector<std::pair<int, int>>& binds) {
    WsEntry& e = ws_entry(prog);
    if (e.model != key || e.stamp != stamp) {
        for (auto [in, idx] : binds) e.ws->set_input(in, values[static_cast<size_t>(idx)]);
        e.model = key;
        e.stamp = stamp;
    }
    return *e.ws;
}

double check_sigma(double sigma) {
    if (!(sigma > 0.0)) throw ConfigError("sigma must be positive, got " + std::to_string(sigma));
    return sigma;
}

}  // namespace

Model::Model(const Architecture& arch) : arch_(arch) {
    validate_architecture(arch);
    progs_ = Programs::build(arch);
    values_.resize(progs_->defs.size());
    for (size_t i = 0; i < progs_->defs.size(); ++i) {
        int g = progs_->defs[i].group;
        if (g == 2)
            gamma_.push_back(static_cast<int>(i));
        else {
            phi_.push_back(static_cast<int>(i));
            if (g == 0) alpha_.push_back(static_cast<int>(i));
        }
    }
    stamp_ = ++g_param_stamp;
}

Model::Model(const Architecture& arch, uint64_t init_seed) : Model(arch) {
    Rng rng(init_seed);
    for (size_t i = 0; i < progs_->defs.size(); ++i) {
        const ParamDef& d = progs_->defs[i];
        Tensor t(d.shape);
        if (d.name.ends_with(".w")) {
            int64_t fan_in = d.shape.size() == 2 ? d.shape[1] : int64_t(d.shape[1]) * d.shape[2] * d.shape[3];
            float s = static_cast<float>(1.0 / std::sqrt(static_cast<double>(fan_in)));
            Rng r = rng.fork(i);
            for (auto& v : t.data) v = s * r.gaussianf();
        }
        values_[i] = std::move(t);
    }
}

const std::string& Model::param_name(int i) const { return progs_->defs[static_cast<size_t>(i)].name; }

Tensor& Model::param_mut(int i) {
    stamp_ = ++g_param_stamp;
    return values_[static_cast<size_t>(i)];
}

int Model::param_index(std::string_view name) const {
    auto it = progs_->def_index.find(std::string(name));
    if (it == progs_->def_index.end()) throw ConfigError("no parameter named '" + std::string(name) + "'");
    return it->second;
}

int64_t Model::total_param_count() const {
    int64_t n = 0;
    for (const auto& t : values_) n += t.numel();
    return n;
}

const std::shared_ptr<const Program>& Model::recon_program() const { return progs_->recon.prog; }
const std::shared_ptr<const Program>& Model::vjp_program() const { return progs_->vjp.prog; }

// ---- forward maps ----

Tensor Model::encode(const Tensor& x_tilde, double sigma) const {
    check_sigma(sigma);
    if (x_tilde.shape != arch_.data_shape) {
        int n = batch_count(x_tilde, arch_.data_shape);
        Tensor out({n, arch_.latent_dim});
#pragma omp parallel for schedule(static)
        for (int i = 0; i < n; ++i)
            set_batch_item(out, {arch_.latent_dim}, i, encode(batch_item(x_tilde, arch_.data_shape, i), sigma));
        return out;
    }
    Workspace& ws = bind_params(this, stamp_, values_, progs_->recon.prog, progs_->recon.binds);
    ws.set_input(progs_->recon_x, x_tilde);
    ws.set_input(progs_->recon_ls, Tensor::scalar(static_cast<float>(std::log(sigma))));
    ws.run();
    return ws.value(progs_->recon_z);
}

Tensor Model::reconstruct(const Tensor& x_tilde, double sigma) const {
    check_sigma(sigma);
    if (x_tilde.shape != arch_.data_shape) {
        int n = batch_count(x_tilde, arch_.data_shape);
        Shape os = x_tilde.shape;
        Tensor out(os);
#pragma omp parallel for schedule(static)
        for (int i = 0; i < n; ++i)
            set_batch_item(out, arch_.data_shape, i, reconstruct(batch_item(x_tilde, arch_.data_shape, i), sigma));
        return out;
    }
    Workspace& ws = bind_params(this, stamp_, values_, progs_->recon.prog, progs_->recon.binds);
    ws.set_input(progs_->recon_x, x_tilde);
    ws.set_input(progs_->recon_ls, Tensor::scalar(static_cast<float>(std::log(sigma))));
    ws.run();
    return ws.value(progs_->recon_r);
}

Tensor Model::semantic_decode(const Tensor& z) const {
    Shape zs = {arch_.latent_dim};
    if (z.shape != zs) {
        int n = batch_count(z, zs);
        Shape os = arch_.data_shape;
        os.insert(os.begin(), n);
        Tensor out(os);
#pragma omp parallel for schedule(static)
        for (int i = 0; i < n; ++i) set_batch_item(out, arch_.data_shape, i, semantic_decode(batch_item(z, zs, i)));
        return out;
    }
    Workspace& ws = bind_params(this, stamp_, values_, progs_->semdec.prog, progs_->semdec.binds);
    ws.set_input(progs_->semdec_z, z);
    ws.run();
    return ws.value(progs_->semdec_xh);
}

// ---- energies ----

namespace {
Tensor scalar_log(double sigma) { return Tensor::scalar(static_cast<float>(std::log(sigma))); }
Tensor scalar_isq(double sigma) { return Tensor::scalar(static_cast<float>(1.0 / (sigma * sigma))); }
}  // namespace

EnergyValue Model::texture_energy(const Tensor& x, double sigma, const Tensor& eps) const {
    check_sigma(sigma);
    Workspace& ws = bind_params(this, stamp_, values_, progs_->texture.prog, progs_->texture.binds);
    ws.set_input(progs_->tex_x, x);
    ws.set_input(progs_->tex_eps, eps);
    ws.set_input(progs_->tex_ls, scalar_log(sigma));
    ws.set_input(progs_->tex_isq, scalar_isq(sigma));
    ws.run();
    return {static_cast<double>(ws.value(progs_->tex_e).data[0]), sigma, 0};
}

EnergyValue Model::texture_energy(const Tensor& x, double sigma, Rng& rng) const {
    check_sigma(sigma);
    uint64_t key = rng.next_u64();
    Rng er(key);
    EnergyValue v = texture_energy(x, sigma, gaussian_like(arch_.data_shape, sigma, er));
    v.eps_seed = key;
    return v;
}

EnergyValue Model::semantic_energy(const Tensor& z, double sigma, const Tensor& eps) const {
    check_sigma(sigma);
    Workspace& ws = bind_params(this, stamp_, values_, progs_->semantic.prog, progs_->semantic.binds);
    ws.set_input(progs_->sem_z, z);
    ws.set_input(progs_->sem_eps, eps);
    ws.set_input(progs_->sem_ls, scalar_log(sigma));
    ws.set_input(progs_->sem_isq, scalar_isq(sigma));
    ws.run();
    return {static_cast<double>(ws.value(progs_->sem_e).data[0]), sigma, 0};
}

EnergyValue Model::semantic_energy(const Tensor& z, double sigma, Rng& rng) const {
    check_sigma(sigma);
    uint64_t key = rng.next_u64();
    Rng er(key);
    EnergyValue v = semantic_energy(z, sigma, gaussian_like(arch_.data_shape, sigma, er));
    v.eps_seed = key;
    return v;
}

// ---- gradients ----

Tensor Model::grad_texture_energy(const Tensor& x, double sigma, const Tensor& eps, double* energy) const {
    check_sigma(sigma);
    Workspace& ws = bind_params(this, stamp_, values_, progs_->texture.prog, progs_->texture.binds);
    ws.set_input(progs_->tex_x, x);
    ws.set_input(progs_->tex_eps, eps);
    ws.set_input(progs_->tex_ls, scalar_log(sigma));
    ws.set_input(progs_->tex_isq, scalar_isq(sigma));
    ws.run();
    if (energy) *energy = static_cast<double>(ws.value(progs_->tex_e).data[0]);
    auto g = ws.backward(progs_->tex_e, {progs_->tex_x});
    return std::move(g[0]);
}

Tensor Model::grad_semantic_energy(const Tensor& z, double sigma, const Tensor& eps, double* energy) const {
    check_sigma(sigma);
    Workspace& ws = bind_params(this, stamp_, values_, progs_->semantic.prog, progs_->semantic.binds);
    ws.set_input(progs_->sem_z, z);
    ws.set_input(progs_->sem_eps, eps);
    ws.set_input(progs_->sem_ls, scalar_log(sigma));
    ws.set_input(progs_->sem_isq, scalar_isq(sigma));
    ws.run();
    if (energy) *energy = static_cast<double>(ws.value(progs_->sem_e).data[0]);
    auto g = ws.backward(progs_->sem_e, {progs_->sem_z});
    return std::move(g[0]);
}

GradVec Model::grad_texture_energy_phi(const Tensor& x, double sigma, const Tensor& eps, double* energy) const {
    check_sigma(sigma);
    Workspace& ws = bind_params(this, stamp_, values_, progs_->texture.prog, progs_->texture.binds);
    ws.set_input(progs_->tex_x, x);
    ws.set_input(progs_->tex_eps, eps);
    ws.set_input(progs_->tex_ls, scalar_log(sigma));
    ws.set_input(progs_->tex_isq, scalar_isq(sigma));
    ws.run();
    if (energy) *energy = static_cast<double>(ws.value(progs_->tex_e).data[0]);
    auto g = ws.backward(progs_->tex_e, progs_->texture.phi_inputs);
    GradVec out(values_.size());
    for (size_t k = 0; k < g.size(); ++k) out[static_cast<size_t>(progs_->texture.phi_idx[k])] = std::move(g[k]);
    return out;
}

GradVec Model::grad_semantic_energy_gamma(const Tensor& z, double sigma, const Tensor& eps, double* energy) const {
    check_sigma(sigma);
    Workspace& ws = bind_params(this, stamp_, values_, progs_->semantic.prog, progs_->semantic.binds);
    ws.set_input(progs_->sem_z, z);
    ws.set_input(progs_->sem_eps, eps);
    ws.set_input(progs_->sem_ls, scalar_log(sigma));
    ws.set_input(progs_->sem_isq, scalar_isq(sigma));
    ws.run();
    if (energy) *energy = static_cast<double>(ws.value(progs_->sem_e).data[0]);
    auto g = ws.backward(progs_->sem_e, progs_->semantic.gamma_inputs);
    GradVec out(values_.size());
    for (size_t k = 0; k < g.size(); ++k) out[static_cast<size_t>(progs_->semantic.gamma_idx[k])] = std::move(g[k]);
    return out;
}

void Model::recon_grads(const Tensor& x, double sigma, Rng& rng, double* dae, double* dec, GradVec* phi_grads,
                        GradVec* gamma_grads) const {
    check_sigma(sigma);
    Workspace& ws = bind_params(this, stamp_, values_, progs_->loss.prog, progs_->loss.binds);
    ws.set_input(progs_->loss_x, x);
    ws.set_input(progs_->loss_eps, gaussian_like(arch_.data_shape, sigma, rng));
    ws.set_input(progs_->loss_ls, scalar_log(sigma));
    ws.run();
    if (dae) *dae = static_cast<double>(ws.value(progs_->loss_dae).data[0]);
    if (dec) *dec = static_cast<double>(ws.value(progs_->loss_dec).data[0]);
    if (phi_grads) {
        auto g = ws.backward(progs_->loss_dae, progs_->loss.phi_inputs);
        phi_grads->assign(values_.size(), Tensor());
        for (size_t k = 0; k < g.size(); ++k)
            (*phi_grads)[static_cast<size_t>(progs_->loss.phi_idx[k])] = std::move(g[k]);
    }
    if (gamma_grads) {
        auto g = ws.backward(progs_->loss_dec, progs_->loss.gamma_inputs);
        gamma_grads->assign(values_.size(), Tensor());
        for (size_t k = 0; k < g.size(); ++k)
            (*gamma_grads)[static_cast<size_t>(progs_->loss.gamma_idx[k])] = std::move(g[k]);
    }
}

// ---- checkpoint ----

namespace {
void put_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}
uint32_t get_u32(std::istream& is, const std::string& path, const char* what) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) throw IoError(path + ": truncated while reading " + what);
    return uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 | uint32_t(b[3]) << 24;
}
constexpr uint32_t kCkptVersion = 1;
}  // namespace

void Model::save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError(path + ": cannot open for writing");
    os.write("DEBM", 4);
    put_u32(os, kCkptVersion);
    put_u32(os, arch_.kind == DataKind::Vector ? 0u : 1u);
    put_u32(os, static_cast<uint32_t>(arch_.data_shape.size()));
    for (int e : arch_.data_shape) put_u32(os, static_cast<uint32_t>(e));
    put_u32(os, static_cast<uint32_t>(arch_.latent_dim));
    put_u32(os, static_cast<uint32_t>(arch_.hidden));
    put_u32(os, static_cast<uint32_t>(values_.size()));
    for (const Tensor& t : values_) write_det1(os, t);
    if (!os) throw IoError(path + ": write failed");
}

Model Model::load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError(path + ": cannot open");
    char magic[4];
    if (!is.read(magic, 4)) throw IoError(path + ": truncated while reading magic");
    if (std::memcmp(magic, "DEBM", 4) != 0) throw IoError(path + ": bad magic (expected DEBM)");
    uint32_t version = get_u32(is, path, "version");
    if (version != kCkptVersion) throw IoError(path + ": unsupported checkpoint version " + std::to_string(version));
    Architecture a;
    a.kind = get_u32(is, path, "kind") == 0 ? DataKind::Vector : DataKind::Image;
    uint32_t rank = get_u32(is, path, "rank");
    if (rank > 4) throw IoError(path + ": implausible data rank");
    a.data_shape.resize(rank);
    for (uint32_t i = 0; i < rank; ++i) a.data_shape[i] = static_cast<int>(get_u32(is, path, "extent"));
    a.latent_dim = static_cast<int>(get_u32(is, path, "latent_dim"));
    a.hidden = static_cast<int>(get_u32(is, path, "hidden"));
    try {
        validate_architecture(a);
    } catch (const ConfigError& e) {
        throw IoError(path + ": corrupt architecture descriptor: " + e.what());
    }
    Model m(a);
    uint32_t count = get_u32(is, path, "parameter count");
    if (count != m.values_.size())
        throw IoError(path + ": expected " + std::to_string(m.values_.size()) + " parameter tensors, header says " +
                      std::to_string(count));
    for (size_t i = 0; i < m.values_.size(); ++i) {
        Tensor t = read_det1(is, path + " [" + m.progs_->defs[i].name + "]");
        if (t.shape != m.progs_->defs[i].shape)
            throw IoError(path + ": parameter '" + m.progs_->defs[i].name + "' has shape " + shape_str(t.shape) +
                          ", expected " + shape_str(m.progs_->defs[i].shape));
        m.values_[i] = std::move(t);
    }
    return m;
}

}  // namespace debm
