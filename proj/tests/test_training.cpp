#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "debm/training.hpp"

using namespace debm;

namespace {

Architecture toy_arch(int hidden = 12, int dz = 2) {
    Architecture a;
    a.kind = DataKind::Vector;
    a.data_shape = {2};
    a.latent_dim = dz;
    a.hidden = hidden;
    return a;
}

SamplerConfig fast_sampler() {
    SamplerConfig cfg;
    cfg.latent_steps = 4;
    cfg.data_steps = 4;
    cfg.anneal_max = 0.5;
    cfg.anneal_min = 0.05;
    return cfg;
}

void zero_params(Model& m) {
    for (int i = 0; i < m.num_params(); ++i) {
        Tensor& t = m.param_mut(i);
        std::fill(t.data.begin(), t.data.end(), 0.0f);
    }
}

std::vector<Tensor> snapshot(const Model& m, const std::vector<int>& idx) {
    std::vector<Tensor> out;
    for (int i : idx) out.push_back(m.param(i));
    return out;
}

bool same_params(const Model& m, const std::vector<int>& idx, const std::vector<Tensor>& snap) {
    for (size_t k = 0; k < idx.size(); ++k)
        if (m.param(idx[k]).data != snap[k].data) return false;
    return true;
}

}  // namespace

TEST_CASE("adam: zero gradient with zero moments is a fixed point") {
    Model m(toy_arch(), 1);
    OptimizerState opt = make_optimizer(m);
    std::vector<Tensor> before;
    for (int i = 0; i < m.num_params(); ++i) before.push_back(m.param(i));
    GradVec g(size_t(m.num_params()));
    for (int i = 0; i < m.num_params(); ++i) g[size_t(i)] = Tensor(m.param(i).shape);  // zeros
    adam_step(opt, m, g, 0.1);
    for (int i = 0; i < m.num_params(); ++i) CHECK(m.param(i).data == before[size_t(i)].data);
    CHECK(opt.step_count == 1);
}

TEST_CASE("adam: first step moves every coordinate by at most lr (sign-normalized)") {
    Model m(toy_arch(), 2);
    OptimizerState opt = make_optimizer(m);
    Rng rng(3);
    GradVec g(size_t(m.num_params()));
    for (int i : m.phi_indices()) {
        g[size_t(i)] = Tensor(m.param(i).shape);
        for (auto& v : g[size_t(i)].data) v = rng.gaussianf();
    }
    std::vector<Tensor> before;
    for (int i = 0; i < m.num_params(); ++i) before.push_back(m.param(i));
    const double lr = 0.01;
    adam_step(opt, m, g, lr);
    for (int i : m.phi_indices())
        for (size_t j = 0; j < g[size_t(i)].data.size(); ++j) {
            double delta = double(m.param(i).data[j]) - before[size_t(i)].data[j];
            CHECK(std::abs(delta) <= lr * (1.0 + 1e-6));
            if (std::abs(g[size_t(i)].data[j]) > 1e-3)  // away from the eps regime
                CHECK(std::abs(delta) >= lr * 0.9);
        }
}

TEST_CASE("adam: two identical steps match the closed-form moment recursion") {
    Model m(toy_arch(4, 2), 4);
    OptimizerState opt = make_optimizer(m);
    const double b1 = 0.9, b2 = 0.999, lr = 1e-3, eps = 1e-8;
    int pi = m.phi_indices()[0];
    GradVec g(size_t(m.num_params()));
    g[size_t(pi)] = Tensor(m.param(pi).shape);
    for (size_t j = 0; j < g[size_t(pi)].data.size(); ++j) g[size_t(pi)].data[j] = 0.3f + 0.01f * float(j);

    adam_step(opt, m, g, lr, b1, b2, eps);
    adam_step(opt, m, g, lr, b1, b2, eps);

    const auto& slot = opt.slots[size_t(pi)];
    CHECK(slot.t == 2);
    for (size_t j = 0; j < g[size_t(pi)].data.size(); ++j) {
        double gj = g[size_t(pi)].data[j];
        CHECK(slot.m.data[j] == doctest::Approx((1.0 - b1 * b1) * gj).epsilon(1e-5));
        CHECK(slot.v.data[j] == doctest::Approx((1.0 - b2 * b2) * gj * gj).epsilon(1e-5));
    }
    // untouched parameters have untouched moments
    for (int i = 0; i < m.num_params(); ++i)
        if (i != pi) CHECK(opt.slots[size_t(i)].t == 0);
}

TEST_CASE("dae_loss: zero-weight model gives |x|^2; recomputation oracle") {
    Model m(toy_arch(), 5);
    zero_params(m);
    Tensor batch = Tensor::from({1, 2}, {1.0f, 1.0f});
    std::vector<double> sigmas = {0.3};
    Rng rng(6);
    CHECK(dae_loss(m, batch, sigmas, rng) == doctest::Approx(2.0));  // sum-of-squares convention

    // independent recomputation: replay the same eps draws against reconstruct()
    Model m2(toy_arch(), 7);
    Rng r1(8), r2(8);
    Tensor b2 = Tensor::from({3, 2}, {0.1f, -0.2f, 0.4f, 0.0f, -0.3f, 0.25f});
    std::vector<double> sg = {0.2, 0.5, 0.1};
    double loss = dae_loss(m2, b2, sg, r1);
    uint64_t key = r2.next_u64();
    double manual = 0.0;
    for (int i = 0; i < 3; ++i) {
        Rng s = Rng(key).fork(uint64_t(i));
        Tensor x = batch_item(b2, {2}, i);
        Tensor eps = gaussian_like({2}, sg[size_t(i)], s);
        Tensor xt = x;
        for (int j = 0; j < 2; ++j) xt.data[size_t(j)] += eps.data[size_t(j)];
        Tensor r = m2.reconstruct(xt, sg[size_t(i)]);
        for (int j = 0; j < 2; ++j) {
            double d = double(r.data[size_t(j)]) - x.data[size_t(j)];
            manual += d * d;
        }
    }
    manual /= 3.0;
    CHECK(loss == doctest::Approx(manual).epsilon(1e-6));
}

TEST_CASE("decoder_loss: non-negative, zero-weight closed form") {
    Model m(toy_arch(), 9);
    Rng rng(10);
    Tensor batch({4, 2});
    for (auto& v : batch.data) v = rng.gaussianf();
    std::vector<double> sigmas = {0.1, 0.2, 0.3, 0.4};
    CHECK(decoder_loss(m, batch, sigmas, rng) >= 0.0);

    zero_params(m);
    double expect = 0.0;
    for (float v : batch.data) expect += double(v) * v;
    expect /= 4.0;
    CHECK(decoder_loss(m, batch, sigmas, rng) == doctest::Approx(expect).epsilon(1e-6));
}

TEST_CASE("phase gradients vanish when positives equal negatives") {
    Model m(toy_arch(), 11);
    Rng rng(12);
    Tensor codes({5, 2});
    for (auto& v : codes.data) v = rng.gaussianf();
    std::vector<double> sigmas = {0.1, 0.2, 0.3, 0.2, 0.1};

    PhaseStats st;
    GradVec dg = semantic_phase_gradient(m, codes, codes, sigmas, rng, &st);
    for (int i : m.gamma_indices()) {
        REQUIRE(!dg[size_t(i)].empty());
        for (float v : dg[size_t(i)].data) CHECK(v == 0.0f);
    }
    CHECK(st.e_pos == st.e_neg);

    Tensor xs({5, 2});
    for (auto& v : xs.data) v = rng.gaussianf();
    GradVec dp = texture_phase_gradient(m, xs, xs, sigmas, rng, &st);
    for (int i : m.phi_indices()) {
        REQUIRE(!dp[size_t(i)].empty());
        for (float v : dp[size_t(i)].data) CHECK(v == 0.0f);
    }
}

TEST_CASE("one-parameter semantic chain rule matches the hand derivative") {
    // xh = gamma * z ; r = w * (xh + eps) ; U = (xh - r)^2 / (2 sigma^2)
    ProgramBuilder b;
    int z = b.input("z", {1});
    int gamma = b.input("gamma", {1, 1});
    int zb = b.input("zb", {1});  // zero bias
    int w = b.input("w", {1, 1});
    int eps = b.input("eps", {1});
    int isq = b.input("inv_sigma_sq", {});
    int xh = b.dense(z, gamma, zb);
    int xt = b.add(xh, eps);
    int r = b.dense(xt, w, zb);
    b.mark_output("u", b.mul(b.scale(b.mse(xh, r), 0.5f), isq));
    auto p = b.build();

    Rng rng(13);
    for (int t = 0; t < 30; ++t) {
        double zv = rng.gaussian(), gv = rng.gaussian(), wv = rng.gaussian(), sv = 0.2 + rng.uniform();
        double ev = sv * rng.gaussian();
        std::map<std::string, Tensor> at = {{"z", Tensor::from({1}, {float(zv)})},
                                            {"gamma", Tensor::from({1, 1}, {float(gv)})},
                                            {"zb", Tensor::zeros({1})},
                                            {"w", Tensor::from({1, 1}, {float(wv)})},
                                            {"eps", Tensor::from({1}, {float(ev)})},
                                            {"inv_sigma_sq", Tensor::scalar(float(1.0 / (sv * sv)))}};
        auto vg = value_and_grad(p, at, {"gamma"});
        // hand derivative via float-rounded intermediates
        double xhv = double(float(float(gv) * float(zv)));
        double rv = double(float(float(wv) * float(float(xhv) + float(ev))));
        double expect = (xhv - rv) * (zv - wv * zv) / (sv * sv);
        CHECK(vg.grads["gamma"].data[0] == doctest::Approx(expect).epsilon(5e-4));
    }
}

TEST_CASE("one-parameter texture chain rule matches the hand derivative") {
    // r = w * (x + eps); U = (x - r)^2 / (2 sigma^2); dU/dw = -(x - r)(x + eps) / sigma^2
    ProgramBuilder b;
    int x = b.input("x", {1});
    int w = b.input("w", {1, 1});
    int zb = b.input("zb", {1});
    int eps = b.input("eps", {1});
    int isq = b.input("inv_sigma_sq", {});
    int xt = b.add(x, eps);
    int r = b.dense(xt, w, zb);
    b.mark_output("u", b.mul(b.scale(b.mse(x, r), 0.5f), isq));
    auto p = b.build();

    Rng rng(14);
    for (int t = 0; t < 30; ++t) {
        double xv = rng.gaussian(), wv = rng.gaussian(), sv = 0.2 + rng.uniform();
        double ev = sv * rng.gaussian();
        std::map<std::string, Tensor> at = {{"x", Tensor::from({1}, {float(xv)})},
                                            {"w", Tensor::from({1, 1}, {float(wv)})},
                                            {"zb", Tensor::zeros({1})},
                                            {"eps", Tensor::from({1}, {float(ev)})},
                                            {"inv_sigma_sq", Tensor::scalar(float(1.0 / (sv * sv)))}};
        auto vg = value_and_grad(p, at, {"w"});
        double xtv = double(float(float(xv) + float(ev)));
        double rv = double(float(float(wv) * xtv));
        double expect = -(xv - rv) * xtv / (sv * sv);
        CHECK(vg.grads["w"].data[0] == doctest::Approx(expect).epsilon(5e-4));
    }
}

TEST_CASE("phase separation: semantic updates touch only gamma, texture only phi") {
    Model m(toy_arch(), 15);
    Rng rng(16);
    Tensor batch({6, 2});
    for (auto& v : batch.data) v = 0.5f * rng.gaussianf();
    std::vector<double> sigmas = {0.1, 0.2, 0.3, 0.1, 0.2, 0.3};
    OptimizerState opt = make_optimizer(m);
    SamplerConfig cfg = fast_sampler();

    auto phi_before = snapshot(m, m.phi_indices());
    GradVec dg = semantic_phase_update(m, batch, sigmas, cfg, rng);
    for (int i : m.phi_indices()) CHECK(dg[size_t(i)].empty());
    adam_step(opt, m, dg, 1e-3);
    CHECK(same_params(m, m.phi_indices(), phi_before));
    CHECK(!same_params(m, m.gamma_indices(), snapshot(Model(toy_arch(), 15), m.gamma_indices())));

    auto gamma_after_sem = snapshot(m, m.gamma_indices());
    GradVec dp = texture_phase_update(m, batch, sigmas, cfg, rng);
    for (int i : m.gamma_indices()) CHECK(dp[size_t(i)].empty());
    adam_step(opt, m, dp, 1e-3);
    CHECK(same_params(m, m.gamma_indices(), gamma_after_sem));
    CHECK(!same_params(m, m.phi_indices(), phi_before));
}

TEST_CASE("train: zero epochs returns initial params and no metrics") {
    Model m(toy_arch(), 17);
    Model copy = m;
    Rng rng(18);
    Dataset ds = gaussian_mixture(64, {{0.0, 0.0}}, 0.2, rng);
    NoiseSchedule sched = build_schedule(0.5, 0.05, 8);
    TrainConfig cfg;
    cfg.epochs = 0;
    cfg.batch_size = 8;
    cfg.sampler = fast_sampler();
    int rows = 0;
    train(m, ds, sched, cfg, [&](const MetricsRow&) { rows++; });
    CHECK(rows == 0);
    for (int i = 0; i < m.num_params(); ++i) CHECK(m.param(i).data == copy.param(i).data);
}

TEST_CASE("train: metrics bookkeeping (epochs x (L+1) rows) and determinism") {
    Rng rng(19);
    Dataset ds = gaussian_mixture(128, circle_centers(4, 0.6), 0.05, rng);
    NoiseSchedule sched = build_schedule(0.5, 0.05, 8);
    TrainConfig cfg;
    cfg.epochs = 4;
    cfg.recon_steps = 3;
    cfg.batch_size = 16;
    cfg.learning_rate = 1e-3;
    cfg.sampler = fast_sampler();
    cfg.seed = 99;

    auto run = [&](std::vector<std::string>& rows_out) {
        Model m(toy_arch(), 20);
        train(m, ds, sched, cfg, [&](const MetricsRow& r) { rows_out.push_back(metrics_csv_row(r)); });
        return m;
    };
    std::vector<std::string> rows1, rows2;
    Model m1 = run(rows1);
    Model m2 = run(rows2);
    CHECK(rows1.size() == size_t(cfg.epochs) * (size_t(cfg.recon_steps) + 1));
    CHECK(rows1 == rows2);
    for (int i = 0; i < m1.num_params(); ++i) CHECK(m1.param(i).data == m2.param(i).data);

    // recon rows carry losses, ebm rows carry the four energies
    CHECK(rows1[0].find("recon") != std::string::npos);
    CHECK(rows1[3].find("ebm") != std::string::npos);
}

TEST_CASE("train: decoder loss trends down on the toy set") {
    Rng rng(21);
    Dataset ds = gaussian_mixture(256, circle_centers(4, 0.6), 0.05, rng);
    NoiseSchedule sched = build_schedule(0.5, 0.05, 8);
    TrainConfig cfg;
    cfg.epochs = 40;
    cfg.recon_steps = 3;
    cfg.batch_size = 32;
    cfg.learning_rate = 3e-3;
    cfg.sampler = fast_sampler();
    cfg.seed = 5;

    std::vector<double> dec;
    Model m(toy_arch(24, 2), 22);
    train(m, ds, sched, cfg, [&](const MetricsRow& r) {
        if (r.phase == "recon") dec.push_back(r.loss_dec);
    });
    REQUIRE(dec.size() == 120);
    double head = 0, tail = 0;
    for (int i = 0; i < 15; ++i) head += dec[size_t(i)];
    for (int i = 0; i < 15; ++i) tail += dec[dec.size() - 1 - size_t(i)];
    CHECK(tail < head);
}

TEST_CASE("train: divergence guard aborts on absurd learning rates") {
    Rng rng(23);
    Dataset ds = gaussian_mixture(64, {{0.0, 0.0}}, 0.1, rng);
    NoiseSchedule sched = build_schedule(0.5, 0.05, 4);
    TrainConfig cfg;
    cfg.epochs = 200;
    cfg.recon_steps = 2;
    cfg.batch_size = 8;
    cfg.learning_rate = 1e18;
    cfg.sampler = fast_sampler();
    Model m(toy_arch(), 24);
    CHECK_THROWS_AS(train(m, ds, sched, cfg), DivergenceError);
}

TEST_CASE("grad clipping caps the global norm") {
    GradVec g(2);
    g[0] = Tensor::from({2}, {3.0f, 4.0f});
    g[1] = Tensor();  // absent
    CHECK(grad_norm(g) == doctest::Approx(5.0));
    clip_grads(g, 1.0);
    CHECK(grad_norm(g) == doctest::Approx(1.0).epsilon(1e-5));
    clip_grads(g, 10.0);  // already below: unchanged
    CHECK(grad_norm(g) == doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("metrics csv rows serialize NaN as empty fields") {
    MetricsRow r{3, "recon", 1.5, 0.25, std::nan(""), std::nan(""), std::nan(""), std::nan("")};
    CHECK(metrics_csv_row(r) == "3,recon,1.5,0.25,,,,");
}
