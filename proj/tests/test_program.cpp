#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <map>
#include <string>

#include "debm/program.hpp"
#include "debm/rng.hpp"

using namespace debm;

namespace {

Tensor randt(const Shape& s, Rng& rng, float scale = 1.0f) {
    Tensor t(s);
    for (auto& v : t.data) v = scale * rng.gaussianf();
    return t;
}

// relative L2 error across all gradients in the map, flattened
double rel_err_all(const std::map<std::string, Tensor>& approx, const std::map<std::string, Tensor>& exact) {
    double num = 0.0, den = 0.0;
    for (const auto& [name, e] : exact) {
        const Tensor& a = approx.at(name);
        REQUIRE(a.shape == e.shape);
        for (size_t i = 0; i < e.data.size(); ++i) {
            double d = double(a.data[i]) - e.data[i];
            num += d * d;
            den += double(e.data[i]) * e.data[i];
        }
    }
    if (den == 0.0) return std::sqrt(num);
    return std::sqrt(num / den);
}

ValueGrad vg_of(const std::shared_ptr<const Program>& p, const std::map<std::string, Tensor>& at,
                const std::vector<std::string>& wrt) {
    return value_and_grad(p, at, wrt);
}

}  // namespace

TEST_CASE("forward: identity dense layer") {
    ProgramBuilder b;
    int x = b.input("x", {2});
    int w = b.input("w", {2, 2});
    int bias = b.input("b", {2});
    b.mark_output("y", b.dense(x, w, bias));
    auto p = b.build();
    auto out = forward(p, {{"x", Tensor::from({2}, {1, 2})},
                           {"w", Tensor::from({2, 2}, {1, 0, 0, 1})},
                           {"b", Tensor::zeros({2})}});
    CHECK(out["y"].data == std::vector<float>{1, 2});
}

TEST_CASE("forward: mse(x, x) is zero; 1x1 identity conv is identity") {
    ProgramBuilder b;
    int x = b.input("x", {3});
    b.mark_output("l", b.mse(x, x));
    auto p = b.build();
    Rng rng(3);
    for (int i = 0; i < 10; ++i) {
        auto out = forward(p, {{"x", randt({3}, rng)}});
        CHECK(out["l"].data[0] == 0.0f);
    }

    ProgramBuilder c;
    int xi = c.input("x", {1, 2, 2});
    int k = c.input("k", {1, 1, 1, 1});
    int bias = c.input("b", {1});
    c.mark_output("y", c.conv2d(xi, k, bias, 1, Padding::Same));
    auto pc = c.build();
    Tensor img = Tensor::from({1, 2, 2}, {1, 2, 3, 4});
    auto out = forward(pc, {{"x", img}, {"k", Tensor::from({1, 1, 1, 1}, {1})}, {"b", Tensor::zeros({1})}});
    CHECK(out["y"].data == img.data);
}

TEST_CASE("forward rejects shape mismatches naming the op") {
    ProgramBuilder b;
    int x = b.input("x", {3});
    int y = b.input("y", {4});
    try {
        b.add(x, y);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        CHECK(std::string(e.what()).find("add") != std::string::npos);
    }

    ProgramBuilder c;
    int xi = c.input("x", {3});
    int w = c.input("w", {2, 5});
    int bias = c.input("b", {2});
    CHECK_THROWS_AS(c.dense(xi, w, bias), ShapeError);
}

TEST_CASE("repeated evaluation is bit-identical") {
    ProgramBuilder b;
    int x = b.input("x", {8});
    int w = b.input("w", {8, 8});
    int bias = b.input("b", {8});
    int h = b.silu(b.dense(x, w, bias));
    b.mark_output("l", b.mse(h, x));
    auto p = b.build();
    Rng rng(17);
    std::map<std::string, Tensor> at = {{"x", randt({8}, rng)}, {"w", randt({8, 8}, rng)}, {"b", randt({8}, rng)}};
    auto o1 = forward(p, at);
    auto o2 = forward(p, at);
    CHECK(o1["l"].data == o2["l"].data);
    auto g1 = vg_of(p, at, {"x", "w"});
    auto g2 = vg_of(p, at, {"x", "w"});
    CHECK(g1.value == g2.value);
    CHECK(g1.grads["x"].data == g2.grads["x"].data);
    CHECK(g1.grads["w"].data == g2.grads["w"].data);
}

TEST_CASE("value_and_grad: f(x)=x^2 at 3") {
    ProgramBuilder b;
    int x = b.input("x", {});
    b.mark_output("f", b.mul(x, x));
    auto p = b.build();
    auto vg = vg_of(p, {{"x", Tensor::scalar(3.0f)}}, {"x"});
    CHECK(vg.value == doctest::Approx(9.0));
    CHECK(vg.grads["x"].data[0] == doctest::Approx(6.0));

    auto fd = finite_diff(p, {{"x", Tensor::scalar(3.0f)}}, {"x"}, 1e-3);
    CHECK(fd["x"].data[0] == doctest::Approx(6.0).epsilon(1e-5));
}

TEST_CASE("value_and_grad: least-squares closed form") {
    const int m = 3, n = 4;
    ProgramBuilder b;
    int v = b.input("v", {n});
    int w = b.input("w", {m, n});
    int bias = b.input("b", {m});
    int y = b.input("y", {m});
    b.mark_output("l", b.mse(b.dense(v, w, bias), y));
    auto p = b.build();

    Rng rng(23);
    for (int trial = 0; trial < 20; ++trial) {
        std::map<std::string, Tensor> at = {
            {"v", randt({n}, rng)}, {"w", randt({m, n}, rng)}, {"b", Tensor::zeros({m})}, {"y", randt({m}, rng)}};
        auto vg = vg_of(p, at, {"w"});
        // dL/dw_ij = 2 (w_i . v - y_i) v_j / m
        const Tensor& wt = at["w"];
        const Tensor& vt = at["v"];
        const Tensor& yt = at["y"];
        Tensor expect({m, n});
        for (int i = 0; i < m; ++i) {
            double r = 0;
            for (int j = 0; j < n; ++j) r += double(wt.data[size_t(i) * n + j]) * vt.data[j];
            r -= yt.data[i];
            for (int j = 0; j < n; ++j) expect.data[size_t(i) * n + j] = float(2.0 * r * vt.data[j] / m);
        }
        CHECK(rel_l2_err(vg.grads["w"], expect) < 1e-5);
    }
}

TEST_CASE("value_and_grad: constant function has zero gradient") {
    ProgramBuilder b;
    int x = b.input("x", {5});
    int c = b.input("c", {});
    (void)x;
    b.mark_output("f", b.mul(c, c));
    auto p = b.build();
    Rng rng(5);
    auto vg = vg_of(p, {{"x", randt({5}, rng)}, {"c", Tensor::scalar(2.5f)}}, {"x"});
    CHECK(vg.value == doctest::Approx(6.25));
    for (float g : vg.grads["x"].data) CHECK(g == 0.0f);
}

TEST_CASE("finite_diff: grad of mse(x, 0) at (1,1) is (1,1)") {
    ProgramBuilder b;
    int x = b.input("x", {2});
    int z = b.input("z", {2});
    b.mark_output("l", b.mse(x, z));
    auto p = b.build();
    auto fd = finite_diff(p, {{"x", Tensor::from({2}, {1, 1})}, {"z", Tensor::zeros({2})}}, {"x"}, 1e-3);
    CHECK(fd["x"].data[0] == doctest::Approx(1.0).epsilon(1e-3));
    CHECK(fd["x"].data[1] == doctest::Approx(1.0).epsilon(1e-3));
    CHECK_THROWS_AS(finite_diff(p, {{"x", Tensor::zeros({2})}, {"z", Tensor::zeros({2})}}, {"x"}, 0.0), ShapeError);
}

TEST_CASE("finite_diff agrees with value_and_grad on a 2-layer network") {
    const int d = 6, h = 10;
    ProgramBuilder b;
    int x = b.input("x", {d});
    int w0 = b.input("w0", {h, d});
    int b0 = b.input("b0", {h});
    int w1 = b.input("w1", {d, h});
    int b1 = b.input("b1", {d});
    int y = b.input("y", {d});
    int hid = b.silu(b.dense(x, w0, b0));
    b.mark_output("l", b.mse(b.dense(hid, w1, b1), y));
    auto p = b.build();

    Rng rng(31);
    std::map<std::string, Tensor> at = {{"x", randt({d}, rng)},      {"w0", randt({h, d}, rng, 0.5f)},
                                        {"b0", randt({h}, rng)},     {"w1", randt({d, h}, rng, 0.5f)},
                                        {"b1", randt({d}, rng)},     {"y", randt({d}, rng)}};
    std::vector<std::string> wrt = {"x", "w0", "b0", "w1", "b1"};
    auto vg = vg_of(p, at, wrt);
    auto fd = finite_diff(p, at, wrt, 1e-3);
    CHECK(rel_err_all(fd, vg.grads) < 1e-3);
}

// spec invariant: every primitive's reverse-mode gradient matches central
// differences at 100 random points
TEST_CASE("per-primitive gradients match finite differences at 100 random points") {
    struct PrimCase {
        std::string name;
        std::function<std::shared_ptr<const Program>()> build;
        std::function<std::map<std::string, Tensor>(Rng&)> draw;
        std::vector<std::string> wrt;
    };

    auto scalarize = [](ProgramBuilder& b, int node, int target) { b.mark_output("l", b.mse(node, target)); };

    std::vector<PrimCase> cases;

    cases.push_back({"dense",
                     [&] {
                         ProgramBuilder b;
                         int x = b.input("x", {4});
                         int w = b.input("w", {3, 4});
                         int bias = b.input("b", {3});
                         int t = b.input("t", {3});
                         b.mark_output("l", b.mse(b.dense(x, w, bias), t));
                         return b.build();
                     },
                     [](Rng& r) {
                         return std::map<std::string, Tensor>{{"x", randt({4}, r)},
                                                              {"w", randt({3, 4}, r)},
                                                              {"b", randt({3}, r)},
                                                              {"t", randt({3}, r)}};
                     },
                     {"x", "w", "b"}});

    for (int stride : {1, 2})
        for (Padding pad : {Padding::Same, Padding::Valid}) {
            std::string nm = "conv2d_s" + std::to_string(stride) + (pad == Padding::Same ? "_same" : "_valid");
            cases.push_back({nm,
                             [stride, pad, &scalarize] {
                                 ProgramBuilder b;
                                 int x = b.input("x", {2, 6, 5});
                                 int k = b.input("k", {3, 2, 3, 3});
                                 int bias = b.input("b", {3});
                                 int y = b.conv2d(x, k, bias, stride, pad);
                                 ProgramBuilder& bb = b;
                                 int t = bb.input("t", bb.shape_of(y));
                                 scalarize(bb, y, t);
                                 return b.build();
                             },
                             [stride, pad](Rng& r) {
                                 auto g = kernels::make_conv_geom(2, 6, 5, 3, 3, 3, stride, pad == Padding::Same);
                                 return std::map<std::string, Tensor>{{"x", randt({2, 6, 5}, r)},
                                                                      {"k", randt({3, 2, 3, 3}, r, 0.5f)},
                                                                      {"b", randt({3}, r)},
                                                                      {"t", randt({g.cout, g.hout, g.wout}, r)}};
                             },
                             {"x", "k", "b"}});
        }

    cases.push_back({"conv2d_transpose",
                     [&scalarize] {
                         ProgramBuilder b;
                         int x = b.input("x", {3, 3, 3});
                         int k = b.input("k", {3, 2, 3, 3});
                         int bias = b.input("b", {2});
                         int y = b.conv2d_transpose(x, k, bias, 2, Padding::Same, 6, 6);
                         int t = b.input("t", b.shape_of(y));
                         scalarize(b, y, t);
                         return b.build();
                     },
                     [](Rng& r) {
                         return std::map<std::string, Tensor>{{"x", randt({3, 3, 3}, r)},
                                                              {"k", randt({3, 2, 3, 3}, r, 0.5f)},
                                                              {"b", randt({2}, r)},
                                                              {"t", randt({2, 6, 6}, r)}};
                     },
                     {"x", "k", "b"}});

    cases.push_back({"add_mul_scale",
                     [] {
                         ProgramBuilder b;
                         int x = b.input("x", {6});
                         int y = b.input("y", {6});
                         int t = b.input("t", {6});
                         b.mark_output("l", b.mse(b.scale(b.mul(b.add(x, y), y), 1.7f), t));
                         return b.build();
                     },
                     [](Rng& r) {
                         return std::map<std::string, Tensor>{
                             {"x", randt({6}, r)}, {"y", randt({6}, r)}, {"t", randt({6}, r)}};
                     },
                     {"x", "y"}});

    cases.push_back({"leaky_relu",
                     [] {
                         ProgramBuilder b;
                         int x = b.input("x", {8});
                         int t = b.input("t", {8});
                         b.mark_output("l", b.mse(b.leaky_relu(x, 0.2f), t));
                         return b.build();
                     },
                     [](Rng& r) {
                         // keep coordinates away from the kink so central
                         // differences see a single branch
                         Tensor x({8});
                         for (auto& v : x.data) {
                             float g = r.gaussianf();
                             v = (g >= 0 ? g + 0.05f : g - 0.05f);
                         }
                         return std::map<std::string, Tensor>{{"x", x}, {"t", randt({8}, r)}};
                     },
                     {"x"}});

    cases.push_back({"silu_sum",
                     [] {
                         ProgramBuilder b;
                         int x = b.input("x", {8});
                         b.mark_output("l", b.sum(b.silu(x)));
                         return b.build();
                     },
                     [](Rng& r) { return std::map<std::string, Tensor>{{"x", randt({8}, r)}}; },
                     {"x"}});

    cases.push_back({"concat_broadcast_reshape",
                     [] {
                         ProgramBuilder b;
                         int img = b.input("img", {2, 3, 3});
                         int s = b.input("s", {});
                         int chan = b.broadcast_channel(s, 3, 3);
                         int cat = b.concat_channels(img, chan);
                         int flat = b.reshape(cat, {27});
                         int t = b.input("t", {27});
                         b.mark_output("l", b.mse(flat, t));
                         return b.build();
                     },
                     [](Rng& r) {
                         return std::map<std::string, Tensor>{
                             {"img", randt({2, 3, 3}, r)}, {"s", randt({}, r)}, {"t", randt({27}, r)}};
                     },
                     {"img", "s"}});

    cases.push_back({"mse_both_sides",
                     [] {
                         ProgramBuilder b;
                         int a = b.input("a", {5});
                         int c = b.input("c", {5});
                         b.mark_output("l", b.mse(a, c));
                         return b.build();
                     },
                     [](Rng& r) {
                         return std::map<std::string, Tensor>{{"a", randt({5}, r)}, {"c", randt({5}, r)}};
                     },
                     {"a", "c"}});

    Rng rng(71);
    for (const auto& pc : cases) {
        CAPTURE(pc.name);
        auto p = pc.build();
        double worst = 0.0;
        for (int pt = 0; pt < 100; ++pt) {
            auto at = pc.draw(rng);
            auto vg = vg_of(p, at, pc.wrt);
            auto fd = finite_diff(p, at, pc.wrt, 1e-3);
            worst = std::max(worst, rel_err_all(fd, vg.grads));
        }
        CHECK(worst <= 1e-3);
    }
}

TEST_CASE("gradient is linear: grad(a f + b g) = a grad f + b grad g") {
    const float ca = 2.5f, cb = -1.25f;
    auto build = [&](bool combined) {
        ProgramBuilder b;
        int x = b.input("x", {4});
        int t = b.input("t", {4});
        int f = b.mse(b.silu(x), t);  // f
        int g = b.sum(b.mul(x, x));   // g
        if (combined)
            b.mark_output("l", b.add(b.scale(f, ca), b.scale(g, cb)));
        else {
            b.mark_output("f", f);
            b.mark_output("g", g);
        }
        return b.build();
    };
    auto pc = build(true);
    auto ps = build(false);
    Rng rng(13);
    for (int i = 0; i < 25; ++i) {
        std::map<std::string, Tensor> at = {{"x", randt({4}, rng)}, {"t", randt({4}, rng)}};
        auto both = value_and_grad(pc, at, {"x"});
        auto f = value_and_grad(ps, at, {"x"}, "f");
        auto g = value_and_grad(ps, at, {"x"}, "g");
        for (int j = 0; j < 4; ++j) {
            double expect = ca * double(f.grads["x"].data[j]) + cb * double(g.grads["x"].data[j]);
            CHECK(both.grads["x"].data[j] == doctest::Approx(expect).epsilon(1e-4));
        }
    }
}

TEST_CASE("backward can run twice from different outputs of one forward") {
    ProgramBuilder b;
    int x = b.input("x", {3});
    int y = b.input("y", {3});
    b.mark_output("f", b.mse(x, y));
    b.mark_output("g", b.sum(b.mul(x, x)));
    auto p = b.build();

    Workspace ws(p);
    Rng rng(77);
    Tensor xv = randt({3}, rng), yv = randt({3}, rng);
    ws.forward({{"x", xv}, {"y", yv}});
    auto gf = ws.backward("f", {"x"});
    auto gg = ws.backward("g", {"x"});
    for (int i = 0; i < 3; ++i) {
        CHECK(gf[0].data[i] == doctest::Approx(2.0 / 3.0 * (xv.data[i] - yv.data[i])).epsilon(1e-5));
        CHECK(gg[0].data[i] == doctest::Approx(2.0 * xv.data[i]).epsilon(1e-5));
    }
}
