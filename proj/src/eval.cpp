#include "debm/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include "debm/errors.hpp"
#include "debm/noise.hpp"

namespace debm {

Tensor dae_score(const Model& model, const Tensor& x_tilde, double sigma) {
    if (!(sigma > 0.0)) throw ConfigError("dae_score: sigma must be positive");
    Tensor r = model.reconstruct(x_tilde, sigma);
    Tensor out = r;
    double isq = 1.0 / (sigma * sigma);
    for (size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = static_cast<float>((double(r.data[i]) - x_tilde.data[i]) * isq);
    return out;
}

// ---- analytic Gaussian oracle ----

namespace {

// Cholesky factor of a small dense SPD matrix; throws on non-PD input.
std::vector<double> cholesky(const std::vector<double>& a, int d, const char* what) {
    std::vector<double> l(static_cast<size_t>(d) * d, 0.0);
    for (int i = 0; i < d; ++i) {
        for (int j = 0; j <= i; ++j) {
            double s = a[static_cast<size_t>(i) * d + j];
            for (int k = 0; k < j; ++k) s -= l[static_cast<size_t>(i) * d + k] * l[static_cast<size_t>(j) * d + k];
            if (i == j) {
                if (s <= 0.0) throw ConfigError(std::string(what) + ": matrix is not positive definite");
                l[static_cast<size_t>(i) * d + i] = std::sqrt(s);
            } else {
                l[static_cast<size_t>(i) * d + j] = s / l[static_cast<size_t>(j) * d + j];
            }
        }
    }
    return l;
}

// solve (L L^T) x = b
std::vector<double> chol_solve(const std::vector<double>& l, int d, const std::vector<double>& b) {
    std::vector<double> y(static_cast<size_t>(d));
    for (int i = 0; i < d; ++i) {
        double s = b[static_cast<size_t>(i)];
        for (int k = 0; k < i; ++k) s -= l[static_cast<size_t>(i) * d + k] * y[static_cast<size_t>(k)];
        y[static_cast<size_t>(i)] = s / l[static_cast<size_t>(i) * d + i];
    }
    std::vector<double> x(static_cast<size_t>(d));
    for (int i = d - 1; i >= 0; --i) {
        double s = y[static_cast<size_t>(i)];
        for (int k = i + 1; k < d; ++k) s -= l[static_cast<size_t>(k) * d + i] * x[static_cast<size_t>(k)];
        x[static_cast<size_t>(i)] = s / l[static_cast<size_t>(i) * d + i];
    }
    return x;
}

std::vector<double> smoothed_cov(const Tensor& sigma_mat, double sigma, int d) {
    std::vector<double> a(static_cast<size_t>(d) * d);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j)
            a[static_cast<size_t>(i) * d + j] =
                double(sigma_mat.data[static_cast<size_t>(i) * d + j]) + (i == j ? sigma * sigma : 0.0);
    return a;
}

}  // namespace

Tensor analytic_gaussian_score(const Tensor& mu, const Tensor& sigma_mat, double sigma, const Tensor& x_tilde) {
    int d = mu.shape.size() == 1 ? mu.shape[0] : -1;
    if (d <= 0) throw ConfigError("analytic_gaussian_score: mu must be a vector");
    if (sigma_mat.shape != Shape{d, d}) throw ConfigError("analytic_gaussian_score: Sigma must be [d,d]");
    auto l = cholesky(smoothed_cov(sigma_mat, sigma, d), d, "analytic_gaussian_score");

    auto score_one = [&](const Tensor& x) {
        std::vector<double> diff(static_cast<size_t>(d));
        for (int i = 0; i < d; ++i) diff[static_cast<size_t>(i)] = double(x.data[static_cast<size_t>(i)]) - mu.data[static_cast<size_t>(i)];
        auto sol = chol_solve(l, d, diff);
        Tensor s({d});
        for (int i = 0; i < d; ++i) s.data[static_cast<size_t>(i)] = static_cast<float>(-sol[static_cast<size_t>(i)]);
        return s;
    };

    if (x_tilde.shape == mu.shape) return score_one(x_tilde);
    int n = batch_count(x_tilde, mu.shape);
    Tensor out({n, d});
    for (int i = 0; i < n; ++i) set_batch_item(out, mu.shape, i, score_one(batch_item(x_tilde, mu.shape, i)));
    return out;
}

double gaussian_log_density(const Tensor& mu, const Tensor& sigma_mat, double sigma, const Tensor& x) {
    int d = mu.shape[0];
    auto a = smoothed_cov(sigma_mat, sigma, d);
    auto l = cholesky(a, d, "gaussian_log_density");
    std::vector<double> diff(static_cast<size_t>(d));
    for (int i = 0; i < d; ++i) diff[static_cast<size_t>(i)] = double(x.data[static_cast<size_t>(i)]) - mu.data[static_cast<size_t>(i)];
    auto sol = chol_solve(l, d, diff);
    double quad = 0.0, logdet = 0.0;
    for (int i = 0; i < d; ++i) {
        quad += diff[static_cast<size_t>(i)] * sol[static_cast<size_t>(i)];
        logdet += 2.0 * std::log(l[static_cast<size_t>(i) * d + i]);
    }
    return -0.5 * quad - 0.5 * logdet - 0.5 * d * std::log(2.0 * 3.14159265358979323846);
}

ScoreField score_field(const Model& model, const Tensor& points, double sigma, const Tensor& mu,
                       const Tensor& sigma_mat) {
    ScoreField f;
    f.points = points;
    f.estimated = dae_score(model, points, sigma);
    f.oracle = analytic_gaussian_score(mu, sigma_mat, sigma, points);

    int d = mu.shape[0];
    int n = batch_count(points, mu.shape);
    std::vector<double> rels;
    double cos_sum = 0.0;
    for (int i = 0; i < n; ++i) {
        double dot = 0, ne = 0, no = 0, dd = 0;
        for (int j = 0; j < d; ++j) {
            double e = f.estimated.data[static_cast<size_t>(i) * d + j];
            double o = f.oracle.data[static_cast<size_t>(i) * d + j];
            dot += e * o;
            ne += e * e;
            no += o * o;
            dd += (e - o) * (e - o);
        }
        cos_sum += (ne > 0 && no > 0) ? dot / std::sqrt(ne * no) : 0.0;
        rels.push_back(no > 0 ? std::sqrt(dd / no) : std::sqrt(dd));
    }
    f.mean_cos_sim = cos_sum / n;
    std::sort(rels.begin(), rels.end());
    f.median_rel_l2 = rels[rels.size() / 2];
    return f;
}

void write_score_field_csv(const std::string& path, const ScoreField& f) {
    std::ofstream os(path);
    if (!os) throw IoError(path + ": cannot open for writing");
    int d = f.points.shape[1];
    int n = f.points.shape[0];
    for (int j = 0; j < d; ++j) os << "x" << j << ",";
    for (int j = 0; j < d; ++j) os << "est" << j << ",";
    for (int j = 0; j < d; ++j) os << "oracle" << j << (j + 1 < d ? "," : "\n");
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < d; ++j) os << f.points.data[static_cast<size_t>(i) * d + j] << ",";
        for (int j = 0; j < d; ++j) os << f.estimated.data[static_cast<size_t>(i) * d + j] << ",";
        for (int j = 0; j < d; ++j) os << f.oracle.data[static_cast<size_t>(i) * d + j] << (j + 1 < d ? "," : "\n");
    }
}

GradIdentityReport grad_identity_check(const Model& model, const Tensor& x, double sigma, uint64_t seed) {
    if (!(sigma > 0.0)) throw ConfigError("grad_identity_check: sigma must be positive");
    Rng rng(seed);
    Tensor eps = gaussian_like(model.arch().data_shape, sigma, rng);

    Tensor autodiff = model.grad_texture_energy(x, sigma, eps);

    // explicit two-term decomposition: u - J^T u with u = (x - r(x~)) / sigma^2
    Tensor xt = x;
    for (size_t i = 0; i < xt.data.size(); ++i) xt.data[i] += eps.data[i];
    Tensor r = model.reconstruct(xt, sigma);
    Tensor u(x.shape);
    double isq = 1.0 / (sigma * sigma);
    for (size_t i = 0; i < u.data.size(); ++i) u.data[i] = static_cast<float>((double(x.data[i]) - r.data[i]) * isq);

    std::map<std::string, Tensor> at = {
        {"u", u}, {"x_tilde", xt}, {"log_sigma", Tensor::scalar(static_cast<float>(std::log(sigma)))}};
    const auto& prog = model.vjp_program();
    for (int i = 0; i < model.num_params(); ++i)
        if (prog->has_input(model.param_name(i))) at[model.param_name(i)] = model.param(i);
    auto vg = value_and_grad(prog, at, {"x_tilde"}, "dot");

    Tensor decomp = u;
    for (size_t i = 0; i < decomp.data.size(); ++i) decomp.data[i] -= vg.grads["x_tilde"].data[i];

    GradIdentityReport rep;
    rep.autodiff_norm = l2_norm(autodiff);
    rep.decomposition_norm = l2_norm(decomp);
    rep.rel_err = rel_l2_err(autodiff, decomp);
    return rep;
}

std::vector<double> jacobian_spectrum(const Model& model, const Tensor& x, double sigma) {
    if (!(sigma > 0.0)) throw ConfigError("jacobian_spectrum: sigma must be positive");
    int d = model.data_dim();
    if (d > 64) throw ConfigError("jacobian_spectrum: data dimensionality " + std::to_string(d) + " exceeds 64");
    if (x.shape != model.arch().data_shape) throw ShapeError("jacobian_spectrum: x has the wrong shape");

    // rows of J via one VJP per output coordinate
    const auto& prog = model.vjp_program();
    std::map<std::string, Tensor> at = {{"u", Tensor(model.arch().data_shape)},
                                        {"x_tilde", x},
                                        {"log_sigma", Tensor::scalar(static_cast<float>(std::log(sigma)))}};
    for (int i = 0; i < model.num_params(); ++i)
        if (prog->has_input(model.param_name(i))) at[model.param_name(i)] = model.param(i);

    std::vector<double> jac(static_cast<size_t>(d) * d);
    for (int row = 0; row < d; ++row) {
        Tensor u(model.arch().data_shape);
        u.data[static_cast<size_t>(row)] = 1.0f;
        at["u"] = u;
        auto vg = value_and_grad(prog, at, {"x_tilde"}, "dot");
        for (int col = 0; col < d; ++col)
            jac[static_cast<size_t>(row) * d + col] = vg.grads["x_tilde"].data[static_cast<size_t>(col)];
    }

    // singular values via Jacobi iteration on J^T J
    std::vector<double> m(static_cast<size_t>(d) * d, 0.0);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) {
            double s = 0;
            for (int k = 0; k < d; ++k) s += jac[static_cast<size_t>(k) * d + i] * jac[static_cast<size_t>(k) * d + j];
            m[static_cast<size_t>(i) * d + j] = s;
        }
    for (int sweep = 0; sweep < 64; ++sweep) {
        double off = 0.0;
        for (int p = 0; p < d; ++p)
            for (int q = p + 1; q < d; ++q) off += m[static_cast<size_t>(p) * d + q] * m[static_cast<size_t>(p) * d + q];
        if (off < 1e-22) break;
        for (int p = 0; p < d; ++p)
            for (int q = p + 1; q < d; ++q) {
                double apq = m[static_cast<size_t>(p) * d + q];
                if (std::abs(apq) < 1e-30) continue;
                double app = m[static_cast<size_t>(p) * d + p], aqq = m[static_cast<size_t>(q) * d + q];
                double theta = 0.5 * std::atan2(2.0 * apq, aqq - app);
                double c = std::cos(theta), s = std::sin(theta);
                for (int k = 0; k < d; ++k) {
                    double mkp = m[static_cast<size_t>(k) * d + p], mkq = m[static_cast<size_t>(k) * d + q];
                    m[static_cast<size_t>(k) * d + p] = c * mkp - s * mkq;
                    m[static_cast<size_t>(k) * d + q] = s * mkp + c * mkq;
                }
                for (int k = 0; k < d; ++k) {
                    double mpk = m[static_cast<size_t>(p) * d + k], mqk = m[static_cast<size_t>(q) * d + k];
                    m[static_cast<size_t>(p) * d + k] = c * mpk - s * mqk;
                    m[static_cast<size_t>(q) * d + k] = s * mpk + c * mqk;
                }
            }
    }
    std::vector<double> sv(static_cast<size_t>(d));
    for (int i = 0; i < d; ++i) sv[static_cast<size_t>(i)] = std::sqrt(std::max(0.0, m[static_cast<size_t>(i) * d + i]));
    std::sort(sv.rbegin(), sv.rend());
    return sv;
}

double auroc(std::span<const double> pos, std::span<const double> neg) {
    if (pos.empty() || neg.empty()) throw ConfigError("auroc: empty score list");
    struct Item {
        double v;
        bool is_pos;
    };
    std::vector<Item> all;
    all.reserve(pos.size() + neg.size());
    for (double v : pos) all.push_back({v, true});
    for (double v : neg) all.push_back({v, false});
    std::sort(all.begin(), all.end(), [](const Item& a, const Item& b) { return a.v < b.v; });

    // rank sum with average ranks over ties (Mann-Whitney)
    double rank_sum_pos = 0.0;
    size_t i = 0;
    while (i < all.size()) {
        size_t j = i;
        while (j < all.size() && all[j].v == all[i].v) ++j;
        double avg_rank = 0.5 * (double(i + 1) + double(j));  // 1-based
        for (size_t k = i; k < j; ++k)
            if (all[k].is_pos) rank_sum_pos += avg_rank;
        i = j;
    }
    double np = static_cast<double>(pos.size()), nn = static_cast<double>(neg.size());
    return (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn);
}

namespace {
double sq_dist(const float* a, const float* b, int d) {
    double s = 0;
    for (int i = 0; i < d; ++i) {
        double t = double(a[i]) - b[i];
        s += t * t;
    }
    return s;
}
}  // namespace

double mmd(const Tensor& a, const Tensor& b, double bandwidth, bool unbiased) {
    if (a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[1])
        throw ConfigError("mmd: expects [n,d] and [m,d] sample sets");
    if (!(bandwidth > 0.0)) throw ConfigError("mmd: bandwidth must be positive");
    int m = a.shape[0], n = b.shape[0], d = a.shape[1];
    if (m < (unbiased ? 2 : 1) || n < (unbiased ? 2 : 1)) throw ConfigError("mmd: sets too small");
    double g = 1.0 / (2.0 * bandwidth * bandwidth);

    double kaa = 0.0, kbb = 0.0, kab = 0.0;
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j) {
            if (unbiased && i == j) continue;
            kaa += std::exp(-g * sq_dist(&a.data[size_t(i) * d], &a.data[size_t(j) * d], d));
        }
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            if (unbiased && i == j) continue;
            kbb += std::exp(-g * sq_dist(&b.data[size_t(i) * d], &b.data[size_t(j) * d], d));
        }
#pragma omp parallel for schedule(static) reduction(+ : kab)
    for (int i = 0; i < m; ++i) {
        double row = 0.0;
        for (int j = 0; j < n; ++j) row += std::exp(-g * sq_dist(&a.data[size_t(i) * d], &b.data[size_t(j) * d], d));
        kab += row;
    }
    double ta = unbiased ? kaa / (double(m) * (m - 1)) : kaa / (double(m) * m);
    double tb = unbiased ? kbb / (double(n) * (n - 1)) : kbb / (double(n) * n);
    return ta + tb - 2.0 * kab / (double(m) * n);
}

double median_pairwise_distance(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[1])
        throw ConfigError("median_pairwise_distance: expects [n,d] sets");
    int m = a.shape[0], n = b.shape[0], d = a.shape[1];
    std::vector<double> dist;
    dist.reserve(size_t(m) * n);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) dist.push_back(std::sqrt(sq_dist(&a.data[size_t(i) * d], &b.data[size_t(j) * d], d)));
    std::nth_element(dist.begin(), dist.begin() + dist.size() / 2, dist.end());
    return dist[dist.size() / 2];
}

ModeCoverage mode_coverage(const Tensor& samples, const std::vector<std::vector<double>>& centers, double radius) {
    if (!(radius > 0.0)) throw ConfigError("mode_coverage: radius must be positive");
    if (samples.rank() != 2) throw ConfigError("mode_coverage: expects [n,d] samples");
    int n = samples.shape[0], d = samples.shape[1];
    ModeCoverage mc;
    mc.fractions.assign(centers.size(), 0.0);
    int unassigned = 0;
    for (int i = 0; i < n; ++i) {
        int best = -1;
        double bd = radius * radius;
        for (size_t k = 0; k < centers.size(); ++k) {
            double s = 0;
            for (int j = 0; j < d; ++j) {
                double t = double(samples.data[size_t(i) * d + j]) - centers[k][size_t(j)];
                s += t * t;
            }
            if (s <= bd) {
                bd = s;
                best = static_cast<int>(k);
            }
        }
        if (best < 0)
            unassigned++;
        else
            mc.fractions[static_cast<size_t>(best)] += 1.0;
    }
    for (auto& f : mc.fractions) f /= n;
    mc.unassigned = static_cast<double>(unassigned) / n;
    return mc;
}

std::vector<double> ood_score(const Model& model, const Tensor& batch, double sigma, int eps_draws, Rng& rng) {
    if (!(sigma > 0.0)) throw ConfigError("ood_score: sigma must be positive");
    if (eps_draws < 1) throw ConfigError("ood_score: eps_draws must be >= 1");
    int n = batch_count(batch, model.arch().data_shape);
    uint64_t key = rng.next_u64();
    std::vector<double> scores(static_cast<size_t>(n));
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i) {
        Rng s = Rng(key).fork(static_cast<uint64_t>(i));
        Tensor x = batch_item(batch, model.arch().data_shape, i);
        double acc = 0.0;
        for (int k = 0; k < eps_draws; ++k) acc += model.texture_energy(x, sigma, s).value;
        scores[static_cast<size_t>(i)] = -acc / eps_draws;
    }
    return scores;
}

OodReport ood_report(const Model& model, const Tensor& in_set, const Tensor& out_set, double sigma, int eps_draws,
                     Rng& rng) {
    OodReport r;
    r.sigma = sigma;
    r.in_scores = ood_score(model, in_set, sigma, eps_draws, rng);
    r.out_scores = ood_score(model, out_set, sigma, eps_draws, rng);
    r.auroc_value = auroc(r.in_scores, r.out_scores);
    return r;
}

void write_ood_csv(const std::string& path, const OodReport& r) {
    std::ofstream os(path);
    if (!os) throw IoError(path + ": cannot open for writing");
    os << "kind,value\n";
    os << "auroc," << r.auroc_value << "\n";
    os << "sigma," << r.sigma << "\n";
    for (double v : r.in_scores) os << "in," << v << "\n";
    for (double v : r.out_scores) os << "out," << v << "\n";
}

}  // namespace debm
