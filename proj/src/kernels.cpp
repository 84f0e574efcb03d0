#include "debm/kernels.hpp"

#include <algorithm>
#include <cmath>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace debm::kernels {

namespace {

// Work units (outputs times inner length) below this run serially; entering
// a GOMP team costs microseconds, far more than a desk-scale kernel body.
// Batch- and chain-level loops provide the parallelism for small graphs.
constexpr int64_t kParallelCutoff = 1 << 18;

inline bool use_parallel(int64_t work) {
#ifdef _OPENMP
    return work >= kParallelCutoff && !omp_in_parallel();
#else
    (void)work;
    return false;
#endif
}

template <class F>
inline void par_for(int64_t n, int64_t work, F&& f) {
    if (use_parallel(work)) {
#pragma omp parallel for schedule(static)
        for (int64_t i = 0; i < n; ++i) f(i);
    } else {
        for (int64_t i = 0; i < n; ++i) f(i);
    }
}

}  // namespace

Conv2dGeom make_conv_geom(int cin, int hin, int win, int cout, int kh, int kw, int stride, bool same_pad) {
    if (stride != 1 && stride != 2)
        throw ShapeError("conv2d: stride must be 1 or 2, got " + std::to_string(stride));
    if (cin <= 0 || hin <= 0 || win <= 0 || cout <= 0 || kh <= 0 || kw <= 0)
        throw ShapeError("conv2d: non-positive geometry");
    Conv2dGeom g;
    g.cin = cin;
    g.hin = hin;
    g.win = win;
    g.cout = cout;
    g.kh = kh;
    g.kw = kw;
    g.stride = stride;
    if (same_pad) {
        g.hout = (hin + stride - 1) / stride;
        g.wout = (win + stride - 1) / stride;
        int pad_total_h = std::max(0, (g.hout - 1) * stride + kh - hin);
        int pad_total_w = std::max(0, (g.wout - 1) * stride + kw - win);
        g.pad_h = pad_total_h / 2;
        g.pad_w = pad_total_w / 2;
    } else {
        if (hin < kh || win < kw)
            throw ShapeError("conv2d: valid padding needs input >= kernel, got input " + std::to_string(hin) +
                             "x" + std::to_string(win) + " kernel " + std::to_string(kh) + "x" + std::to_string(kw));
        g.hout = (hin - kh) / stride + 1;
        g.wout = (win - kw) / stride + 1;
        g.pad_h = 0;
        g.pad_w = 0;
    }
    return g;
}

// ---- dense ----

void dense_forward(std::span<const float> w, std::span<const float> b, std::span<const float> x,
                   std::span<float> y, int m, int n) {
    par_for(m, int64_t(m) * n, [&](int64_t i) {
        double acc = b.empty() ? 0.0 : double(b[size_t(i)]);
        const float* row = w.data() + i * n;
        for (int j = 0; j < n; ++j) acc += double(row[j]) * x[size_t(j)];
        y[size_t(i)] = float(acc);
    });
}

void dense_backward_x(std::span<const float> w, std::span<const float> dy, std::span<float> dx, int m, int n) {
    par_for(n, int64_t(m) * n, [&](int64_t j) {
        double acc = 0.0;
        for (int i = 0; i < m; ++i) acc += double(w[size_t(i) * n + size_t(j)]) * dy[size_t(i)];
        dx[size_t(j)] += float(acc);
    });
}

void dense_backward_w(std::span<const float> x, std::span<const float> dy, std::span<float> dw, int m, int n) {
    par_for(m, int64_t(m) * n, [&](int64_t i) {
        float* row = dw.data() + i * n;
        double g = dy[size_t(i)];
        for (int j = 0; j < n; ++j) row[j] += float(g * x[size_t(j)]);
    });
}

// ---- conv2d ----

void conv2d_forward(const Conv2dGeom& g, std::span<const float> k, std::span<const float> b,
                    std::span<const float> x, std::span<float> y) {
    par_for(g.cout, g.out_numel() * g.cin * g.kh * g.kw, [&](int64_t co) {
        for (int oh = 0; oh < g.hout; ++oh)
            for (int ow = 0; ow < g.wout; ++ow) {
                double acc = b.empty() ? 0.0 : double(b[size_t(co)]);
                for (int ci = 0; ci < g.cin; ++ci)
                    for (int p = 0; p < g.kh; ++p) {
                        int ih = oh * g.stride - g.pad_h + p;
                        if (ih < 0 || ih >= g.hin) continue;
                        for (int q = 0; q < g.kw; ++q) {
                            int iw = ow * g.stride - g.pad_w + q;
                            if (iw < 0 || iw >= g.win) continue;
                            acc += double(k[size_t(((co * g.cin + ci) * g.kh + p) * g.kw + q)]) *
                                   x[size_t((int64_t(ci) * g.hin + ih) * g.win + iw)];
                        }
                    }
                y[size_t((co * g.hout + oh) * g.wout + ow)] = float(acc);
            }
    });
}

void conv2d_backward_x(const Conv2dGeom& g, std::span<const float> k, std::span<const float> dy,
                       std::span<float> dx) {
    par_for(g.cin, g.in_numel() * g.cout * g.kh * g.kw, [&](int64_t ci) {
        for (int ih = 0; ih < g.hin; ++ih)
            for (int iw = 0; iw < g.win; ++iw) {
                double acc = 0.0;
                for (int co = 0; co < g.cout; ++co)
                    for (int p = 0; p < g.kh; ++p) {
                        int t = ih + g.pad_h - p;
                        if (t < 0 || t % g.stride != 0) continue;
                        int oh = t / g.stride;
                        if (oh >= g.hout) continue;
                        for (int q = 0; q < g.kw; ++q) {
                            int u = iw + g.pad_w - q;
                            if (u < 0 || u % g.stride != 0) continue;
                            int ow = u / g.stride;
                            if (ow >= g.wout) continue;
                            acc += double(k[size_t(((int64_t(co) * g.cin + ci) * g.kh + p) * g.kw + q)]) *
                                   dy[size_t((int64_t(co) * g.hout + oh) * g.wout + ow)];
                        }
                    }
                dx[size_t((ci * g.hin + ih) * g.win + iw)] += float(acc);
            }
    });
}

void conv2d_backward_k(const Conv2dGeom& g, std::span<const float> x, std::span<const float> dy,
                       std::span<float> dk) {
    par_for(g.cout, g.k_numel() * g.hout * g.wout, [&](int64_t co) {
        for (int ci = 0; ci < g.cin; ++ci)
            for (int p = 0; p < g.kh; ++p)
                for (int q = 0; q < g.kw; ++q) {
                    double acc = 0.0;
                    for (int oh = 0; oh < g.hout; ++oh) {
                        int ih = oh * g.stride - g.pad_h + p;
                        if (ih < 0 || ih >= g.hin) continue;
                        for (int ow = 0; ow < g.wout; ++ow) {
                            int iw = ow * g.stride - g.pad_w + q;
                            if (iw < 0 || iw >= g.win) continue;
                            acc += double(dy[size_t((co * g.hout + oh) * g.wout + ow)]) *
                                   x[size_t((int64_t(ci) * g.hin + ih) * g.win + iw)];
                        }
                    }
                    dk[size_t(((co * g.cin + ci) * g.kh + p) * g.kw + q)] += float(acc);
                }
    });
}

void reduce_channels(std::span<const float> dy, std::span<float> db, int c, int hw) {
    for (int i = 0; i < c; ++i) {
        double acc = 0.0;
        const float* p = dy.data() + int64_t(i) * hw;
        for (int j = 0; j < hw; ++j) acc += p[j];
        db[i] += float(acc);
    }
}

// ---- elementwise ----

void ew_add(std::span<const float> a, std::span<const float> b, std::span<float> y) {
    par_for(int64_t(y.size()), int64_t(y.size()), [&](int64_t i) { y[size_t(i)] = a[size_t(i)] + b[size_t(i)]; });
}

void ew_mul(std::span<const float> a, std::span<const float> b, std::span<float> y) {
    par_for(int64_t(y.size()), int64_t(y.size()), [&](int64_t i) { y[size_t(i)] = a[size_t(i)] * b[size_t(i)]; });
}

void ew_scale(std::span<const float> x, float c, std::span<float> y) {
    par_for(int64_t(y.size()), int64_t(y.size()), [&](int64_t i) { y[size_t(i)] = x[size_t(i)] * c; });
}

void leaky_relu_forward(std::span<const float> x, float alpha, std::span<float> y) {
    par_for(int64_t(y.size()), int64_t(y.size()),
            [&](int64_t i) { y[size_t(i)] = x[size_t(i)] > 0.0f ? x[size_t(i)] : alpha * x[size_t(i)]; });
}

void leaky_relu_backward(std::span<const float> x, std::span<const float> dy, float alpha, std::span<float> dx) {
    par_for(int64_t(dx.size()), int64_t(dx.size()),
            [&](int64_t i) { dx[size_t(i)] += dy[size_t(i)] * (x[size_t(i)] > 0.0f ? 1.0f : alpha); });
}

void silu_forward(std::span<const float> x, std::span<float> y) {
    par_for(int64_t(y.size()), int64_t(y.size()) * 8, [&](int64_t i) {
        double s = 1.0 / (1.0 + std::exp(-double(x[size_t(i)])));
        y[size_t(i)] = float(double(x[size_t(i)]) * s);
    });
}

void silu_backward(std::span<const float> x, std::span<const float> dy, std::span<float> dx) {
    par_for(int64_t(dx.size()), int64_t(dx.size()) * 8, [&](int64_t i) {
        double s = 1.0 / (1.0 + std::exp(-double(x[size_t(i)])));
        dx[size_t(i)] += float(double(dy[size_t(i)]) * s * (1.0 + double(x[size_t(i)]) * (1.0 - s)));
    });
}

double sum_all(std::span<const float> x) {
    double acc = 0.0;
    for (float v : x) acc += v;
    return acc;
}

double mse_all(std::span<const float> a, std::span<const float> b) {
    double acc = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        double d = double(a[i]) - b[i];
        acc += d * d;
    }
    return a.empty() ? 0.0 : acc / double(a.size());
}

// ---- serial reference ----

namespace serial {

void dense_forward(std::span<const float> w, std::span<const float> b, std::span<const float> x,
                   std::span<float> y, int m, int n) {
    for (int i = 0; i < m; ++i) {
        double acc = b.empty() ? 0.0 : double(b[i]);
        const float* row = w.data() + int64_t(i) * n;
        for (int j = 0; j < n; ++j) acc += double(row[j]) * x[j];
        y[i] = float(acc);
    }
}

void dense_backward_x(std::span<const float> w, std::span<const float> dy, std::span<float> dx, int m, int n) {
    for (int j = 0; j < n; ++j) {
        double acc = 0.0;
        for (int i = 0; i < m; ++i) acc += double(w[int64_t(i) * n + j]) * dy[i];
        dx[j] += float(acc);
    }
}

void dense_backward_w(std::span<const float> x, std::span<const float> dy, std::span<float> dw, int m, int n) {
    for (int i = 0; i < m; ++i) {
        float* row = dw.data() + int64_t(i) * n;
        double g = dy[i];
        for (int j = 0; j < n; ++j) row[j] += float(g * x[j]);
    }
}

void conv2d_forward(const Conv2dGeom& g, std::span<const float> k, std::span<const float> b,
                    std::span<const float> x, std::span<float> y) {
    for (int co = 0; co < g.cout; ++co)
        for (int oh = 0; oh < g.hout; ++oh)
            for (int ow = 0; ow < g.wout; ++ow) {
                double acc = b.empty() ? 0.0 : double(b[co]);
                for (int ci = 0; ci < g.cin; ++ci)
                    for (int p = 0; p < g.kh; ++p) {
                        int ih = oh * g.stride - g.pad_h + p;
                        if (ih < 0 || ih >= g.hin) continue;
                        for (int q = 0; q < g.kw; ++q) {
                            int iw = ow * g.stride - g.pad_w + q;
                            if (iw < 0 || iw >= g.win) continue;
                            acc += double(k[((int64_t(co) * g.cin + ci) * g.kh + p) * g.kw + q]) *
                                   x[(int64_t(ci) * g.hin + ih) * g.win + iw];
                        }
                    }
                y[(int64_t(co) * g.hout + oh) * g.wout + ow] = float(acc);
            }
}

void conv2d_backward_x(const Conv2dGeom& g, std::span<const float> k, std::span<const float> dy,
                       std::span<float> dx) {
    for (int ci = 0; ci < g.cin; ++ci)
        for (int ih = 0; ih < g.hin; ++ih)
            for (int iw = 0; iw < g.win; ++iw) {
                double acc = 0.0;
                for (int co = 0; co < g.cout; ++co)
                    for (int p = 0; p < g.kh; ++p) {
                        int t = ih + g.pad_h - p;
                        if (t < 0 || t % g.stride != 0) continue;
                        int oh = t / g.stride;
                        if (oh >= g.hout) continue;
                        for (int q = 0; q < g.kw; ++q) {
                            int u = iw + g.pad_w - q;
                            if (u < 0 || u % g.stride != 0) continue;
                            int ow = u / g.stride;
                            if (ow >= g.wout) continue;
                            acc += double(k[((int64_t(co) * g.cin + ci) * g.kh + p) * g.kw + q]) *
                                   dy[(int64_t(co) * g.hout + oh) * g.wout + ow];
                        }
                    }
                dx[(int64_t(ci) * g.hin + ih) * g.win + iw] += float(acc);
            }
}

void conv2d_backward_k(const Conv2dGeom& g, std::span<const float> x, std::span<const float> dy,
                       std::span<float> dk) {
    for (int co = 0; co < g.cout; ++co)
        for (int ci = 0; ci < g.cin; ++ci)
            for (int p = 0; p < g.kh; ++p)
                for (int q = 0; q < g.kw; ++q) {
                    double acc = 0.0;
                    for (int oh = 0; oh < g.hout; ++oh) {
                        int ih = oh * g.stride - g.pad_h + p;
                        if (ih < 0 || ih >= g.hin) continue;
                        for (int ow = 0; ow < g.wout; ++ow) {
                            int iw = ow * g.stride - g.pad_w + q;
                            if (iw < 0 || iw >= g.win) continue;
                            acc += double(dy[(int64_t(co) * g.hout + oh) * g.wout + ow]) *
                                   x[(int64_t(ci) * g.hin + ih) * g.win + iw];
                        }
                    }
                    dk[((int64_t(co) * g.cin + ci) * g.kh + p) * g.kw + q] += float(acc);
                }
}

}  // namespace serial

}  // namespace debm::kernels
