#pragma once

#include <span>

#include "debm/tensor.hpp"

namespace debm::kernels {

// Geometry of a 2-D convolution mapping [cin, hin, win] -> [cout, hout, wout]
// with kernel [cout, cin, kh, kw]. Supports stride 1/2 and same/valid padding.
// The transposed convolution reuses the same geometry with input/output roles
// swapped (it is the exact adjoint of the forward map).
struct Conv2dGeom {
    int cin = 0, hin = 0, win = 0;
    int cout = 0, kh = 0, kw = 0;
    int stride = 1;
    int pad_h = 0, pad_w = 0;  // top/left zero padding
    int hout = 0, wout = 0;

    int64_t in_numel() const { return int64_t(cin) * hin * win; }
    int64_t out_numel() const { return int64_t(cout) * hout * wout; }
    int64_t k_numel() const { return int64_t(cout) * cin * kh * kw; }
};

Conv2dGeom make_conv_geom(int cin, int hin, int win, int cout, int kh, int kw, int stride, bool same_pad);

// Forward kernels overwrite their output; backward kernels accumulate into
// their output (callers zero the buffer once per backward pass). All inner
// products accumulate in double and every output element has a fixed
// sequential accumulation order, so results are bit-identical regardless of
// thread count.

// y[m] = W[m,n] x[n] + b[m]           (b may be empty)
void dense_forward(std::span<const float> w, std::span<const float> b, std::span<const float> x,
                   std::span<float> y, int m, int n);
void dense_backward_x(std::span<const float> w, std::span<const float> dy, std::span<float> dx, int m, int n);
void dense_backward_w(std::span<const float> x, std::span<const float> dy, std::span<float> dw, int m, int n);

void conv2d_forward(const Conv2dGeom& g, std::span<const float> k, std::span<const float> b,
                    std::span<const float> x, std::span<float> y);
void conv2d_backward_x(const Conv2dGeom& g, std::span<const float> k, std::span<const float> dy,
                       std::span<float> dx);
void conv2d_backward_k(const Conv2dGeom& g, std::span<const float> x, std::span<const float> dy,
                       std::span<float> dk);
// per-channel bias gradient over a [c, h, w] cotangent
void reduce_channels(std::span<const float> dy, std::span<float> db, int c, int hw);

void ew_add(std::span<const float> a, std::span<const float> b, std::span<float> y);
void ew_mul(std::span<const float> a, std::span<const float> b, std::span<float> y);
void ew_scale(std::span<const float> x, float c, std::span<float> y);
void leaky_relu_forward(std::span<const float> x, float alpha, std::span<float> y);
// derivative at 0 takes the negative-slope branch
void leaky_relu_backward(std::span<const float> x, std::span<const float> dy, float alpha, std::span<float> dx);
void silu_forward(std::span<const float> x, std::span<float> y);
void silu_backward(std::span<const float> x, std::span<const float> dy, std::span<float> dx);

// Reductions accumulate sequentially in double (fixed row-major order).
double sum_all(std::span<const float> x);
double mse_all(std::span<const float> a, std::span<const float> b);

// Reference implementations: same per-element accumulation order, no OpenMP.
namespace serial {
void dense_forward(std::span<const float> w, std::span<const float> b, std::span<const float> x,
                   std::span<float> y, int m, int n);
void dense_backward_x(std::span<const float> w, std::span<const float> dy, std::span<float> dx, int m, int n);
void dense_backward_w(std::span<const float> x, std::span<const float> dy, std::span<float> dw, int m, int n);
void conv2d_forward(const Conv2dGeom& g, std::span<const float> k, std::span<const float> b,
                    std::span<const float> x, std::span<float> y);
void conv2d_backward_x(const Conv2dGeom& g, std::span<const float> k, std::span<const float> dy,
                       std::span<float> dx);
void conv2d_backward_k(const Conv2dGeom& g, std::span<const float> x, std::span<const float> dy,
                       std::span<float> dk);
}  // namespace serial

}  // namespace debm::kernels
