#pragma once

#include <cstddef>
#include <span>

// Dense compute kernels behind the autodiff operators. Every kernel exists as a
// straightforward serial reference and an OpenMP version. Each output element
// is owned by exactly one thread and accumulated in a fixed order, so the
// parallel results do not depend on the thread count.
//
// Forward kernels overwrite their output; backward kernels accumulate into it.
namespace flexcast::kernels {

// x[n, t, cin] convolved with f[k, cin, cout]; tap k reads x[t - (K-1-k) * dilation].
struct ConvDims {
    std::size_t nodes = 0;
    std::size_t steps = 0;
    std::size_t in_channels = 0;
    std::size_t out_channels = 0;
    std::size_t kernel = 1;
    std::size_t dilation = 1;
};

// Symmetric adjacency in CSR form over local node indices.
struct CsrView {
    std::span<const std::size_t> offsets;  // nodes + 1 entries
    std::span<const std::size_t> neighbors;
};

namespace serial {

void matmul(std::span<const double> x, std::span<const double> w, std::span<double> y,
            std::size_t rows, std::size_t in, std::size_t out);
void matmul_backward_input(std::span<const double> gy, std::span<const double> w, std::span<double> gx,
                           std::size_t rows, std::size_t in, std::size_t out);
void matmul_backward_weight(std::span<const double> x, std::span<const double> gy, std::span<double> gw,
                            std::size_t rows, std::size_t in, std::size_t out);

void conv1d(std::span<const double> x, std::span<const double> f, std::span<double> y, const ConvDims& d);
void conv1d_backward_input(std::span<const double> gy, std::span<const double> f, std::span<double> gx,
                           const ConvDims& d);
void conv1d_backward_filter(std::span<const double> x, std::span<const double> gy, std::span<double> gf,
                            const ConvDims& d);

// out[i] = (1 + eps) * h[i] + sum over neighbors u of h[u]; rows of `width` values.
void graph_agg(std::span<const double> h, CsrView adj, double eps, std::span<double> out, std::size_t width);

}  // namespace serial

namespace parallel {

void matmul(std::span<const double> x, std::span<const double> w, std::span<double> y,
            std::size_t rows, std::size_t in, std::size_t out);
void matmul_backward_input(std::span<const double> gy, std::span<const double> w, std::span<double> gx,
                           std::size_t rows, std::size_t in, std::size_t out);
void matmul_backward_weight(std::span<const double> x, std::span<const double> gy, std::span<double> gw,
                            std::size_t rows, std::size_t in, std::size_t out);

void conv1d(std::span<const double> x, std::span<const double> f, std::span<double> y, const ConvDims& d);
void conv1d_backward_input(std::span<const double> gy, std::span<const double> f, std::span<double> gx,
                           const ConvDims& d);
void conv1d_backward_filter(std::span<const double> x, std::span<const double> gy, std::span<double> gf,
                            const ConvDims& d);

void graph_agg(std::span<const double> h, CsrView adj, double eps, std::span<double> out, std::size_t width);

}  // namespace parallel

// Row-wise dot products <a[i], b[i]>, written per row so the caller can sum them in order.
void row_dots(std::span<const double> a, std::span<const double> b, std::span<double> dots, std::size_t width);

int max_threads();

}  // namespace flexcast::kernels
