#include "flexcast/kernels.hpp"

#include <algorithm>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace flexcast::kernels {

namespace {

// Weight gradients are reduced over a fixed number of row chunks, independent of
// the thread count, and the chunk partials are summed in chunk order.
constexpr std::size_t kReduceChunks = 16;

inline std::size_t chunk_begin(std::size_t chunk, std::size_t total) {
    return total * chunk / kReduceChunks;
}

constexpr std::size_t kBlockRows = 4;
constexpr std::size_t kBlockCols = 8;

// Four-wide double vectors; the unaligned variant is used for loads and stores.
typedef double vec4 __attribute__((vector_size(32)));
typedef double vec4u __attribute__((vector_size(32), aligned(8)));

inline vec4 load4(const double* p) { return *reinterpret_cast<const vec4u*>(p); }
inline void store4(double* p, vec4 v) { *reinterpret_cast<vec4u*>(p) = v; }

// out[i][j] += sum_l src[i][l] * m[l * stride + j] for l < depth.
template <bool Full>
inline void axpy_block(const double* const* src, const double* m, std::size_t stride, std::size_t depth,
                       std::size_t width, double (&out)[kBlockRows][kBlockCols]) {
    if constexpr (Full) {
        vec4 acc[kBlockRows][2];
        for (std::size_t i = 0; i < kBlockRows; ++i) {
            acc[i][0] = load4(out[i]);
            acc[i][1] = load4(out[i] + 4);
        }
        for (std::size_t l = 0; l < depth; ++l) {
            const double* mr = m + l * stride;
            const vec4 m0 = load4(mr), m1 = load4(mr + 4);
            for (std::size_t i = 0; i < kBlockRows; ++i) {
                const double v = src[i][l];
                acc[i][0] += v * m0;
                acc[i][1] += v * m1;
            }
        }
        for (std::size_t i = 0; i < kBlockRows; ++i) {
            store4(out[i], acc[i][0]);
            store4(out[i] + 4, acc[i][1]);
        }
    } else {
        for (std::size_t l = 0; l < depth; ++l) {
            const double* mr = m + l * stride;
            for (std::size_t i = 0; i < kBlockRows; ++i) {
                const double v = src[i][l];
                for (std::size_t j = 0; j < width; ++j) out[i][j] += v * mr[j];
            }
        }
    }
}

// out[i][j] += sum over rows of x[row - back][ci0 + i] * gy[row][co0 + j], rows of nodes [n0, n1).
template <bool Full>
inline void filter_block(const double* x, const double* gy, std::size_t n0, std::size_t n1, std::size_t steps,
                         std::size_t back, std::size_t ci_n, std::size_t co_n, std::size_t height, std::size_t width,
                         double (&out)[kBlockRows][kBlockCols]) {
    if constexpr (Full) {
        vec4 acc[kBlockRows][2] = {};
        for (std::size_t n = n0; n < n1; ++n)
            for (std::size_t t = back; t < steps; ++t) {
                const double* xr = x + (n * steps + t - back) * ci_n;
                const double* gr = gy + (n * steps + t) * co_n;
                const vec4 g0 = load4(gr), g1 = load4(gr + 4);
                for (std::size_t i = 0; i < kBlockRows; ++i) {
                    const double v = xr[i];
                    acc[i][0] += v * g0;
                    acc[i][1] += v * g1;
                }
            }
        for (std::size_t i = 0; i < kBlockRows; ++i) {
            store4(out[i], load4(out[i]) + acc[i][0]);
            store4(out[i] + 4, load4(out[i] + 4) + acc[i][1]);
        }
    } else {
        double acc[kBlockRows][kBlockCols] = {};
        for (std::size_t n = n0; n < n1; ++n)
            for (std::size_t t = back; t < steps; ++t) {
                const double* xr = x + (n * steps + t - back) * ci_n;
                const double* gr = gy + (n * steps + t) * co_n;
                for (std::size_t i = 0; i < height; ++i)
                    for (std::size_t j = 0; j < width; ++j) acc[i][j] += xr[i] * gr[j];
            }
        for (std::size_t i = 0; i < height; ++i)
            for (std::size_t j = 0; j < width; ++j) out[i][j] += acc[i][j];
    }
}

}  // namespace

int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

void row_dots(std::span<const double> a, std::span<const double> b, std::span<double> dots, std::size_t width) {
    const auto rows = static_cast<std::ptrdiff_t>(dots.size());
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t r = 0; r < rows; ++r) {
        double acc = 0.0;
        const double* pa = a.data() + r * width;
        const double* pb = b.data() + r * width;
        for (std::size_t j = 0; j < width; ++j) acc += pa[j] * pb[j];
        dots[r] = acc;
    }
}

// ---------------------------------------------------------------------------
// serial reference

namespace serial {

void matmul(std::span<const double> x, std::span<const double> w, std::span<double> y,
            std::size_t rows, std::size_t in, std::size_t out) {
    for (std::size_t m = 0; m < rows; ++m) {
        for (std::size_t o = 0; o < out; ++o) {
            double acc = 0.0;
            for (std::size_t i = 0; i < in; ++i) acc += x[m * in + i] * w[i * out + o];
            y[m * out + o] = acc;
        }
    }
}

void matmul_backward_input(std::span<const double> gy, std::span<const double> w, std::span<double> gx,
                           std::size_t rows, std::size_t in, std::size_t out) {
    for (std::size_t m = 0; m < rows; ++m)
        for (std::size_t i = 0; i < in; ++i) {
            double acc = 0.0;
            for (std::size_t o = 0; o < out; ++o) acc += gy[m * out + o] * w[i * out + o];
            gx[m * in + i] += acc;
        }
}

void matmul_backward_weight(std::span<const double> x, std::span<const double> gy, std::span<double> gw,
                            std::size_t rows, std::size_t in, std::size_t out) {
    for (std::size_t i = 0; i < in; ++i)
        for (std::size_t o = 0; o < out; ++o) {
            double acc = 0.0;
            for (std::size_t m = 0; m < rows; ++m) acc += x[m * in + i] * gy[m * out + o];
            gw[i * out + o] += acc;
        }
}

void conv1d(std::span<const double> x, std::span<const double> f, std::span<double> y, const ConvDims& d) {
    const std::size_t span = (d.kernel - 1) * d.dilation;
    for (std::size_t n = 0; n < d.nodes; ++n)
        for (std::size_t t = 0; t < d.steps; ++t)
            for (std::size_t co = 0; co < d.out_channels; ++co) {
                double acc = 0.0;
                for (std::size_t k = 0; k < d.kernel; ++k) {
                    const std::size_t back = span - k * d.dilation;
                    if (back > t) continue;
                    const std::size_t s = t - back;
                    for (std::size_t ci = 0; ci < d.in_channels; ++ci)
                        acc += x[(n * d.steps + s) * d.in_channels + ci] *
                               f[(k * d.in_channels + ci) * d.out_channels + co];
                }
                y[(n * d.steps + t) * d.out_channels + co] = acc;
            }
}

void conv1d_backward_input(std::span<const double> gy, std::span<const double> f, std::span<double> gx,
                           const ConvDims& d) {
    const std::size_t span = (d.kernel - 1) * d.dilation;
    for (std::size_t n = 0; n < d.nodes; ++n)
        for (std::size_t t = 0; t < d.steps; ++t)
            for (std::size_t k = 0; k < d.kernel; ++k) {
                const std::size_t back = span - k * d.dilation;
                if (back > t) continue;
                const std::size_t s = t - back;
                for (std::size_t ci = 0; ci < d.in_channels; ++ci) {
                    double acc = 0.0;
                    for (std::size_t co = 0; co < d.out_channels; ++co)
                        acc += gy[(n * d.steps + t) * d.out_channels + co] *
                               f[(k * d.in_channels + ci) * d.out_channels + co];
                    gx[(n * d.steps + s) * d.in_channels + ci] += acc;
                }
            }
}

void conv1d_backward_filter(std::span<const double> x, std::span<const double> gy, std::span<double> gf,
                            const ConvDims& d) {
    const std::size_t span = (d.kernel - 1) * d.dilation;
    for (std::size_t k = 0; k < d.kernel; ++k) {
        const std::size_t back = span - k * d.dilation;
        for (std::size_t ci = 0; ci < d.in_channels; ++ci)
            for (std::size_t co = 0; co < d.out_channels; ++co) {
                double acc = 0.0;
                for (std::size_t n = 0; n < d.nodes; ++n)
                    for (std::size_t t = back; t < d.steps; ++t)
                        acc += x[(n * d.steps + t - back) * d.in_channels + ci] *
                               gy[(n * d.steps + t) * d.out_channels + co];
                gf[(k * d.in_channels + ci) * d.out_channels + co] += acc;
            }
    }
}

void graph_agg(std::span<const double> h, CsrView adj, double eps, std::span<double> out, std::size_t width) {
    const std::size_t nodes = adj.offsets.size() - 1;
    for (std::size_t i = 0; i < nodes; ++i)
        for (std::size_t j = 0; j < width; ++j) {
            double acc = (1.0 + eps) * h[i * width + j];
            for (std::size_t e = adj.offsets[i]; e < adj.offsets[i + 1]; ++e) acc += h[adj.neighbors[e] * width + j];
            out[i * width + j] = acc;
        }
}

}  // namespace serial

// ---------------------------------------------------------------------------
// OpenMP

namespace parallel {

void matmul(std::span<const double> x, std::span<const double> w, std::span<double> y,
            std::size_t rows, std::size_t in, std::size_t out) {
    const auto n = static_cast<std::ptrdiff_t>(rows);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t m = 0; m < n; ++m) {
        double* yr = y.data() + m * out;
        std::fill(yr, yr + out, 0.0);
        const double* xr = x.data() + m * in;
        for (std::size_t i = 0; i < in; ++i) {
            const double xv = xr[i];
            const double* wr = w.data() + i * out;
            for (std::size_t o = 0; o < out; ++o) yr[o] += xv * wr[o];
        }
    }
}

void matmul_backward_input(std::span<const double> gy, std::span<const double> w, std::span<double> gx,
                           std::size_t rows, std::size_t in, std::size_t out) {
    const auto n = static_cast<std::ptrdiff_t>(rows);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t m = 0; m < n; ++m) {
        const double* gr = gy.data() + m * out;
        for (std::size_t i = 0; i < in; ++i) {
            const double* wr = w.data() + i * out;
            double acc = 0.0;
            for (std::size_t o = 0; o < out; ++o) acc += gr[o] * wr[o];
            gx[m * in + i] += acc;
        }
    }
}

void matmul_backward_weight(std::span<const double> x, std::span<const double> gy, std::span<double> gw,
                            std::size_t rows, std::size_t in, std::size_t out) {
    std::vector<double> partial(kReduceChunks * in * out, 0.0);
    const auto chunks = static_cast<std::ptrdiff_t>(kReduceChunks);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t c = 0; c < chunks; ++c) {
        double* acc = partial.data() + c * in * out;
        for (std::size_t m = chunk_begin(c, rows); m < chunk_begin(c + 1, rows); ++m) {
            const double* gr = gy.data() + m * out;
            for (std::size_t i = 0; i < in; ++i) {
                const double xv = x[m * in + i];
                double* ar = acc + i * out;
                for (std::size_t o = 0; o < out; ++o) ar[o] += xv * gr[o];
            }
        }
    }
    const auto total = static_cast<std::ptrdiff_t>(in * out);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t j = 0; j < total; ++j) {
        double acc = 0.0;
        for (std::size_t c = 0; c < kReduceChunks; ++c) acc += partial[c * in * out + j];
        gw[j] += acc;
    }
}

// The convolutions below work on blocks of kBlockRows consecutive (node, step)
// rows by kBlockCols channels held in registers. Taps that fall before the
// start of a node's window read a row of zeros.
void conv1d(std::span<const double> x, std::span<const double> f, std::span<double> y, const ConvDims& d) {
    const std::size_t span = (d.kernel - 1) * d.dilation;
    const std::size_t rows = d.nodes * d.steps;
    const std::size_t ci_n = d.in_channels, co_n = d.out_channels;
    const std::vector<double> zeros(ci_n, 0.0);
    const auto blocks = static_cast<std::ptrdiff_t>((rows + kBlockRows - 1) / kBlockRows);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t blk = 0; blk < blocks; ++blk) {
        const std::size_t r0 = static_cast<std::size_t>(blk) * kBlockRows;
        const std::size_t nr = std::min(kBlockRows, rows - r0);
        for (std::size_t co0 = 0; co0 < co_n; co0 += kBlockCols) {
            const std::size_t w = std::min(kBlockCols, co_n - co0);
            double acc[kBlockRows][kBlockCols] = {};
            for (std::size_t k = 0; k < d.kernel; ++k) {
                const std::size_t back = span - k * d.dilation;
                const double* src[kBlockRows];
                for (std::size_t i = 0; i < kBlockRows; ++i) {
                    const std::size_t r = r0 + i;
                    src[i] = (i < nr && r % d.steps >= back) ? x.data() + (r - back) * ci_n : zeros.data();
                }
                const double* fk = f.data() + k * ci_n * co_n + co0;
                if (w == kBlockCols)
                    axpy_block<true>(src, fk, co_n, ci_n, kBlockCols, acc);
                else
                    axpy_block<false>(src, fk, co_n, ci_n, w, acc);
            }
            for (std::size_t i = 0; i < nr; ++i)
                std::copy_n(acc[i], w, y.data() + (r0 + i) * co_n + co0);
        }
    }
}

void conv1d_backward_input(std::span<const double> gy, std::span<const double> f, std::span<double> gx,
                           const ConvDims& d) {
    const std::size_t span = (d.kernel - 1) * d.dilation;
    const std::size_t rows = d.nodes * d.steps;
    const std::size_t ci_n = d.in_channels, co_n = d.out_channels;
    // ft[k, co, ci]
    std::vector<double> ft(d.kernel * co_n * ci_n);
    for (std::size_t k = 0; k < d.kernel; ++k)
        for (std::size_t ci = 0; ci < ci_n; ++ci)
            for (std::size_t co = 0; co < co_n; ++co)
                ft[(k * co_n + co) * ci_n + ci] = f[(k * ci_n + ci) * co_n + co];
    const std::vector<double> zeros(co_n, 0.0);
    const auto blocks = static_cast<std::ptrdiff_t>((rows + kBlockRows - 1) / kBlockRows);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t blk = 0; blk < blocks; ++blk) {
        const std::size_t r0 = static_cast<std::size_t>(blk) * kBlockRows;
        const std::size_t nr = std::min(kBlockRows, rows - r0);
        for (std::size_t ci0 = 0; ci0 < ci_n; ci0 += kBlockCols) {
            const std::size_t w = std::min(kBlockCols, ci_n - ci0);
            double acc[kBlockRows][kBlockCols] = {};
            for (std::size_t k = 0; k < d.kernel; ++k) {
                const std::size_t back = span - k * d.dilation;
                const double* src[kBlockRows];
                for (std::size_t i = 0; i < kBlockRows; ++i) {
                    const std::size_t r = r0 + i;
                    src[i] = (i < nr && r % d.steps + back < d.steps) ? gy.data() + (r + back) * co_n : zeros.data();
                }
                const double* fk = ft.data() + k * co_n * ci_n + ci0;
                if (w == kBlockCols)
                    axpy_block<true>(src, fk, ci_n, co_n, kBlockCols, acc);
                else
                    axpy_block<false>(src, fk, ci_n, co_n, w, acc);
            }
            for (std::size_t i = 0; i < nr; ++i) {
                double* out = gx.data() + (r0 + i) * ci_n + ci0;
                for (std::size_t j = 0; j < w; ++j) out[j] += acc[i][j];
            }
        }
    }
}

void conv1d_backward_filter(std::span<const double> x, std::span<const double> gy, std::span<double> gf,
                            const ConvDims& d) {
    const std::size_t span = (d.kernel - 1) * d.dilation;
    const std::size_t ci_n = d.in_channels, co_n = d.out_channels;
    const std::size_t fsize = d.kernel * ci_n * co_n;
    std::vector<double> partial(kReduceChunks * fsize, 0.0);
    const auto chunks = static_cast<std::ptrdiff_t>(kReduceChunks);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t c = 0; c < chunks; ++c) {
        double* part = partial.data() + c * fsize;
        // Node tiles small enough to stay in cache while every filter block sweeps them.
        const std::size_t tile = std::max<std::size_t>(1, 64 / std::max<std::size_t>(1, d.steps));
        for (std::size_t t0 = chunk_begin(c, d.nodes); t0 < chunk_begin(c + 1, d.nodes); t0 += tile) {
            const std::size_t t1 = std::min(t0 + tile, chunk_begin(c + 1, d.nodes));
            for (std::size_t k = 0; k < d.kernel; ++k) {
                const std::size_t back = span - k * d.dilation;
                for (std::size_t ci0 = 0; ci0 < ci_n; ci0 += kBlockRows) {
                    const std::size_t h = std::min(kBlockRows, ci_n - ci0);
                    for (std::size_t co0 = 0; co0 < co_n; co0 += kBlockCols) {
                        const std::size_t w = std::min(kBlockCols, co_n - co0);
                        double acc[kBlockRows][kBlockCols] = {};
                        const double* xb = x.data() + ci0;
                        const double* gb = gy.data() + co0;
                        if (h == kBlockRows && w == kBlockCols)
                            filter_block<true>(xb, gb, t0, t1, d.steps, back, ci_n, co_n, h, w, acc);
                        else
                            filter_block<false>(xb, gb, t0, t1, d.steps, back, ci_n, co_n, h, w, acc);
                        for (std::size_t i = 0; i < h; ++i)
                            for (std::size_t j = 0; j < w; ++j)
                                part[(k * ci_n + ci0 + i) * co_n + co0 + j] += acc[i][j];
                    }
                }
            }
        }
    }
    const auto total = static_cast<std::ptrdiff_t>(fsize);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t j = 0; j < total; ++j) {
        double acc = 0.0;
        for (std::size_t c = 0; c < kReduceChunks; ++c) acc += partial[c * fsize + j];
        gf[j] += acc;
    }
}

void graph_agg(std::span<const double> h, CsrView adj, double eps, std::span<double> out, std::size_t width) {
    const auto nodes = static_cast<std::ptrdiff_t>(adj.offsets.size() - 1);
    const double self = 1.0 + eps;
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < nodes; ++i) {
        double* orow = out.data() + i * width;
        const double* hrow = h.data() + i * width;
        for (std::size_t j = 0; j < width; ++j) orow[j] = self * hrow[j];
        for (std::size_t e = adj.offsets[i]; e < adj.offsets[i + 1]; ++e) {
            const double* nrow = h.data() + adj.neighbors[e] * width;
            for (std::size_t j = 0; j < width; ++j) orow[j] += nrow[j];
        }
    }
}

}  // namespace parallel

}  // namespace flexcast::kernels
