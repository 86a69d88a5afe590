#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "flexcast/kernels.hpp"
#include "flexcast/random.hpp"
#include "oracles.hpp"

namespace kernels = flexcast::kernels;

namespace {

std::vector<double> random_vector(std::size_t n, flexcast::Rng& rng) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(-1.0, 1.0);
    return v;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    REQUIRE(a.size() == b.size());
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
    return worst;
}

// Odd sizes on purpose so that the blocked paths hit their remainders.
std::vector<kernels::ConvDims> conv_shapes() {
    return {{1, 1, 1, 1, 1, 1},    {3, 7, 1, 5, 3, 1},   {5, 12, 13, 9, 3, 2}, {2, 16, 32, 32, 1, 1},
            {4, 12, 64, 32, 3, 1}, {7, 9, 11, 13, 2, 3}, {1, 4, 3, 3, 3, 4},   {17, 12, 8, 19, 3, 2}};
}

}  // namespace

TEST_CASE("matmul kernels agree between serial and parallel") {
    flexcast::Rng rng(1);
    for (auto [rows, in, out] : std::vector<std::array<std::size_t, 3>>{{1, 1, 1}, {7, 3, 5}, {33, 17, 9}, {64, 64, 3}}) {
        const auto x = random_vector(rows * in, rng), w = random_vector(in * out, rng);
        const auto gy = random_vector(rows * out, rng);
        std::vector<double> ys(rows * out), yp(rows * out);
        kernels::serial::matmul(x, w, ys, rows, in, out);
        kernels::parallel::matmul(x, w, yp, rows, in, out);
        CHECK(max_abs_diff(ys, yp) < 1e-12);

        std::vector<double> gxs(rows * in, 0.5), gxp(rows * in, 0.5);
        kernels::serial::matmul_backward_input(gy, w, gxs, rows, in, out);
        kernels::parallel::matmul_backward_input(gy, w, gxp, rows, in, out);
        CHECK(max_abs_diff(gxs, gxp) < 1e-12);

        std::vector<double> gws(in * out, -0.25), gwp(in * out, -0.25);
        kernels::serial::matmul_backward_weight(x, gy, gws, rows, in, out);
        kernels::parallel::matmul_backward_weight(x, gy, gwp, rows, in, out);
        CHECK(max_abs_diff(gws, gwp) < 1e-12);
    }
}

TEST_CASE("conv1d matches the loop oracle in both implementations") {
    flexcast::Rng rng(2);
    for (const auto& d : conv_shapes()) {
        CAPTURE(d.nodes);
        CAPTURE(d.in_channels);
        CAPTURE(d.kernel);
        const auto x = random_vector(d.nodes * d.steps * d.in_channels, rng);
        const auto f = random_vector(d.kernel * d.in_channels * d.out_channels, rng);
        const auto expected = testing::oracle::conv1d(x, f, d);
        std::vector<double> ys(expected.size(), 9.0), yp(expected.size(), 9.0);
        kernels::serial::conv1d(x, f, ys, d);
        kernels::parallel::conv1d(x, f, yp, d);
        CHECK(max_abs_diff(ys, expected) < 1e-12);
        CHECK(max_abs_diff(yp, expected) < 1e-12);
    }
}

TEST_CASE("conv1d backward kernels are adjoint to the forward oracle") {
    flexcast::Rng rng(3);
    for (const auto& d : conv_shapes()) {
        const auto x = random_vector(d.nodes * d.steps * d.in_channels, rng);
        const auto f = random_vector(d.kernel * d.in_channels * d.out_channels, rng);
        const auto gy = random_vector(d.nodes * d.steps * d.out_channels, rng);
        // <gy, conv(x, f)> is linear in x and in f, so its gradients are exact sums over basis vectors.
        std::vector<double> gx_ref(x.size(), 0.0), gf_ref(f.size(), 0.0);
        for (std::size_t i = 0; i < x.size(); ++i) {
            std::vector<double> e(x.size(), 0.0);
            e[i] = 1.0;
            const auto y = testing::oracle::conv1d(e, f, d);
            for (std::size_t j = 0; j < y.size(); ++j) gx_ref[i] += gy[j] * y[j];
        }
        for (std::size_t i = 0; i < f.size(); ++i) {
            std::vector<double> e(f.size(), 0.0);
            e[i] = 1.0;
            const auto y = testing::oracle::conv1d(x, e, d);
            for (std::size_t j = 0; j < y.size(); ++j) gf_ref[i] += gy[j] * y[j];
        }
        std::vector<double> gxs(x.size(), 0.0), gxp(x.size(), 0.0), gfs(f.size(), 0.0), gfp(f.size(), 0.0);
        kernels::serial::conv1d_backward_input(gy, f, gxs, d);
        kernels::parallel::conv1d_backward_input(gy, f, gxp, d);
        kernels::serial::conv1d_backward_filter(x, gy, gfs, d);
        kernels::parallel::conv1d_backward_filter(x, gy, gfp, d);
        CHECK(max_abs_diff(gxs, gx_ref) < 1e-11);
        CHECK(max_abs_diff(gxp, gx_ref) < 1e-11);
        CHECK(max_abs_diff(gfs, gf_ref) < 1e-10);
        CHECK(max_abs_diff(gfp, gf_ref) < 1e-10);
    }
}

TEST_CASE("backward kernels accumulate into their output") {
    flexcast::Rng rng(4);
    const kernels::ConvDims d{3, 8, 5, 6, 3, 2};
    const auto x = random_vector(d.nodes * d.steps * d.in_channels, rng);
    const auto f = random_vector(d.kernel * d.in_channels * d.out_channels, rng);
    const auto gy = random_vector(d.nodes * d.steps * d.out_channels, rng);
    std::vector<double> once(x.size(), 0.0), twice(x.size(), 0.0);
    kernels::parallel::conv1d_backward_input(gy, f, once, d);
    kernels::parallel::conv1d_backward_input(gy, f, twice, d);
    kernels::parallel::conv1d_backward_input(gy, f, twice, d);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(twice[i] == doctest::Approx(2.0 * once[i]).epsilon(1e-12));
}

TEST_CASE("graph aggregation kernels agree and follow the sum rule") {
    // Path 0-1-2 plus isolated node 3.
    const std::vector<std::size_t> offsets{0, 1, 3, 4, 4};
    const std::vector<std::size_t> neighbors{1, 0, 2, 1};
    const kernels::CsrView adj{offsets, neighbors};
    const std::vector<double> h{1.0, 2.0, 3.0, 4.0};
    std::vector<double> out(4), out_par(4);
    kernels::serial::graph_agg(h, adj, 0.5, out, 1);
    kernels::parallel::graph_agg(h, adj, 0.5, out_par, 1);
    CHECK(out == std::vector<double>{1.5 + 2.0, 3.0 + 1.0 + 3.0, 4.5 + 2.0, 6.0});
    CHECK(out == out_par);

    flexcast::Rng rng(5);
    const std::size_t width = 37;
    const auto wide = random_vector(4 * width, rng);
    std::vector<double> a(wide.size()), b(wide.size());
    kernels::serial::graph_agg(wide, adj, -0.2, a, width);
    kernels::parallel::graph_agg(wide, adj, -0.2, b, width);
    CHECK(max_abs_diff(a, b) < 1e-14);
}

TEST_CASE("row_dots computes per-row inner products") {
    const std::vector<double> a{1, 2, 3, 4, 5, 6}, b{1, 1, 1, 2, 0, -1};
    std::vector<double> dots(2);
    kernels::row_dots(a, b, dots, 3);
    CHECK(dots == std::vector<double>{6.0, 2.0});
    CHECK(kernels::max_threads() >= 1);
}
