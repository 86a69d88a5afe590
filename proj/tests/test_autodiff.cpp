#include <cmath>
#include <limits>
#include <memory>
#include <vector>

#include "doctest.h"
#include "flexcast/autodiff.hpp"
#include "flexcast/error.hpp"
#include "gradient_suite.hpp"
#include "oracles.hpp"
#include "support.hpp"

using flexcast::Tensor;
namespace ad = flexcast::ad;

TEST_CASE("linear examples") {
    ad::Tape tape;
    auto y = ad::linear(tape.constant(Tensor({1, 2}, {1, 2})), tape.constant(Tensor({2, 1}, {1, 1})),
                        tape.constant(Tensor({1}, {0})));
    CHECK(y.value() == Tensor({1, 1}, {3}));
    auto z = ad::linear(tape.constant(Tensor({1, 2}, {0, 0})), tape.constant(Tensor({2, 1}, {0.3, -7})),
                        tape.constant(Tensor({1}, {5})));
    CHECK(z.value() == Tensor({1, 1}, {5}));
    CHECK_THROWS_AS(ad::linear(tape.constant(Tensor({1, 3})), tape.constant(Tensor({2, 1}))), flexcast::DimensionError);
}

TEST_CASE("gradient of summed linear output w.r.t. the weight is the column sums of x") {
    flexcast::Rng rng(11);
    const Tensor x = testing::random_tensor({4, 3}, rng);
    ad::Tape tape;
    auto w = tape.parameter(testing::random_tensor({3, 2}, rng));
    auto b = tape.parameter(Tensor({2}, 0.0));
    tape.backward(ad::sum_all(ad::linear(tape.constant(x), w, b)));
    for (std::size_t i = 0; i < 3; ++i) {
        double col = 0.0;
        for (std::size_t r = 0; r < 4; ++r) col += x[r * 3 + i];
        for (std::size_t o = 0; o < 2; ++o) CHECK(tape.grad(w)[i * 2 + o] == doctest::Approx(col).epsilon(1e-14));
    }
    const double err = testing::fd_max_error({x, testing::random_tensor({3, 2}, rng), Tensor({2}, 0.1)},
                                             [](ad::Tape&, const std::vector<ad::Var>& v) {
                                                 return ad::linear(v[0], v[1], v[2]);
                                             });
    CHECK(err < 1e-6);
}

TEST_CASE("causal convolution examples") {
    ad::Tape tape;
    Tensor impulse({1, 10, 1}, 0.0);
    impulse[5] = 1.0;
    auto y = ad::dilated_causal_conv1d(tape.constant(impulse), tape.constant(Tensor({2, 1, 1}, {1, 1})), 1);
    for (std::size_t t = 0; t < 10; ++t) CHECK((y.value()[t] != 0.0) == (t == 5 || t == 6));

    // K = 1 is a per-timestep channel mix.
    flexcast::Rng rng(12);
    const Tensor x = testing::random_tensor({3, 6, 4}, rng);
    const Tensor f = testing::random_tensor({1, 4, 5}, rng);
    auto conv = ad::dilated_causal_conv1d(tape.constant(x), tape.constant(f), 3);
    auto lin = ad::linear(tape.constant(x), tape.constant(Tensor({4, 5}, f.data)));
    for (std::size_t i = 0; i < conv.value().size(); ++i)
        CHECK(conv.value()[i] == doctest::Approx(lin.value()[i]).epsilon(1e-14));

    const Tensor xr = testing::random_tensor({4, 11, 3}, rng);
    const Tensor fr = testing::random_tensor({3, 3, 5}, rng);
    auto out = ad::dilated_causal_conv1d(tape.constant(xr), tape.constant(fr), 2);
    const auto expected = testing::oracle::conv1d(xr.data, fr.data, {4, 11, 3, 5, 3, 2});
    double worst = 0.0;
    for (std::size_t i = 0; i < expected.size(); ++i) worst = std::max(worst, std::abs(expected[i] - out.value()[i]));
    CHECK(worst < 1e-12);

    CHECK_THROWS_AS(ad::dilated_causal_conv1d(tape.constant(xr), tape.constant(fr), 0), flexcast::ContractError);
    // A receptive field wider than the window is allowed.
    CHECK_NOTHROW(ad::dilated_causal_conv1d(tape.constant(Tensor({1, 3, 1})), tape.constant(Tensor({3, 1, 1})), 2));
}

TEST_CASE("elementwise and shape operator examples") {
    ad::Tape tape;
    CHECK(ad::relu(tape.constant(Tensor({3}, {-1, 0, 2}))).value() == Tensor({3}, {0, 0, 2}));
    auto c = ad::concat({tape.constant(Tensor({2, 3})), tape.constant(Tensor({2, 5}))}, 1);
    CHECK(c.shape() == flexcast::Shape{2, 8});
    CHECK_THROWS_AS(ad::sum(tape.constant(Tensor({2, 3})), {2}), flexcast::DimensionError);
    CHECK_THROWS_AS(ad::max_over(tape.constant(Tensor({2, 3})), 5), flexcast::DimensionError);
    CHECK_THROWS_AS(ad::concat({tape.constant(Tensor({2, 3})), tape.constant(Tensor({3, 3}))}, 1),
                    flexcast::DimensionError);
    CHECK_THROWS_AS(ad::reshape(tape.constant(Tensor({2, 3})), {4}), flexcast::DimensionError);
    CHECK_THROWS_AS(ad::gather_rows(tape.constant(Tensor({2, 3})), {2}), flexcast::IndexError);
    CHECK_THROWS_AS(ad::segment_sum(tape.constant(Tensor({3, 1})), {0, 0, 3}), flexcast::DimensionError);
    CHECK_THROWS_AS(ad::l2_norm({}), flexcast::DimensionError);
    CHECK_THROWS_AS(ad::add(tape.constant(Tensor({2})), tape.constant(Tensor({3}))), flexcast::DimensionError);

    auto t = ad::transpose_last2(tape.constant(Tensor({1, 2, 3}, {1, 2, 3, 4, 5, 6})));
    CHECK(t.value() == Tensor({1, 3, 2}, {1, 4, 2, 5, 3, 6}));
    auto s = ad::segment_max(tape.constant(Tensor({4, 1}, {1, 5, 2, -3})), {0, 3, 4});
    CHECK(s.value() == Tensor({2, 1}, {5, -3}));
    auto m = ad::segment_mean(tape.constant(Tensor({4, 1}, {1, 5, 3, -3})), {0, 3, 4});
    CHECK(m.value() == Tensor({2, 1}, {3, -3}));
}

TEST_CASE("batch norm examples") {
    ad::Tape tape;
    Tensor rm({2}, 0.0), rv({2}, 1.0);
    Tensor x({3, 2}, {4, 1, 4, 2, 4, 3});
    auto y = ad::batch_norm_train(tape.constant(x), tape.constant(Tensor({2}, 1.0)), tape.constant(Tensor({2}, 0.0)),
                                  rm, rv);
    for (std::size_t r = 0; r < 3; ++r) CHECK(y.value()[r * 2] == 0.0);
    // Second channel: zero mean and unit (biased) variance up to eps.
    double mean = 0.0, var = 0.0;
    for (std::size_t r = 0; r < 3; ++r) mean += y.value()[r * 2 + 1] / 3.0;
    for (std::size_t r = 0; r < 3; ++r) var += std::pow(y.value()[r * 2 + 1] - mean, 2) / 3.0;
    CHECK(std::abs(mean) < 1e-15);
    CHECK(var == doctest::Approx(1.0 / (1.0 + 1.5e-5)).epsilon(1e-9));
    // Running statistics: momentum 0.1, unbiased variance.
    CHECK(rm[1] == doctest::Approx(0.2).epsilon(1e-15));
    CHECK(rv[1] == doctest::Approx(0.9 + 0.1 * 1.0).epsilon(1e-15));

    auto z = ad::batch_norm_train(tape.constant(x), tape.constant(Tensor({2}, 0.0)),
                                  tape.constant(Tensor({2}, {0.5, -2})), rm, rv);
    for (std::size_t r = 0; r < 3; ++r) {
        CHECK(z.value()[r * 2] == 0.5);
        CHECK(z.value()[r * 2 + 1] == -2.0);
    }

    auto e = ad::batch_norm_eval(tape.constant(x), tape.constant(Tensor({2}, 2.0)), tape.constant(Tensor({2}, 1.0)),
                                 Tensor({2}, {4, 0}), Tensor({2}, {1, 4}));
    CHECK(e.value()[0] == 1.0);
    CHECK(e.value()[1] == doctest::Approx(2.0 * 1.0 / std::sqrt(4.0 + 1e-5) + 1.0).epsilon(1e-15));
}

TEST_CASE("graph aggregation examples") {
    ad::Tape tape;
    auto adj = std::make_shared<ad::Adjacency>();
    adj->offsets = {0, 2, 3, 4};
    adj->neighbors = {1, 2, 0, 0};
    auto out = ad::graph_agg(tape.constant(Tensor({3, 1}, {1, 2, 3})), adj, tape.constant(Tensor({1}, {0.0})));
    CHECK(out.value()[0] == 6.0);

    auto isolated = std::make_shared<ad::Adjacency>();
    isolated->offsets = {0, 0, 0};
    auto h = Tensor({2, 2}, {1, -2, 3, 0.5});
    auto iso = ad::graph_agg(tape.constant(h), isolated, tape.constant(Tensor({1}, {0.25})));
    for (std::size_t i = 0; i < 4; ++i) CHECK(iso.value()[i] == 1.25 * h[i]);
}

TEST_CASE("backward examples and contracts") {
    {
        ad::Tape tape;
        auto x = tape.parameter(Tensor({2, 2}, {1, -2, 3, 4}));
        tape.backward(ad::sum_all(x));
        CHECK(tape.grad(x) == std::vector<double>(4, 1.0));
        CHECK(tape.consumed());
        CHECK_THROWS_AS(tape.backward(ad::Var{&tape, 1}), flexcast::ContractError);
        CHECK_THROWS_AS(ad::relu(x), flexcast::ContractError);
    }
    {
        ad::Tape tape;
        auto x = tape.parameter(Tensor({3}, {0.5, 1, 2}));
        tape.backward(ad::sum_all(ad::relu(ad::scale(x, -1.0))));
        CHECK(tape.grad(x) == std::vector<double>(3, 0.0));
    }
    {
        ad::Tape tape;
        auto x = tape.parameter(Tensor({3}, 1.0));
        CHECK_THROWS_AS(tape.backward(x), flexcast::ContractError);
    }
    {
        ad::Tape tape;
        tape.set_scope("block7");
        Tensor bad({2}, 1.0);
        bad[1] = std::numeric_limits<double>::quiet_NaN();
        CHECK_THROWS_AS(tape.constant(bad), flexcast::NumericError);
        auto big = tape.constant(Tensor({1}, 1e200));
        try {
            ad::l2_norm({ad::scale(big, 1e200)});
            FAIL("overflow not reported");
        } catch (const flexcast::NumericError& e) {
            CHECK(std::string(e.what()).find("block7") != std::string::npos);
        }
    }
    {
        ad::Tape a, b;
        CHECK_THROWS_AS(ad::add(a.constant(Tensor({1})), b.constant(Tensor({1}))), flexcast::ContractError);
    }
}

TEST_CASE("every primitive passes finite differences on random configurations") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        for (const auto& c : testing::primitive_cases(seed)) {
            CAPTURE(seed);
            CAPTURE(c.name);
            CHECK(testing::fd_max_error(c.inputs, c.fn) < 1e-6);
        }
    }
}

TEST_CASE("full model gradients pass finite differences") {
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
        CAPTURE(seed);
        const auto r = testing::model_fd_error(seed);
        CHECK(r.coordinates > 0);
        CHECK(r.max_error < 1e-4);
    }
}
