#pragma once

#include <algorithm>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "flexcast/autodiff.hpp"
#include "flexcast/data.hpp"
#include "flexcast/graph.hpp"
#include "flexcast/model.hpp"
#include "flexcast/random.hpp"
#include "support.hpp"

// Finite-difference gradient checks shared by the unit tests and the acceptance binary.
namespace testing {

struct GradientCase {
    std::string name;
    std::vector<Tensor> inputs;
    GraphFn fn;
};

// Random symmetric adjacency over n nodes with edge probability p.
inline std::shared_ptr<ad::Adjacency> random_adjacency(std::size_t n, double p, flexcast::Rng& rng) {
    std::vector<std::vector<std::size_t>> nb(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (rng.uniform() < p) {
                nb[i].push_back(j);
                nb[j].push_back(i);
            }
    auto adj = std::make_shared<ad::Adjacency>();
    for (auto& row : nb) {
        std::sort(row.begin(), row.end());
        adj->neighbors.insert(adj->neighbors.end(), row.begin(), row.end());
        adj->offsets.push_back(adj->neighbors.size());
    }
    return adj;
}

inline std::vector<std::size_t> random_offsets(std::size_t rows, std::size_t segments, flexcast::Rng& rng) {
    std::vector<std::size_t> cuts;
    for (std::size_t i = 1; i < rows; ++i) cuts.push_back(i);
    rng.shuffle(cuts);
    cuts.resize(segments - 1);
    std::sort(cuts.begin(), cuts.end());
    std::vector<std::size_t> offsets{0};
    offsets.insert(offsets.end(), cuts.begin(), cuts.end());
    offsets.push_back(rows);
    return offsets;
}

// One randomly shaped instance of every differentiable operator.
inline std::vector<GradientCase> primitive_cases(std::uint64_t seed) {
    flexcast::Rng rng(flexcast::derive_seed(seed, {0x67726164}));
    auto dim = [&](std::size_t lo, std::size_t hi) { return lo + static_cast<std::size_t>(rng.next() % (hi - lo + 1)); };
    std::vector<GradientCase> cases;

    const std::size_t rows = dim(2, 5), in = dim(1, 4), out = dim(1, 4);
    cases.push_back({"linear", {random_tensor({rows, in}, rng), random_tensor({in, out}, rng)},
                     [](ad::Tape&, const std::vector<ad::Var>& v) { return ad::linear(v[0], v[1]); }});
    cases.push_back({"linear_bias",
                     {random_tensor({2, rows, in}, rng), random_tensor({in, out}, rng), random_tensor({out}, rng)},
                     [](ad::Tape&, const std::vector<ad::Var>& v) { return ad::linear(v[0], v[1], v[2]); }});
    cases.push_back({"add_bias", {random_tensor({rows, out}, rng), random_tensor({out}, rng)},
                     [](ad::Tape&, const std::vector<ad::Var>& v) { return ad::add_bias(v[0], v[1]); }});

    {
        const std::size_t kernel = dim(1, 3), dilation = dim(1, 2);
        const std::size_t steps = (kernel - 1) * dilation + dim(1, 4);
        cases.push_back({"conv1d k" + std::to_string(kernel) + " d" + std::to_string(dilation),
                         {random_tensor({dim(1, 3), steps, in}, rng), random_tensor({kernel, in, out}, rng)},
                         [dilation](ad::Tape&, const std::vector<ad::Var>& v) {
                             return ad::dilated_causal_conv1d(v[0], v[1], dilation);
                         }});
    }

    cases.push_back({"relu", {random_away_from_zero({rows, in}, rng)},
                     [](ad::Tape&, const std::vector<ad::Var>& v) { return ad::relu(v[0]); }});
    cases.push_back({"add", {random_tensor({rows, in}, rng), random_tensor({rows, in}, rng)},
                     [](ad::Tape&, const std::vector<ad::Var>& v) { return ad::add(v[0], v[1]); }});
    const double factor = rng.uniform(-2.0, 2.0);
    cases.push_back({"scale", {random_tensor({rows, in}, rng)},
                     [factor](ad::Tape&, const std::vector<ad::Var>& v) { return ad::scale(v[0], factor); }});

    const Shape cube{dim(1, 3), dim(2, 3), dim(2, 4)};
    const std::size_t axis = dim(0, 2);
    cases.push_back({"sum axis " + std::to_string(axis), {random_tensor(cube, rng)},
                     [axis](ad::Tape&, const std::vector<ad::Var>& v) { return ad::sum(v[0], {axis}); }});
    cases.push_back({"sum two axes", {random_tensor(cube, rng)},
                     [](ad::Tape&, const std::vector<ad::Var>& v) { return ad::sum(v[0], {2, 0}); }});
    cases.push_back({"sum_all", {random_tensor(cube, rng)},
                     [](ad::Tape&, const std::vector<ad::Var>& v) { return ad::sum_all(v[0]); }});
    cases.push_back({"max_over", {random_tensor(cube, rng)},
                     [axis](ad::Tape&, const std::vector<ad::Var>& v) { return ad::max_over(v[0], axis); }});
    cases.push_back({"mean_over", {random_tensor(cube, rng)},
                     [axis](ad::Tape&, const std::vector<ad::Var>& v) { return ad::mean_over(v[0], axis); }});

    {
        Shape a = cube, b = cube;
        b[axis] = dim(1, 3);
        cases.push_back({"concat", {random_tensor(a, rng), random_tensor(b, rng), random_tensor(a, rng)},
                         [axis](ad::Tape&, const std::vector<ad::Var>& v) { return ad::concat(v, axis); }});
    }
    cases.push_back({"reshape", {random_tensor(cube, rng)},
                     [n = flexcast::shape_size(cube)](ad::Tape&, const std::vector<ad::Var>& v) {
                         return ad::reshape(v[0], {n, 1});
                     }});
    cases.push_back({"transpose_last2", {random_tensor(cube, rng)},
                     [](ad::Tape&, const std::vector<ad::Var>& v) { return ad::transpose_last2(v[0]); }});

    {
        const std::size_t ch = dim(1, 4);
        const Shape shape{dim(2, 4), dim(1, 3), ch};
        Tensor gamma = random_tensor({ch}, rng, 0.5, 1.5);
        cases.push_back({"batch_norm_train",
                         {random_tensor(shape, rng), gamma, random_tensor({ch}, rng)},
                         [ch](ad::Tape&, const std::vector<ad::Var>& v) {
                             Tensor rm({ch}, 0.0), rv({ch}, 1.0);
                             return ad::batch_norm_train(v[0], v[1], v[2], rm, rv);
                         }});
        Tensor rm = random_tensor({ch}, rng), rv = random_tensor({ch}, rng, 0.5, 2.0);
        cases.push_back({"batch_norm_eval", {random_tensor(shape, rng), gamma, random_tensor({ch}, rng)},
                         [rm, rv](ad::Tape&, const std::vector<ad::Var>& v) {
                             return ad::batch_norm_eval(v[0], v[1], v[2], rm, rv);
                         }});
    }

    {
        const std::size_t n = dim(2, 6);
        std::shared_ptr<const ad::Adjacency> adj = random_adjacency(n, 0.5, rng);
        cases.push_back({"graph_agg", {random_tensor({n, dim(1, 3), dim(1, 3)}, rng), random_tensor({1}, rng)},
                         [adj](ad::Tape&, const std::vector<ad::Var>& v) { return ad::graph_agg(v[0], adj, v[1]); }});
    }

    {
        const std::size_t n = dim(3, 7), width = dim(1, 3);
        std::vector<std::size_t> pick;
        for (std::size_t i = 0, m = dim(1, 6); i < m; ++i) pick.push_back(rng.next() % n);
        cases.push_back({"gather_rows", {random_tensor({n, width, 2}, rng)},
                         [pick](ad::Tape&, const std::vector<ad::Var>& v) { return ad::gather_rows(v[0], pick); }});
        const auto offsets = random_offsets(n, dim(1, std::min<std::size_t>(3, n)), rng);
        cases.push_back({"segment_sum", {random_tensor({n, width}, rng)},
                         [offsets](ad::Tape&, const std::vector<ad::Var>& v) { return ad::segment_sum(v[0], offsets); }});
        cases.push_back({"segment_mean", {random_tensor({n, width}, rng)},
                         [offsets](ad::Tape&, const std::vector<ad::Var>& v) { return ad::segment_mean(v[0], offsets); }});
        cases.push_back({"segment_max", {random_tensor({n, width}, rng)},
                         [offsets](ad::Tape&, const std::vector<ad::Var>& v) { return ad::segment_max(v[0], offsets); }});
    }

    {
        Tensor pred = random_tensor({rows, out}, rng);
        Tensor gap = random_away_from_zero({rows, out}, rng);
        Tensor target = pred;
        for (std::size_t i = 0; i < target.size(); ++i) target[i] += gap[i];
        cases.push_back({"mean_abs_error", {pred, target},
                         [](ad::Tape&, const std::vector<ad::Var>& v) { return ad::mean_abs_error(v[0], v[1]); }});
    }
    cases.push_back({"l2_norm", {random_tensor({rows, in}, rng), random_tensor({out}, rng)},
                     [](ad::Tape&, const std::vector<ad::Var>& v) { return ad::l2_norm(v); }});
    return cases;
}

// Small random model configuration and a batch to run it on.
struct ModelFixture {
    flexcast::ModelConfig config;
    flexcast::SampleBatch batch;
};

inline ModelFixture model_fixture(std::uint64_t seed) {
    flexcast::Rng rng(flexcast::derive_seed(seed, {0x6d6f64}));
    ModelFixture fx;
    auto& c = fx.config;
    c.history = 5 + rng.next() % 3;
    c.horizon = 1 + rng.next() % 3;
    c.kernels = rng.uniform() < 0.5 ? std::vector<std::size_t>{1, 3} : std::vector<std::size_t>{2};
    c.channels = c.kernels.size() * (1 + rng.next() % 2);
    c.layers = 1 + rng.next() % 2;
    c.dilation_factor = 1 + rng.next() % 2;
    const flexcast::Pooling modes[] = {flexcast::Pooling::target, flexcast::Pooling::sum, flexcast::Pooling::max,
                                       flexcast::Pooling::mean};
    c.pooling = modes[rng.next() % 4];
    c.graph_free = rng.uniform() < 0.25;

    const std::size_t stations = 6;
    auto map = line_stations(stations, 1200.0);
    const auto graph = flexcast::build_proximity_graph(map, 2.5, 10);
    flexcast::TrafficSeries series;
    series.station_ids = map.ids;
    series.steps = c.history + c.horizon + 4;
    for (std::size_t i = 0; i < stations * series.steps; ++i) series.values.push_back(rng.uniform(-1.5, 1.5));
    std::vector<flexcast::Sample> samples;
    std::vector<flexcast::SubgraphRecord> records;
    for (std::size_t b = 0; b < 3; ++b) {
        const auto station = static_cast<std::uint32_t>(rng.next() % stations);
        samples.push_back({station, static_cast<std::uint32_t>(c.history + rng.next() % 4)});
        records.push_back(flexcast::khop_subgraph(graph, station, 1 + rng.next() % 2));
    }
    fx.batch = flexcast::assemble_batch(samples, records, series, c.history, c.horizon);
    return fx;
}

struct ModelGradientResult {
    double max_error = 0.0;
    std::size_t coordinates = 0;
};

// Central differences of a projected training-mode prediction against the tape
// gradient, over every trainable coordinate.
inline ModelGradientResult model_fd_error(std::uint64_t seed, double h = 1e-6) {
    auto fx = model_fixture(seed);
    flexcast::Model model(fx.config, seed);
    // Non-zero eps and shifted batch-norm affine parameters exercise every path.
    for (auto& e : model.parameters().entries()) {
        if (!e.trainable) continue;
        if (e.name.ends_with(".eps")) e.value[0] = 0.3;
        if (e.name.ends_with(".gamma"))
            for (auto& v : e.value.data) v = 1.1;
        if (e.name.ends_with(".beta"))
            for (auto& v : e.value.data) v = 0.2;
    }
    const std::uint64_t proj_seed = seed + 17;
    auto evaluate = [&]() {
        ad::Tape tape;
        return project(tape, model.forward(tape, fx.batch, flexcast::Mode::train).prediction, proj_seed).value()[0];
    };
    ad::Tape tape;
    auto pass = model.forward(tape, fx.batch, flexcast::Mode::train);
    tape.backward(project(tape, pass.prediction, proj_seed));

    ModelGradientResult result;
    auto& entries = model.parameters().entries();
    for (auto [index, var] : pass.bound) {
        auto analytic = tape.grad(var);
        if (analytic.empty()) analytic.assign(var.value().size(), 0.0);
        auto& value = entries[index].value;
        for (std::size_t j = 0; j < value.size(); ++j) {
            const double orig = value[j];
            value[j] = orig + h;
            const double up = evaluate();
            value[j] = orig - h;
            const double down = evaluate();
            value[j] = orig;
            result.max_error = std::max(result.max_error, relative_error(analytic[j], (up - down) / (2.0 * h)));
            ++result.coordinates;
        }
    }
    return result;
}

}  // namespace testing
