#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <tuple>
#include <vector>

#include "flexcast/autodiff.hpp"
#include "flexcast/data.hpp"
#include "flexcast/graph.hpp"
#include "flexcast/random.hpp"
#include "flexcast/tensor.hpp"
#include "flexcast/training.hpp"

namespace testing {

using flexcast::Shape;
using flexcast::Tensor;
namespace ad = flexcast::ad;

inline Tensor random_tensor(const Shape& shape, flexcast::Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(shape);
    for (auto& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

// Values bounded away from zero, for operators with a kink there.
inline Tensor random_away_from_zero(const Shape& shape, flexcast::Rng& rng, double gap = 0.05) {
    Tensor t(shape);
    for (auto& v : t.data) {
        const double m = rng.uniform(gap, 1.0);
        v = rng.uniform() < 0.5 ? -m : m;
    }
    return t;
}

// |a - n| / max(|a|, |n|, floor)
inline double relative_error(double a, double n, double floor = 1e-3) {
    return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

using GraphFn = std::function<ad::Var(ad::Tape&, const std::vector<ad::Var>&)>;

// Projects a tensor output onto fixed random weights so any op yields a scalar loss.
inline ad::Var project(ad::Tape& tape, ad::Var out, std::uint64_t seed) {
    const std::size_t n = out.value().size();
    flexcast::Rng rng(seed);
    Tensor w({n, 1});
    for (auto& v : w.data) v = rng.uniform(-1.0, 1.0);
    return ad::sum_all(ad::linear(ad::reshape(out, {1, n}), tape.constant(w)));
}

// Largest relative error between the analytic gradient of project(f(inputs)) and
// central differences with step h, over every coordinate of every input.
inline double fd_max_error(const std::vector<Tensor>& inputs, const GraphFn& f, double h = 1e-5,
                           std::uint64_t seed = 99) {
    ad::Tape tape;
    std::vector<ad::Var> vars;
    for (const auto& t : inputs) vars.push_back(tape.parameter(t));
    ad::Var loss = project(tape, f(tape, vars), seed);
    tape.backward(loss);
    std::vector<std::vector<double>> analytic;
    for (auto v : vars) {
        auto g = tape.grad(v);
        if (g.empty()) g.assign(v.value().size(), 0.0);
        analytic.push_back(g);
    }
    auto eval = [&](const std::vector<Tensor>& xs) {
        ad::Tape t;
        std::vector<ad::Var> vs;
        for (const auto& x : xs) vs.push_back(t.constant(x));
        return project(t, f(t, vs), seed).value()[0];
    };
    double worst = 0.0;
    std::vector<Tensor> probe = inputs;
    for (std::size_t i = 0; i < inputs.size(); ++i)
        for (std::size_t j = 0; j < inputs[i].size(); ++j) {
            const double orig = probe[i][j];
            probe[i][j] = orig + h;
            const double up = eval(probe);
            probe[i][j] = orig - h;
            const double down = eval(probe);
            probe[i][j] = orig;
            worst = std::max(worst, relative_error(analytic[i][j], (up - down) / (2.0 * h)));
        }
    return worst;
}

// Small station layout on a line with unit spacing plus a ring closure when asked.
inline flexcast::StationMap line_stations(std::size_t n, double spacing_m = 1000.0) {
    flexcast::StationMap m;
    for (std::size_t i = 0; i < n; ++i) {
        m.ids.push_back(std::to_string(i));
        m.positions.push_back({spacing_m * static_cast<double>(i), 0.0});
    }
    return m;
}

inline flexcast::ProximityGraph graph_from_edges(std::size_t n, const std::vector<std::pair<std::size_t, std::size_t>>& pairs) {
    flexcast::ProximityGraph g;
    for (std::size_t i = 0; i < n; ++i) g.ids.push_back("s" + std::to_string(i));
    for (auto [a, b] : pairs) g.edges.push_back({static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b), 1.0});
    std::sort(g.edges.begin(), g.edges.end(), [](const flexcast::Edge& x, const flexcast::Edge& y) {
        return std::tie(x.a, x.b) < std::tie(y.a, y.b);
    });
    g.finalize();
    return g;
}

inline std::vector<std::pair<std::size_t, std::size_t>> random_edges(std::size_t n, double p, flexcast::Rng& rng) {
    std::vector<std::pair<std::size_t, std::size_t>> e;
    for (std::size_t a = 0; a < n; ++a)
        for (std::size_t b = a + 1; b < n; ++b)
            if (rng.uniform() < p) e.emplace_back(a, b);
    return e;
}

// Synthetic stations with their k-hop subgraphs resident in memory.
struct SyntheticWorld {
    flexcast::SyntheticDataset data;
    flexcast::ProximityGraph graph;
    flexcast::SubgraphCache subgraphs;
};

inline SyntheticWorld synthetic_world(std::size_t stations, std::size_t steps, std::uint64_t seed, std::size_t k = 2) {
    flexcast::SyntheticConfig cfg;
    cfg.stations = stations;
    cfg.steps = steps;
    cfg.seed = seed;
    SyntheticWorld w;
    w.data = flexcast::generate_synthetic(cfg);
    w.graph = flexcast::build_proximity_graph(w.data.stations, 3.5, 10);
    std::vector<flexcast::SubgraphRecord> records;
    for (std::size_t i = 0; i < stations; ++i) records.push_back(flexcast::khop_subgraph(w.graph, i, k));
    w.subgraphs = flexcast::SubgraphCache(std::move(records));
    return w;
}

inline flexcast::TrainingSet training_set(const SyntheticWorld& w, flexcast::SplitSpec spec,
                                          const flexcast::ModelConfig& model) {
    return flexcast::make_training_set(w.data.series, w.subgraphs, spec, model.history, model.horizon);
}

// Scratch directory removed on destruction.
struct TempDir {
    std::filesystem::path path;

    explicit TempDir(const std::string& tag) {
        path = std::filesystem::temp_directory_path() /
               ("flexcast_" + tag + "_" + std::to_string(reinterpret_cast<std::uintptr_t>(this)));
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

}  // namespace testing
