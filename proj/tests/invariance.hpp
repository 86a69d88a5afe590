#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "flexcast/data.hpp"
#include "flexcast/graph.hpp"
#include "flexcast/model.hpp"
#include "flexcast/random.hpp"
#include "oracles.hpp"

// Structural properties of the model checked on random graphs and weights.
namespace testing {

struct ModelWorld {
    flexcast::ProximityGraph graph;
    flexcast::TrafficSeries series;
};

// Random planar layout dense enough that 3-hop subgraphs reach well past the center.
inline ModelWorld model_world(std::size_t stations, std::size_t steps, std::uint64_t seed) {
    flexcast::Rng rng(flexcast::derive_seed(seed, {0x776f726c64}));
    flexcast::StationMap m;
    for (std::size_t i = 0; i < stations; ++i) {
        m.ids.push_back(std::to_string(i));
        m.positions.push_back({rng.uniform(0.0, 6000.0), rng.uniform(0.0, 6000.0)});
    }
    ModelWorld w;
    w.graph = flexcast::build_proximity_graph(m, 1.6, 10);
    w.series.station_ids = m.ids;
    w.series.steps = steps;
    for (std::size_t i = 0; i < stations * steps; ++i) w.series.values.push_back(rng.uniform(-2.0, 2.0));
    return w;
}

// Model with every tensor randomized, including eps and running statistics, so
// that no property holds by accident of the initial values.
inline flexcast::Model random_model(const flexcast::ModelConfig& config, std::uint64_t seed) {
    flexcast::Model model(config, seed);
    flexcast::Rng rng(flexcast::derive_seed(seed, {0x72616e64}));
    for (auto& e : model.parameters().entries()) {
        if (e.name.ends_with("running_var"))
            for (auto& v : e.value.data) v = rng.uniform(0.5, 2.0);
        else if (e.name.ends_with("running_mean") || e.name.ends_with(".beta") || e.name.ends_with(".eps"))
            for (auto& v : e.value.data) v = rng.uniform(-0.3, 0.3);
        else if (e.name.ends_with(".gamma"))
            for (auto& v : e.value.data) v = rng.uniform(0.5, 1.5);
    }
    return model;
}

inline flexcast::SampleBatch single_batch(const ModelWorld& w, const flexcast::SubgraphRecord& rec, std::size_t t,
                                          const flexcast::ModelConfig& c) {
    const std::vector<flexcast::Sample> s{{rec.node_index[0], static_cast<std::uint32_t>(t)}};
    return flexcast::assemble_batch(s, std::span(&rec, 1), w.series, c.history, c.horizon);
}

// Number of encoder outputs at a timestep before the perturbed one that changed.
// Every history position of every node is perturbed in turn.
inline std::size_t causality_violations(const flexcast::ModelConfig& config, std::uint64_t seed) {
    const auto w = model_world(30, config.history + config.horizon + 2, seed);
    const auto model = random_model(config, seed);
    const auto rec = flexcast::khop_subgraph(w.graph, static_cast<std::size_t>(seed % 30), config.layers);
    const auto batch = single_batch(w, rec, config.history, config);
    const auto base = model.encode(batch);
    const std::size_t nodes = batch.total_nodes(), steps = config.history, channels = config.channels;
    std::size_t violations = 0;
    for (std::size_t t = 0; t < steps; ++t)
        for (std::size_t node = 0; node < nodes; ++node) {
            auto perturbed = batch;
            perturbed.histories[node * steps + t] += 1.0;
            const auto out = model.encode(perturbed);
            for (std::size_t n = 0; n < nodes; ++n)
                for (std::size_t s = 0; s < t; ++s)
                    for (std::size_t c = 0; c < channels; ++c) {
                        const std::size_t i = (n * steps + s) * channels + c;
                        violations += out[i] != base[i];
                    }
        }
    return violations;
}

// Relabels all non-center nodes of a record by a random permutation.
inline flexcast::SubgraphRecord permute_record(const flexcast::SubgraphRecord& rec, flexcast::Rng& rng) {
    std::vector<std::uint32_t> perm(rec.size());
    std::iota(perm.begin(), perm.end(), 0u);
    if (perm.size() > 2) {
        std::vector<std::uint32_t> tail(perm.begin() + 1, perm.end());
        rng.shuffle(tail);
        std::copy(tail.begin(), tail.end(), perm.begin() + 1);
    }
    // perm[old] = new
    flexcast::SubgraphRecord out = rec;
    for (std::size_t i = 0; i < rec.size(); ++i) {
        out.node_ids[perm[i]] = rec.node_ids[i];
        out.node_index[perm[i]] = rec.node_index[i];
    }
    out.edges.clear();
    for (const auto& e : rec.edges)
        out.edges.push_back({std::min(perm[e.a], perm[e.b]), std::max(perm[e.a], perm[e.b]), e.weight});
    std::sort(out.edges.begin(), out.edges.end(), [](const auto& x, const auto& y) {
        return std::tie(x.a, x.b) < std::tie(y.a, y.b);
    });
    return out;
}

inline double max_abs_diff(const flexcast::Tensor& a, const flexcast::Tensor& b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
    return worst;
}

// Largest prediction change under within-subgraph node relabeling.
inline double permutation_error(const flexcast::ModelConfig& config, std::uint64_t seed, std::size_t centers = 10) {
    const auto w = model_world(40, config.history + config.horizon + 5, seed);
    const auto model = random_model(config, seed);
    flexcast::Rng rng(seed);
    double worst = 0.0;
    for (std::size_t c = 0; c < centers; ++c) {
        const auto rec = flexcast::khop_subgraph(w.graph, rng.next() % 40, 2);
        const std::size_t t = config.history + rng.next() % 5;
        const auto a = model.predict(single_batch(w, rec, t, config));
        const auto b = model.predict(single_batch(w, permute_record(rec, rng), t, config));
        worst = std::max(worst, max_abs_diff(a, b));
    }
    return worst;
}

// Largest difference between one batched prediction and per-sample predictions.
inline double batch_vs_single_error(const flexcast::ModelConfig& config, std::uint64_t seed, std::size_t samples = 12) {
    const auto w = model_world(40, config.history + config.horizon + 5, seed);
    const auto model = random_model(config, seed);
    flexcast::Rng rng(seed + 1);
    std::vector<flexcast::Sample> batch_samples;
    std::vector<flexcast::SubgraphRecord> records;
    for (std::size_t i = 0; i < samples; ++i) {
        const auto station = static_cast<std::uint32_t>(rng.next() % 40);
        batch_samples.push_back({station, static_cast<std::uint32_t>(config.history + rng.next() % 5)});
        records.push_back(flexcast::khop_subgraph(w.graph, station, 2));
    }
    const auto batched =
        model.predict(flexcast::assemble_batch(batch_samples, records, w.series, config.history, config.horizon));
    double worst = 0.0;
    for (std::size_t i = 0; i < samples; ++i) {
        const auto one = model.predict(single_batch(w, records[i], batch_samples[i].t, config));
        for (std::size_t h = 0; h < config.horizon; ++h)
            worst = std::max(worst, std::abs(one[h] - batched[i * config.horizon + h]));
    }
    return worst;
}

struct LocalityResult {
    std::size_t far_nodes = 0;   // nodes perturbed that lie beyond L hops
    std::size_t violations = 0;  // perturbations that changed the target-pooled output
};

// Perturbs every node more than L hops from the center of a (L+2)-hop subgraph.
inline LocalityResult locality(const flexcast::ModelConfig& config, std::uint64_t seed, std::size_t centers = 5) {
    const auto w = model_world(40, config.history + config.horizon + 2, seed);
    const auto model = random_model(config, seed);
    flexcast::Rng rng(seed + 2);
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (const auto& e : w.graph.edges) pairs.emplace_back(e.a, e.b);
    LocalityResult r;
    for (std::size_t c = 0; c < centers; ++c) {
        const std::size_t center = rng.next() % 40;
        const auto rec = flexcast::khop_subgraph(w.graph, center, config.layers + 2);
        const auto near = oracle::bfs(w.graph.size(), pairs, center, config.layers);
        const auto batch = single_batch(w, rec, config.history, config);
        const auto base = model.predict(batch);
        for (std::size_t j = 0; j < rec.size(); ++j) {
            if (near.count(rec.node_index[j])) continue;
            ++r.far_nodes;
            auto perturbed = batch;
            for (std::size_t t = 0; t < config.history; ++t) perturbed.histories[j * config.history + t] += 3.0;
            r.violations += !(model.predict(perturbed) == base);
        }
    }
    return r;
}

}  // namespace testing
