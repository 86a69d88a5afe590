#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include "flexcast/data.hpp"
#include "flexcast/model.hpp"
#include "flexcast/training.hpp"

namespace flexcast {

struct GraphConfig {
    double kappa_km = 3.5;
    std::size_t max_degree = 10;
    std::size_t k = 2;

    friend bool operator==(const GraphConfig&, const GraphConfig&) = default;
};

struct DataConfig {
    std::string stations;
    std::string tiles;
    std::string traffic;

    friend bool operator==(const DataConfig&, const DataConfig&) = default;
};

// Every setting of a run. The INI form has sections [data], [graph], [model],
// [train], [split] and [run]; unknown sections or keys are rejected.
struct RunConfig {
    DataConfig data;
    GraphConfig graph;
    ModelConfig model;
    TrainConfig train;
    SplitSpec split;
    std::uint64_t seed = 0;
    std::string variant = "FLEXIBLE";

    void validate() const;
    // Propagates `seed` into the split and training settings.
    void apply_seed(std::uint64_t s);
    std::uint64_t init_seed() const;

    std::string to_ini() const;
    static RunConfig parse(const std::string& text, const std::string& origin = "<config>");
    static RunConfig load(const std::string& path);

    friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

}  // namespace flexcast
