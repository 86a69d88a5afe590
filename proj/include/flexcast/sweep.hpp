#pragma once

#include <cstddef>
#include <ostream>
#include <string>
#include <vector>

#include "flexcast/config.hpp"
#include "flexcast/eval.hpp"
#include "flexcast/model.hpp"
#include "flexcast/training.hpp"

namespace flexcast {

enum class Variant { flexible, tr_flexible, tcn };

std::string to_string(Variant v);
Variant parse_variant(const std::string& s);

struct SweepOptions {
    std::vector<double> rates{0.05, 0.10, 0.20, 0.40, 1.0};
    std::vector<Variant> variants{Variant::flexible, Variant::tr_flexible, Variant::tcn};
    RunConfig config;
    const Checkpoint* source = nullptr;  // required by tr_flexible
    TransferScope scope = TransferScope::all;
    std::ostream* log = nullptr;
};

struct SweepRow {
    Variant variant = Variant::flexible;
    double rate = 1.0;
    MetricsReport metrics;
    std::size_t parameters = 0;
    std::vector<Sample> test;  // identical across rates
};

// Re-splits at each rate (test block fixed, oldest train+val steps dropped),
// trains or finetunes every variant and evaluates it on the test samples.
std::vector<SweepRow> scarcity_sweep(const TrafficSeries& raw, const SubgraphCache& subgraphs,
                                     const SweepOptions& options);

std::string sweep_csv(const std::vector<SweepRow>& rows);
// One line per variant, MAE per rate and horizon, then the parameter count.
std::string sweep_table(const std::vector<SweepRow>& rows, double display_scale = 1.0);

}  // namespace flexcast
