#pragma once

#include <cstddef>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "flexcast/config.hpp"
#include "flexcast/data.hpp"
#include "flexcast/eval.hpp"
#include "flexcast/model.hpp"
#include "flexcast/training.hpp"

// The steps behind each command-line subcommand, callable in-process.
namespace flexcast::pipeline {

inline constexpr const char* kDatasetFile = "dataset.fxd";
inline constexpr const char* kStoreFile = "subgraphs.fxs";

struct SyntheticFiles {
    std::string stations;      // station_id,x_m,y_m
    std::string traffic;       // per-station wide traffic
    std::string tiles;         // tile_id,x_m,y_m
    std::string tile_traffic;  // per-tile wide traffic
};

SyntheticFiles gen_synthetic(const std::string& out_dir, const SyntheticConfig& config,
                             std::size_t tiles_per_station = 4);

struct PrepareOptions {
    std::string stations;
    std::string tiles;    // empty or voronoi = false: traffic is already per station
    std::string traffic;
    std::string out_dir;
    bool voronoi = true;
    GraphConfig graph;
    std::uint64_t seed = 0;
};

struct PrepareSummary {
    std::size_t stations = 0;
    std::size_t steps = 0;
    std::size_t edges = 0;
    std::size_t components = 0;
    std::size_t isolated = 0;
    std::size_t max_degree = 0;
    double mean_degree = 0.0;
    double mean_subgraph_size = 0.0;
    bool aggregated = false;

    std::string report() const;
};

PrepareSummary prepare(const PrepareOptions& options);

struct LoadedData {
    PreparedDataset dataset;
    SubgraphCache subgraphs;
};

LoadedData load_data(const std::string& dir);

TrainingSet training_set(const LoadedData& data, const RunConfig& config);

struct RunOutcome {
    Checkpoint checkpoint;
    TrainReport report;
};

// Log lines: epoch, train loss, validation MAE per horizon, seconds.
void log_epoch(std::ostream& out, const EpochRecord& rec);

RunOutcome run_train(const LoadedData& data, const RunConfig& config, std::ostream* log = nullptr);
RunOutcome run_finetune(const LoadedData& data, const Checkpoint& source, const RunConfig& config,
                        TransferScope scope, std::ostream* log = nullptr);

std::string report_path(const std::string& checkpoint_path);
// Writes the checkpoint and, next to it, the JSON training report.
void save_outcome(const RunOutcome& outcome, const std::string& checkpoint_path);

// The run settings stored in a checkpoint.
RunConfig checkpoint_config(const Checkpoint& ckpt);

// split_name is train, val or test.
MetricsReport run_evaluate(const LoadedData& data, const Checkpoint& ckpt, const std::string& split_name);

// T_f raw-unit forecasts from origin t (history [t - T_h, t)); t may equal the series length.
std::vector<double> run_predict(const LoadedData& data, const Checkpoint& ckpt, const std::string& station_id,
                                std::size_t t);

}  // namespace flexcast::pipeline
