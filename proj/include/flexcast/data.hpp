#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "flexcast/autodiff.hpp"
#include "flexcast/graph.hpp"
#include "flexcast/subgraph_store.hpp"
#include "flexcast/tensor.hpp"

namespace flexcast {

// Tile-level traffic, tiles x steps, row-major.
struct TileTraffic {
    CoordinateFrame frame = CoordinateFrame::planar_m;
    std::vector<std::string> tile_ids;
    std::vector<std::array<double, 2>> positions;
    std::size_t steps = 0;
    std::vector<double> traffic;
    double resolution_minutes = 15.0;

    std::size_t size() const { return tile_ids.size(); }
};

// Per-station traffic, stations x steps, row-major; row order follows the station map.
struct TrafficSeries {
    std::vector<std::string> station_ids;
    std::size_t steps = 0;
    std::vector<double> values;
    std::int64_t start_timestamp = 0;
    double resolution_minutes = 15.0;

    std::size_t stations() const { return station_ids.size(); }
    double at(std::size_t station, std::size_t t) const { return values[station * steps + t]; }
    std::span<const double> row(std::size_t station) const {
        return std::span<const double>(values).subspan(station * steps, steps);
    }

    friend bool operator==(const TrafficSeries&, const TrafficSeries&) = default;
};

// Tile coordinates file (tile_id,x_m,y_m or tile_id,lat,lon) plus a traffic file in wide
// (tile_id,t0,t1,...) or long (tile_id,timestep,traffic) layout.
TileTraffic read_tile_traffic(const std::string& tiles_csv, const std::string& traffic_csv);

// Wide per-station traffic (station_id,t0,t1,...), rows reordered to the station map.
TrafficSeries read_station_traffic(const std::string& traffic_csv, const StationMap& stations);
void write_wide_csv(const std::string& path, const std::string& id_column, std::span<const std::string> ids,
                    std::span<const double> values, std::size_t steps);

// Each tile goes to its nearest station (ties to the smaller station id); station
// series are sums of their tiles' series.
TrafficSeries voronoi_aggregate(const TileTraffic& tiles, const StationMap& stations);

struct Window {
    std::vector<double> history;  // [t - T_h, t)
    std::vector<double> target;   // [t, t + T_f)
};

Window window(const TrafficSeries& series, std::size_t station, std::size_t t, std::size_t history,
              std::size_t horizon);
std::size_t count_windows(const TrafficSeries& series, std::size_t history, std::size_t horizon);

struct Sample {
    std::uint32_t station = 0;
    std::uint32_t t = 0;

    friend bool operator==(const Sample&, const Sample&) = default;
    friend auto operator<=>(const Sample&, const Sample&) = default;
};

enum class SplitMode { inductive, transductive };

std::string to_string(SplitMode m);

struct SplitSpec {
    double train_fraction = 0.7;
    double val_fraction = 0.1;
    double test_fraction = 0.2;
    SplitMode mode = SplitMode::inductive;
    double scarcity = 1.0;  // fraction of the newest train+val steps retained
    std::uint64_t seed = 0;

    void validate() const;
    friend bool operator==(const SplitSpec&, const SplitSpec&) = default;
};

// Half-open timestep blocks, chronological: train, then val, then test.
struct TimeBlocks {
    std::size_t train_begin = 0, train_end = 0;
    std::size_t val_begin = 0, val_end = 0;
    std::size_t test_begin = 0, test_end = 0;
};

struct NodeSplit {
    std::vector<std::uint32_t> train, val, test;
};

struct DatasetSplit {
    TimeBlocks time;
    NodeSplit nodes;
    std::vector<Sample> train, val, test;
};

TimeBlocks time_blocks(std::size_t steps, const SplitSpec& spec);
NodeSplit node_split(std::size_t stations, const SplitSpec& spec);

// A sample (i, t) belongs to a block by its forecast origin t. Training and
// validation windows stay inside the retained train+val range; test history may
// reach back into validation steps.
DatasetSplit split(const TrafficSeries& series, const SplitSpec& spec, std::size_t history, std::size_t horizon);

struct Scaler {
    double mean = 0.0;
    double std = 1.0;

    double transform(double v) const { return (v - mean) / std; }
    double inverse(double v) const { return v * std + mean; }
    friend bool operator==(const Scaler&, const Scaler&) = default;
};

// z-score statistics over the training nodes' training-block steps.
Scaler fit_scaler(const TrafficSeries& series, const DatasetSplit& split);
TrafficSeries standardize(const TrafficSeries& series, const Scaler& scaler);

// Subgraph records resident in memory, indexed by station row.
class SubgraphCache {
public:
    SubgraphCache() = default;
    explicit SubgraphCache(std::vector<SubgraphRecord> records) : records_(std::move(records)) {}
    static SubgraphCache load(const SubgraphStore& store, std::span<const std::string> station_ids);

    const SubgraphRecord& at(std::size_t station) const;
    std::size_t size() const { return records_.size(); }

private:
    std::vector<SubgraphRecord> records_;
};

// Subgraphs of B samples stacked block-diagonally. Message passing cannot cross
// blocks because no edge joins two blocks.
struct SampleBatch {
    std::vector<Sample> samples;
    std::vector<std::size_t> node_offsets;  // B + 1
    std::vector<std::size_t> centers;       // center row of each sample
    std::shared_ptr<const ad::Adjacency> adjacency;
    Tensor histories;  // [N_total, T_h, 1]
    Tensor targets;    // [B, T_f]

    std::size_t size() const { return samples.size(); }
    std::size_t total_nodes() const { return node_offsets.back(); }
};

struct BatchOptions {
    std::size_t history = 12;
    std::size_t horizon = 3;
    double edge_dropout = 0.0;
    bool train = false;
    std::uint64_t seed = 0;
    // When false, origins up to the series end are accepted and unknown targets read as 0.
    bool require_targets = true;
};

// `series` is expected to be standardized. Targets are read from it too.
SampleBatch assemble_batch(std::span<const Sample> samples, const SubgraphCache& subgraphs,
                           const TrafficSeries& series, const BatchOptions& options);

// Assembles a batch from explicit records (one per sample) without edge dropout.
SampleBatch assemble_batch(std::span<const Sample> samples, std::span<const SubgraphRecord> records,
                           const TrafficSeries& series, std::size_t history, std::size_t horizon);

struct SyntheticConfig {
    std::size_t stations = 50;
    std::size_t steps = 2000;
    std::uint64_t seed = 0;
    double box_km = 0.0;  // side of the square; 0 picks one giving ~8 stations within 3.5 km
    std::size_t hotspots = 0;  // 0 picks max(3, stations / 8)
    double base_level = 2e5;
    double daily_amplitude = 0.6;
    double weekly_amplitude = 0.15;
    double latent_amplitude = 0.35;
    double noise = 0.08;
    double wave_speed_km_per_step = 1.0;
    double latent_length_km = 3.0;
};

struct SyntheticDataset {
    StationMap stations;
    TrafficSeries series;
};

// Diurnal and weekly cycles plus latent waves that spread outward from hotspots,
// so neighboring stations share (time-shifted) signal, plus per-station noise.
SyntheticDataset generate_synthetic(const SyntheticConfig& config);

// Splits each station's series over a few tiles placed inside its Voronoi cell.
TileTraffic synthetic_tiles(const SyntheticDataset& data, std::size_t tiles_per_station, std::uint64_t seed);

// Everything `prepare` produces besides the subgraph store.
struct PreparedDataset {
    static constexpr std::uint8_t kVersion = 1;

    StationMap stations;
    TrafficSeries series;
    ProximityGraph graph;
    std::size_t k = 2;
    Scaler scaler;
    SplitSpec split_spec;
    NodeSplit nodes;

    void save(const std::string& path) const;
    static PreparedDataset load(const std::string& path);
};

}  // namespace flexcast
