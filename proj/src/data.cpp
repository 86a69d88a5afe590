#include "flexcast/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <unordered_map>

#include "flexcast/csv.hpp"
#include "flexcast/error.hpp"
#include "flexcast/random.hpp"

namespace flexcast {

namespace {

std::size_t round_count(double v) { return static_cast<std::size_t>(std::llround(v)); }

bool is_wide_header(const std::vector<std::string>& header) {
    if (header.size() < 2) return false;
    for (std::size_t i = 1; i < header.size(); ++i)
        if (header[i] != "t" + std::to_string(i - 1)) return false;
    return true;
}

}  // namespace

// ---------------------------------------------------------------------------
// ingestion

TileTraffic read_tile_traffic(const std::string& tiles_csv, const std::string& traffic_csv) {
    const auto coords = csv::read(tiles_csv);
    TileTraffic tiles;
    if (coords.header == std::vector<std::string>{"tile_id", "lat", "lon"})
        tiles.frame = CoordinateFrame::latlon;
    else if (coords.header == std::vector<std::string>{"tile_id", "x_m", "y_m"})
        tiles.frame = CoordinateFrame::planar_m;
    else
        throw InputError(tiles_csv + ": header must be tile_id,lat,lon or tile_id,x_m,y_m");

    std::unordered_map<std::string, std::size_t> index;
    for (const auto& row : coords.rows) {
        if (!index.emplace(row[0], tiles.tile_ids.size()).second) throw InputError("duplicate tile id '" + row[0] + "'");
        tiles.tile_ids.push_back(row[0]);
        tiles.positions.push_back({csv::to_double(row[1], tiles_csv), csv::to_double(row[2], tiles_csv)});
    }

    const auto table = csv::read(traffic_csv);
    auto tile_row = [&](const std::string& id) {
        auto it = index.find(id);
        if (it == index.end()) throw InputError(traffic_csv + ": unknown tile '" + id + "'");
        return it->second;
    };
    if (is_wide_header(table.header)) {
        tiles.steps = table.header.size() - 1;
        tiles.traffic.assign(tiles.size() * tiles.steps, 0.0);
        for (const auto& row : table.rows) {
            const auto r = tile_row(row[0]);
            for (std::size_t t = 0; t < tiles.steps; ++t)
                tiles.traffic[r * tiles.steps + t] = csv::to_double(row[t + 1], traffic_csv);
        }
    } else if (table.header == std::vector<std::string>{"tile_id", "timestep", "traffic"}) {
        long long max_t = -1;
        for (const auto& row : table.rows) max_t = std::max(max_t, csv::to_int(row[1], traffic_csv));
        tiles.steps = static_cast<std::size_t>(max_t + 1);
        tiles.traffic.assign(tiles.size() * tiles.steps, 0.0);
        for (const auto& row : table.rows) {
            const auto t = csv::to_int(row[1], traffic_csv);
            if (t < 0) throw InputError(traffic_csv + ": negative timestep");
            tiles.traffic[tile_row(row[0]) * tiles.steps + static_cast<std::size_t>(t)] +=
                csv::to_double(row[2], traffic_csv);
        }
    } else {
        throw InputError(traffic_csv + ": expected tile_id,t0,t1,... or tile_id,timestep,traffic");
    }
    for (double v : tiles.traffic)
        if (!(v >= 0.0) || !std::isfinite(v)) throw InputError(traffic_csv + ": traffic must be finite and non-negative");
    return tiles;
}

TrafficSeries read_station_traffic(const std::string& traffic_csv, const StationMap& stations) {
    const auto table = csv::read(traffic_csv);
    if (!is_wide_header(table.header) || table.header[0] != "station_id")
        throw InputError(traffic_csv + ": expected header station_id,t0,t1,...");
    std::unordered_map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < stations.size(); ++i) index.emplace(stations.ids[i], i);

    TrafficSeries series;
    series.station_ids = stations.ids;
    series.steps = table.header.size() - 1;
    series.values.assign(stations.size() * series.steps, 0.0);
    std::vector<bool> seen(stations.size(), false);
    for (const auto& row : table.rows) {
        auto it = index.find(row[0]);
        if (it == index.end()) throw InputError(traffic_csv + ": station '" + row[0] + "' not in station map");
        if (seen[it->second]) throw InputError(traffic_csv + ": station '" + row[0] + "' listed twice");
        seen[it->second] = true;
        for (std::size_t t = 0; t < series.steps; ++t) {
            const double v = csv::to_double(row[t + 1], traffic_csv);
            if (!(v >= 0.0) || !std::isfinite(v)) throw InputError(traffic_csv + ": traffic must be non-negative");
            series.values[it->second * series.steps + t] = v;
        }
    }
    for (std::size_t i = 0; i < seen.size(); ++i)
        if (!seen[i]) throw InputError(traffic_csv + ": no traffic for station '" + stations.ids[i] + "'");
    return series;
}

void write_wide_csv(const std::string& path, const std::string& id_column, std::span<const std::string> ids,
                    std::span<const double> values, std::size_t steps) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write " + path);
    out << id_column;
    for (std::size_t t = 0; t < steps; ++t) out << ",t" << t;
    out << '\n';
    for (std::size_t i = 0; i < ids.size(); ++i) {
        out << ids[i];
        for (std::size_t t = 0; t < steps; ++t) out << ',' << csv::format_double(values[i * steps + t]);
        out << '\n';
    }
    if (!out) throw InputError("failed writing " + path);
}

TrafficSeries voronoi_aggregate(const TileTraffic& tiles, const StationMap& stations) {
    if (stations.size() == 0) throw InputError("voronoi aggregation needs at least one station");
    if (tiles.size() > 0 && tiles.frame != stations.frame)
        throw InputError("coordinate frame mismatch between tiles and stations");
    TrafficSeries series;
    series.station_ids = stations.ids;
    series.steps = tiles.steps;
    series.resolution_minutes = tiles.resolution_minutes;
    series.values.assign(stations.size() * tiles.steps, 0.0);
    for (std::size_t m = 0; m < tiles.size(); ++m) {
        std::size_t best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < stations.size(); ++i) {
            const double d = distance_km(stations.frame, tiles.positions[m], stations.positions[i]);
            if (d < best_d || (d == best_d && station_id_less(stations.ids[i], stations.ids[best]))) {
                best = i;
                best_d = d;
            }
        }
        for (std::size_t t = 0; t < tiles.steps; ++t)
            series.values[best * tiles.steps + t] += tiles.traffic[m * tiles.steps + t];
    }
    return series;
}

// ---------------------------------------------------------------------------
// windows and splits

Window window(const TrafficSeries& series, std::size_t station, std::size_t t, std::size_t history,
              std::size_t horizon) {
    if (station >= series.stations()) throw IndexError("station row " + std::to_string(station) + " out of range");
    if (t < history || t + horizon > series.steps)
        throw IndexError("window at t=" + std::to_string(t) + " does not fit in " + std::to_string(series.steps) +
                         " steps");
    auto row = series.row(station);
    return {{row.begin() + static_cast<std::ptrdiff_t>(t - history), row.begin() + static_cast<std::ptrdiff_t>(t)},
            {row.begin() + static_cast<std::ptrdiff_t>(t), row.begin() + static_cast<std::ptrdiff_t>(t + horizon)}};
}

std::size_t count_windows(const TrafficSeries& series, std::size_t history, std::size_t horizon) {
    if (series.steps < history + horizon) return 0;
    return series.stations() * (series.steps - history - horizon + 1);
}

std::string to_string(SplitMode m) { return m == SplitMode::inductive ? "inductive" : "transductive"; }

void SplitSpec::validate() const {
    for (double f : {train_fraction, val_fraction, test_fraction})
        if (!(f >= 0.0 && f <= 1.0)) throw ConfigError("split fractions must lie in [0, 1]");
    if (std::abs(train_fraction + val_fraction + test_fraction - 1.0) > 1e-9)
        throw ConfigError("split fractions must sum to 1");
    if (!(scarcity > 0.0 && scarcity <= 1.0)) throw ConfigError("scarcity rate must lie in (0, 1]");
}

TimeBlocks time_blocks(std::size_t steps, const SplitSpec& spec) {
    spec.validate();
    const std::size_t train_len = round_count(spec.train_fraction * static_cast<double>(steps));
    const std::size_t val_len = round_count(spec.val_fraction * static_cast<double>(steps));
    TimeBlocks b;
    const std::size_t trainval_end = std::min(steps, train_len + val_len);
    b.test_begin = trainval_end;
    b.test_end = steps;
    if (spec.scarcity >= 1.0) {
        b.train_begin = 0;
        b.train_end = std::min(train_len, steps);
    } else {
        // Keep the newest share of train+val steps with validation at 1/7 of training.
        const std::size_t kept = round_count(spec.scarcity * static_cast<double>(trainval_end));
        const std::size_t kept_val = round_count(static_cast<double>(kept) / 8.0);
        b.train_begin = trainval_end - kept;
        b.train_end = trainval_end - kept_val;
    }
    b.val_begin = b.train_end;
    b.val_end = trainval_end;
    return b;
}

NodeSplit node_split(std::size_t stations, const SplitSpec& spec) {
    NodeSplit s;
    std::vector<std::uint32_t> all(stations);
    for (std::uint32_t i = 0; i < stations; ++i) all[i] = i;
    if (spec.mode == SplitMode::transductive) {
        s.train = s.val = s.test = all;
        return s;
    }
    Rng rng(derive_seed(spec.seed, {0x6e6f6465ULL}));
    rng.shuffle(all);
    const std::size_t n_train = round_count(spec.train_fraction * static_cast<double>(stations));
    const std::size_t n_val = std::min(stations - n_train, round_count(spec.val_fraction * static_cast<double>(stations)));
    s.train.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n_train));
    s.val.assign(all.begin() + static_cast<std::ptrdiff_t>(n_train),
                 all.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
    s.test.assign(all.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), all.end());
    for (auto* part : {&s.train, &s.val, &s.test}) std::sort(part->begin(), part->end());
    return s;
}

DatasetSplit split(const TrafficSeries& series, const SplitSpec& spec, std::size_t history, std::size_t horizon) {
    DatasetSplit out;
    out.time = time_blocks(series.steps, spec);
    out.nodes = node_split(series.stations(), spec);
    const auto& tb = out.time;

    struct Range {
        std::size_t begin, end;
    };
    // Forecast origins t per block. Training origins run up to the validation block
    // so that retained train+val origins stay contiguous; the +1 keeps t + horizon <= block end.
    const Range train{tb.train_begin + history, tb.train_end};
    const Range val{std::max(tb.val_begin, history), tb.val_end >= horizon ? tb.val_end - horizon + 1 : 0};
    const Range test{std::max(tb.test_begin, history), tb.test_end >= horizon ? tb.test_end - horizon + 1 : 0};

    auto fill = [](std::vector<Sample>& dst, const std::vector<std::uint32_t>& nodes, Range r) {
        for (auto i : nodes)
            for (std::size_t t = r.begin; t < r.end; ++t) dst.push_back({i, static_cast<std::uint32_t>(t)});
    };
    fill(out.train, out.nodes.train, train);
    fill(out.val, out.nodes.val, val);
    fill(out.test, out.nodes.test, test);
    if (out.train.empty() || out.val.empty() || out.test.empty())
        throw ConfigError("split leaves no windows for " +
                          std::string(out.train.empty() ? "train" : out.val.empty() ? "validation" : "test") +
                          " (steps=" + std::to_string(series.steps) + ", stations=" +
                          std::to_string(series.stations()) + ", scarcity=" + std::to_string(spec.scarcity) + ")");
    return out;
}

Scaler fit_scaler(const TrafficSeries& series, const DatasetSplit& split) {
    const auto& tb = split.time;
    if (split.nodes.train.empty() || tb.train_end <= tb.train_begin) throw ConfigError("empty training set");
    double sum = 0.0;
    std::size_t n = 0;
    for (auto i : split.nodes.train)
        for (std::size_t t = tb.train_begin; t < tb.train_end; ++t) {
            sum += series.at(i, t);
            ++n;
        }
    Scaler s;
    s.mean = sum / static_cast<double>(n);
    double sq = 0.0;
    for (auto i : split.nodes.train)
        for (std::size_t t = tb.train_begin; t < tb.train_end; ++t) {
            const double d = series.at(i, t) - s.mean;
            sq += d * d;
        }
    s.std = std::sqrt(sq / static_cast<double>(n));
    if (!(s.std > 0.0)) {
        std::cerr << "warning: training traffic has zero spread; scaling by 1\n";
        s.std = 1.0;
    }
    return s;
}

TrafficSeries standardize(const TrafficSeries& series, const Scaler& scaler) {
    TrafficSeries out = series;
    for (auto& v : out.values) v = scaler.transform(v);
    return out;
}

}  // namespace flexcast
