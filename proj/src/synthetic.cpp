#include <algorithm>
#include <cmath>
#include <limits>

#include "flexcast/data.hpp"
#include "flexcast/error.hpp"
#include "flexcast/random.hpp"

namespace flexcast {

namespace {

constexpr double kTwoPi = 6.283185307179586;
constexpr double kStepsPerDay = 96.0;    // 15-minute resolution
constexpr double kStepsPerWeek = 672.0;
constexpr double kLatentPersistence = 0.95;

}  // namespace

SyntheticDataset generate_synthetic(const SyntheticConfig& config) {
    if (config.stations < 2) throw ConfigError("synthetic data needs at least 2 stations");
    if (config.steps < 1) throw ConfigError("synthetic data needs at least 1 step");
    const std::size_t n = config.stations;
    const double side_km = config.box_km > 0.0 ? config.box_km : std::sqrt(4.8 * static_cast<double>(n));
    const std::size_t hotspots = config.hotspots > 0 ? config.hotspots : std::max<std::size_t>(3, n / 8);

    Rng rng(derive_seed(config.seed, {1}));
    SyntheticDataset out;
    out.stations.frame = CoordinateFrame::planar_m;
    for (std::size_t i = 0; i < n; ++i) {
        out.stations.ids.push_back(std::to_string(i));
        out.stations.positions.push_back({rng.uniform(0.0, side_km * 1000.0), rng.uniform(0.0, side_km * 1000.0)});
    }
    std::vector<std::array<double, 2>> centers(hotspots);
    for (auto& c : centers) c = {rng.uniform(0.0, side_km * 1000.0), rng.uniform(0.0, side_km * 1000.0)};

    struct Coupling {
        double weight;
        std::size_t lag;
    };
    std::vector<std::vector<Coupling>> coupling(n, std::vector<Coupling>(hotspots));
    std::size_t max_lag = 0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t m = 0; m < hotspots; ++m) {
            const double d = distance_km(CoordinateFrame::planar_m, out.stations.positions[i], centers[m]);
            const auto lag = static_cast<std::size_t>(std::llround(d / config.wave_speed_km_per_step));
            coupling[i][m] = {std::exp(-d / config.latent_length_km), lag};
            max_lag = std::max(max_lag, lag);
        }

    // Latent hotspot signals: unit-variance AR(1), with history covering the largest lag.
    const std::size_t burn = 200;
    const std::size_t span = config.steps + max_lag + burn;
    std::vector<std::vector<double>> latent(hotspots, std::vector<double>(span));
    const double innovation = std::sqrt(1.0 - kLatentPersistence * kLatentPersistence);
    for (auto& s : latent) {
        double v = rng.normal();
        for (auto& x : s) {
            v = kLatentPersistence * v + innovation * rng.normal();
            x = v;
        }
    }

    out.series.station_ids = out.stations.ids;
    out.series.steps = config.steps;
    out.series.values.assign(n * config.steps, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& p = out.stations.positions[i];
        const double base = config.base_level * (0.5 + rng.uniform());
        const double daily = config.daily_amplitude * (0.9 + 0.2 * rng.uniform());
        // Phases vary smoothly in space, so nearby stations peak together.
        const double phase = 0.6 * (p[0] + p[1]) / (2000.0 * side_km);
        const double weekly_phase = rng.uniform(0.0, 0.5);
        for (std::size_t t = 0; t < config.steps; ++t) {
            const double td = static_cast<double>(t);
            double level = 1.0 + daily * std::sin(kTwoPi * td / kStepsPerDay + phase) +
                           config.weekly_amplitude * std::sin(kTwoPi * td / kStepsPerWeek + weekly_phase);
            double wave = 0.0;
            for (std::size_t m = 0; m < hotspots; ++m)
                wave += coupling[i][m].weight * latent[m][t + max_lag + burn - coupling[i][m].lag];
            level += config.latent_amplitude * wave + config.noise * rng.normal();
            out.series.values[i * config.steps + t] = base * std::max(0.02, level);
        }
    }
    return out;
}

TileTraffic synthetic_tiles(const SyntheticDataset& data, std::size_t tiles_per_station, std::uint64_t seed) {
    if (tiles_per_station < 1) throw ConfigError("need at least one tile per station");
    const auto& st = data.stations;
    const std::size_t steps = data.series.steps;
    Rng rng(derive_seed(seed, {2}));
    TileTraffic tiles;
    tiles.frame = st.frame;
    tiles.steps = steps;
    tiles.resolution_minutes = data.series.resolution_minutes;
    for (std::size_t i = 0; i < st.size(); ++i) {
        double nearest = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < st.size(); ++j)
            if (j != i) nearest = std::min(nearest, distance_km(st.frame, st.positions[i], st.positions[j]) * 1000.0);
        // Inside 0.45 of the nearest-neighbor distance a tile is strictly closest to its own station.
        const double radius = 0.45 * nearest;
        std::vector<double> weights(tiles_per_station);
        double total = 0.0;
        for (auto& w : weights) total += (w = 0.2 + rng.uniform());
        for (std::size_t m = 0; m < tiles_per_station; ++m) {
            const double r = radius * std::sqrt(rng.uniform());
            const double a = kTwoPi * rng.uniform();
            tiles.tile_ids.push_back("tile" + std::to_string(i * tiles_per_station + m));
            tiles.positions.push_back({st.positions[i][0] + r * std::cos(a), st.positions[i][1] + r * std::sin(a)});
            for (std::size_t t = 0; t < steps; ++t)
                tiles.traffic.push_back(data.series.values[i * steps + t] * weights[m] / total);
        }
    }
    return tiles;
}

}  // namespace flexcast
