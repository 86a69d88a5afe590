#include "flexcast/pipeline.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "flexcast/error.hpp"
#include "flexcast/random.hpp"
#include "flexcast/subgraph_store.hpp"

namespace flexcast::pipeline {

namespace fs = std::filesystem;

namespace {

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw InputError("cannot create directory " + dir);
}

std::string join(const std::string& dir, const char* name) { return (fs::path(dir) / name).string(); }

}  // namespace

SyntheticFiles gen_synthetic(const std::string& out_dir, const SyntheticConfig& config,
                             std::size_t tiles_per_station) {
    if (config.stations < 2) throw ConfigError("a graph needs at least 2 stations");
    if (config.steps < 1) throw ConfigError("steps must be positive");
    ensure_dir(out_dir);
    const auto data = generate_synthetic(config);
    const auto tiles = synthetic_tiles(data, tiles_per_station, derive_seed(config.seed, {0x74696c65ULL}));

    SyntheticFiles f{join(out_dir, "stations.csv"), join(out_dir, "traffic.csv"), join(out_dir, "tiles.csv"),
                     join(out_dir, "tile_traffic.csv")};
    write_station_csv(data.stations, f.stations);
    write_wide_csv(f.traffic, "station_id", data.series.station_ids, data.series.values, data.series.steps);
    StationMap tile_map{tiles.frame, tiles.tile_ids, tiles.positions};
    write_station_csv(tile_map, f.tiles, "tile_id");
    write_wide_csv(f.tile_traffic, "tile_id", tiles.tile_ids, tiles.traffic, tiles.steps);
    return f;
}

std::string PrepareSummary::report() const {
    std::ostringstream o;
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "stations %zu, steps %zu, edges %zu, components %zu, isolated %zu, degree max %zu mean %.3f, "
                  "mean subgraph size %.3f%s\n",
                  stations, steps, edges, components, isolated, max_degree, mean_degree, mean_subgraph_size,
                  aggregated ? ", traffic re-aggregated from tiles" : "");
    o << buf;
    if (components > 1)
        o << "warning: proximity graph is disconnected (" << components
          << " components); consider a larger kappa\n";
    return o.str();
}

PrepareSummary prepare(const PrepareOptions& options) {
    if (options.stations.empty()) throw ConfigError("--stations is required");
    if (options.traffic.empty()) throw ConfigError("--traffic is required");
    if (options.out_dir.empty()) throw ConfigError("--out is required");
    if (!(options.graph.kappa_km > 0.0)) throw ConfigError("kappa must be positive");
    if (options.graph.max_degree == 0) throw ConfigError("max degree must be positive");

    PreparedDataset ds;
    ds.stations = read_station_csv(options.stations);
    if (ds.stations.size() < 2) throw InputError("a graph needs at least 2 stations");
    PrepareSummary summary;
    if (options.voronoi && !options.tiles.empty()) {
        ds.series = voronoi_aggregate(read_tile_traffic(options.tiles, options.traffic), ds.stations);
        summary.aggregated = true;
    } else {
        ds.series = read_station_traffic(options.traffic, ds.stations);
    }
    ds.graph = build_proximity_graph(ds.stations, options.graph.kappa_km, options.graph.max_degree);
    ds.k = options.graph.k;
    ds.split_spec.seed = options.seed;
    ds.nodes = node_split(ds.stations.size(), ds.split_spec);
    // The split needs at least one full window per block; short series keep a whole-series scaler.
    try {
        ds.scaler = fit_scaler(ds.series, split(ds.series, ds.split_spec, 12, 3));
    } catch (const ConfigError&) {
        DatasetSplit all;
        all.time.train_end = ds.series.steps;
        for (std::uint32_t i = 0; i < ds.series.stations(); ++i) all.nodes.train.push_back(i);
        ds.scaler = fit_scaler(ds.series, all);
    }

    ensure_dir(options.out_dir);
    const auto store = SubgraphStore::build(ds.graph, ds.k, join(options.out_dir, kStoreFile));
    ds.save(join(options.out_dir, kDatasetFile));

    summary.stations = ds.stations.size();
    summary.steps = ds.series.steps;
    summary.edges = ds.graph.edges.size();
    summary.components = ds.graph.component_count();
    summary.max_degree = ds.graph.observed_max_degree();
    for (const auto& a : ds.graph.adjacency)
        if (a.empty()) ++summary.isolated;
    summary.mean_degree = 2.0 * static_cast<double>(summary.edges) / static_cast<double>(summary.stations);
    double nodes = 0.0;
    for (const auto& id : store.keys()) nodes += static_cast<double>(store.get(id).size());
    summary.mean_subgraph_size = nodes / static_cast<double>(store.size());
    return summary;
}

LoadedData load_data(const std::string& dir) {
    LoadedData d;
    d.dataset = PreparedDataset::load(join(dir, kDatasetFile));
    const auto store = SubgraphStore::open(join(dir, kStoreFile));
    if (store.size() != d.dataset.stations.size())
        throw IntegrityError("subgraph store holds " + std::to_string(store.size()) + " records for " +
                             std::to_string(d.dataset.stations.size()) + " stations");
    d.subgraphs = SubgraphCache::load(store, d.dataset.series.station_ids);
    return d;
}

TrainingSet training_set(const LoadedData& data, const RunConfig& config) {
    return make_training_set(data.dataset.series, data.subgraphs, config.split, config.model.history,
                             config.model.horizon);
}

void log_epoch(std::ostream& out, const EpochRecord& rec) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "epoch %3zu  loss %.6f  val_mae", rec.epoch, rec.train_loss);
    out << buf;
    for (double v : rec.val_mae) {
        std::snprintf(buf, sizeof(buf), " %.4g", v);
        out << buf;
    }
    std::snprintf(buf, sizeof(buf), "  (%.2fs)\n", rec.seconds);
    out << buf << std::flush;
}

namespace {

EpochCallback logger(std::ostream* log) {
    if (!log) return {};
    return [log](const EpochRecord& r) { log_epoch(*log, r); };
}

RunOutcome package(Model model, TrainReport report, const TrainingSet& set, const RunConfig& config) {
    RunOutcome out;
    out.checkpoint.model = model.config();
    out.checkpoint.params = std::move(model.parameters());
    out.checkpoint.scaler = set.data.scaler;
    out.checkpoint.seed = config.seed;
    out.checkpoint.run_config = config.to_ini();
    out.report = std::move(report);
    out.report.split_mode = to_string(config.split.mode);
    return out;
}

}  // namespace

RunOutcome run_train(const LoadedData& data, const RunConfig& config, std::ostream* log) {
    config.validate();
    const auto set = training_set(data, config);
    Model model(config.model, config.init_seed());
    auto report = train(model, set, config.train, logger(log));
    return package(std::move(model), std::move(report), set, config);
}

RunOutcome run_finetune(const LoadedData& data, const Checkpoint& source, const RunConfig& config,
                        TransferScope scope, std::ostream* log) {
    config.validate();
    const auto set = training_set(data, config);
    auto r = finetune(source.model, source.params, config.model, set, config.train, scope, logger(log));
    return package(std::move(r.model), std::move(r.report), set, config);
}

std::string report_path(const std::string& checkpoint_path) { return checkpoint_path + ".report.json"; }

void save_outcome(const RunOutcome& outcome, const std::string& checkpoint_path) {
    const auto parent = fs::path(checkpoint_path).parent_path();
    if (!parent.empty()) ensure_dir(parent.string());
    outcome.checkpoint.save(checkpoint_path);
    std::ofstream out(report_path(checkpoint_path), std::ios::binary | std::ios::trunc);
    out << outcome.report.to_json(false);
    if (!out) throw InputError("cannot write " + report_path(checkpoint_path));
}

RunConfig checkpoint_config(const Checkpoint& ckpt) {
    try {
        return RunConfig::parse(ckpt.run_config, "checkpoint");
    } catch (const ConfigError& e) {
        throw FormatError(std::string("checkpoint carries unreadable run settings: ") + e.what());
    }
}

MetricsReport run_evaluate(const LoadedData& data, const Checkpoint& ckpt, const std::string& split_name) {
    const auto config = checkpoint_config(ckpt);
    const Model model(ckpt.model, ckpt.params);
    const auto s = split(data.dataset.series, config.split, ckpt.model.history, ckpt.model.horizon);
    const std::vector<Sample>* samples = nullptr;
    if (split_name == "train") samples = &s.train;
    else if (split_name == "val") samples = &s.val;
    else if (split_name == "test") samples = &s.test;
    else throw ConfigError("unknown split '" + split_name + "' (expected train, val or test)");
    const auto fd = ForecastData::make(data.dataset.series, ckpt.scaler, data.subgraphs);
    auto report = evaluate(model, fd, *samples, config.train.eval_batch_size);
    report.split = split_name + " (" + to_string(config.split.mode) + ")";
    return report;
}

std::vector<double> run_predict(const LoadedData& data, const Checkpoint& ckpt, const std::string& station_id,
                                std::size_t t) {
    const Model model(ckpt.model, ckpt.params);
    const std::size_t row = data.dataset.graph.index_of(station_id);
    const auto& series = data.dataset.series;
    if (t < ckpt.model.history || t > series.steps)
        throw IndexError("origin t=" + std::to_string(t) + " outside [" + std::to_string(ckpt.model.history) + ", " +
                         std::to_string(series.steps) + "]");
    const auto fd = ForecastData::make(series, ckpt.scaler, data.subgraphs);
    const Sample s{static_cast<std::uint32_t>(row), static_cast<std::uint32_t>(t)};
    BatchOptions opts;
    opts.history = ckpt.model.history;
    opts.horizon = ckpt.model.horizon;
    opts.require_targets = false;
    const auto batch = assemble_batch(std::span<const Sample>(&s, 1), fd.subgraphs, fd.scaled, opts);
    const auto pred = model.predict(batch);
    std::vector<double> out;
    for (double v : pred.data) out.push_back(ckpt.scaler.inverse(v));
    return out;
}

}  // namespace flexcast::pipeline
