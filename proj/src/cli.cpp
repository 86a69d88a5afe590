#include "flexcast/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>

#include "flexcast/config.hpp"
#include "flexcast/csv.hpp"
#include "flexcast/error.hpp"
#include "flexcast/pipeline.hpp"
#include "flexcast/sweep.hpp"

namespace flexcast::cli {

namespace {

// Duplicates writes to two streams.
class TeeBuf : public std::streambuf {
public:
    TeeBuf(std::streambuf* a, std::streambuf* b) : a_(a), b_(b) {}

protected:
    int overflow(int c) override {
        if (c == EOF) return !EOF;
        const bool ok = a_->sputc(static_cast<char>(c)) != EOF && b_->sputc(static_cast<char>(c)) != EOF;
        return ok ? c : EOF;
    }
    std::streamsize xsputn(const char* s, std::streamsize n) override {
        a_->sputn(s, n);
        b_->sputn(s, n);
        return n;
    }
    int sync() override { return (a_->pubsync() == 0 && b_->pubsync() == 0) ? 0 : -1; }

private:
    std::streambuf* a_;
    std::streambuf* b_;
};

std::uint64_t parse_seed(const std::string& text, const std::string& origin) {
    try {
        std::size_t used = 0;
        const auto v = std::stoull(text, &used, 10);
        if (used != text.size()) throw std::invalid_argument(text);
        return v;
    } catch (const std::exception&) {
        throw ConfigError(origin + ": seed must be a non-negative integer, got '" + text + "'");
    }
}

// --seed, then FLEXCAST_SEED, then whatever the config carries.
std::optional<std::uint64_t> resolve_seed(const std::optional<std::uint64_t>& flag) {
    if (flag) return flag;
    if (const char* env = std::getenv("FLEXCAST_SEED"); env && *env) return parse_seed(env, "FLEXCAST_SEED");
    return std::nullopt;
}

struct RunFlags {
    std::string config;
    bool inductive = false;
    bool transductive = false;
    std::optional<double> scarcity;
    std::optional<std::size_t> epochs;
    std::optional<std::uint64_t> seed;
};

void add_run_flags(CLI::App* cmd, RunFlags& f) {
    cmd->add_option("--config", f.config, "INI run configuration")->check(CLI::ExistingFile);
    auto* ind = cmd->add_flag("--inductive", f.inductive, "split stations as well as time");
    auto* tr = cmd->add_flag("--transductive", f.transductive, "split time only");
    ind->excludes(tr);
    cmd->add_option("--scarcity", f.scarcity, "fraction of the newest train+val steps kept");
    cmd->add_option("--epochs", f.epochs, "override the maximum number of epochs");
    cmd->add_option("--seed", f.seed, "run seed (falls back to FLEXCAST_SEED)");
}

RunConfig build_config(const RunFlags& f, const RunConfig& base, SplitMode default_mode) {
    RunConfig cfg = f.config.empty() ? base : RunConfig::load(f.config);
    if (f.config.empty()) cfg.split.mode = default_mode;
    if (f.inductive) cfg.split.mode = SplitMode::inductive;
    if (f.transductive) cfg.split.mode = SplitMode::transductive;
    if (f.scarcity) cfg.split.scarcity = *f.scarcity;
    if (f.epochs) cfg.train.max_epochs = *f.epochs;
    if (auto s = resolve_seed(f.seed)) cfg.apply_seed(*s);
    cfg.validate();
    return cfg;
}

void print_split(std::ostream& out, const TrainReport& r) {
    out << "split " << r.split_mode << ": nodes train " << r.train_nodes << " / val " << r.val_nodes << " / test "
        << r.test_nodes << ", samples train " << r.train_samples << " / val " << r.val_samples << "\n";
}

void finish_run(std::ostream& out, const pipeline::RunOutcome& o, const std::string& path) {
    pipeline::save_outcome(o, path);
    out << "best epoch " << o.report.best_epoch << ", val MAE " << o.report.best_val_mae << ", parameters "
        << o.report.parameter_count << ", " << o.report.wall_seconds << "s\n"
        << "wrote " << path << " and " << pipeline::report_path(path) << "\n";
}

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"flexcast: per-station cellular traffic forecasting over k-hop station subgraphs", "flexcast"};
    app.require_subcommand(1);

    // gen-synthetic
    SyntheticConfig syn;
    std::string syn_out;
    std::optional<std::uint64_t> syn_seed;
    std::size_t tiles_per_station = 4;
    auto* gen = app.add_subcommand("gen-synthetic", "write a synthetic station map and traffic files");
    gen->add_option("--out", syn_out, "output directory")->required();
    gen->add_option("--stations", syn.stations, "number of stations")->capture_default_str();
    gen->add_option("--steps", syn.steps, "number of 15-minute steps")->capture_default_str();
    gen->add_option("--tiles-per-station", tiles_per_station, "traffic tiles per station")->capture_default_str();
    gen->add_option("--seed", syn_seed, "generator seed (falls back to FLEXCAST_SEED)");

    // prepare
    pipeline::PrepareOptions prep;
    bool no_voronoi = false;
    std::string prep_config;
    std::optional<double> kappa;
    std::optional<std::size_t> max_degree, hops;
    std::optional<std::uint64_t> prep_seed;
    auto* pr = app.add_subcommand("prepare", "aggregate traffic, build the graph, subgraph store and dataset");
    pr->add_option("--stations", prep.stations, "station coordinates CSV")->required()->check(CLI::ExistingFile);
    pr->add_option("--tiles", prep.tiles, "tile coordinates CSV")->check(CLI::ExistingFile);
    pr->add_option("--traffic", prep.traffic, "traffic CSV (per tile, or per station with --no-voronoi)")
        ->required()
        ->check(CLI::ExistingFile);
    pr->add_option("--out", prep.out_dir, "output directory")->required();
    pr->add_flag("--no-voronoi", no_voronoi, "traffic is already per station");
    pr->add_option("--kappa", kappa, "distance threshold in km (default 3.5)");
    pr->add_option("--max-degree", max_degree, "nearest neighbors kept per station (default 10)");
    pr->add_option("--k", hops, "subgraph radius in hops (default 2)");
    pr->add_option("--config", prep_config, "INI run configuration")->check(CLI::ExistingFile);
    pr->add_option("--seed", prep_seed, "split seed (falls back to FLEXCAST_SEED)");

    // train
    RunFlags tr_flags;
    std::string tr_data, tr_out;
    bool graph_free = false;
    auto* tr = app.add_subcommand("train", "train a model from scratch");
    tr->add_option("--data", tr_data, "prepared dataset directory")->required()->check(CLI::ExistingDirectory);
    tr->add_option("--out", tr_out, "checkpoint path")->required();
    tr->add_flag("--graph-free", graph_free, "drop graph aggregation (TCN ablation)");
    add_run_flags(tr, tr_flags);

    // finetune
    RunFlags ft_flags;
    std::string ft_from, ft_data, ft_out, ft_scope = "all";
    auto* ft = app.add_subcommand("finetune", "initialize from a checkpoint and train on new data");
    ft->add_option("--from", ft_from, "source checkpoint")->required()->check(CLI::ExistingFile);
    ft->add_option("--data", ft_data, "prepared dataset directory")->required()->check(CLI::ExistingDirectory);
    ft->add_option("--out", ft_out, "checkpoint path")->required();
    ft->add_option("--scope", ft_scope, "transferred tensors: all or tcn-eps")
        ->check(CLI::IsMember({"all", "tcn-eps"}))
        ->capture_default_str();
    add_run_flags(ft, ft_flags);

    // evaluate
    std::string ev_ckpt, ev_data, ev_split = "test", ev_csv;
    double ev_scale = 1.0;
    auto* ev = app.add_subcommand("evaluate", "per-horizon MAE and RMSE of a checkpoint");
    ev->add_option("--ckpt", ev_ckpt, "checkpoint")->required()->check(CLI::ExistingFile);
    ev->add_option("--data", ev_data, "prepared dataset directory")->required()->check(CLI::ExistingDirectory);
    ev->add_option("--split", ev_split, "train, val or test")
        ->check(CLI::IsMember({"train", "val", "test"}))
        ->capture_default_str();
    ev->add_option("--csv", ev_csv, "also write the CSV report here");
    ev->add_option("--scale", ev_scale, "divide table values by this factor")->capture_default_str();

    // predict
    std::string pd_ckpt, pd_data, pd_station;
    std::size_t pd_t = 0;
    auto* pd = app.add_subcommand("predict", "forecast one station from one origin");
    pd->add_option("--ckpt", pd_ckpt, "checkpoint")->required()->check(CLI::ExistingFile);
    pd->add_option("--data", pd_data, "prepared dataset directory")->required()->check(CLI::ExistingDirectory);
    pd->add_option("--station", pd_station, "station id")->required();
    pd->add_option("--t", pd_t, "forecast origin (first predicted step)")->required();

    // sweep
    RunFlags sw_flags;
    std::string sw_data, sw_from, sw_csv, sw_scope = "all";
    std::vector<double> sw_rates{0.05, 0.10, 0.20, 0.40, 1.0};
    std::vector<std::string> sw_variants;
    double sw_scale = 1.0;
    auto* sw = app.add_subcommand("sweep", "data-scarcity sweep over rates and model variants");
    sw->add_option("--data", sw_data, "prepared dataset directory")->required()->check(CLI::ExistingDirectory);
    sw->add_option("--from", sw_from, "source checkpoint for TR-FLEXIBLE")->check(CLI::ExistingFile);
    sw->add_option("--rates", sw_rates, "scarcity rates")->delimiter(',');
    sw->add_option("--variants", sw_variants, "FLEXIBLE, TR-FLEXIBLE, TCN")->delimiter(',');
    sw->add_option("--scope", sw_scope, "transfer scope for TR-FLEXIBLE")->check(CLI::IsMember({"all", "tcn-eps"}));
    sw->add_option("--csv", sw_csv, "also write the CSV report here");
    sw->add_option("--scale", sw_scale, "divide table values by this factor")->capture_default_str();
    add_run_flags(sw, sw_flags);

    // show-config
    std::string sc_config;
    auto* sc = app.add_subcommand("show-config", "print the effective run configuration");
    sc->add_option("--config", sc_config, "INI run configuration")->check(CLI::ExistingFile);

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    if (gen->parsed()) {
        if (auto s = resolve_seed(syn_seed)) syn.seed = *s;
        const auto f = pipeline::gen_synthetic(syn_out, syn, tiles_per_station);
        out << "wrote " << f.stations << ", " << f.traffic << ", " << f.tiles << ", " << f.tile_traffic << "\n";
    } else if (pr->parsed()) {
        const RunConfig cfg = prep_config.empty() ? RunConfig{} : RunConfig::load(prep_config);
        prep.graph = cfg.graph;
        if (kappa) prep.graph.kappa_km = *kappa;
        if (max_degree) prep.graph.max_degree = *max_degree;
        if (hops) prep.graph.k = *hops;
        prep.voronoi = !no_voronoi;
        prep.seed = resolve_seed(prep_seed).value_or(cfg.seed);
        const auto summary = pipeline::prepare(prep);
        const auto text = summary.report();
        out << text.substr(0, text.find('\n') + 1);
        if (summary.components > 1) err << text.substr(text.find('\n') + 1);
        out << "wrote " << (std::filesystem::path(prep.out_dir) / pipeline::kDatasetFile).string() << " and "
            << (std::filesystem::path(prep.out_dir) / pipeline::kStoreFile).string() << "\n";
    } else if (tr->parsed()) {
        RunConfig cfg = build_config(tr_flags, RunConfig{}, SplitMode::inductive);
        if (graph_free) cfg.model.graph_free = true;
        cfg.variant = cfg.model.graph_free ? "TCN" : "FLEXIBLE";
        const auto data = pipeline::load_data(tr_data);
        std::ofstream log_file(tr_out + ".log", std::ios::trunc);
        TeeBuf tee(out.rdbuf(), log_file.rdbuf());
        std::ostream log(&tee);
        const auto outcome = pipeline::run_train(data, cfg, &log);
        print_split(out, outcome.report);
        finish_run(out, outcome, tr_out);
    } else if (ft->parsed()) {
        const auto source = Checkpoint::load(ft_from);
        RunConfig base = pipeline::checkpoint_config(source);
        base.split.scarcity = 1.0;
        RunConfig cfg = build_config(ft_flags, base, SplitMode::transductive);
        if (ft_flags.config.empty()) cfg.model = source.model;
        cfg.variant = "TR-FLEXIBLE";
        const auto data = pipeline::load_data(ft_data);
        std::ofstream log_file(ft_out + ".log", std::ios::trunc);
        TeeBuf tee(out.rdbuf(), log_file.rdbuf());
        std::ostream log(&tee);
        const auto outcome = pipeline::run_finetune(data, source, cfg, parse_transfer_scope(ft_scope), &log);
        print_split(out, outcome.report);
        finish_run(out, outcome, ft_out);
    } else if (ev->parsed()) {
        const auto ckpt = Checkpoint::load(ev_ckpt);
        const auto data = pipeline::load_data(ev_data);
        const auto report = pipeline::run_evaluate(data, ckpt, ev_split);
        const auto cfg = pipeline::checkpoint_config(ckpt);
        const std::string csv_text = std::string(kMetricsCsvHeader) + "\n" +
                                     metrics_csv_rows(cfg.variant, cfg.split.scarcity, report);
        out << "split " << report.split << ", " << report.samples << " samples\n"
            << metrics_table(report, ev_scale) << "\n"
            << csv_text;
        if (!ev_csv.empty()) {
            std::ofstream f(ev_csv, std::ios::binary | std::ios::trunc);
            f << csv_text;
            if (!f) throw InputError("cannot write " + ev_csv);
        }
    } else if (pd->parsed()) {
        const auto ckpt = Checkpoint::load(pd_ckpt);
        const auto data = pipeline::load_data(pd_data);
        const auto values = pipeline::run_predict(data, ckpt, pd_station, pd_t);
        const double res = data.dataset.series.resolution_minutes;
        out << "station,t,horizon,minutes,prediction\n";
        for (std::size_t h = 0; h < values.size(); ++h)
            out << pd_station << ',' << pd_t + h << ',' << h + 1 << ',' << res * static_cast<double>(h + 1) << ','
                << csv::format_double(values[h]) << "\n";
    } else if (sw->parsed()) {
        SweepOptions opts;
        opts.config = build_config(sw_flags, RunConfig{}, SplitMode::transductive);
        opts.rates = sw_rates;
        std::optional<Checkpoint> source;
        if (!sw_from.empty()) source = Checkpoint::load(sw_from);
        opts.source = source ? &*source : nullptr;
        if (sw_variants.empty()) {
            opts.variants = {Variant::flexible, Variant::tcn};
            if (source) opts.variants.insert(opts.variants.begin() + 1, Variant::tr_flexible);
        } else {
            opts.variants.clear();
            for (const auto& v : sw_variants) opts.variants.push_back(parse_variant(v));
        }
        opts.scope = parse_transfer_scope(sw_scope);
        opts.log = &err;
        const auto data = pipeline::load_data(sw_data);
        const auto rows = scarcity_sweep(data.dataset.series, data.subgraphs, opts);
        const auto csv_text = sweep_csv(rows);
        out << sweep_table(rows, sw_scale) << "\n" << csv_text;
        if (!sw_csv.empty()) {
            std::ofstream f(sw_csv, std::ios::binary | std::ios::trunc);
            f << csv_text;
            if (!f) throw InputError("cannot write " + sw_csv);
        }
    } else if (sc->parsed()) {
        out << (sc_config.empty() ? RunConfig{} : RunConfig::load(sc_config)).to_ini();
    }
    return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    try {
        return dispatch(args, out, err);
    } catch (const NumericError& e) {
        err << "numeric failure: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const ContractError& e) {
        err << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const Error& e) {
        err << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::filesystem::filesystem_error& e) {
        err << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    }
}

}  // namespace flexcast::cli
