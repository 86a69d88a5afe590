#include "flexcast/sweep.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <sstream>

#include "flexcast/error.hpp"

namespace flexcast {

std::string to_string(Variant v) {
    switch (v) {
        case Variant::flexible: return "FLEXIBLE";
        case Variant::tr_flexible: return "TR-FLEXIBLE";
        case Variant::tcn: return "TCN";
    }
    return "FLEXIBLE";
}

Variant parse_variant(const std::string& s) {
    std::string u = s;
    std::transform(u.begin(), u.end(), u.begin(), [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
    if (u == "FLEXIBLE") return Variant::flexible;
    if (u == "TR-FLEXIBLE") return Variant::tr_flexible;
    if (u == "TCN") return Variant::tcn;
    throw ConfigError("unknown variant '" + s + "' (expected FLEXIBLE, TR-FLEXIBLE or TCN)");
}

std::vector<SweepRow> scarcity_sweep(const TrafficSeries& raw, const SubgraphCache& subgraphs,
                                     const SweepOptions& options) {
    options.config.validate();
    if (options.rates.empty() || options.variants.empty()) throw ConfigError("sweep needs rates and variants");
    for (auto v : options.variants)
        if (v == Variant::tr_flexible && !options.source)
            throw ConfigError("TR-FLEXIBLE needs a source checkpoint");

    std::vector<SweepRow> rows;
    for (double rate : options.rates) {
        RunConfig cfg = options.config;
        cfg.split.scarcity = rate;
        cfg.validate();
        const auto set = make_training_set(raw, subgraphs, cfg.split, cfg.model.history, cfg.model.horizon);
        for (auto variant : options.variants) {
            if (options.log) *options.log << "== " << to_string(variant) << " at rate " << rate << "\n";
            EpochCallback cb;
            if (options.log)
                cb = [log = options.log](const EpochRecord& r) {
                    *log << "epoch " << r.epoch << " loss " << r.train_loss << " val_mae " << r.val_mae_mean << "\n";
                };
            SweepRow row;
            row.variant = variant;
            row.rate = rate;
            row.test = set.split.test;
            if (variant == Variant::tr_flexible) {
                auto r = finetune(options.source->model, options.source->params, cfg.model, set, cfg.train,
                                  options.scope, cb);
                row.parameters = count_parameters(r.model.parameters());
                row.metrics = evaluate(r.model, set.data, set.split.test, cfg.train.eval_batch_size);
            } else {
                ModelConfig mc = cfg.model;
                mc.graph_free = variant == Variant::tcn;
                Model model(mc, cfg.init_seed());
                train(model, set, cfg.train, cb);
                row.parameters = count_parameters(model.parameters());
                row.metrics = evaluate(model, set.data, set.split.test, cfg.train.eval_batch_size);
            }
            row.metrics.split = "test";
            rows.push_back(std::move(row));
        }
    }
    return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
    std::string out = std::string(kMetricsCsvHeader) + "\n";
    for (const auto& r : rows) out += metrics_csv_rows(to_string(r.variant), r.rate, r.metrics);
    return out;
}

std::string sweep_table(const std::vector<SweepRow>& rows, double display_scale) {
    std::vector<double> rates;
    std::vector<Variant> variants;
    for (const auto& r : rows) {
        if (std::find(rates.begin(), rates.end(), r.rate) == rates.end()) rates.push_back(r.rate);
        if (std::find(variants.begin(), variants.end(), r.variant) == variants.end()) variants.push_back(r.variant);
    }
    std::ostringstream o;
    char buf[64];
    o << "rate        ";
    for (double rate : rates) {
        std::snprintf(buf, sizeof(buf), "| %-26.0f%%", rate * 100.0);
        o << buf;
    }
    o << "| params\nhorizon     ";
    for (std::size_t i = 0; i < rates.size(); ++i) {
        std::string h;
        for (const auto& r : rows)
            if (r.rate == rates[i]) {
                for (const auto& m : r.metrics.horizons) {
                    std::snprintf(buf, sizeof(buf), "%6.0fmin ", m.minutes);
                    h += buf;
                }
                break;
            }
        std::snprintf(buf, sizeof(buf), "| %-27s", h.c_str());
        o << buf;
    }
    o << "|\n";
    for (auto v : variants) {
        std::snprintf(buf, sizeof(buf), "%-12s", to_string(v).c_str());
        o << buf;
        std::size_t params = 0;
        for (double rate : rates) {
            std::string cell;
            for (const auto& r : rows)
                if (r.variant == v && r.rate == rate) {
                    params = r.parameters;
                    for (const auto& m : r.metrics.horizons) {
                        std::snprintf(buf, sizeof(buf), "%9.4f ", m.mae / display_scale);
                        cell += buf;
                    }
                }
            std::snprintf(buf, sizeof(buf), "| %-27s", cell.c_str());
            o << buf;
        }
        o << "| " << params << "\n";
    }
    if (display_scale != 1.0) o << "(MAE x" << display_scale << ")\n";
    return o.str();
}

}  // namespace flexcast
