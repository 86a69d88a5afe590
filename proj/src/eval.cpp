#include "flexcast/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "flexcast/csv.hpp"
#include "flexcast/error.hpp"

namespace flexcast {

namespace {

// Neumaier compensated sum.
struct CompensatedSum {
    double sum = 0.0;
    double carry = 0.0;

    void add(double v) {
        const double t = sum + v;
        if (std::abs(sum) >= std::abs(v))
            carry += (sum - t) + v;
        else
            carry += (v - t) + sum;
        sum = t;
    }
    double value() const { return sum + carry; }
};

}  // namespace

ForecastData ForecastData::make(TrafficSeries raw, const Scaler& scaler, SubgraphCache subgraphs) {
    ForecastData d;
    d.scaled = standardize(raw, scaler);
    d.raw = std::move(raw);
    d.scaler = scaler;
    d.subgraphs = std::move(subgraphs);
    return d;
}

double MetricsReport::mean_mae() const {
    if (horizons.empty()) return 0.0;
    double s = 0.0;
    for (const auto& h : horizons) s += h.mae;
    return s / static_cast<double>(horizons.size());
}

MetricsReport compute_metrics(std::span<const double> truth, std::span<const double> pred, std::size_t horizon,
                              double resolution_minutes) {
    if (truth.size() != pred.size()) throw DimensionError("metrics: truth and prediction sizes differ");
    if (truth.empty() || horizon == 0 || truth.size() % horizon != 0)
        throw ConfigError("metrics need a nonempty sample set");
    const std::size_t n = truth.size() / horizon;
    MetricsReport r;
    r.samples = n;
    for (std::size_t h = 0; h < horizon; ++h) {
        CompensatedSum abs_err, sq_err;
        for (std::size_t s = 0; s < n; ++s) {
            const double d = truth[s * horizon + h] - pred[s * horizon + h];
            abs_err.add(std::abs(d));
            sq_err.add(d * d);
        }
        HorizonMetrics m;
        m.horizon = h + 1;
        m.minutes = resolution_minutes * static_cast<double>(h + 1);
        m.mae = abs_err.value() / static_cast<double>(n);
        m.rmse = std::sqrt(sq_err.value() / static_cast<double>(n));
        // Guards the RMSE >= MAE invariant against last-ulp rounding.
        m.rmse = std::max(m.rmse, m.mae);
        m.count = n;
        r.horizons.push_back(m);
    }
    return r;
}

std::vector<double> predict_raw(const Model& model, const ForecastData& data, std::span<const Sample> samples,
                                std::size_t batch_size) {
    const auto& cfg = model.config();
    std::vector<double> out;
    out.reserve(samples.size() * cfg.horizon);
    BatchOptions opts;
    opts.history = cfg.history;
    opts.horizon = cfg.horizon;
    for (std::size_t start = 0; start < samples.size(); start += batch_size) {
        const auto chunk = samples.subspan(start, std::min(batch_size, samples.size() - start));
        const auto batch = assemble_batch(chunk, data.subgraphs, data.scaled, opts);
        const auto pred = model.predict(batch);
        for (double v : pred.data) out.push_back(data.scaler.inverse(v));
    }
    return out;
}

MetricsReport evaluate(const Model& model, const ForecastData& data, std::span<const Sample> samples,
                       std::size_t batch_size) {
    if (samples.empty()) throw ConfigError("cannot evaluate an empty sample set");
    const std::size_t horizon = model.config().horizon;
    const auto pred = predict_raw(model, data, samples, batch_size);
    std::vector<double> truth;
    truth.reserve(pred.size());
    for (const auto& s : samples) {
        if (s.t + horizon > data.raw.steps) throw IndexError("sample target runs past the series");
        for (std::size_t h = 0; h < horizon; ++h) truth.push_back(data.raw.at(s.station, s.t + h));
    }
    return compute_metrics(truth, pred, horizon, data.raw.resolution_minutes);
}

std::string metrics_csv_rows(const std::string& variant, double rate, const MetricsReport& report) {
    std::ostringstream out;
    for (const auto& h : report.horizons)
        out << variant << ',' << csv::format_double(rate) << ',' << h.horizon << ',' << csv::format_double(h.mae) << ','
            << csv::format_double(h.rmse) << ',' << h.count << '\n';
    return out.str();
}

std::string metrics_table(const MetricsReport& report, double display_scale) {
    std::ostringstream out;
    char line[128];
    std::snprintf(line, sizeof(line), "%-8s %12s %12s %8s\n", "horizon", "MAE", "RMSE", "n");
    out << line;
    for (const auto& h : report.horizons) {
        std::snprintf(line, sizeof(line), "%5.0fmin %12.4f %12.4f %8zu\n", h.minutes, h.mae / display_scale,
                      h.rmse / display_scale, h.count);
        out << line;
    }
    if (display_scale != 1.0) out << "(values x" << csv::format_double(display_scale) << ")\n";
    return out.str();
}

}  // namespace flexcast
