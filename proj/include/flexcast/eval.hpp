#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "flexcast/data.hpp"
#include "flexcast/model.hpp"

namespace flexcast {

// Series in raw and standardized units plus resident subgraphs: what a forward pass needs.
struct ForecastData {
    TrafficSeries raw;
    TrafficSeries scaled;
    Scaler scaler;
    SubgraphCache subgraphs;

    static ForecastData make(TrafficSeries raw, const Scaler& scaler, SubgraphCache subgraphs);
};

struct HorizonMetrics {
    std::size_t horizon = 1;  // 1-based step
    double minutes = 15.0;
    double mae = 0.0;
    double rmse = 0.0;
    std::size_t count = 0;
};

struct MetricsReport {
    std::vector<HorizonMetrics> horizons;
    std::size_t samples = 0;
    std::string split;

    double mean_mae() const;
};

// truth/pred are [samples, horizon] in raw units.
MetricsReport compute_metrics(std::span<const double> truth, std::span<const double> pred, std::size_t horizon,
                              double resolution_minutes = 15.0);

// Eval-mode predictions in raw units, [samples.size(), T_f].
std::vector<double> predict_raw(const Model& model, const ForecastData& data, std::span<const Sample> samples,
                                std::size_t batch_size = 256);

MetricsReport evaluate(const Model& model, const ForecastData& data, std::span<const Sample> samples,
                       std::size_t batch_size = 256);

// CSV rows `variant,rate,horizon,mae,rmse,n` (no header).
std::string metrics_csv_rows(const std::string& variant, double rate, const MetricsReport& report);
inline constexpr const char* kMetricsCsvHeader = "variant,rate,horizon,mae,rmse,n";

// Human-readable per-horizon table; values divided by display_scale (e.g. 1e5).
std::string metrics_table(const MetricsReport& report, double display_scale = 1.0);

}  // namespace flexcast
