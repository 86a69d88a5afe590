#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "flexcast/autodiff.hpp"
#include "flexcast/data.hpp"
#include "flexcast/eval.hpp"
#include "flexcast/model.hpp"

namespace flexcast {

struct TrainConfig {
    double learning_rate = 0.009;
    double weight_decay = 1e-5;
    std::size_t batch_size = 4096;
    double edge_dropout = 0.05;
    std::size_t max_epochs = 100;
    std::size_t patience = 10;
    std::uint64_t seed = 0;
    // Per-epoch caps; 0 keeps every sample.
    std::size_t max_train_samples = 0;
    std::size_t max_val_samples = 0;
    std::size_t eval_batch_size = 256;
    // Batches whose subgraphs exceed this many nodes are processed in pieces with
    // accumulated gradients; batch-norm statistics are then per piece. 0: no limit.
    std::size_t micro_batch_nodes = 8192;

    void validate() const;
    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    std::vector<double> val_mae;  // per horizon, raw units
    double val_mae_mean = 0.0;
    double seconds = 0.0;
};

struct TrainReport {
    std::vector<EpochRecord> epochs;
    std::size_t best_epoch = 0;  // 0: no epoch improved on the initial parameters
    double best_val_mae = 0.0;
    double wall_seconds = 0.0;
    std::size_t parameter_count = 0;
    std::size_t train_samples = 0;
    std::size_t val_samples = 0;
    std::string split_mode;
    std::size_t train_nodes = 0, val_nodes = 0, test_nodes = 0;

    // Timing fields are left out unless asked for so that reports of seeded runs compare equal.
    std::string to_json(bool include_timing = false) const;
};

// Forecast data plus the sample split it is trained on.
struct TrainingSet {
    ForecastData data;
    DatasetSplit split;
};

// Splits, fits the scaler on the training portion and standardizes.
TrainingSet make_training_set(const TrafficSeries& raw, SubgraphCache subgraphs, const SplitSpec& spec,
                              std::size_t history, std::size_t horizon);

// MAE over every entry plus lambda * ||params||_2.
ad::Var loss(ad::Var pred, ad::Var target, const std::vector<ad::Var>& params, double lambda);

class Adam {
public:
    explicit Adam(double learning_rate, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

    // grads[i] pairs a trainable entry index with its gradient; an empty gradient counts as zero.
    void step(ParameterSet& params, const std::vector<std::pair<std::size_t, const std::vector<double>*>>& grads);
    std::size_t steps() const { return t_; }

private:
    double lr_, beta1_, beta2_, eps_;
    std::size_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Mini-batch training with early stopping on validation MAE. On return the model
// holds the parameters of the best validation epoch.
TrainReport train(Model& model, const TrainingSet& set, const TrainConfig& config, const EpochCallback& on_epoch = {});

enum class TransferScope { all, tcn_eps };

std::string to_string(TransferScope s);
TransferScope parse_transfer_scope(const std::string& s);

// Throws TransferError naming every mismatched setting and tensor shape.
void check_transfer_compatible(const ModelConfig& source, const ParameterSet& source_params,
                               const ModelConfig& target);

// `all` copies every tensor; `tcn_eps` copies eps and convolution filters and
// initializes read-out and batch norm afresh from `seed`.
Model transfer_init(const ModelConfig& source, const ParameterSet& source_params, const ModelConfig& target,
                    TransferScope scope, std::uint64_t seed);

struct TrainResult {
    Model model;
    TrainReport report;
};

TrainResult finetune(const ModelConfig& source, const ParameterSet& source_params, const ModelConfig& target,
                     const TrainingSet& set, const TrainConfig& config, TransferScope scope,
                     const EpochCallback& on_epoch = {});

}  // namespace flexcast
