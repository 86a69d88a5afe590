#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "flexcast/autodiff.hpp"
#include "flexcast/data.hpp"
#include "flexcast/tensor.hpp"

namespace flexcast {

enum class Pooling { target, sum, max, mean };

std::string to_string(Pooling p);
Pooling parse_pooling(const std::string& s);

struct ModelConfig {
    std::size_t history = 12;
    std::size_t horizon = 3;
    std::size_t channels = 64;
    std::size_t layers = 2;
    std::vector<std::size_t> kernels{1, 3};
    std::size_t dilation_factor = 1;
    Pooling pooling = Pooling::target;
    bool graph_free = false;

    void validate() const;
    // ReadIn is layer 0; spatiotemporal block l (1-based) uses dilation_factor^l.
    std::size_t dilation(std::size_t layer) const;
    std::size_t branch_channels() const { return channels / kernels.size(); }

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Named tensors in a fixed order. Batch-norm running statistics are stored as
// non-trainable entries: checkpointed, but never counted or regularized.
class ParameterSet {
public:
    struct Entry {
        std::string name;
        Tensor value;
        bool trainable = true;

        friend bool operator==(const Entry&, const Entry&) = default;
    };

    void add(std::string name, Tensor value, bool trainable = true);
    bool contains(const std::string& name) const;
    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;

    std::vector<Entry>& entries() { return entries_; }
    const std::vector<Entry>& entries() const { return entries_; }

    friend bool operator==(const ParameterSet&, const ParameterSet&) = default;

private:
    std::vector<Entry> entries_;
};

std::size_t count_parameters(const ParameterSet& params);

// Closed-form trainable parameter count:
//   ReadIn    sum_K K * 1 * C/|K|  +  2C
//   per block sum_K K * C * C/|K|  +  1  +  2C
//   ReadOut   T_h*T_f + T_f + C + T_f
std::size_t parameter_count_formula(const ModelConfig& config);

ParameterSet init_parameters(const ModelConfig& config, std::uint64_t seed);

// Concatenation over kernel sizes of dilated causal convolutions: [N,T,Cin] -> [N,T,sum Cout].
ad::Var tcn_block(ad::Var h, std::span<const ad::Var> filters, std::size_t dilation);

struct BlockParams {
    ad::Var eps;
    std::vector<ad::Var> filters;
    ad::Var gamma;
    ad::Var beta;
    Tensor* running_mean = nullptr;  // mutated in training mode only
    Tensor* running_var = nullptr;
};

// ReLU(BatchNorm(TCN(GraphAgg(H))) + H); graph_free skips GraphAgg.
ad::Var spatiotemporal_block(ad::Var h, const std::shared_ptr<const ad::Adjacency>& adj, const BlockParams& p,
                             std::size_t dilation, bool training, bool graph_free);

// [N,T,C] -> [B,T,C] by center selection or per-sample reduction.
ad::Var pool(ad::Var h, std::span<const std::size_t> node_offsets, std::span<const std::size_t> centers,
             Pooling mode);

// Time mixing then channel mixing: [B,T_h,C] -> [B,T_f].
ad::Var read_out(ad::Var h, ad::Var w, ad::Var a, ad::Var z, ad::Var b);

enum class Mode { train, eval };

class Model {
public:
    Model(ModelConfig config, std::uint64_t seed);
    Model(ModelConfig config, ParameterSet params);

    const ModelConfig& config() const { return config_; }
    ParameterSet& parameters() { return params_; }
    const ParameterSet& parameters() const { return params_; }

    struct Pass {
        ad::Var prediction;                                   // [B, T_f]
        std::vector<std::pair<std::size_t, ad::Var>> bound;  // trainable entry index -> tape leaf
    };

    // Training mode differentiates w.r.t. every trainable tensor and updates running statistics.
    Pass forward(ad::Tape& tape, const SampleBatch& batch, Mode mode);
    // Eval-mode pass over const parameters.
    Pass forward(ad::Tape& tape, const SampleBatch& batch) const;

    // Hidden features after the last spatiotemporal block, [N, T_h, C], eval mode.
    Tensor encode(const SampleBatch& batch) const;
    // Eval-mode predictions in standardized units, [B, T_f].
    Tensor predict(const SampleBatch& batch) const;

private:
    Pass run(ad::Tape& tape, const SampleBatch& batch, Mode mode, ParameterSet* mutable_params,
             bool stop_at_encoding) const;

    ModelConfig config_;
    ParameterSet params_;
};

struct Checkpoint {
    static constexpr std::uint8_t kVersion = 1;

    ModelConfig model;
    ParameterSet params;
    Scaler scaler;
    std::uint64_t seed = 0;
    std::string run_config;  // effective settings, key=value text

    void save(const std::string& path) const;
    static Checkpoint load(const std::string& path);
};

}  // namespace flexcast
