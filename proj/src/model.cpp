#include "flexcast/model.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "flexcast/error.hpp"
#include "flexcast/random.hpp"

namespace flexcast {

std::string to_string(Pooling p) {
    switch (p) {
        case Pooling::target: return "target";
        case Pooling::sum: return "sum";
        case Pooling::max: return "max";
        case Pooling::mean: return "mean";
    }
    return "target";
}

Pooling parse_pooling(const std::string& s) {
    if (s == "target") return Pooling::target;
    if (s == "sum") return Pooling::sum;
    if (s == "max") return Pooling::max;
    if (s == "mean") return Pooling::mean;
    throw ConfigError("unknown pooling '" + s + "' (expected target, sum, max or mean)");
}

void ModelConfig::validate() const {
    if (kernels.empty()) throw ConfigError("kernel set must not be empty");
    if (std::set<std::size_t>(kernels.begin(), kernels.end()).size() != kernels.size())
        throw ConfigError("kernel sizes must be distinct");
    for (auto k : kernels)
        if (k < 1) throw ConfigError("kernel sizes must be >= 1");
    if (channels == 0 || channels % kernels.size() != 0)
        throw ConfigError("channels (" + std::to_string(channels) + ") must be divisible by the number of kernels (" +
                          std::to_string(kernels.size()) + ")");
    if (history < *std::max_element(kernels.begin(), kernels.end()))
        throw ConfigError("history must be at least the largest kernel size");
    if (horizon < 1) throw ConfigError("horizon must be >= 1");
    if (layers < 1) throw ConfigError("at least one spatiotemporal layer is required");
    if (dilation_factor < 1) throw ConfigError("dilation factor must be >= 1");
}

std::size_t ModelConfig::dilation(std::size_t layer) const {
    std::size_t d = 1;
    for (std::size_t i = 0; i < layer; ++i) d *= dilation_factor;
    return d;
}

// ---------------------------------------------------------------------------

void ParameterSet::add(std::string name, Tensor value, bool trainable) {
    if (contains(name)) throw ConfigError("duplicate parameter '" + name + "'");
    entries_.push_back({std::move(name), std::move(value), trainable});
}

bool ParameterSet::contains(const std::string& name) const {
    return std::any_of(entries_.begin(), entries_.end(), [&](const Entry& e) { return e.name == name; });
}

Tensor& ParameterSet::at(const std::string& name) {
    for (auto& e : entries_)
        if (e.name == name) return e.value;
    throw KeyError("no parameter named '" + name + "'");
}

const Tensor& ParameterSet::at(const std::string& name) const {
    for (const auto& e : entries_)
        if (e.name == name) return e.value;
    throw KeyError("no parameter named '" + name + "'");
}

std::size_t count_parameters(const ParameterSet& params) {
    std::size_t n = 0;
    for (const auto& e : params.entries())
        if (e.trainable) n += e.value.size();
    return n;
}

std::size_t parameter_count_formula(const ModelConfig& c) {
    std::size_t ksum = 0;
    for (auto k : c.kernels) ksum += k;
    const std::size_t branch = c.channels / c.kernels.size();
    const std::size_t readin = ksum * branch + 2 * c.channels;
    const std::size_t block = ksum * c.channels * branch + 1 + 2 * c.channels;
    const std::size_t readout = c.history * c.horizon + c.horizon + c.channels + c.horizon;
    return readin + c.layers * block + readout;
}

namespace {

std::string conv_name(const std::string& prefix, std::size_t k) { return prefix + ".conv.k" + std::to_string(k); }
std::string block_prefix(std::size_t layer) { return "block" + std::to_string(layer); }

Tensor uniform_tensor(Shape shape, double bound, Rng& rng) {
    Tensor t(std::move(shape));
    for (auto& v : t.data) v = rng.uniform(-bound, bound);
    return t;
}

void add_batch_norm(ParameterSet& p, const std::string& prefix, std::size_t channels) {
    p.add(prefix + ".bn.gamma", Tensor({channels}, 1.0));
    p.add(prefix + ".bn.beta", Tensor({channels}, 0.0));
    p.add(prefix + ".bn.running_mean", Tensor({channels}, 0.0), false);
    p.add(prefix + ".bn.running_var", Tensor({channels}, 1.0), false);
}

}  // namespace

ParameterSet init_parameters(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    Rng rng(derive_seed(seed, {0x696e6974ULL}));
    ParameterSet p;
    const std::size_t branch = config.branch_channels();
    for (auto k : config.kernels)
        p.add(conv_name("readin", k), uniform_tensor({k, 1, branch}, 1.0 / std::sqrt(static_cast<double>(k)), rng));
    add_batch_norm(p, "readin", config.channels);
    for (std::size_t l = 1; l <= config.layers; ++l) {
        const auto prefix = block_prefix(l);
        p.add(prefix + ".eps", Tensor({1}, 0.0));
        for (auto k : config.kernels) {
            const double bound = 1.0 / std::sqrt(static_cast<double>(k * config.channels));
            p.add(conv_name(prefix, k), uniform_tensor({k, config.channels, branch}, bound, rng));
        }
        add_batch_norm(p, prefix, config.channels);
    }
    const double time_bound = 1.0 / std::sqrt(static_cast<double>(config.history));
    const double chan_bound = 1.0 / std::sqrt(static_cast<double>(config.channels));
    p.add("readout.w", uniform_tensor({config.history, config.horizon}, time_bound, rng));
    p.add("readout.a", uniform_tensor({config.horizon}, time_bound, rng));
    p.add("readout.z", uniform_tensor({config.channels, 1}, chan_bound, rng));
    p.add("readout.b", uniform_tensor({config.horizon}, chan_bound, rng));
    return p;
}

// ---------------------------------------------------------------------------
// building blocks

ad::Var tcn_block(ad::Var h, std::span<const ad::Var> filters, std::size_t dilation) {
    std::vector<ad::Var> branches;
    branches.reserve(filters.size());
    for (const auto& f : filters) branches.push_back(ad::dilated_causal_conv1d(h, f, dilation));
    return branches.size() == 1 ? branches.front() : ad::concat(branches, 2);
}

ad::Var spatiotemporal_block(ad::Var h, const std::shared_ptr<const ad::Adjacency>& adj, const BlockParams& p,
                             std::size_t dilation, bool training, bool graph_free) {
    ad::Var mixed = graph_free ? h : ad::graph_agg(h, adj, p.eps);
    ad::Var t = tcn_block(mixed, p.filters, dilation);
    ad::Var n = training ? ad::batch_norm_train(t, p.gamma, p.beta, *p.running_mean, *p.running_var)
                         : ad::batch_norm_eval(t, p.gamma, p.beta, *p.running_mean, *p.running_var);
    return ad::relu(ad::add(n, h));
}

ad::Var pool(ad::Var h, std::span<const std::size_t> node_offsets, std::span<const std::size_t> centers,
             Pooling mode) {
    std::vector<std::size_t> offsets(node_offsets.begin(), node_offsets.end());
    switch (mode) {
        case Pooling::target: return ad::gather_rows(h, std::vector<std::size_t>(centers.begin(), centers.end()));
        case Pooling::sum: return ad::segment_sum(h, std::move(offsets));
        case Pooling::max: return ad::segment_max(h, std::move(offsets));
        case Pooling::mean: return ad::segment_mean(h, std::move(offsets));
    }
    throw ConfigError("unknown pooling mode");
}

ad::Var read_out(ad::Var h, ad::Var w, ad::Var a, ad::Var z, ad::Var b) {
    if (h.shape().size() != 3) throw DimensionError("read_out expects [B, T_h, C]");
    const std::size_t batch = h.shape()[0];
    const std::size_t horizon = w.shape().back();
    // Step 1 mixes time per channel, step 2 contracts channels per horizon.
    ad::Var per_channel = ad::relu(ad::linear(ad::transpose_last2(h), w, a));  // [B, C, T_f]
    ad::Var contracted = ad::linear(ad::transpose_last2(per_channel), z);     // [B, T_f, 1]
    return ad::add_bias(ad::reshape(contracted, {batch, horizon}), b);
}

// ---------------------------------------------------------------------------
// Model

Model::Model(ModelConfig config, std::uint64_t seed)
    : config_(std::move(config)), params_(init_parameters(config_, seed)) {}

Model::Model(ModelConfig config, ParameterSet params) : config_(std::move(config)), params_(std::move(params)) {
    config_.validate();
    const auto reference = init_parameters(config_, 0);
    for (const auto& e : reference.entries()) {
        if (!params_.contains(e.name)) throw FormatError("parameter '" + e.name + "' missing");
        if (params_.at(e.name).shape != e.value.shape)
            throw FormatError("parameter '" + e.name + "' has shape " + shape_string(params_.at(e.name).shape) +
                              ", expected " + shape_string(e.value.shape));
    }
    if (params_.entries().size() != reference.entries().size()) throw FormatError("unexpected extra parameters");
}

Model::Pass Model::forward(ad::Tape& tape, const SampleBatch& batch, Mode mode) {
    return run(tape, batch, mode, mode == Mode::train ? &params_ : nullptr, false);
}

Model::Pass Model::forward(ad::Tape& tape, const SampleBatch& batch) const {
    return run(tape, batch, Mode::eval, nullptr, false);
}

Tensor Model::encode(const SampleBatch& batch) const {
    ad::Tape tape;
    return run(tape, batch, Mode::eval, nullptr, true).prediction.value();
}

Tensor Model::predict(const SampleBatch& batch) const {
    ad::Tape tape;
    return forward(tape, batch).prediction.value();
}

Model::Pass Model::run(ad::Tape& tape, const SampleBatch& batch, Mode mode, ParameterSet* mutable_params,
                       bool stop_at_encoding) const {
    const bool training = mode == Mode::train;
    if (training && !mutable_params) throw ContractError("training pass needs mutable parameters");
    if (batch.histories.rank() != 3 || batch.histories.dim(1) != config_.history || batch.histories.dim(2) != 1)
        throw DimensionError("batch histories " + shape_string(batch.histories.shape) + " do not match history " +
                             std::to_string(config_.history));
    ParameterSet& stats = mutable_params ? *mutable_params : const_cast<ParameterSet&>(params_);
    const auto& entries = params_.entries();
    Pass pass;

    auto bind = [&](const std::string& name) {
        for (std::size_t i = 0; i < entries.size(); ++i) {
            if (entries[i].name != name) continue;
            if (training && entries[i].trainable) {
                ad::Var v = tape.parameter(entries[i].value);
                pass.bound.emplace_back(i, v);
                return v;
            }
            return tape.constant(entries[i].value);
        }
        throw KeyError("no parameter named '" + name + "'");
    };
    auto block_params = [&](const std::string& prefix, bool with_eps) {
        BlockParams p;
        if (with_eps) p.eps = bind(prefix + ".eps");
        for (auto k : config_.kernels) p.filters.push_back(bind(conv_name(prefix, k)));
        p.gamma = bind(prefix + ".bn.gamma");
        p.beta = bind(prefix + ".bn.beta");
        // Only touched through the training-mode batch norm.
        p.running_mean = &stats.at(prefix + ".bn.running_mean");
        p.running_var = &stats.at(prefix + ".bn.running_var");
        return p;
    };

    tape.set_scope("readin");
    ad::Var h = tape.constant(batch.histories);
    {
        auto p = block_params("readin", false);
        h = tcn_block(h, p.filters, config_.dilation(0));
        h = training ? ad::batch_norm_train(h, p.gamma, p.beta, *p.running_mean, *p.running_var)
                     : ad::batch_norm_eval(h, p.gamma, p.beta, *p.running_mean, *p.running_var);
    }
    for (std::size_t l = 1; l <= config_.layers; ++l) {
        const auto prefix = block_prefix(l);
        tape.set_scope(prefix);
        auto p = block_params(prefix, !config_.graph_free);
        h = spatiotemporal_block(h, batch.adjacency, p, config_.dilation(l), training, config_.graph_free);
    }
    if (stop_at_encoding) {
        pass.prediction = h;
        return pass;
    }
    tape.set_scope("readout");
    ad::Var pooled = pool(h, batch.node_offsets, batch.centers, config_.pooling);
    pass.prediction =
        read_out(pooled, bind("readout.w"), bind("readout.a"), bind("readout.z"), bind("readout.b"));
    tape.set_scope("");
    return pass;
}

}  // namespace flexcast
