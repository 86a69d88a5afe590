#include "flexcast/training.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "flexcast/error.hpp"
#include "flexcast/random.hpp"

namespace flexcast {

void TrainConfig::validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning rate must be >= 0");
    if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) throw ConfigError("weight decay must be >= 0");
    if (batch_size == 0) throw ConfigError("batch size must be positive");
    if (eval_batch_size == 0) throw ConfigError("evaluation batch size must be positive");
    if (!(edge_dropout >= 0.0 && edge_dropout < 1.0)) throw ConfigError("edge dropout must lie in [0, 1)");
    if (patience == 0) throw ConfigError("patience must be positive");
}

std::string TrainReport::to_json(bool include_timing) const {
    nlohmann::ordered_json j;
    j["parameter_count"] = parameter_count;
    j["split_mode"] = split_mode;
    j["train_nodes"] = train_nodes;
    j["val_nodes"] = val_nodes;
    j["test_nodes"] = test_nodes;
    j["train_samples"] = train_samples;
    j["val_samples"] = val_samples;
    j["best_epoch"] = best_epoch;
    j["best_val_mae"] = best_val_mae;
    auto& list = j["epochs"] = nlohmann::ordered_json::array();
    for (const auto& e : epochs) {
        nlohmann::ordered_json r;
        r["epoch"] = e.epoch;
        r["train_loss"] = e.train_loss;
        r["val_mae"] = e.val_mae;
        r["val_mae_mean"] = e.val_mae_mean;
        if (include_timing) r["seconds"] = e.seconds;
        list.push_back(std::move(r));
    }
    if (include_timing) j["wall_seconds"] = wall_seconds;
    return j.dump(2) + "\n";
}

TrainingSet make_training_set(const TrafficSeries& raw, SubgraphCache subgraphs, const SplitSpec& spec,
                              std::size_t history, std::size_t horizon) {
    if (subgraphs.size() != raw.stations())
        throw DimensionError("subgraph count " + std::to_string(subgraphs.size()) + " does not match " +
                             std::to_string(raw.stations()) + " stations");
    TrainingSet set;
    set.split = split(raw, spec, history, horizon);
    set.data = ForecastData::make(raw, fit_scaler(raw, set.split), std::move(subgraphs));
    return set;
}

ad::Var loss(ad::Var pred, ad::Var target, const std::vector<ad::Var>& params, double lambda) {
    ad::Var l = ad::mean_abs_error(pred, target);
    if (lambda != 0.0 && !params.empty()) l = ad::add(l, ad::scale(ad::l2_norm(params), lambda));
    return l;
}

Adam::Adam(double learning_rate, double beta1, double beta2, double eps)
    : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::step(ParameterSet& params, const std::vector<std::pair<std::size_t, const std::vector<double>*>>& grads) {
    auto& entries = params.entries();
    if (m_.size() < entries.size()) {
        m_.resize(entries.size());
        v_.resize(entries.size());
    }
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (const auto& [index, grad] : grads) {
        if (index >= entries.size() || !entries[index].trainable)
            throw ContractError("optimizer step on a non-trainable entry");
        auto& value = entries[index].value.data;
        auto& m = m_[index];
        auto& v = v_[index];
        if (m.empty()) {
            m.assign(value.size(), 0.0);
            v.assign(value.size(), 0.0);
        }
        const bool zero = !grad || grad->empty();
        if (!zero && grad->size() != value.size()) throw DimensionError("gradient size does not match parameter");
        for (std::size_t i = 0; i < value.size(); ++i) {
            const double g = zero ? 0.0 : (*grad)[i];
            m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
            v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
            value[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
        }
    }
}

namespace {

std::vector<Sample> spread_subset(const std::vector<Sample>& all, std::size_t cap) {
    if (cap == 0 || cap >= all.size()) return all;
    std::vector<Sample> out;
    out.reserve(cap);
    for (std::size_t i = 0; i < cap; ++i) out.push_back(all[i * all.size() / cap]);
    return out;
}

}  // namespace

TrainReport train(Model& model, const TrainingSet& set, const TrainConfig& config, const EpochCallback& on_epoch) {
    config.validate();
    const auto& mc = model.config();
    if (set.split.train.empty()) throw ConfigError("training set is empty");
    if (set.split.val.empty()) throw ConfigError("validation set is empty");
    const auto val = spread_subset(set.split.val, config.max_val_samples);

    TrainReport report;
    report.parameter_count = count_parameters(model.parameters());
    report.train_samples = config.max_train_samples ? std::min(config.max_train_samples, set.split.train.size())
                                                    : set.split.train.size();
    report.val_samples = val.size();
    report.train_nodes = set.split.nodes.train.size();
    report.val_nodes = set.split.nodes.val.size();
    report.test_nodes = set.split.nodes.test.size();
    report.best_val_mae = std::numeric_limits<double>::infinity();

    const auto started = std::chrono::steady_clock::now();
    Adam optimizer(config.learning_rate);
    ParameterSet best = model.parameters();
    std::size_t stale = 0;

    for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
        const auto epoch_start = std::chrono::steady_clock::now();
        std::vector<Sample> order = set.split.train;
        Rng rng(derive_seed(config.seed, {0x65706f6368ULL, epoch}));
        rng.shuffle(order);
        order.resize(report.train_samples);

        double loss_sum = 0.0;
        std::size_t batch_index = 0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size, ++batch_index) {
            const std::span<const Sample> chunk(order.data() + start, std::min(config.batch_size, order.size() - start));
            // Split the batch into pieces that fit the node budget.
            std::vector<std::span<const Sample>> pieces;
            for (std::size_t i = 0; i < chunk.size();) {
                std::size_t j = i, nodes = 0;
                while (j < chunk.size()) {
                    const std::size_t n = set.data.subgraphs.at(chunk[j].station).size();
                    if (j > i && config.micro_batch_nodes && nodes + n > config.micro_batch_nodes) break;
                    nodes += n;
                    ++j;
                }
                pieces.push_back(chunk.subspan(i, j - i));
                i = j;
            }

            std::vector<std::vector<double>> accum(model.parameters().entries().size());
            std::vector<bool> touched(accum.size(), false);
            double value = 0.0;
            try {
                for (std::size_t piece = 0; piece < pieces.size(); ++piece) {
                    BatchOptions opts;
                    opts.history = mc.history;
                    opts.horizon = mc.horizon;
                    opts.edge_dropout = config.edge_dropout;
                    opts.train = true;
                    opts.seed = derive_seed(config.seed, {epoch, batch_index, piece});
                    const auto batch = assemble_batch(pieces[piece], set.data.subgraphs, set.data.scaled, opts);

                    ad::Tape tape;
                    auto pass = model.forward(tape, batch, Mode::train);
                    std::vector<ad::Var> leaves;
                    for (const auto& b : pass.bound) leaves.push_back(b.second);
                    const ad::Var target = tape.constant(batch.targets);
                    ad::Var l;
                    if (pieces.size() == 1) {
                        l = loss(pass.prediction, target, leaves, config.weight_decay);
                    } else {
                        // MAE pieces weighted by their share of the batch; the norm term enters once.
                        const double share =
                            static_cast<double>(pieces[piece].size()) / static_cast<double>(chunk.size());
                        l = ad::scale(ad::mean_abs_error(pass.prediction, target), share);
                        if (piece == 0 && config.weight_decay != 0.0 && !leaves.empty())
                            l = ad::add(l, ad::scale(ad::l2_norm(leaves), config.weight_decay));
                    }
                    const double piece_value = l.value()[0];
                    if (!std::isfinite(piece_value)) throw NumericError("loss is not finite");
                    value += piece_value;
                    tape.backward(l);
                    for (const auto& [index, var] : pass.bound) {
                        const auto& g = tape.grad(var);
                        if (g.empty()) continue;
                        auto& a = accum[index];
                        if (a.empty()) a.assign(g.size(), 0.0);
                        for (std::size_t i = 0; i < g.size(); ++i) a[i] += g[i];
                    }
                    for (const auto& b : pass.bound) touched[b.first] = true;
                }
                std::vector<std::pair<std::size_t, const std::vector<double>*>> grads;
                for (std::size_t i = 0; i < accum.size(); ++i)
                    if (touched[i]) grads.emplace_back(i, &accum[i]);
                optimizer.step(model.parameters(), grads);
            } catch (const NumericError& e) {
                throw NumericError("training diverged at epoch " + std::to_string(epoch) + ", batch " +
                                   std::to_string(batch_index) + ": " + e.what());
            }
            loss_sum += value * static_cast<double>(chunk.size());
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_sum / static_cast<double>(order.size());
        const auto metrics = evaluate(model, set.data, val, config.eval_batch_size);
        for (const auto& h : metrics.horizons) rec.val_mae.push_back(h.mae);
        rec.val_mae_mean = metrics.mean_mae();
        if (!std::isfinite(rec.val_mae_mean))
            throw NumericError("validation MAE is not finite at epoch " + std::to_string(epoch));
        rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - epoch_start).count();
        report.epochs.push_back(rec);
        if (on_epoch) on_epoch(rec);

        if (rec.val_mae_mean < report.best_val_mae) {
            report.best_val_mae = rec.val_mae_mean;
            report.best_epoch = epoch;
            best = model.parameters();
            stale = 0;
        } else if (++stale >= config.patience) {
            break;
        }
    }
    if (report.epochs.empty()) report.best_val_mae = evaluate(model, set.data, val, config.eval_batch_size).mean_mae();
    model.parameters() = std::move(best);
    report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return report;
}

std::string to_string(TransferScope s) { return s == TransferScope::all ? "all" : "tcn-eps"; }

TransferScope parse_transfer_scope(const std::string& s) {
    if (s == "all") return TransferScope::all;
    if (s == "tcn-eps") return TransferScope::tcn_eps;
    throw ConfigError("unknown transfer scope '" + s + "' (expected all or tcn-eps)");
}

void check_transfer_compatible(const ModelConfig& source, const ParameterSet& source_params,
                               const ModelConfig& target) {
    std::vector<std::string> problems;
    auto field = [&](const char* name, std::size_t a, std::size_t b) {
        if (a != b) problems.push_back(std::string(name) + " " + std::to_string(a) + " vs " + std::to_string(b));
    };
    field("history", source.history, target.history);
    field("horizon", source.horizon, target.horizon);
    field("channels", source.channels, target.channels);
    field("layers", source.layers, target.layers);
    if (source.kernels != target.kernels) problems.push_back("kernel set differs");

    const auto reference = init_parameters(target, 0);
    for (const auto& e : reference.entries()) {
        if (!source_params.contains(e.name)) {
            problems.push_back(e.name + ": missing in source, target " + shape_string(e.value.shape));
            continue;
        }
        const auto& s = source_params.at(e.name).shape;
        if (s != e.value.shape)
            problems.push_back(e.name + ": source " + shape_string(s) + " vs target " + shape_string(e.value.shape));
    }
    if (problems.empty()) return;
    std::string msg = "source checkpoint is incompatible with the target model:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw TransferError(msg);
}

namespace {

bool transferable_in_tcn_scope(const std::string& name) {
    return name.ends_with(".eps") || name.find(".conv.") != std::string::npos;
}

}  // namespace

Model transfer_init(const ModelConfig& source, const ParameterSet& source_params, const ModelConfig& target,
                    TransferScope scope, std::uint64_t seed) {
    target.validate();
    check_transfer_compatible(source, source_params, target);
    if (scope == TransferScope::all) {
        ParameterSet params;
        const auto reference = init_parameters(target, 0);
        for (const auto& e : reference.entries())
            params.add(e.name, source_params.at(e.name), e.trainable);
        return Model(target, std::move(params));
    }
    Model model(target, seed);
    for (auto& e : model.parameters().entries())
        if (transferable_in_tcn_scope(e.name)) e.value = source_params.at(e.name);
    return model;
}

TrainResult finetune(const ModelConfig& source, const ParameterSet& source_params, const ModelConfig& target,
                     const TrainingSet& set, const TrainConfig& config, TransferScope scope,
                     const EpochCallback& on_epoch) {
    TrainResult r{transfer_init(source, source_params, target, scope, config.seed), {}};
    r.report = train(r.model, set, config, on_epoch);
    return r;
}

}  // namespace flexcast
