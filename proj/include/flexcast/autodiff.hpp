#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "flexcast/kernels.hpp"
#include "flexcast/tensor.hpp"

// Reverse-mode differentiation over dense tensors, limited to the operators the
// forecasting model needs. A Tape records one forward pass; backward() replays it
// once in reverse order.
namespace flexcast::ad {

class Tape;

struct Var {
    Tape* tape = nullptr;
    std::size_t id = 0;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape; }
};

class Tape {
public:
    using BackwardFn = std::function<void(Tape&, std::size_t self)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Tensor value);
    Var parameter(Tensor value);

    const Tensor& value(Var v) const;
    const Tensor& value(std::size_t id) const { return entries_[id].value; }

    // Gradient of the loss w.r.t. v after backward(); empty when v was unreachable.
    const std::vector<double>& grad(Var v) const;

    void backward(Var loss);
    bool consumed() const { return consumed_; }
    std::size_t size() const { return entries_.size(); }

    // Label attached to numeric errors raised while recording.
    void set_scope(std::string scope) { scope_ = std::move(scope); }

    // Operator plumbing.
    Var record(const char* op, Tensor value, std::initializer_list<Var> inputs, BackwardFn fn);
    Var record(const char* op, Tensor value, const std::vector<Var>& inputs, BackwardFn fn);
    bool requires_grad(std::size_t id) const { return entries_[id].requires_grad; }
    std::vector<double>& grad_buffer(std::size_t id);
    const std::vector<double>& out_grad(std::size_t id) const { return entries_[id].grad; }

private:
    struct Entry {
        Tensor value;
        std::vector<double> grad;
        bool requires_grad = false;
        BackwardFn backward;
    };

    void check_finite(const char* op, const Tensor& value) const;

    std::vector<Entry> entries_;
    std::string scope_;
    bool consumed_ = false;
};

// Symmetric adjacency over the rows of a node-feature tensor.
struct Adjacency {
    std::vector<std::size_t> offsets{0};
    std::vector<std::size_t> neighbors;

    std::size_t nodes() const { return offsets.size() - 1; }
    kernels::CsrView view() const { return {offsets, neighbors}; }
};

inline constexpr double kBatchNormMomentum = 0.1;
inline constexpr double kBatchNormEps = 1e-5;

// y = x w (+ b), contracting the last axis of x.
Var linear(Var x, Var w);
Var linear(Var x, Var w, Var b);
// x[*, n] + b[n] broadcast over leading positions.
Var add_bias(Var x, Var b);

// x[N, T, Cin] * f[K, Cin, Cout] with zero left padding of (K - 1) * dilation.
Var dilated_causal_conv1d(Var x, Var f, std::size_t dilation);

Var relu(Var x);
Var add(Var x, Var y);
Var scale(Var x, double factor);
Var sum(Var x, std::vector<std::size_t> axes);
Var sum_all(Var x);
Var concat(const std::vector<Var>& xs, std::size_t axis);
Var max_over(Var x, std::size_t axis);
Var mean_over(Var x, std::size_t axis);
Var reshape(Var x, Shape shape);
Var transpose_last2(Var x);

// Normalizes per channel (last axis) over all leading positions. Training mode uses
// batch statistics and folds them into the running statistics by exponential
// moving average; eval mode reads the running statistics only.
Var batch_norm_train(Var x, Var gamma, Var beta, Tensor& running_mean, Tensor& running_var,
                     double momentum = kBatchNormMomentum, double eps = kBatchNormEps);
Var batch_norm_eval(Var x, Var gamma, Var beta, const Tensor& running_mean, const Tensor& running_var,
                    double eps = kBatchNormEps);

// (1 + eps) h_i + sum of neighbor rows; eps is a one-element tensor.
Var graph_agg(Var h, std::shared_ptr<const Adjacency> adj, Var eps);

// Row selection / segmented reductions over the first axis.
Var gather_rows(Var x, std::vector<std::size_t> rows);
Var segment_sum(Var x, std::vector<std::size_t> offsets);
Var segment_mean(Var x, std::vector<std::size_t> offsets);
Var segment_max(Var x, std::vector<std::size_t> offsets);

Var mean_abs_error(Var pred, Var target);
Var l2_norm(const std::vector<Var>& xs);

}  // namespace flexcast::ad
