#include "flexcast/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <mutex>
#include <set>

#include "flexcast/error.hpp"

namespace flexcast::ad {

const Tensor& Var::value() const {
    if (!tape) throw ContractError("variable is not bound to a tape");
    return tape->value(*this);
}

// ---------------------------------------------------------------------------
// Tape

Var Tape::constant(Tensor value) {
    check_finite("constant", value);
    entries_.push_back({std::move(value), {}, false, {}});
    return {this, entries_.size() - 1};
}

Var Tape::parameter(Tensor value) {
    check_finite("parameter", value);
    entries_.push_back({std::move(value), {}, true, {}});
    return {this, entries_.size() - 1};
}

const Tensor& Tape::value(Var v) const {
    if (v.tape != this || v.id >= entries_.size()) throw ContractError("variable belongs to another tape");
    return entries_[v.id].value;
}

const std::vector<double>& Tape::grad(Var v) const {
    if (v.tape != this || v.id >= entries_.size()) throw ContractError("variable belongs to another tape");
    return entries_[v.id].grad;
}

std::vector<double>& Tape::grad_buffer(std::size_t id) {
    auto& e = entries_[id];
    if (e.grad.empty()) e.grad.assign(e.value.size(), 0.0);
    return e.grad;
}

void Tape::check_finite(const char* op, const Tensor& value) const {
    if (value.all_finite()) return;
    std::string where = scope_.empty() ? "" : " in " + scope_;
    throw NumericError(std::string("non-finite value produced by ") + op + where);
}

Var Tape::record(const char* op, Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
    return record(op, std::move(value), std::vector<Var>(inputs), std::move(fn));
}

Var Tape::record(const char* op, Tensor value, const std::vector<Var>& inputs, BackwardFn fn) {
    if (consumed_) throw ContractError("tape already used for a backward pass");
    check_finite(op, value);
    bool needs = false;
    for (const auto& in : inputs) {
        if (in.tape != this) throw ContractError(std::string(op) + ": inputs live on different tapes");
        needs = needs || entries_[in.id].requires_grad;
    }
    entries_.push_back({std::move(value), {}, needs, needs ? std::move(fn) : BackwardFn{}});
    return {this, entries_.size() - 1};
}

void Tape::backward(Var loss) {
    if (loss.tape != this) throw ContractError("loss belongs to another tape");
    if (consumed_) throw ContractError("tape is single-use: backward already ran");
    if (entries_[loss.id].value.size() != 1)
        throw ContractError("backward needs a scalar loss, got shape " + shape_string(entries_[loss.id].value.shape));
    consumed_ = true;
    grad_buffer(loss.id)[0] = 1.0;
    for (std::size_t id = loss.id + 1; id-- > 0;) {
        auto& e = entries_[id];
        if (e.backward && !e.grad.empty()) e.backward(*this, id);
    }
}

// ---------------------------------------------------------------------------
// helpers

namespace {

Tape& same_tape(std::initializer_list<Var> vars) {
    Tape* t = vars.begin()->tape;
    for (const auto& v : vars)
        if (v.tape != t || t == nullptr) throw ContractError("operands live on different tapes");
    return *t;
}

struct AxisSplit {
    std::size_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis, const char* op) {
    if (axis >= shape.size())
        throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for shape " +
                             shape_string(shape));
    AxisSplit s;
    for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
    s.len = shape[axis];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
    return s;
}

Shape drop_axis(const Shape& shape, std::size_t axis) {
    Shape out;
    for (std::size_t i = 0; i < shape.size(); ++i)
        if (i != axis) out.push_back(shape[i]);
    if (out.empty()) out.push_back(1);
    return out;
}

void warn_once(const std::string& message) {
    static std::mutex mu;
    static std::set<std::string> seen;
    std::lock_guard lock(mu);
    if (seen.insert(message).second) std::cerr << "warning: " << message << "\n";
}

void check_segments(const std::vector<std::size_t>& offsets, std::size_t rows, const char* op) {
    if (offsets.size() < 2 || offsets.front() != 0 || offsets.back() != rows)
        throw DimensionError(std::string(op) + ": segment offsets must span all rows");
    for (std::size_t s = 0; s + 1 < offsets.size(); ++s)
        if (offsets[s + 1] <= offsets[s]) throw DimensionError(std::string(op) + ": empty segment");
}

Var reduce_axis(Var x, std::size_t axis, bool mean) {
    Tape& tape = *x.tape;
    const auto& xv = x.value();
    const auto s = split_axis(xv.shape, axis, mean ? "mean_over" : "sum");
    Tensor out(drop_axis(xv.shape, axis));
    for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t l = 0; l < s.len; ++l)
            for (std::size_t i = 0; i < s.inner; ++i) out[o * s.inner + i] += xv[(o * s.len + l) * s.inner + i];
    const double factor = mean ? 1.0 / static_cast<double>(s.len) : 1.0;
    if (mean)
        for (auto& v : out.data) v *= factor;
    const std::size_t xi = x.id;
    return tape.record(mean ? "mean_over" : "sum", std::move(out), {x}, [xi, s, factor](Tape& t, std::size_t self) {
        const auto& g = t.out_grad(self);
        auto& gx = t.grad_buffer(xi);
        for (std::size_t o = 0; o < s.outer; ++o)
            for (std::size_t l = 0; l < s.len; ++l)
                for (std::size_t i = 0; i < s.inner; ++i) gx[(o * s.len + l) * s.inner + i] += factor * g[o * s.inner + i];
    });
}

}  // namespace

// ---------------------------------------------------------------------------
// operators

Var linear(Var x, Var w) {
    Tape& tape = same_tape({x, w});
    const auto& xv = x.value();
    const auto& wv = w.value();
    if (wv.rank() != 2 || xv.shape.back() != wv.dim(0))
        throw DimensionError("linear: input " + shape_string(xv.shape) + " incompatible with weight " +
                             shape_string(wv.shape));
    const std::size_t in = wv.dim(0), out = wv.dim(1), rows = xv.size() / in;
    Shape oshape = xv.shape;
    oshape.back() = out;
    Tensor y(oshape);
    kernels::parallel::matmul(xv.data, wv.data, y.data, rows, in, out);
    const std::size_t xi = x.id, wi = w.id;
    return tape.record("linear", std::move(y), {x, w}, [=](Tape& t, std::size_t self) {
        const auto& g = t.out_grad(self);
        if (t.requires_grad(xi))
            kernels::parallel::matmul_backward_input(g, t.value(wi).data, t.grad_buffer(xi), rows, in, out);
        if (t.requires_grad(wi))
            kernels::parallel::matmul_backward_weight(t.value(xi).data, g, t.grad_buffer(wi), rows, in, out);
    });
}

Var linear(Var x, Var w, Var b) {
    same_tape({x, w, b});
    const auto& wv = w.value();
    if (wv.rank() != 2 || b.value().size() != wv.dim(1))
        throw DimensionError("linear: bias " + shape_string(b.shape()) + " incompatible with weight " +
                             shape_string(wv.shape));
    return add_bias(linear(x, w), b);
}

Var add_bias(Var x, Var b) {
    Tape& tape = same_tape({x, b});
    const auto& bv = b.value();
    Tensor y = x.value();
    const std::size_t out = bv.size();
    if (y.shape.back() != out)
        throw DimensionError("add_bias: bias " + shape_string(bv.shape) + " does not match " + shape_string(y.shape));
    const std::size_t rows = y.size() / out;
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t o = 0; o < out; ++o) y[r * out + o] += bv[o];
    const std::size_t xi = x.id, bi = b.id;
    return tape.record("add_bias", std::move(y), {x, b}, [=](Tape& t, std::size_t self) {
        const auto& g = t.out_grad(self);
        if (t.requires_grad(xi)) {
            auto& gx = t.grad_buffer(xi);
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        }
        if (t.requires_grad(bi)) {
            auto& gb = t.grad_buffer(bi);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t o = 0; o < out; ++o) gb[o] += g[r * out + o];
        }
    });
}

Var dilated_causal_conv1d(Var x, Var f, std::size_t dilation) {
    Tape& tape = same_tape({x, f});
    const auto& xv = x.value();
    const auto& fv = f.value();
    if (dilation < 1) throw ContractError("dilated_causal_conv1d: dilation must be >= 1");
    if (xv.rank() != 3 || fv.rank() != 3 || xv.dim(2) != fv.dim(1))
        throw DimensionError("dilated_causal_conv1d: input " + shape_string(xv.shape) + " incompatible with filter " +
                             shape_string(fv.shape));
    kernels::ConvDims d{xv.dim(0), xv.dim(1), xv.dim(2), fv.dim(2), fv.dim(0), dilation};
    if ((d.kernel - 1) * d.dilation >= d.steps)
        warn_once("receptive field (" + std::to_string((d.kernel - 1) * d.dilation + 1) + ") exceeds window of " +
                  std::to_string(d.steps) + " steps");
    Tensor y({d.nodes, d.steps, d.out_channels});
    kernels::parallel::conv1d(xv.data, fv.data, y.data, d);
    const std::size_t xi = x.id, fi = f.id;
    return tape.record("dilated_causal_conv1d", std::move(y), {x, f}, [=](Tape& t, std::size_t self) {
        const auto& g = t.out_grad(self);
        if (t.requires_grad(xi)) kernels::parallel::conv1d_backward_input(g, t.value(fi).data, t.grad_buffer(xi), d);
        if (t.requires_grad(fi)) kernels::parallel::conv1d_backward_filter(t.value(xi).data, g, t.grad_buffer(fi), d);
    });
}

Var relu(Var x) {
    Tape& tape = *x.tape;
    Tensor y = x.value();
    for (auto& v : y.data) v = v > 0.0 ? v : 0.0;
    const std::size_t xi = x.id;
    return tape.record("relu", std::move(y), {x}, [xi](Tape& t, std::size_t self) {
        const auto& g = t.out_grad(self);
        const auto& xv = t.value(xi);
        auto& gx = t.grad_buffer(xi);
        for (std::size_t i = 0; i < g.size(); ++i)
            if (xv[i] > 0.0) gx[i] += g[i];
    });
}

Var add(Var x, Var y) {
    Tape& tape = same_tape({x, y});
    if (x.shape() != y.shape())
        throw DimensionError("add: shapes " + shape_string(x.shape()) + " and " + shape_string(y.shape()) + " differ");
    Tensor out = x.value();
    const auto& yv = y.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += yv[i];
    const std::size_t xi = x.id, yi = y.id;
    return tape.record("add", std::move(out), {x, y}, [xi, yi](Tape& t, std::size_t self) {
        const auto& g = t.out_grad(self);
        for (std::size_t id : {xi, yi}) {
            if (!t.requires_grad(id)) continue;
            auto& gi = t.grad_buffer(id);
            for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
        }
    });
}

Var scale(Var x, double factor) {
    Tensor out = x.value();
    for (auto& v : out.data) v *= factor;
    const std::size_t xi = x.id;
    return x.tape->record("scale", std::move(out), {x}, [xi, factor](Tape& t, std::size_t self) {
        const auto& g = t.out_grad(self);
        auto& gx = t.grad_buffer(xi);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += factor * g[i];
    });
}

Var sum(Var x, std::vector<std::size_t> axes) {
    std::sort(axes.begin(), axes.end());
    axes.erase(std::unique(axes.begin(), axes.end()), axes.end());
    for (auto a : axes)
        if (a >= x.shape().size())
            throw DimensionError("sum: axis " + std::to_string(a) + " out of range for shape " + shape_string(x.shape()));
    Var out = x;
    // Reduce from the highest axis so lower indices stay valid.
    for (auto it = axes.rbegin(); it != axes.rend(); ++it) out = reduce_axis(out, *it, false);
    return out;
}

Var sum_all(Var x) {
    Tape& tape = *x.tape;
    double acc = 0.0;
    for (double v : x.value().data) acc += v;
    const std::size_t xi = x.id;
    return tape.record("sum_all", Tensor::scalar(acc), {x}, [xi](Tape& t, std::size_t self) {
        const double g = t.out_grad(self)[0];
        for (auto& v : t.grad_buffer(xi)) v += g;
    });
}

Var max_over(Var x, std::size_t axis) {
    Tape& tape = *x.tape;
    const auto& xv = x.value();
    const auto s = split_axis(xv.shape, axis, "max_over");
    Tensor out(drop_axis(xv.shape, axis));
    std::vector<std::size_t> arg(out.size());
    for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t i = 0; i < s.inner; ++i) {
            std::size_t best = o * s.len * s.inner + i;
            for (std::size_t l = 1; l < s.len; ++l) {
                std::size_t idx = (o * s.len + l) * s.inner + i;
                if (xv[idx] > xv[best]) best = idx;
            }
            out[o * s.inner + i] = xv[best];
            arg[o * s.inner + i] = best;
        }
    const std::size_t xi = x.id;
    return tape.record("max_over", std::move(out), {x}, [xi, arg = std::move(arg)](Tape& t, std::size_t self) {
        const auto& g = t.out_grad(self);
        auto& gx = t.grad_buffer(xi);
        for (std::size_t j = 0; j < g.size(); ++j) gx[arg[j]] += g[j];
    });
}

Var mean_over(Var x, std::size_t axis) { return reduce_axis(x, axis, true); }

Var concat(const std::vector<Var>& xs, std::size_t axis) {
    if (xs.empty()) throw DimensionError("concat: no inputs");
    Tape& tape = *xs.front().tape;
    const Shape& first = xs.front().shape();
    if (axis >= first.size()) throw DimensionError("concat: axis out of range for shape " + shape_string(first));
    Shape oshape = first;
    oshape[axis] = 0;
    std::vector<std::size_t> lens;
    for (const auto& v : xs) {
        const Shape& s = v.shape();
        if (s.size() != first.size()) throw DimensionError("concat: rank mismatch");
        for (std::size_t i = 0; i < s.size(); ++i)
            if (i != axis && s[i] != first[i])
                throw DimensionError("concat: shapes " + shape_string(first) + " and " + shape_string(s) +
                                     " differ off the concat axis");
        lens.push_back(s[axis]);
        oshape[axis] += s[axis];
    }
    const auto split = split_axis(oshape, axis, "concat");
    Tensor out(oshape);
    std::size_t start = 0;
    for (std::size_t k = 0; k < xs.size(); ++k) {
        const auto& v = xs[k].value();
        const std::size_t block = lens[k] * split.inner;
        for (std::size_t o = 0; o < split.outer; ++o)
            std::copy_n(v.data.begin() + o * block, block, out.data.begin() + (o * split.len + start) * split.inner);
        start += lens[k];
    }
    std::vector<std::size_t> ids;
    for (const auto& v : xs) ids.push_back(v.id);
    return tape.record("concat", std::move(out), xs, [ids, lens, split](Tape& t, std::size_t self) {
        const auto& g = t.out_grad(self);
        std::size_t start = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
            const std::size_t block = lens[k] * split.inner;
            if (t.requires_grad(ids[k])) {
                auto& gk = t.grad_buffer(ids[k]);
                for (std::size_t o = 0; o < split.outer; ++o)
                    for (std::size_t j = 0; j < block; ++j)
                        gk[o * block + j] += g[(o * split.len + start) * split.inner + j];
            }
            start += lens[k];
        }
    });
}

Var reshape(Var x, Shape shape) {
    if (shape_size(shape) != x.value().size())
        throw DimensionError("reshape: " + shape_string(x.shape()) + " cannot become " + shape_string(shape));
    Tensor out(std::move(shape), x.value().data);
    const std::size_t xi = x.id;
    return x.tape->record("reshape", std::move(out), {x}, [xi](Tape& t, std::size_t self) {
        const auto& g = t.out_grad(self);
        auto& gx = t.grad_buffer(xi);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
}

Var transpose_last2(Var x) {
    const auto& xv = x.value();
    if (xv.rank() < 2) throw DimensionError("transpose_last2: rank must be >= 2");
    const std::size_t rows = xv.shape[xv.rank() - 2], cols = xv.shape.back();
    const std::size_t batch = xv.size() / (rows * cols);
    Shape oshape = xv.shape;
    std::swap(oshape[oshape.size() - 2], oshape.back());
    Tensor out(oshape);
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) out[(b * cols + c) * rows + r] = xv[(b * rows + r) * cols + c];
    const std::size_t xi = x.id;
    return x.tape->record("transpose", std::move(out), {x}, [=](Tape& t, std::size_t self) {
        const auto& g = t.out_grad(self);
        auto& gx = t.grad_buffer(xi);
        for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < cols; ++c) gx[(b * rows + r) * cols + c] += g[(b * cols + c) * rows + r];
    });
}

namespace {

Var batch_norm_impl(Var x, Var gamma, Var beta, const Tensor& rmean, const Tensor& rvar, Tensor* upd_mean,
                    Tensor* upd_var, double momentum, double eps) {
    Tape& tape = same_tape({x, gamma, beta});
    const auto& xv = x.value();
    const std::size_t channels = xv.shape.back();
    if (gamma.value().size() != channels || beta.value().size() != channels || rmean.size() != channels ||
        rvar.size() != channels)
        throw DimensionError("batch_norm: channel count " + std::to_string(channels) + " does not match parameters");
    const bool training = upd_mean != nullptr;
    const std::size_t rows = xv.size() / channels;
    const auto& gv = gamma.value();
    const auto& bv = beta.value();

    std::vector<double> mean(channels, 0.0), inv_std(channels, 0.0);
    if (training) {
        std::vector<double> var(channels, 0.0);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < channels; ++c) mean[c] += xv[r * channels + c];
        for (auto& m : mean) m /= static_cast<double>(rows);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < channels; ++c) {
                const double d = xv[r * channels + c] - mean[c];
                var[c] += d * d;
            }
        for (auto& v : var) v /= static_cast<double>(rows);
        const double unbias = rows > 1 ? static_cast<double>(rows) / static_cast<double>(rows - 1) : 1.0;
        auto& rm = upd_mean->data;
        auto& rv = upd_var->data;
        for (std::size_t c = 0; c < channels; ++c) {
            inv_std[c] = 1.0 / std::sqrt(var[c] + eps);
            rm[c] = (1.0 - momentum) * rm[c] + momentum * mean[c];
            rv[c] = (1.0 - momentum) * rv[c] + momentum * var[c] * unbias;
        }
    } else {
        for (std::size_t c = 0; c < channels; ++c) {
            mean[c] = rmean[c];
            inv_std[c] = 1.0 / std::sqrt(rvar[c] + eps);
        }
    }

    auto xhat = std::make_shared<std::vector<double>>(xv.size());
    Tensor y(xv.shape);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < channels; ++c) {
            const std::size_t i = r * channels + c;
            (*xhat)[i] = (xv[i] - mean[c]) * inv_std[c];
            y[i] = gv[c] * (*xhat)[i] + bv[c];
        }

    const std::size_t xi = x.id, gi = gamma.id, bi = beta.id;
    return tape.record("batch_norm", std::move(y), {x, gamma, beta},
                       [=, inv_std = std::move(inv_std)](Tape& t, std::size_t self) {
        const auto& g = t.out_grad(self);
        std::vector<double> sum_g(channels, 0.0), sum_gx(channels, 0.0);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < channels; ++c) {
                const std::size_t i = r * channels + c;
                sum_g[c] += g[i];
                sum_gx[c] += g[i] * (*xhat)[i];
            }
        if (t.requires_grad(gi)) {
            auto& gg = t.grad_buffer(gi);
            for (std::size_t c = 0; c < channels; ++c) gg[c] += sum_gx[c];
        }
        if (t.requires_grad(bi)) {
            auto& gb = t.grad_buffer(bi);
            for (std::size_t c = 0; c < channels; ++c) gb[c] += sum_g[c];
        }
        if (t.requires_grad(xi)) {
            const auto& gam = t.value(gi);
            auto& gx = t.grad_buffer(xi);
            const double inv_rows = 1.0 / static_cast<double>(rows);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < channels; ++c) {
                    const std::size_t i = r * channels + c;
                    if (training)
                        gx[i] += gam[c] * inv_std[c] * (g[i] - sum_g[c] * inv_rows - (*xhat)[i] * sum_gx[c] * inv_rows);
                    else
                        gx[i] += gam[c] * inv_std[c] * g[i];
                }
        }
    });
}

}  // namespace

Var batch_norm_train(Var x, Var gamma, Var beta, Tensor& running_mean, Tensor& running_var, double momentum,
                     double eps) {
    return batch_norm_impl(x, gamma, beta, running_mean, running_var, &running_mean, &running_var, momentum, eps);
}

Var batch_norm_eval(Var x, Var gamma, Var beta, const Tensor& running_mean, const Tensor& running_var, double eps) {
    return batch_norm_impl(x, gamma, beta, running_mean, running_var, nullptr, nullptr, 0.0, eps);
}

Var graph_agg(Var h, std::shared_ptr<const Adjacency> adj, Var eps) {
    Tape& tape = same_tape({h, eps});
    const auto& hv = h.value();
    if (hv.rank() < 1 || hv.dim(0) != adj->nodes())
        throw DimensionError("graph_agg: feature rows " + shape_string(hv.shape) + " do not match " +
                             std::to_string(adj->nodes()) + " nodes");
    if (eps.value().size() != 1) throw DimensionError("graph_agg: eps must be a single value");
    const std::size_t width = hv.size() / adj->nodes();
    Tensor out(hv.shape);
    kernels::parallel::graph_agg(hv.data, adj->view(), eps.value()[0], out.data, width);
    const std::size_t hi = h.id, ei = eps.id;
    return tape.record("graph_agg", std::move(out), {h, eps}, [=](Tape& t, std::size_t self) {
        const auto& g = t.out_grad(self);
        if (t.requires_grad(hi)) {
            // The adjacency is symmetric, so the transpose aggregation is the same kernel.
            std::vector<double> tmp(g.size());
            kernels::parallel::graph_agg(g, adj->view(), t.value(ei)[0], tmp, width);
            auto& gh = t.grad_buffer(hi);
            for (std::size_t i = 0; i < tmp.size(); ++i) gh[i] += tmp[i];
        }
        if (t.requires_grad(ei)) {
            std::vector<double> dots(adj->nodes());
            kernels::row_dots(t.value(hi).data, g, dots, width);
            double acc = 0.0;
            for (double d : dots) acc += d;
            t.grad_buffer(ei)[0] += acc;
        }
    });
}

Var gather_rows(Var x, std::vector<std::size_t> rows) {
    const auto& xv = x.value();
    if (rows.empty()) throw DimensionError("gather_rows: no rows selected");
    const std::size_t n = xv.dim(0), width = xv.size() / n;
    Shape oshape = xv.shape;
    oshape[0] = rows.size();
    Tensor out(oshape);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r] >= n) throw IndexError("gather_rows: row " + std::to_string(rows[r]) + " out of range");
        std::copy_n(xv.data.begin() + rows[r] * width, width, out.data.begin() + r * width);
    }
    const std::size_t xi = x.id;
    return x.tape->record("gather_rows", std::move(out), {x}, [=, rows = std::move(rows)](Tape& t, std::size_t self) {
        const auto& g = t.out_grad(self);
        auto& gx = t.grad_buffer(xi);
        for (std::size_t r = 0; r < rows.size(); ++r)
            for (std::size_t j = 0; j < width; ++j) gx[rows[r] * width + j] += g[r * width + j];
    });
}

namespace {

Var segment_reduce(Var x, std::vector<std::size_t> offsets, bool mean, const char* op) {
    const auto& xv = x.value();
    const std::size_t n = xv.dim(0), width = xv.size() / n;
    check_segments(offsets, n, op);
    const std::size_t segs = offsets.size() - 1;
    Shape oshape = xv.shape;
    oshape[0] = segs;
    Tensor out(oshape);
    for (std::size_t s = 0; s < segs; ++s) {
        const double f = mean ? 1.0 / static_cast<double>(offsets[s + 1] - offsets[s]) : 1.0;
        for (std::size_t r = offsets[s]; r < offsets[s + 1]; ++r)
            for (std::size_t j = 0; j < width; ++j) out[s * width + j] += xv[r * width + j];
        if (mean)
            for (std::size_t j = 0; j < width; ++j) out[s * width + j] *= f;
    }
    const std::size_t xi = x.id;
    return x.tape->record(op, std::move(out), {x}, [=, offsets = std::move(offsets)](Tape& t, std::size_t self) {
        const auto& g = t.out_grad(self);
        auto& gx = t.grad_buffer(xi);
        for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
            const double f = mean ? 1.0 / static_cast<double>(offsets[s + 1] - offsets[s]) : 1.0;
            for (std::size_t r = offsets[s]; r < offsets[s + 1]; ++r)
                for (std::size_t j = 0; j < width; ++j) gx[r * width + j] += f * g[s * width + j];
        }
    });
}

}  // namespace

Var segment_sum(Var x, std::vector<std::size_t> offsets) {
    return segment_reduce(x, std::move(offsets), false, "segment_sum");
}

Var segment_mean(Var x, std::vector<std::size_t> offsets) {
    return segment_reduce(x, std::move(offsets), true, "segment_mean");
}

Var segment_max(Var x, std::vector<std::size_t> offsets) {
    const auto& xv = x.value();
    const std::size_t n = xv.dim(0), width = xv.size() / n;
    check_segments(offsets, n, "segment_max");
    const std::size_t segs = offsets.size() - 1;
    Shape oshape = xv.shape;
    oshape[0] = segs;
    Tensor out(oshape);
    std::vector<std::size_t> arg(out.size());
    for (std::size_t s = 0; s < segs; ++s)
        for (std::size_t j = 0; j < width; ++j) {
            std::size_t best = offsets[s] * width + j;
            for (std::size_t r = offsets[s] + 1; r < offsets[s + 1]; ++r)
                if (xv[r * width + j] > xv[best]) best = r * width + j;
            out[s * width + j] = xv[best];
            arg[s * width + j] = best;
        }
    const std::size_t xi = x.id;
    return x.tape->record("segment_max", std::move(out), {x}, [xi, arg = std::move(arg)](Tape& t, std::size_t self) {
        const auto& g = t.out_grad(self);
        auto& gx = t.grad_buffer(xi);
        for (std::size_t j = 0; j < g.size(); ++j) gx[arg[j]] += g[j];
    });
}

Var mean_abs_error(Var pred, Var target) {
    Tape& tape = same_tape({pred, target});
    const auto& pv = pred.value();
    const auto& tv = target.value();
    if (pv.shape != tv.shape)
        throw DimensionError("mean_abs_error: shapes " + shape_string(pv.shape) + " and " + shape_string(tv.shape) +
                             " differ");
    double acc = 0.0;
    for (std::size_t i = 0; i < pv.size(); ++i) acc += std::abs(pv[i] - tv[i]);
    const double inv = 1.0 / static_cast<double>(pv.size());
    const std::size_t pi = pred.id, ti = target.id;
    return tape.record("mean_abs_error", Tensor::scalar(acc * inv), {pred, target},
                       [pi, ti, inv](Tape& t, std::size_t self) {
        const double g = t.out_grad(self)[0] * inv;
        const auto& p = t.value(pi);
        const auto& y = t.value(ti);
        for (std::size_t id : {pi, ti}) {
            if (!t.requires_grad(id)) continue;
            const double dir = id == pi ? 1.0 : -1.0;
            auto& gi = t.grad_buffer(id);
            for (std::size_t i = 0; i < gi.size(); ++i) {
                const double d = p[i] - y[i];
                const double sign = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
                gi[i] += dir * sign * g;
            }
        }
    });
}

Var l2_norm(const std::vector<Var>& xs) {
    if (xs.empty()) throw DimensionError("l2_norm: no inputs");
    Tape& tape = *xs.front().tape;
    double sq = 0.0;
    for (const auto& v : xs)
        for (double e : v.value().data) sq += e * e;
    const double norm = std::sqrt(sq);
    std::vector<std::size_t> ids;
    for (const auto& v : xs) ids.push_back(v.id);
    return tape.record("l2_norm", Tensor::scalar(norm), xs, [ids, norm](Tape& t, std::size_t self) {
        if (norm == 0.0) return;
        const double g = t.out_grad(self)[0] / norm;
        for (std::size_t id : ids) {
            if (!t.requires_grad(id)) continue;
            const auto& v = t.value(id);
            auto& gi = t.grad_buffer(id);
            for (std::size_t i = 0; i < v.size(); ++i) gi[i] += g * v[i];
        }
    });
}

}  // namespace flexcast::ad
