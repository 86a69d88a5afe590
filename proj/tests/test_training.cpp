#include <cmath>
#include <string>
#include <vector>

#include "doctest.h"
#include "flexcast/error.hpp"
#include "flexcast/eval.hpp"
#include "flexcast/training.hpp"
#include "support.hpp"

using namespace flexcast;

namespace {

ModelConfig small_model() {
    ModelConfig c;
    c.channels = 8;
    return c;
}

TrainConfig quick_config(std::size_t epochs) {
    TrainConfig t;
    t.max_epochs = epochs;
    t.batch_size = 64;
    t.max_train_samples = 256;
    t.max_val_samples = 128;
    t.seed = 5;
    return t;
}

}  // namespace

TEST_CASE("loss examples") {
    ad::Tape tape;
    auto pred = tape.constant(Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
    CHECK(loss(pred, pred, {}, 0.0).value()[0] == 0.0);
    auto shifted = tape.constant(Tensor({2, 3}, {0, 1, 2, 3, 4, 5}));
    CHECK(loss(pred, shifted, {}, 0.0).value()[0] == 1.0);
    // Three parameters (1, 2, 2) have norm 3.
    std::vector<ad::Var> params{tape.constant(Tensor({2}, {1, 2})), tape.constant(Tensor({1}, {-2}))};
    CHECK(loss(pred, pred, params, 0.5).value()[0] == 1.5);
    CHECK(loss(pred, shifted, params, 1e-5).value()[0] == 1.0 + 3e-5);
}

TEST_CASE("adam") {
    ParameterSet p;
    p.add("w", Tensor({3}, {1.0, -2.0, 0.5}));
    p.add("stat", Tensor({1}, {7.0}), false);
    const std::vector<double> g{0.3, -4.0, 0.0};

    auto frozen = p;
    Adam still(0.0);
    for (int i = 0; i < 5; ++i) still.step(frozen, {{0, &g}});
    CHECK(frozen == p);

    // First step moves each coordinate by about lr * sign(g).
    auto q = p;
    Adam opt(0.01);
    opt.step(q, {{0, &g}});
    CHECK(q.at("w")[0] == doctest::Approx(1.0 - 0.01 * 0.3 / (0.3 + 1e-8)).epsilon(1e-15));
    CHECK(q.at("w")[1] == doctest::Approx(-2.0 + 0.01 * 4.0 / (4.0 + 1e-8)).epsilon(1e-15));
    CHECK(q.at("w")[2] == 0.5);
    CHECK(opt.steps() == 1);

    // Second step from the bias-corrected moments.
    const double m = 0.1 * 0.9 * 0.3 + 0.1 * 0.3, v = 0.001 * 0.999 * 0.09 + 0.001 * 0.09;
    const double mhat = m / (1 - 0.81), vhat = v / (1 - 0.999 * 0.999);
    const double before = q.at("w")[0];
    opt.step(q, {{0, &g}});
    CHECK(q.at("w")[0] == doctest::Approx(before - 0.01 * mhat / (std::sqrt(vhat) + 1e-8)).epsilon(1e-14));

    const std::vector<double> empty;
    CHECK_NOTHROW(opt.step(q, {{0, &empty}}));
    CHECK_THROWS_AS(opt.step(q, {{1, &g}}), ContractError);
}

TEST_CASE("training reduces the loss and is deterministic") {
    const auto w = testing::synthetic_world(16, 600, 3);
    const auto mc = small_model();
    SplitSpec spec;
    spec.mode = SplitMode::transductive;
    const auto set = testing::training_set(w, spec, mc);

    const auto tc = quick_config(5);
    Model a(mc, 1), b(mc, 1);
    std::vector<std::size_t> seen;
    const auto ra = train(a, set, tc, [&](const EpochRecord& r) { seen.push_back(r.epoch); });
    const auto rb = train(b, set, tc);
    CHECK(seen == std::vector<std::size_t>{1, 2, 3, 4, 5});
    CHECK(ra.epochs.back().train_loss < ra.epochs.front().train_loss);
    CHECK(ra.to_json() == rb.to_json());
    CHECK(a.parameters() == b.parameters());
    CHECK(ra.parameter_count == count_parameters(a.parameters()));

    // The model is left at the best validation epoch.
    REQUIRE(ra.best_epoch >= 1);
    double best = ra.epochs[0].val_mae_mean;
    for (const auto& e : ra.epochs) best = std::min(best, e.val_mae_mean);
    CHECK(ra.best_val_mae == best);
    CHECK(ra.epochs[ra.best_epoch - 1].val_mae_mean == best);

    auto other = tc;
    other.seed = 6;
    Model c(mc, 1);
    CHECK(train(c, set, other).to_json() != ra.to_json());
}

TEST_CASE("micro-batches within the node budget match one full batch") {
    const auto w = testing::synthetic_world(12, 400, 4);
    auto mc = small_model();
    SplitSpec spec;
    spec.mode = SplitMode::transductive;
    const auto set = testing::training_set(w, spec, mc);
    auto tc = quick_config(1);
    tc.edge_dropout = 0.0;
    tc.micro_batch_nodes = 0;
    Model a(mc, 2), b(mc, 2);
    const auto full = train(a, set, tc);
    tc.micro_batch_nodes = 1u << 20;
    const auto roomy = train(b, set, tc);
    CHECK(full.to_json() == roomy.to_json());

    // A tight budget splits batches and still trains.
    tc.micro_batch_nodes = 50;
    Model c(mc, 2);
    const auto split_run = train(c, set, tc);
    CHECK(std::isfinite(split_run.epochs[0].train_loss));
}

TEST_CASE("divergence is reported with its position") {
    const auto w = testing::synthetic_world(10, 400, 5);
    const auto mc = small_model();
    SplitSpec spec;
    spec.mode = SplitMode::transductive;
    const auto set = testing::training_set(w, spec, mc);
    auto tc = quick_config(3);
    tc.learning_rate = 1e307;
    Model m(mc, 1);
    try {
        train(m, set, tc);
        FAIL("expected divergence");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("epoch") != std::string::npos);
    }
}

TEST_CASE("transfer initialization") {
    const auto mc = small_model();
    Model source(mc, 11);
    for (auto& e : source.parameters().entries())
        for (auto& v : e.value.data) v += 0.125;

    const auto all = transfer_init(mc, source.parameters(), mc, TransferScope::all, 3);
    CHECK(all.parameters() == source.parameters());

    const auto tcn = transfer_init(mc, source.parameters(), mc, TransferScope::tcn_eps, 3);
    CHECK(tcn.parameters().at("block1.eps") == source.parameters().at("block1.eps"));
    CHECK(tcn.parameters().at("readin.conv.k3") == source.parameters().at("readin.conv.k3"));
    CHECK(tcn.parameters().at("block2.conv.k1") == source.parameters().at("block2.conv.k1"));
    CHECK_FALSE(tcn.parameters().at("readout.w") == source.parameters().at("readout.w"));
    CHECK_FALSE(tcn.parameters().at("readout.z") == source.parameters().at("readout.z"));

    auto wider = mc;
    wider.channels = 16;
    try {
        transfer_init(mc, source.parameters(), wider, TransferScope::all, 3);
        FAIL("expected a transfer error");
    } catch (const TransferError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("channels 8 vs 16") != std::string::npos);
        CHECK(msg.find("block1.conv.k3") != std::string::npos);
    }
    CHECK(parse_transfer_scope("tcn-eps") == TransferScope::tcn_eps);
    CHECK(to_string(TransferScope::all) == "all");
    CHECK_THROWS_AS(parse_transfer_scope("heads"), ConfigError);
}

TEST_CASE("finetune with zero epochs returns the source model") {
    const auto w = testing::synthetic_world(10, 400, 6);
    const auto mc = small_model();
    SplitSpec spec;
    spec.mode = SplitMode::transductive;
    const auto set = testing::training_set(w, spec, mc);
    Model source(mc, 12);
    auto tc = quick_config(0);
    const auto r = finetune(mc, source.parameters(), mc, set, tc, TransferScope::all);
    CHECK(r.model.parameters() == source.parameters());
    CHECK(r.report.epochs.empty());

    auto one = quick_config(1);
    const auto moved = finetune(mc, source.parameters(), mc, set, one, TransferScope::tcn_eps);
    CHECK(moved.report.epochs.size() == 1);
}

TEST_CASE("train config validation") {
    TrainConfig t;
    CHECK(t.learning_rate == 0.009);
    CHECK(t.weight_decay == 1e-5);
    CHECK(t.batch_size == 4096);
    CHECK(t.edge_dropout == 0.05);
    t.batch_size = 0;
    CHECK_THROWS_AS(t.validate(), ConfigError);
    t = TrainConfig{};
    t.edge_dropout = 1.0;
    CHECK_THROWS_AS(t.validate(), ConfigError);
    t = TrainConfig{};
    t.learning_rate = -1;
    CHECK_THROWS_AS(t.validate(), ConfigError);
}
