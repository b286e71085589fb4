#include <doctest.h>

#include <cmath>
#include <sstream>

#include "scalp/gradcheck.hpp"
#include "scalp/trainer.hpp"
#include "support.hpp"

using namespace scalp;
using scalp::testing::toy_encoder;

namespace {

Model single_param_model(double w) {
    Model m;
    m.params.entries.push_back({"w", ParamGroup::encoder, Tensor(Shape{1}, w)});
    return m;
}

// Two patients with two studies each, everyone sharing disease 1.
Dataset tiny_dataset(std::size_t side, std::uint64_t seed) {
    Dataset base = scalp::testing::labelled_dataset(2, 2, side, seed);
    std::vector<Study> studies = base.studies();
    for (Study& s : studies) s.labels[0] = 1;
    return Dataset(std::move(studies));
}

}  // namespace

TEST_CASE("sgd_step examples") {
    WeightDecay none{0.0, 0.0, 0.0};
    Model m = single_param_model(1.0);
    sgd_step(m.params, {Tensor(Shape{1}, 1.0)}, 0.01, none);
    CHECK(m.params[0][0] == doctest::Approx(0.99));

    m = single_param_model(1.0);
    sgd_step(m.params, {Tensor(Shape{1}, 1.0)}, 0.01, WeightDecay{0.1, 0.0, 0.0});
    CHECK(m.params[0][0] == doctest::Approx(0.989));

    m = single_param_model(0.37);
    sgd_step(m.params, {Tensor(Shape{1}, 0.0)}, 0.01, none);
    CHECK(m.params[0][0] == 0.37);

    m = single_param_model(1.0);
    CHECK_THROWS_WITH_AS(sgd_step(m.params, {Tensor(Shape{1}, NAN)}, 0.01, none), doctest::Contains("w"),
                         TrainingError);
    CHECK(m.params[0][0] == 1.0);
    CHECK_THROWS_AS(sgd_step(m.params, {Tensor(Shape{2}, 0.0)}, 0.01, none), ShapeError);
}

TEST_CASE("group decay comes from the parameter's group") {
    Model m;
    m.params.entries.push_back({"e", ParamGroup::encoder, Tensor(Shape{1}, 1.0)});
    m.params.entries.push_back({"c", ParamGroup::classifier, Tensor(Shape{1}, 1.0)});
    m.params.entries.push_back({"p", ParamGroup::projector, Tensor(Shape{1}, 1.0)});
    const std::vector<Tensor> zero(3, Tensor(Shape{1}, 0.0));
    sgd_step(m.params, zero, 1.0, WeightDecay{0.5, 0.25, 0.125});
    CHECK(m.params[0][0] == 0.5);
    CHECK(m.params[1][0] == 0.75);
    CHECK(m.params[2][0] == 0.875);
}

TEST_CASE("step schedule") {
    const OptimizerConfig c;
    CHECK(lr_at(0, c) == doctest::Approx(0.01));
    CHECK(lr_at(9, c) == doctest::Approx(0.01));
    CHECK(lr_at(10, c) == doctest::Approx(0.001));
    CHECK(lr_at(25, c) == doctest::Approx(0.0001));
    OptimizerConfig bad;
    bad.gamma = 0.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("batch gradient matches finite differences through the whole model") {
    const Dataset ds = tiny_dataset(8, 3);
    const Model model = Model::initialize(toy_encoder(), 5);
    const ContrastiveBatch batch = sample_batch(ds, 2, 1, 9);
    LossConfig loss;
    const BatchResult r = batch_loss(model, ds, batch, loss);
    CHECK(r.l_total == doctest::Approx(total_loss(r.l_ce, r.l_con, loss.lambda)).epsilon(1e-12));
    std::vector<double> analytic;
    for (const Tensor& g : r.grads) analytic.insert(analytic.end(), g.data().begin(), g.data().end());
    const std::vector<double> point = model.params.flatten();
    Model probe = model;
    const auto value = [&](std::span<const double> flat) {
        probe.params.assign(flat);
        return batch_loss(probe, ds, batch, loss, true, false).l_total;
    };
    CHECK(grad_check(value, analytic, point, 1e-5).max_error < 1e-4);
}

TEST_CASE("each head only sees its own loss term") {
    const Dataset ds = tiny_dataset(8, 4);
    const Model model = Model::initialize(toy_encoder(), 6);
    const ParamLayout layout(model.config);
    const ContrastiveBatch batch = sample_batch(ds, 2, 1, 1);
    LossConfig loss;
    loss.lambda = 0.0;
    const BatchResult con_only = batch_loss(model, ds, batch, loss);
    loss.lambda = 1.0;
    const BatchResult ce_only = batch_loss(model, ds, batch, loss);
    auto all_zero = [](const Tensor& t) {
        return std::all_of(t.data().begin(), t.data().end(), [](double x) { return x == 0.0; });
    };
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(all_zero(con_only.grads[layout.classifier(i)]));
        CHECK(all_zero(ce_only.grads[layout.projector(i)]));
        CHECK_FALSE(all_zero(ce_only.grads[layout.classifier(i)]));
    }
}

namespace {

struct DeskRun {
    Dataset data;
    Model init;
    OptimizerConfig opt;
};

DeskRun small_run() {
    SyntheticConfig sc;
    sc.patients = 40;
    sc.image_side = 16;
    sc.downsample_factor = 4;
    sc.seed = 3;
    EncoderConfig enc = toy_encoder();
    enc.channels = {4, 8};
    enc.projector_hidden = 16;
    enc.projection_dim = 8;
    DeskRun run{generate_synthetic(sc), Model::initialize(enc, 2), OptimizerConfig{}};
    run.opt.epochs = 3;
    run.opt.batch_size = 4;
    run.opt.negatives = 1;
    return run;
}

std::string checkpoint_bytes(const Model& m) {
    std::stringstream ss;
    write_checkpoint(ss, m);
    return ss.str();
}

}  // namespace

TEST_CASE("lambda = 1 training is bit-identical to the classification-only loop") {
    const DeskRun run = small_run();
    LossConfig loss;
    loss.lambda = 1.0;
    const TrainResult joint = train(run.data, run.init, loss, run.opt, 8);
    TrainOptions bce_only;
    bce_only.contrastive = false;
    const TrainResult plain = train(run.data, run.init, loss, run.opt, 8, bce_only);
    CHECK(checkpoint_bytes(joint.model) == checkpoint_bytes(plain.model));
    REQUIRE(joint.steps.size() == plain.steps.size());
    for (std::size_t i = 0; i < joint.steps.size(); ++i) CHECK(joint.steps[i].l_ce == plain.steps[i].l_ce);
}

TEST_CASE("training log and determinism") {
    const DeskRun run = small_run();
    LossConfig loss;
    std::vector<EpochLog> seen;
    TrainOptions options;
    options.on_epoch = [&](const EpochLog& e) { seen.push_back(e); };
    const TrainResult a = train(run.data, run.init, loss, run.opt, 4, options);
    const TrainResult b = train(run.data, run.init, loss, run.opt, 4);
    CHECK(checkpoint_bytes(a.model) == checkpoint_bytes(b.model));
    CHECK(seen.size() == run.opt.epochs);
    for (const StepLog& s : a.steps) {
        CHECK(std::abs(s.l_total - (loss.lambda * s.l_ce + (1 - loss.lambda) * s.l_con)) <= 1e-12);
        CHECK(s.lr == lr_at(s.epoch, run.opt));
    }
    const std::string line = to_json(a.epochs[0]);
    for (const char* key : {"\"epoch\"", "\"lr\"", "\"l_ce\"", "\"l_con\"", "\"l_total\""}) {
        CHECK(line.find(key) != std::string::npos);
    }
    const TrainResult other = train(run.data, run.init, loss, run.opt, 5);
    CHECK(checkpoint_bytes(other.model) != checkpoint_bytes(a.model));
}

TEST_CASE("training errors") {
    const DeskRun run = small_run();
    OptimizerConfig opt = run.opt;
    opt.batch_size = 1000;
    CHECK_THROWS_AS(train(run.data, run.init, LossConfig{}, opt, 1), SamplerError);
    opt = run.opt;
    opt.base_lr = 1e200;
    opt.epochs = 5;
    CHECK_THROWS_WITH_AS(train(run.data, run.init, LossConfig{}, opt, 1), doctest::Contains("epoch"), TrainingError);
}
