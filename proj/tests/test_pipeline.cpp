#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "doctest.h"
#include "pgcn/checkpoint.hpp"
#include "pgcn/train.hpp"

using namespace pgcn;

namespace {

// structurally complete but miniature configuration, sized for fast tests
ModelConfig tiny_model_config(AdaptMode mode = AdaptMode::adaptive) {
    ModelConfig cfg;
    cfg.classes = 3;
    cfg.skeleton = "sub15";
    cfg.backbone.input_extents = {6, 12, 12};
    cfg.backbone.input_channels = 3;
    cfg.backbone.classes = 3;
    cfg.backbone.layers = {ConvLayerSpec{3, 4, {3, 3, 3}, {2, 2, 2}, {1, 1, 1}, true},
                           ConvLayerSpec{4, 4, {3, 3, 3}, {1, 2, 2}, {1, 1, 1}, true}};
    cfg.human.in_channels = 4;
    cfg.human.classes = 3;
    cfg.human.joints = 16;
    cfg.human.mode = mode;
    cfg.human.layers = {AGCNLayerConfig{4, 5, 0, 3, 1}, AGCNLayerConfig{5, 6, 0, 3, 2}};
    cfg.posture = cfg.human;
    cfg.posture.in_channels = 3;
    cfg.posture.layers[0].in_channels = 3;
    return cfg;
}

SyntheticSpec tiny_data_spec() {
    SyntheticSpec spec;
    spec.classes = 3;
    spec.frames = 8;
    spec.height = 16;
    spec.width = 16;
    spec.train_per_class = 2;
    spec.val_per_class = 1;
    return spec;
}

AugmentParams tiny_aug() {
    AugmentParams aug;
    aug.sample_frames = 8;
    aug.crop_frames = 6;
    aug.crop_height = 12;
    aug.crop_width = 12;
    return aug;
}

TrainConfig tiny_train_config() {
    TrainConfig tc;
    tc.batch = 4;
    tc.epochs_backbone = 1;
    tc.epochs_module = 1;
    tc.epochs_joint = 1;
    tc.seed = 3;
    return tc;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

}  // namespace

TEST_CASE("SGD matches the closed-form momentum update") {
    Tensor w = Tensor::from_data({2}, {1.0, -2.0}, true);
    const double lr = 0.1, m = 0.9, wd = 0.01;
    SGD opt({{"w", w}}, lr, m, wd);
    const std::vector<double> g = {0.5, -0.25};

    double w0 = 1.0, v0 = 0.0;
    for (int step = 0; step < 2; ++step) {
        opt.zero_grad();
        w.grad() = g;
        opt.step();
        v0 = m * v0 + g[0] + wd * w0;
        w0 -= lr * v0;
        CHECK(w.data()[0] == doctest::Approx(w0).epsilon(1e-15));
    }
    opt.set_lr(0.05);
    CHECK(opt.lr() == 0.05);
}

TEST_CASE("plateau scheduler fires after `patience` stale epochs and resets") {
    PlateauScheduler sched(10.0, 3);
    CHECK(!sched.saturated(0.2));   // new best
    CHECK(!sched.saturated(0.2));   // stale 1
    CHECK(!sched.saturated(0.15));  // stale 2
    CHECK(sched.saturated(0.2));    // stale 3 -> drop, counter resets
    CHECK(!sched.saturated(0.2));   // stale 1 again
    CHECK(!sched.saturated(0.25));  // new best clears the counter
    CHECK(!sched.saturated(0.1));
    CHECK(!sched.saturated(0.1));
    CHECK(sched.saturated(0.1));
}

TEST_CASE("score fusion averages probabilities") {
    auto ln = [](double p) { return std::log(p); };

    SUBCASE("single stream: fusion is just softmax") {
        auto fused = fuse_scores({{ln(0.7), ln(0.2), ln(0.1)}});
        CHECK(fused[0] == doctest::Approx(0.7).epsilon(1e-12));
        CHECK(fused[2] == doctest::Approx(0.1).epsilon(1e-12));
    }

    SUBCASE("two confident streams can lose to one very confident dissenter") {
        std::vector<std::vector<double>> streams = {
            {ln(0.6), ln(0.2), ln(0.2)},
            {ln(0.6), ln(0.2), ln(0.2)},
            {ln(0.05), ln(0.9), ln(0.05)},
        };
        auto fused = fuse_scores(streams);
        CHECK(fused[0] == doctest::Approx((0.6 + 0.6 + 0.05) / 3.0).epsilon(1e-9));
        CHECK(fused[1] == doctest::Approx((0.2 + 0.2 + 0.9) / 3.0).epsilon(1e-9));
        CHECK(argmax(fused) == 1);  // probability averaging, not majority vote
    }

    SUBCASE("weights are normalized") {
        auto fused = fuse_scores({{1.0, 0.0}, {0.0, 1.0}}, {3.0, 1.0});
        auto same = fuse_scores({{1.0, 0.0}, {0.0, 1.0}}, {0.75, 0.25});
        CHECK(fused[0] == doctest::Approx(same[0]).epsilon(1e-12));
    }

    SUBCASE("mismatched class counts are rejected") {
        CHECK_THROWS_AS(fuse_scores({{1.0, 2.0}, {1.0, 2.0, 3.0}}), std::invalid_argument);
        CHECK_THROWS_AS(fuse_scores({{1.0, 2.0}}, {1.0, 2.0}), std::invalid_argument);
    }
}

TEST_CASE("eval mode names round trip") {
    for (auto m : {EvalMode::backbone_only, EvalMode::fc_aggregate, EvalMode::pgcn,
                   EvalMode::pgcn_fusion, EvalMode::posture_only}) {
        CHECK(eval_mode_from_name(eval_mode_name(m)) == m);
    }
    CHECK_THROWS_AS(eval_mode_from_name("oracle"), std::invalid_argument);
}

TEST_CASE("metrics csv layout") {
    std::vector<MetricsRow> rows = {{0, 1, "train", 1.5, 0.25, 0.0}, {0, 1, "val", 1.2, 0.5, 0.1}};
    const std::string path = "metrics_test.csv";
    write_metrics_csv(path, rows);
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    CHECK(line == "epoch,stage,split,loss,accuracy,head_coverage");
    std::getline(in, line);
    CHECK(line.rfind("0,1,train,", 0) == 0);
    std::remove(path.c_str());
}

TEST_CASE("checkpoints round trip bit-exactly and reject mismatched names") {
    Rng rng(71);
    NamedParams params = {{"alpha", Tensor::uniform({3, 4}, rng, -5, 5)},
                          {"beta", Tensor::uniform({7}, rng, -1e-8, 1e-8)},
                          {"gamma", Tensor::scalar(-0.0)}};
    const std::string path = "ckpt_test.pgcn";
    save_checkpoint(path, params);
    NamedParams loaded = load_checkpoint(path);
    REQUIRE(loaded.size() == params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        CHECK(loaded[i].first == params[i].first);
        CHECK(loaded[i].second.shape() == params[i].second.shape());
        CHECK(loaded[i].second.data() == params[i].second.data());
    }

    NamedParams target = {{"alpha", Tensor(Shape{3, 4})}, {"delta", Tensor(Shape{7})}};
    CHECK_THROWS_WITH_AS(assign_parameters(target, loaded), doctest::Contains("delta"),
                         std::runtime_error);
    std::remove(path.c_str());
}

TEST_CASE("key-value config") {
    KVConfig cfg = KVConfig::from_string("lr = 0.5\nepochs = 7\nname = desk\nflag = true\n");
    CHECK(cfg.get_double("lr", 0.0) == 0.5);
    CHECK(cfg.get_int("epochs", 0) == 7);
    CHECK(cfg.get_string("name", "") == "desk");
    CHECK(cfg.get_bool("flag", false));
    CHECK(cfg.get_int("missing", 42) == 42);
    CHECK_NOTHROW(cfg.reject_unknown());

    KVConfig extra = KVConfig::from_string("lr = 0.5\ntypo_key = 1\n");
    extra.get_double("lr", 0.0);
    CHECK_THROWS_WITH_AS(extra.reject_unknown(), doctest::Contains("typo_key"), std::runtime_error);

    CHECK_THROWS_AS(KVConfig::from_string("lr = 1\nlr = 2\n"), std::runtime_error);
    CHECK_THROWS_AS(KVConfig::from_string("no equals sign\n"), std::runtime_error);

    KVConfig bad = KVConfig::from_string("lr = fast\n");
    CHECK_THROWS_AS(bad.get_double("lr", 0.0), std::runtime_error);
}

TEST_CASE("train config validation") {
    TrainConfig tc;
    CHECK_NOTHROW(tc.validate());
    tc.plateau_factor = 1.0;
    CHECK_THROWS_AS(tc.validate(), std::invalid_argument);
    tc = TrainConfig{};
    tc.batch = 0;
    CHECK_THROWS_AS(tc.validate(), std::invalid_argument);
}

TEST_CASE("miniature training run: deterministic artifacts and finite metrics") {
    SynthDataset data = synth_dataset(tiny_data_spec(), 13);
    auto run = [&](const std::string& dir) {
        std::filesystem::remove_all(dir);
        Rng rng(mix64(77));
        PGCNModel model(tiny_model_config(), rng);
        TrainResult result = train(model, data, tiny_train_config(), tiny_aug(), dir, nullptr);
        for (const auto& row : result.metrics) {
            CHECK(std::isfinite(row.loss));
            CHECK(row.accuracy >= 0.0);
            CHECK(row.accuracy <= 1.0);
        }
        CHECK(std::filesystem::exists(dir + "/model.pgcn"));
        CHECK(std::filesystem::exists(dir + "/metrics.csv"));
        return result;
    };
    TrainResult a = run("train_run_a");
    TrainResult b = run("train_run_b");
    REQUIRE(a.metrics.size() == b.metrics.size());
    CHECK(slurp("train_run_a/model.pgcn") == slurp("train_run_b/model.pgcn"));
    CHECK(slurp("train_run_a/metrics.csv") == slurp("train_run_b/metrics.csv"));

    // a trained checkpoint restores into a fresh model and evaluates identically
    Rng rng(mix64(78));
    PGCNModel fresh(tiny_model_config(), rng);
    NamedParams target = fresh.parameters();
    assign_parameters(target, load_checkpoint("train_run_a/model.pgcn"));
    Rng rng2(mix64(77));
    PGCNModel trained(tiny_model_config(), rng2);
    NamedParams trained_target = trained.parameters();
    assign_parameters(trained_target, load_checkpoint("train_run_a/model.pgcn"));
    for (auto mode : {EvalMode::backbone_only, EvalMode::pgcn, EvalMode::pgcn_fusion}) {
        CHECK(evaluate(fresh, data, mode, tiny_aug()) == evaluate(trained, data, mode, tiny_aug()));
    }
    std::filesystem::remove_all("train_run_a");
    std::filesystem::remove_all("train_run_b");
}

TEST_CASE("untrained model evaluates without error; accuracies are valid fractions") {
    SynthDataset data = synth_dataset(tiny_data_spec(), 14);
    Rng rng(mix64(79));
    PGCNModel model(tiny_model_config(), rng);
    for (auto mode : {EvalMode::backbone_only, EvalMode::fc_aggregate, EvalMode::pgcn,
                      EvalMode::pgcn_fusion, EvalMode::posture_only}) {
        const double acc = evaluate(model, data, mode, tiny_aug());
        CHECK(acc >= 0.0);
        CHECK(acc <= 1.0);
        CHECK(acc == evaluate(model, data, mode, tiny_aug()));  // deterministic
    }
}

TEST_CASE("non-finite parameters abort training with the stage in the message") {
    SynthDataset data = synth_dataset(tiny_data_spec(), 15);
    Rng rng(mix64(80));
    PGCNModel model(tiny_model_config(), rng);
    // poison the scene classifier: its logits feed the loss directly (earlier
    // conv parameters could have the NaN masked by a dead relu unit)
    for (auto& [name, t] : model.parameters()) {
        if (name == "backbone.scene.weight") t.data()[0] = std::numeric_limits<double>::quiet_NaN();
    }
    std::filesystem::remove_all("train_run_nan");
    CHECK_THROWS_WITH_AS(
        train(model, data, tiny_train_config(), tiny_aug(), "train_run_nan", nullptr),
        doctest::Contains("stage"), std::runtime_error);
    std::filesystem::remove_all("train_run_nan");
}
