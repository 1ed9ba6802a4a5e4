#include "pgcn/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <stdexcept>

#include "pgcn/checkpoint.hpp"

namespace pgcn {

ModelConfig ModelConfig::default_desk(std::int64_t classes, AdaptMode mode) {
    ModelConfig cfg;
    cfg.classes = classes;
    cfg.skeleton = "sub15";
    cfg.backbone = BackboneConfig::default_desk(classes);
    const std::int64_t joints = 16;  // 15 body joints + virtual root
    cfg.human = AGCNStackConfig::default_desk(cfg.backbone.volume_channels(), classes, joints, mode);
    cfg.posture = AGCNStackConfig::default_desk(3, classes, joints, mode);
    return cfg;
}

namespace {

NamedParams with_prefix(const std::string& prefix, NamedParams params) {
    for (auto& [name, t] : params) {
        (void)t;
        // stack parameters come out as "agcn.*"; qualify by stream
        if (name.rfind("agcn.", 0) == 0) name = prefix + name.substr(5);
    }
    return params;
}

}  // namespace

PGCNModel::PGCNModel(ModelConfig config, Rng& rng)
    : config_(std::move(config)),
      tree_(build_graph(skeleton_preset(config_.skeleton))),
      adjacency_(adjacency_matrices(tree_, partition_subsets(tree_))),
      backbone_(config_.backbone, rng),
      human_(config_.human, adjacency_, rng),
      posture_(config_.posture, adjacency_, rng),
      fc_(config_.backbone.volume_channels() * config_.backbone.volume_extents()[0] * tree_.nodes,
          config_.classes, rng) {
    if (config_.human.joints != tree_.nodes || config_.posture.joints != tree_.nodes) {
        throw std::invalid_argument("model config: stack joint count must equal skeleton nodes (" +
                                    std::to_string(tree_.nodes) + ")");
    }
}

Tensor PGCNModel::body_parts(Tape* tape, const Tensor& volume, const PoseSequence& pose) const {
    return pool_body_parts(tape, volume, backbone_.chain(), pose, frame_alignment(backbone_.chain()));
}

NamedParams PGCNModel::parameters() const {
    NamedParams params = backbone_.parameters();
    for (auto& p : with_prefix("human.", human_.parameters())) params.push_back(std::move(p));
    for (auto& p : with_prefix("posture.", posture_.parameters())) params.push_back(std::move(p));
    for (auto& p : fc_.parameters()) params.push_back(std::move(p));
    return params;
}

SGD::SGD(NamedParams params, double lr, double momentum, double weight_decay)
    : params_(std::move(params)), lr_(lr), momentum_(momentum), weight_decay_(weight_decay) {
    for (const auto& [name, t] : params_) {
        (void)name;
        velocity_.emplace_back(static_cast<std::size_t>(t.size()), 0.0);
    }
}

void SGD::zero_grad() {
    for (auto& [name, t] : params_) {
        (void)name;
        t.zero_grad();
    }
}

void SGD::step() {
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Tensor& t = params_[i].second;
        auto& v = velocity_[i];
        auto& w = t.data();
        const auto& g = t.grad();
        for (std::size_t c = 0; c < w.size(); ++c) {
            v[c] = momentum_ * v[c] + g[c] + weight_decay_ * w[c];
            w[c] -= lr_ * v[c];
        }
    }
}

bool PlateauScheduler::saturated(double val_accuracy) {
    if (val_accuracy > best_ + 1e-12) {
        best_ = val_accuracy;
        bad_epochs_ = 0;
        return false;
    }
    if (++bad_epochs_ >= patience_) {
        bad_epochs_ = 0;
        return true;
    }
    return false;
}

TrainConfig TrainConfig::from_config(KVConfig& cfg) {
    TrainConfig c;
    c.lr_backbone = cfg.get_double("lr_backbone", c.lr_backbone);
    c.lr_module = cfg.get_double("lr_module", c.lr_module);
    c.lr_joint = cfg.get_double("lr_joint", c.lr_joint);
    c.wd_backbone = cfg.get_double("wd_backbone", c.wd_backbone);
    c.wd_module = cfg.get_double("wd_module", c.wd_module);
    c.momentum = cfg.get_double("momentum", c.momentum);
    c.plateau_factor = cfg.get_double("plateau_factor", c.plateau_factor);
    c.patience = cfg.get_int("patience", c.patience);
    c.batch = cfg.get_int("batch", c.batch);
    c.epochs_backbone = cfg.get_int("epochs_backbone", c.epochs_backbone);
    c.epochs_module = cfg.get_int("epochs_module", c.epochs_module);
    c.epochs_joint = cfg.get_int("epochs_joint", c.epochs_joint);
    c.lambda_ids = cfg.get_double("lambda_ids", c.lambda_ids);
    c.use_ids = cfg.get_bool("use_ids", c.use_ids);
    c.augment_clips = cfg.get_bool("augment", c.augment_clips);
    c.seed = static_cast<std::uint64_t>(cfg.get_int("seed", static_cast<std::int64_t>(c.seed)));
    c.adapt_mode = adapt_mode_from_name(cfg.get_string("adapt_mode", adapt_mode_name(c.adapt_mode)));
    c.validate();
    return c;
}

void TrainConfig::validate() const {
    if (lr_backbone <= 0 || lr_module <= 0 || lr_joint <= 0) {
        throw std::invalid_argument("train config: learning rates must be positive");
    }
    if (plateau_factor <= 1.0) throw std::invalid_argument("train config: plateau factor must be > 1");
    if (batch < 1 || patience < 1) throw std::invalid_argument("train config: batch and patience must be >= 1");
}

void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write metrics file: " + path);
    out.precision(17);
    out << "epoch,stage,split,loss,accuracy,head_coverage\n";
    for (const auto& r : rows) {
        out << r.epoch << "," << r.stage << "," << r.split << "," << r.loss << "," << r.accuracy << ","
            << r.head_coverage << "\n";
    }
}

EvalMode eval_mode_from_name(const std::string& name) {
    if (name == "backbone-only") return EvalMode::backbone_only;
    if (name == "fc-aggregate") return EvalMode::fc_aggregate;
    if (name == "pgcn") return EvalMode::pgcn;
    if (name == "pgcn-fusion") return EvalMode::pgcn_fusion;
    if (name == "posture-only") return EvalMode::posture_only;
    throw std::invalid_argument("unknown eval mode: " + name);
}

std::string eval_mode_name(EvalMode mode) {
    switch (mode) {
        case EvalMode::backbone_only: return "backbone-only";
        case EvalMode::fc_aggregate: return "fc-aggregate";
        case EvalMode::pgcn: return "pgcn";
        case EvalMode::pgcn_fusion: return "pgcn-fusion";
        case EvalMode::posture_only: return "posture-only";
    }
    return "?";
}

std::vector<double> fuse_scores(const std::vector<std::vector<double>>& stream_logits,
                                const std::vector<double>& weights) {
    if (stream_logits.empty()) throw std::invalid_argument("fuse_scores: no streams");
    const std::size_t classes = stream_logits.front().size();
    for (const auto& s : stream_logits) {
        if (s.size() != classes) {
            throw std::invalid_argument("fuse_scores: class-count mismatch (" + std::to_string(s.size()) +
                                        " vs " + std::to_string(classes) + ")");
        }
    }
    std::vector<double> w = weights;
    if (w.empty()) w.assign(stream_logits.size(), 1.0);
    if (w.size() != stream_logits.size()) {
        throw std::invalid_argument("fuse_scores: weight count mismatch");
    }
    double wsum = 0.0;
    for (double v : w) wsum += v;
    std::vector<double> fused(classes, 0.0);
    for (std::size_t s = 0; s < stream_logits.size(); ++s) {
        const auto probs = softmax_values(stream_logits[s]);
        for (std::size_t c = 0; c < classes; ++c) fused[c] += probs[c] * w[s] / wsum;
    }
    return fused;
}

namespace {

std::vector<std::int64_t> stream_prediction(const PGCNModel& model, const Tensor& clip,
                                            const PoseSequence& pose, EvalMode mode,
                                            std::vector<double>* fused_out) {
    // returns {prediction}; fused_out receives probabilities for fusion mode
    const Backbone& bb = model.backbone();
    std::vector<double> logits;
    switch (mode) {
        case EvalMode::backbone_only: {
            Tensor volume = bb.forward(nullptr, clip);
            logits = bb.scene_logits(nullptr, volume).data();
            break;
        }
        case EvalMode::fc_aggregate: {
            Tensor volume = bb.forward(nullptr, clip);
            Tensor parts = model.body_parts(nullptr, volume, pose);
            logits = model.fc().forward(nullptr, parts).data();
            break;
        }
        case EvalMode::pgcn: {
            Tensor volume = bb.forward(nullptr, clip);
            Tensor parts = model.body_parts(nullptr, volume, pose);
            logits = model.human().forward(nullptr, parts).logits.data();
            break;
        }
        case EvalMode::posture_only: {
            logits = posture_stream(nullptr, pose, model.posture()).logits.data();
            break;
        }
        case EvalMode::pgcn_fusion: {
            Tensor volume = bb.forward(nullptr, clip);
            Tensor parts = model.body_parts(nullptr, volume, pose);
            std::vector<std::vector<double>> streams = {
                model.human().forward(nullptr, parts).logits.data(),
                bb.scene_logits(nullptr, volume).data(),
                posture_stream(nullptr, pose, model.posture()).logits.data(),
            };
            std::vector<double> fused = fuse_scores(streams);
            if (fused_out) *fused_out = fused;
            return {argmax(fused)};
        }
    }
    return {argmax(logits)};
}

struct EpochStats {
    double loss_sum = 0.0;
    std::int64_t seen = 0;
    std::int64_t correct = 0;
};

}  // namespace

double evaluate(const PGCNModel& model, const SynthDataset& dataset, EvalMode mode,
                const AugmentParams& aug) {
    std::vector<EvalItem> items;
    const std::int64_t n = dataset.val_size();
    items.reserve(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        Sample s = dataset.val_sample(i);
        auto [clip, pose] = test_process(s.clip, s.pose, aug);
        items.push_back(EvalItem{clip, pose, s.label});
    }
    return evaluate_items(model, items, mode);
}

double evaluate_items(const PGCNModel& model, const std::vector<EvalItem>& items, EvalMode mode) {
    std::int64_t correct = 0;
    for (const auto& item : items) {
        const auto pred = stream_prediction(model, item.clip, item.pose, mode, nullptr);
        if (pred[0] == item.label) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(items.size());
}

namespace {

double head_coverage_on_val(const PGCNModel& model, const SynthDataset& dataset, const AugmentParams& aug) {
    const std::int64_t L = model.backbone().config().head_count();
    const std::int64_t classes = model.config().classes;
    std::vector<std::int64_t> correct(static_cast<std::size_t>(L), 0);
    const std::int64_t n = dataset.val_size();
    for (std::int64_t i = 0; i < n; ++i) {
        Sample s = dataset.val_sample(i);
        auto [clip, pose] = test_process(s.clip, s.pose, aug);
        (void)pose;
        Tensor volume = model.backbone().forward(nullptr, clip);
        Tensor logits = model.backbone().heads_logits(nullptr, volume);
        for (std::int64_t l = 0; l < L; ++l) {
            const double* row = logits.data().data() + l * classes;
            std::int64_t best = 0;
            for (std::int64_t c = 1; c < classes; ++c) {
                if (row[c] > row[best]) best = c;
            }
            if (best == s.label) ++correct[static_cast<std::size_t>(l)];
        }
    }
    const double chance = 1.0 / static_cast<double>(classes);
    std::int64_t covered = 0;
    for (auto c : correct) {
        if (static_cast<double>(c) / static_cast<double>(n) > chance) ++covered;
    }
    return static_cast<double>(covered) / static_cast<double>(L);
}

void shuffle_indices(std::vector<std::int64_t>& idx, Rng& rng) {
    for (std::int64_t i = static_cast<std::int64_t>(idx.size()) - 1; i > 0; --i) {
        std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(rng.uniform_int(i + 1))]);
    }
}

}  // namespace

TrainResult train(PGCNModel& model, const SynthDataset& dataset, const TrainConfig& config,
                  const AugmentParams& aug, const std::string& out_dir, std::ostream* log) {
    config.validate();
    model.human().set_mode(config.adapt_mode);
    model.posture().set_mode(config.adapt_mode);

    TrainResult result;
    Rng rng(mix64(config.seed ^ 0x7261696eULL));
    std::vector<std::int64_t> indices(static_cast<std::size_t>(dataset.train_size()));
    for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = static_cast<std::int64_t>(i);

    auto process = [&](const Sample& s) {
        return config.augment_clips ? augment(s.clip, s.pose, aug, rng) : test_process(s.clip, s.pose, aug);
    };

    auto run_stage = [&](int stage, std::int64_t epochs, NamedParams params, double lr, double wd,
                         auto sample_loss, EvalMode val_mode) {
        SGD opt(std::move(params), lr, config.momentum, wd);
        PlateauScheduler sched(config.plateau_factor, config.patience);
        for (std::int64_t epoch = 0; epoch < epochs; ++epoch) {
            shuffle_indices(indices, rng);
            EpochStats stats;
            for (std::size_t start = 0; start < indices.size(); start += static_cast<std::size_t>(config.batch)) {
                const std::size_t end = std::min(indices.size(), start + static_cast<std::size_t>(config.batch));
                const double inv = 1.0 / static_cast<double>(end - start);
                opt.zero_grad();
                for (std::size_t b = start; b < end; ++b) {
                    Sample s = dataset.train_sample(indices[b]);
                    auto [clip, pose] = process(s);
                    Tape tape;
                    auto [loss, pred] = sample_loss(tape, clip, pose, s.label);
                    if (!std::isfinite(loss.item())) {
                        throw std::runtime_error("non-finite loss at stage " + std::to_string(stage) +
                                                 " epoch " + std::to_string(epoch));
                    }
                    stats.loss_sum += loss.item();
                    ++stats.seen;
                    if (pred == s.label) ++stats.correct;
                    Tensor scaled = scale(&tape, loss, inv);
                    tape.backward(scaled);
                }
                opt.step();
            }
            const double val_acc = evaluate(model, dataset, val_mode, aug);
            const double coverage =
                (stage == 1 && config.use_ids) ? head_coverage_on_val(model, dataset, aug) : 0.0;
            result.metrics.push_back(MetricsRow{epoch, stage, "train",
                                                stats.loss_sum / static_cast<double>(stats.seen),
                                                static_cast<double>(stats.correct) /
                                                    static_cast<double>(stats.seen),
                                                0.0});
            result.metrics.push_back(MetricsRow{epoch, stage, "val", 0.0, val_acc, coverage});
            if (log) {
                *log << "stage " << stage << " epoch " << epoch << " lr " << opt.lr() << " train_loss "
                     << stats.loss_sum / static_cast<double>(stats.seen) << " val_acc " << val_acc << "\n";
            }
            if (sched.saturated(val_acc)) opt.set_lr(opt.lr() / config.plateau_factor);
        }
    };

    // stage 1: backbone, scene cross-entropy plus weighted dense supervision
    {
        NamedParams params = model.backbone().conv_parameters();
        if (config.use_ids) {
            for (auto& p : model.backbone().head_parameters()) params.push_back(std::move(p));
        }
        auto loss_fn = [&](Tape& tape, const Tensor& clip, const PoseSequence& pose, std::int64_t label) {
            (void)pose;
            Tensor volume = model.backbone().forward(&tape, clip);
            Tensor scene = model.backbone().scene_logits(&tape, volume);
            Tensor loss = softmax_cross_entropy(&tape, reshape(&tape, scene, {1, model.config().classes}),
                                                {label});
            if (config.use_ids) {
                loss = add(&tape, loss,
                           scale(&tape, model.backbone().ids_loss(&tape, volume, label), config.lambda_ids));
            }
            return std::make_pair(loss, argmax(scene.data()));
        };
        run_stage(1, config.epochs_backbone, std::move(params), config.lr_backbone, config.wd_backbone,
                  loss_fn, EvalMode::backbone_only);
    }

    // stage 2: freeze the backbone, train the graph streams and the fc baseline
    {
        NamedParams params = with_prefix("human.", model.human().trainable_parameters());
        for (auto& p : with_prefix("posture.", model.posture().trainable_parameters())) {
            params.push_back(std::move(p));
        }
        for (auto& p : model.fc().parameters()) params.push_back(std::move(p));
        auto loss_fn = [&](Tape& tape, const Tensor& clip, const PoseSequence& pose, std::int64_t label) {
            Tensor volume = model.backbone().forward(nullptr, clip);  // frozen
            Tensor parts = model.body_parts(&tape, volume, pose);
            Tensor human = model.human().forward(&tape, parts).logits;
            Tensor post = posture_stream(&tape, pose, model.posture()).logits;
            Tensor flat = model.fc().forward(&tape, parts);
            const std::int64_t k = model.config().classes;
            Tensor loss = softmax_cross_entropy(&tape, reshape(&tape, human, {1, k}), {label});
            loss = add(&tape, loss, softmax_cross_entropy(&tape, reshape(&tape, post, {1, k}), {label}));
            loss = add(&tape, loss, softmax_cross_entropy(&tape, reshape(&tape, flat, {1, k}), {label}));
            return std::make_pair(loss, argmax(human.data()));
        };
        run_stage(2, config.epochs_module, std::move(params), config.lr_module, config.wd_module, loss_fn,
                  EvalMode::pgcn);
    }

    // stage 3: joint fine-tune of everything
    {
        NamedParams params = model.backbone().conv_parameters();
        if (config.use_ids) {
            for (auto& p : model.backbone().head_parameters()) params.push_back(std::move(p));
        }
        for (auto& p : with_prefix("human.", model.human().trainable_parameters())) params.push_back(std::move(p));
        for (auto& p : with_prefix("posture.", model.posture().trainable_parameters())) {
            params.push_back(std::move(p));
        }
        for (auto& p : model.fc().parameters()) params.push_back(std::move(p));
        auto loss_fn = [&](Tape& tape, const Tensor& clip, const PoseSequence& pose, std::int64_t label) {
            Tensor volume = model.backbone().forward(&tape, clip);
            Tensor scene = model.backbone().scene_logits(&tape, volume);
            Tensor parts = model.body_parts(&tape, volume, pose);
            Tensor human = model.human().forward(&tape, parts).logits;
            Tensor post = posture_stream(&tape, pose, model.posture()).logits;
            Tensor flat = model.fc().forward(&tape, parts);
            const std::int64_t k = model.config().classes;
            Tensor loss = softmax_cross_entropy(&tape, reshape(&tape, scene, {1, k}), {label});
            if (config.use_ids) {
                loss = add(&tape, loss,
                           scale(&tape, model.backbone().ids_loss(&tape, volume, label), config.lambda_ids));
            }
            loss = add(&tape, loss, softmax_cross_entropy(&tape, reshape(&tape, human, {1, k}), {label}));
            loss = add(&tape, loss, softmax_cross_entropy(&tape, reshape(&tape, post, {1, k}), {label}));
            loss = add(&tape, loss, softmax_cross_entropy(&tape, reshape(&tape, flat, {1, k}), {label}));
            return std::make_pair(loss, argmax(human.data()));
        };
        run_stage(3, config.epochs_joint, std::move(params), config.lr_joint, config.wd_backbone, loss_fn,
                  EvalMode::pgcn_fusion);
    }

    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        save_checkpoint(out_dir + "/model.pgcn", model.parameters());
        write_metrics_csv(out_dir + "/metrics.csv", result.metrics);
    }
    return result;
}

}  // namespace pgcn
