#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "pgcn/agcn.hpp"
#include "pgcn/backbone.hpp"
#include "pgcn/config.hpp"
#include "pgcn/dataset.hpp"
#include "pgcn/skeleton.hpp"
#include "pgcn/tensor.hpp"

namespace pgcn {

struct ModelConfig {
    BackboneConfig backbone;
    AGCNStackConfig human;
    AGCNStackConfig posture;
    std::string skeleton = "sub15";
    std::int64_t classes = 12;

    static ModelConfig default_desk(std::int64_t classes, AdaptMode mode = AdaptMode::adaptive);
};

// The three-stream model: scene (backbone GAP), human (body-part features
// through the graph module), posture (coordinates only), plus the flat
// fc-aggregation baseline head.
class PGCNModel {
public:
    PGCNModel(ModelConfig config, Rng& rng);

    const ModelConfig& config() const { return config_; }
    const SkeletonTree& tree() const { return tree_; }
    const SubsetAdjacency& adjacency() const { return adjacency_; }

    Backbone& backbone() { return backbone_; }
    const Backbone& backbone() const { return backbone_; }
    AGCNStack& human() { return human_; }
    const AGCNStack& human() const { return human_; }
    AGCNStack& posture() { return posture_; }
    const AGCNStack& posture() const { return posture_; }
    FCAggregate& fc() { return fc_; }
    const FCAggregate& fc() const { return fc_; }

    // volume from the clip, then cube pooling at the mapped joint locations
    Tensor body_parts(Tape* tape, const Tensor& volume, const PoseSequence& pose) const;

    NamedParams parameters() const;

private:
    ModelConfig config_;
    SkeletonTree tree_;
    SubsetAdjacency adjacency_;
    Backbone backbone_;
    AGCNStack human_;
    AGCNStack posture_;
    FCAggregate fc_;
};

class SGD {
public:
    SGD(NamedParams params, double lr, double momentum, double weight_decay);
    void zero_grad();
    void step();
    void set_lr(double lr) { lr_ = lr; }
    double lr() const { return lr_; }

private:
    NamedParams params_;
    std::vector<std::vector<double>> velocity_;
    double lr_, momentum_, weight_decay_;
};

// Divide-by-factor schedule driven by validation accuracy saturation.
class PlateauScheduler {
public:
    PlateauScheduler(double factor, std::int64_t patience) : factor_(factor), patience_(patience) {}
    // feed the epoch's validation accuracy; true when the LR should drop now
    bool saturated(double val_accuracy);
    double factor() const { return factor_; }

private:
    double factor_;
    std::int64_t patience_;
    double best_ = -1.0;
    std::int64_t bad_epochs_ = 0;
};

struct TrainConfig {
    double lr_backbone = 0.01;
    double lr_module = 0.1;
    double lr_joint = 0.001;
    double wd_backbone = 5e-4;
    double wd_module = 1e-4;
    double momentum = 0.9;
    double plateau_factor = 10.0;
    std::int64_t patience = 3;
    std::int64_t batch = 8;
    std::int64_t epochs_backbone = 10;
    std::int64_t epochs_module = 30;
    std::int64_t epochs_joint = 5;
    double lambda_ids = 1.0;
    bool use_ids = true;
    bool augment_clips = true;
    std::uint64_t seed = 1;
    AdaptMode adapt_mode = AdaptMode::adaptive;

    static TrainConfig from_config(KVConfig& cfg);
    void validate() const;
};

struct MetricsRow {
    std::int64_t epoch = 0;
    int stage = 0;
    std::string split;
    double loss = 0.0;
    double accuracy = 0.0;
    double head_coverage = 0.0;  // fraction of dense heads beating chance on val
};

void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows);

enum class EvalMode { backbone_only, fc_aggregate, pgcn, pgcn_fusion, posture_only };
EvalMode eval_mode_from_name(const std::string& name);
std::string eval_mode_name(EvalMode mode);

// Softmax each stream, then weighted-mean the probabilities.
std::vector<double> fuse_scores(const std::vector<std::vector<double>>& stream_logits,
                                const std::vector<double>& weights = {});

struct TrainResult {
    std::vector<MetricsRow> metrics;
};

// Three-stage schedule: backbone (scene CE + lambda*IDS), module on the
// frozen backbone, then joint fine-tune. Deterministic given config.seed.
TrainResult train(PGCNModel& model, const SynthDataset& dataset, const TrainConfig& config,
                  const AugmentParams& aug, const std::string& out_dir, std::ostream* log);

double evaluate(const PGCNModel& model, const SynthDataset& dataset, EvalMode mode,
                const AugmentParams& aug);

// Already-processed clips (matching the backbone input extents) with poses.
struct EvalItem {
    Tensor clip;
    PoseSequence pose;
    std::int64_t label = 0;
};

double evaluate_items(const PGCNModel& model, const std::vector<EvalItem>& items, EvalMode mode);

}  // namespace pgcn
