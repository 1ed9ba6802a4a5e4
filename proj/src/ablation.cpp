#include "pgcn/ablation.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace pgcn {

AblationConfig AblationConfig::from_config(KVConfig& cfg) {
    AblationConfig c;
    c.data = SyntheticSpec::from_config(cfg);
    const std::int64_t n_seeds = cfg.get_int("seeds", static_cast<std::int64_t>(c.seeds.size()));
    const std::int64_t seed0 = cfg.get_int("seed_base", 1);
    c.seeds.clear();
    for (std::int64_t i = 0; i < n_seeds; ++i) c.seeds.push_back(static_cast<std::uint64_t>(seed0 + i));
    c.backbone_epochs = cfg.get_int("backbone_epochs", c.backbone_epochs);
    c.head_epochs = cfg.get_int("head_epochs", c.head_epochs);
    c.probe_epochs = cfg.get_int("probe_epochs", c.probe_epochs);
    c.augment_variants = cfg.get_int("augment_variants", c.augment_variants);
    c.lr_backbone = cfg.get_double("lr_backbone", c.lr_backbone);
    c.wd_backbone = cfg.get_double("wd_backbone", c.wd_backbone);
    c.lr_head = cfg.get_double("lr_head", c.lr_head);
    c.wd_head = cfg.get_double("wd_head", c.wd_head);
    c.momentum = cfg.get_double("momentum", c.momentum);
    c.plateau_factor = cfg.get_double("plateau_factor", c.plateau_factor);
    c.patience = cfg.get_int("patience", c.patience);
    c.batch = cfg.get_int("batch", c.batch);
    c.lambda_ids = cfg.get_double("lambda_ids", c.lambda_ids);
    c.validate();
    return c;
}

void AblationConfig::validate() const {
    data.validate();
    if (seeds.empty()) throw std::invalid_argument("ablation config: need at least one seed");
    if (backbone_epochs < 1 || head_epochs < 1 || probe_epochs < 1 || augment_variants < 1) {
        throw std::invalid_argument("ablation config: epoch and variant counts must be >= 1");
    }
    if (lr_backbone <= 0 || lr_head <= 0) throw std::invalid_argument("ablation config: learning rates must be positive");
    if (plateau_factor <= 1.0) throw std::invalid_argument("ablation config: plateau factor must be > 1");
}

namespace {

struct Item {
    Tensor clip;
    PoseSequence pose;
    std::int64_t label = 0;
};

void shuffle_indices(std::vector<std::size_t>& idx, Rng& rng) {
    for (std::size_t i = idx.size() - 1; i > 0; --i) {
        std::swap(idx[i], idx[static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(i) + 1))]);
    }
}

// Stage-1-style backbone training: scene cross-entropy, optionally plus the
// weighted per-location dense supervision. Fresh augmentation every epoch.
void train_backbone_variant(Backbone& bb, const SynthDataset& ds, bool use_ids,
                            const AblationConfig& cfg, const AugmentParams& aug, std::uint64_t seed,
                            const std::vector<Item>& val_items, std::ostream* log) {
    NamedParams params = bb.conv_parameters();
    if (use_ids) {
        for (auto& p : bb.head_parameters()) params.push_back(std::move(p));
    }
    SGD opt(std::move(params), cfg.lr_backbone, cfg.momentum, cfg.wd_backbone);
    PlateauScheduler sched(cfg.plateau_factor, cfg.patience);
    Rng rng(mix64(seed ^ (use_ids ? 0x696473ULL : 0x626172ULL)));
    std::vector<std::size_t> order(static_cast<std::size_t>(ds.train_size()));
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (std::int64_t epoch = 0; epoch < cfg.backbone_epochs; ++epoch) {
        shuffle_indices(order, rng);
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch));
            const double inv = 1.0 / static_cast<double>(end - start);
            opt.zero_grad();
            for (std::size_t b = start; b < end; ++b) {
                Sample s = ds.train_sample(static_cast<std::int64_t>(order[b]));
                auto [clip, pose] = augment(s.clip, s.pose, aug, rng);
                (void)pose;
                Tape tape;
                Tensor volume = bb.forward(&tape, clip);
                Tensor scene = bb.scene_logits(&tape, volume);
                Tensor loss = softmax_cross_entropy(&tape, reshape(&tape, scene, {1, ds.spec.classes}),
                                                    {s.label});
                if (use_ids) {
                    loss = add(&tape, loss, scale(&tape, bb.ids_loss(&tape, volume, s.label), cfg.lambda_ids));
                }
                if (!std::isfinite(loss.item())) {
                    throw std::runtime_error("non-finite backbone loss at epoch " + std::to_string(epoch));
                }
                loss_sum += loss.item();
                Tensor scaled = scale(&tape, loss, inv);
                tape.backward(scaled);
            }
            opt.step();
        }
        std::int64_t correct = 0;
        for (const auto& item : val_items) {
            Tensor volume = bb.forward(nullptr, item.clip);
            if (argmax(bb.scene_logits(nullptr, volume).data()) == item.label) ++correct;
        }
        const double val_acc = static_cast<double>(correct) / static_cast<double>(val_items.size());
        if (log) {
            *log << "  backbone" << (use_ids ? "+ids" : "") << " epoch " << epoch << " loss "
                 << loss_sum / static_cast<double>(ds.train_size()) << " val_scene_acc " << val_acc << "\n";
        }
        if (sched.saturated(val_acc)) opt.set_lr(opt.lr() / cfg.plateau_factor);
    }
}

using LogitsFn = std::function<Tensor(Tape*, const Tensor&)>;

double head_accuracy(const LogitsFn& logits_fn, const std::vector<Tensor>& x,
                     const std::vector<std::int64_t>& y) {
    std::int64_t correct = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (argmax(logits_fn(nullptr, x[i]).data()) == y[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(x.size());
}

// Trains any classification head on cached feature tensors; returns the
// final validation accuracy. Every head in a seed sees the same sample order.
double train_head(NamedParams params, const LogitsFn& logits_fn, std::int64_t classes,
                  const std::vector<Tensor>& tx, const std::vector<std::int64_t>& ty,
                  const std::vector<Tensor>& vx, const std::vector<std::int64_t>& vy,
                  const AblationConfig& cfg, std::uint64_t seed) {
    SGD opt(std::move(params), cfg.lr_head, cfg.momentum, cfg.wd_head);
    PlateauScheduler sched(cfg.plateau_factor, cfg.patience);
    Rng rng(mix64(seed ^ 0x68656164ULL));
    std::vector<std::size_t> order(tx.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::int64_t epoch = 0; epoch < cfg.head_epochs; ++epoch) {
        shuffle_indices(order, rng);
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch));
            const double inv = 1.0 / static_cast<double>(end - start);
            opt.zero_grad();
            for (std::size_t b = start; b < end; ++b) {
                const std::size_t i = order[b];
                Tape tape;
                Tensor logits = logits_fn(&tape, tx[i]);
                Tensor loss = softmax_cross_entropy(&tape, reshape(&tape, logits, {1, classes}), {ty[i]});
                if (!std::isfinite(loss.item())) {
                    throw std::runtime_error("non-finite head loss at epoch " + std::to_string(epoch));
                }
                Tensor scaled = scale(&tape, loss, inv);
                tape.backward(scaled);
            }
            opt.step();
        }
        if (sched.saturated(head_accuracy(logits_fn, vx, vy))) opt.set_lr(opt.lr() / cfg.plateau_factor);
    }
    return head_accuracy(logits_fn, vx, vy);
}

// Fraction of freshly trained per-location probe heads whose validation
// accuracy beats chance. Probe init and sample order depend only on the seed,
// so the two backbone variants get identical probes.
double probe_coverage(const std::vector<Tensor>& tv, const std::vector<std::int64_t>& ty,
                      const std::vector<Tensor>& vv, const std::vector<std::int64_t>& vy,
                      std::int64_t classes, const AblationConfig& cfg, std::uint64_t seed) {
    const Shape& vol = tv.front().shape();
    const std::int64_t C = vol[0];
    const std::int64_t L = vol[1] * vol[2] * vol[3];
    Rng rng(mix64(seed ^ 0x70726f62ULL));
    const double bound = 1.0 / std::sqrt(static_cast<double>(C));
    Tensor w = Tensor::uniform({L, classes, C}, rng, -bound, bound, true);
    Tensor b(Shape{L, classes}, 0.0, true);
    SGD opt({{"probe.w", w}, {"probe.b", b}}, cfg.lr_head, cfg.momentum, cfg.wd_head);
    std::vector<std::size_t> order(tv.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::int64_t epoch = 0; epoch < cfg.probe_epochs; ++epoch) {
        shuffle_indices(order, rng);
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch));
            const double inv = 1.0 / static_cast<double>(end - start);
            opt.zero_grad();
            for (std::size_t q = start; q < end; ++q) {
                const std::size_t i = order[q];
                Tape tape;
                Tensor logits = dense_heads_forward(&tape, tv[i], w, b);
                std::vector<std::int64_t> labels(static_cast<std::size_t>(L), ty[i]);
                Tensor loss = softmax_cross_entropy(&tape, logits, labels);
                Tensor scaled = scale(&tape, loss, inv);
                tape.backward(scaled);
            }
            opt.step();
        }
    }
    std::vector<std::int64_t> correct(static_cast<std::size_t>(L), 0);
    for (std::size_t i = 0; i < vv.size(); ++i) {
        Tensor logits = dense_heads_forward(nullptr, vv[i], w, b);
        for (std::int64_t l = 0; l < L; ++l) {
            const double* row = logits.data().data() + l * classes;
            std::int64_t best = 0;
            for (std::int64_t c = 1; c < classes; ++c) {
                if (row[c] > row[best]) best = c;
            }
            if (best == vy[i]) ++correct[static_cast<std::size_t>(l)];
        }
    }
    const double chance = 1.0 / static_cast<double>(classes);
    std::int64_t covered = 0;
    for (auto c : correct) {
        if (static_cast<double>(c) / static_cast<double>(vv.size()) > chance) ++covered;
    }
    return static_cast<double>(covered) / static_cast<double>(L);
}

struct BackboneCache {
    std::vector<Tensor> train_parts, val_parts;
    std::vector<Tensor> train_volumes, val_volumes;
    std::vector<std::vector<double>> val_scene;
};

BackboneCache build_cache(const Backbone& bb, const std::vector<Item>& train_items,
                          const std::vector<Item>& val_items) {
    BackboneCache cache;
    const auto align = frame_alignment(bb.chain());
    for (const auto& item : train_items) {
        Tensor volume = bb.forward(nullptr, item.clip);
        cache.train_parts.push_back(pool_body_parts(nullptr, volume, bb.chain(), item.pose, align));
        cache.train_volumes.push_back(volume);
    }
    for (const auto& item : val_items) {
        Tensor volume = bb.forward(nullptr, item.clip);
        cache.val_parts.push_back(pool_body_parts(nullptr, volume, bb.chain(), item.pose, align));
        cache.val_volumes.push_back(volume);
        cache.val_scene.push_back(bb.scene_logits(nullptr, volume).data());
    }
    return cache;
}

double mean_of(const std::vector<SeedResult>& seeds, double SeedResult::* field) {
    double sum = 0.0;
    for (const auto& s : seeds) sum += s.*field;
    return sum / static_cast<double>(seeds.size());
}

}  // namespace

std::string AblationReport::summary() const {
    std::ostringstream out;
    out.precision(4);
    auto pct = [](double v) { return v * 100.0; };
    out << "seeds: " << seeds.size() << ", chance " << pct(chance) << "%\n";
    out << "aggregation  backbone-only " << pct(mean_backbone_only) << "  fc-aggregate "
        << pct(mean_fc_aggregate) << "  pgcn " << pct(mean_pgcn_adaptive) << "  -> "
        << (aggregation_ordering ? "PASS" : "FAIL") << "\n";
    out << "adaptivity   fixed " << pct(mean_pgcn_fixed) << "  global-only " << pct(mean_pgcn_global)
        << "  adaptive " << pct(mean_pgcn_adaptive) << "  -> " << (adaptivity_ordering ? "PASS" : "FAIL")
        << "\n";
    out << "supervision  pgcn " << pct(mean_pgcn_adaptive) << " -> pgcn+ids " << pct(mean_pgcn_ids)
        << "  coverage " << pct(mean_coverage) << " -> " << pct(mean_coverage_ids) << "  -> "
        << (supervision_ordering ? "PASS" : "FAIL") << "\n";
    out << "fusion       posture " << pct(mean_posture) << "  scene " << pct(mean_backbone_only_ids)
        << "  pgcn+ids " << pct(mean_pgcn_ids) << "  fused " << pct(mean_fusion) << "  wins "
        << fusion_wins << "/" << seeds.size() << "  -> " << (fusion_ordering ? "PASS" : "FAIL") << "\n";
    return out.str();
}

AblationReport run_ablation(const AblationConfig& config, const std::string& out_dir, std::ostream* log) {
    config.validate();
    AblationReport report;
    report.chance = 1.0 / static_cast<double>(config.data.classes);
    const AugmentParams aug;
    const SkeletonTree tree = build_graph(skeleton_preset("sub15"));
    const SubsetAdjacency adjacency = adjacency_matrices(tree, partition_subsets(tree));
    const std::int64_t classes = config.data.classes;

    for (std::uint64_t seed : config.seeds) {
        if (log) *log << "seed " << seed << "\n";
        SeedResult r;
        r.seed = seed;
        SynthDataset ds = synth_dataset(config.data, seed);

        // shared processed inputs: fixed augmented copies for head training,
        // deterministic test processing for validation
        std::vector<Item> train_items, val_items;
        Rng aug_rng(mix64(seed ^ 0x636163686555ULL));
        for (std::int64_t i = 0; i < ds.train_size(); ++i) {
            Sample s = ds.train_sample(i);
            for (std::int64_t v = 0; v < config.augment_variants; ++v) {
                auto [clip, pose] = augment(s.clip, s.pose, aug, aug_rng);
                train_items.push_back({clip, pose, s.label});
            }
        }
        for (std::int64_t i = 0; i < ds.val_size(); ++i) {
            Sample s = ds.val_sample(i);
            auto [clip, pose] = test_process(s.clip, s.pose, aug);
            val_items.push_back({clip, pose, s.label});
        }
        std::vector<std::int64_t> train_labels, val_labels;
        for (const auto& it : train_items) train_labels.push_back(it.label);
        for (const auto& it : val_items) val_labels.push_back(it.label);

        // two backbones from identical initial weights
        BackboneConfig bb_cfg = BackboneConfig::default_desk(classes);
        Rng init_a(mix64(seed ^ 0x6262ULL)), init_b(mix64(seed ^ 0x6262ULL));
        Backbone plain(bb_cfg, init_a), supervised(bb_cfg, init_b);
        train_backbone_variant(plain, ds, false, config, aug, seed, val_items, log);
        train_backbone_variant(supervised, ds, true, config, aug, seed, val_items, log);

        BackboneCache cache_a = build_cache(plain, train_items, val_items);
        BackboneCache cache_b = build_cache(supervised, train_items, val_items);

        std::int64_t scene_a = 0, scene_b = 0;
        for (std::size_t i = 0; i < val_items.size(); ++i) {
            if (argmax(cache_a.val_scene[i]) == val_labels[i]) ++scene_a;
            if (argmax(cache_b.val_scene[i]) == val_labels[i]) ++scene_b;
        }
        r.backbone_only = static_cast<double>(scene_a) / static_cast<double>(val_items.size());
        r.backbone_only_ids = static_cast<double>(scene_b) / static_cast<double>(val_items.size());

        const std::int64_t vol_channels = bb_cfg.volume_channels();
        const std::int64_t part_features =
            vol_channels * bb_cfg.volume_extents()[0] * tree.nodes;

        // flat affine baseline over the body-part features
        Rng fc_rng(mix64(seed ^ 0x6663ULL));
        FCAggregate fc(part_features, classes, fc_rng);
        r.fc_aggregate = train_head(
            fc.parameters(), [&](Tape* t, const Tensor& x) { return fc.forward(t, x); }, classes,
            cache_a.train_parts, train_labels, cache_a.val_parts, val_labels, config, seed);

        // graph streams in the three adjacency modes, plain backbone
        auto graph_head = [&](AdaptMode mode, const BackboneCache& cache) {
            Rng rng(mix64(seed ^ 0x6763ULL));
            AGCNStack stack(AGCNStackConfig::default_desk(vol_channels, classes, tree.nodes, mode),
                            adjacency, rng);
            return train_head(
                stack.trainable_parameters(),
                [&](Tape* t, const Tensor& x) { return stack.forward(t, x).logits; }, classes,
                cache.train_parts, train_labels, cache.val_parts, val_labels, config, seed);
        };
        r.pgcn_fixed = graph_head(AdaptMode::fixed, cache_a);
        r.pgcn_global = graph_head(AdaptMode::global_only, cache_a);
        r.pgcn_adaptive = graph_head(AdaptMode::adaptive, cache_a);

        Rng ids_rng(mix64(seed ^ 0x6763ULL));
        AGCNStack pgcn_ids(AGCNStackConfig::default_desk(vol_channels, classes, tree.nodes,
                                                         AdaptMode::adaptive),
                           adjacency, ids_rng);
        r.pgcn_ids = train_head(
            pgcn_ids.trainable_parameters(),
            [&](Tape* t, const Tensor& x) { return pgcn_ids.forward(t, x).logits; }, classes,
            cache_b.train_parts, train_labels, cache_b.val_parts, val_labels, config, seed);

        // coordinate-only stream (backbone-independent)
        std::vector<Tensor> posture_train, posture_val;
        for (const auto& it : train_items) posture_train.push_back(posture_features(it.pose));
        for (const auto& it : val_items) posture_val.push_back(posture_features(it.pose));
        Rng posture_rng(mix64(seed ^ 0x706fULL));
        AGCNStack posture(AGCNStackConfig::default_desk(3, classes, tree.nodes, AdaptMode::adaptive),
                          adjacency, posture_rng);
        r.posture = train_head(
            posture.trainable_parameters(),
            [&](Tape* t, const Tensor& x) { return posture.forward(t, x).logits; }, classes,
            posture_train, train_labels, posture_val, val_labels, config, seed);

        // three-stream fusion on the supervised backbone
        std::int64_t fused_correct = 0;
        for (std::size_t i = 0; i < val_items.size(); ++i) {
            std::vector<std::vector<double>> streams = {
                pgcn_ids.forward(nullptr, cache_b.val_parts[i]).logits.data(),
                cache_b.val_scene[i],
                posture.forward(nullptr, posture_val[i]).logits.data(),
            };
            if (argmax(fuse_scores(streams)) == val_labels[i]) ++fused_correct;
        }
        r.fusion = static_cast<double>(fused_correct) / static_cast<double>(val_items.size());

        r.coverage = probe_coverage(cache_a.train_volumes, train_labels, cache_a.val_volumes, val_labels,
                                    classes, config, seed);
        r.coverage_ids = probe_coverage(cache_b.train_volumes, train_labels, cache_b.val_volumes,
                                        val_labels, classes, config, seed);

        if (log) {
            *log << "  backbone-only " << r.backbone_only << " fc " << r.fc_aggregate << " pgcn[fixed "
                 << r.pgcn_fixed << " global " << r.pgcn_global << " adaptive " << r.pgcn_adaptive
                 << "] pgcn+ids " << r.pgcn_ids << " posture " << r.posture << " fused " << r.fusion
                 << " coverage " << r.coverage << " -> " << r.coverage_ids << "\n";
        }
        report.seeds.push_back(r);
    }

    report.mean_backbone_only = mean_of(report.seeds, &SeedResult::backbone_only);
    report.mean_backbone_only_ids = mean_of(report.seeds, &SeedResult::backbone_only_ids);
    report.mean_fc_aggregate = mean_of(report.seeds, &SeedResult::fc_aggregate);
    report.mean_pgcn_fixed = mean_of(report.seeds, &SeedResult::pgcn_fixed);
    report.mean_pgcn_global = mean_of(report.seeds, &SeedResult::pgcn_global);
    report.mean_pgcn_adaptive = mean_of(report.seeds, &SeedResult::pgcn_adaptive);
    report.mean_pgcn_ids = mean_of(report.seeds, &SeedResult::pgcn_ids);
    report.mean_posture = mean_of(report.seeds, &SeedResult::posture);
    report.mean_fusion = mean_of(report.seeds, &SeedResult::fusion);
    report.mean_coverage = mean_of(report.seeds, &SeedResult::coverage);
    report.mean_coverage_ids = mean_of(report.seeds, &SeedResult::coverage_ids);

    for (const auto& s : report.seeds) {
        if (s.fusion >= s.pgcn_ids) ++report.fusion_wins;
    }
    const double gap = 0.02;
    report.aggregation_ordering = report.mean_backbone_only + gap < report.mean_fc_aggregate &&
                                  report.mean_fc_aggregate + gap < report.mean_pgcn_adaptive;
    report.adaptivity_ordering = report.mean_pgcn_fixed + gap < report.mean_pgcn_global &&
                                 report.mean_pgcn_global + gap < report.mean_pgcn_adaptive;
    report.supervision_ordering =
        report.mean_pgcn_ids >= report.mean_pgcn_adaptive && report.mean_coverage_ids > report.mean_coverage;
    const double max_stream =
        std::max({report.mean_pgcn_ids, report.mean_backbone_only_ids, report.mean_posture});
    report.fusion_ordering = report.fusion_wins + 1 >= static_cast<int>(report.seeds.size()) &&
                             report.mean_fusion >= max_stream - 0.005 &&
                             report.mean_posture > report.chance + 0.05 &&
                             report.mean_posture < report.mean_pgcn_ids;

    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        std::ofstream csv(out_dir + "/ablation.csv");
        if (!csv) throw std::runtime_error("cannot write ablation results under " + out_dir);
        csv.precision(17);
        csv << "seed,backbone_only,backbone_only_ids,fc_aggregate,pgcn_fixed,pgcn_global,"
               "pgcn_adaptive,pgcn_ids,posture,fusion,coverage,coverage_ids\n";
        for (const auto& s : report.seeds) {
            csv << s.seed << "," << s.backbone_only << "," << s.backbone_only_ids << "," << s.fc_aggregate
                << "," << s.pgcn_fixed << "," << s.pgcn_global << "," << s.pgcn_adaptive << ","
                << s.pgcn_ids << "," << s.posture << "," << s.fusion << "," << s.coverage << ","
                << s.coverage_ids << "\n";
        }
        std::ofstream txt(out_dir + "/summary.txt");
        txt << report.summary();
    }
    return report;
}

}  // namespace pgcn
