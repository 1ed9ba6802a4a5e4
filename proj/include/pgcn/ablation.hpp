#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "pgcn/config.hpp"
#include "pgcn/dataset.hpp"
#include "pgcn/train.hpp"

namespace pgcn {

// Configuration for the directional comparison suite. Per seed the harness
// trains two backbones from identical initial weights (with and without the
// dense per-location supervision), caches processed feature volumes, then
// trains every aggregation head on the cached features so all comparisons see
// the exact same inputs.
struct AblationConfig {
    SyntheticSpec data;
    std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};

    std::int64_t backbone_epochs = 8;
    std::int64_t head_epochs = 30;
    std::int64_t probe_epochs = 15;
    std::int64_t augment_variants = 2;  // cached augmented copies per training sample

    double lr_backbone = 0.01;
    double wd_backbone = 5e-4;
    double lr_head = 0.1;
    double wd_head = 1e-4;
    double momentum = 0.9;
    double plateau_factor = 10.0;
    std::int64_t patience = 3;
    std::int64_t batch = 8;
    double lambda_ids = 1.0;

    static AblationConfig from_config(KVConfig& cfg);
    void validate() const;
};

// Validation accuracies (and head-coverage fractions) for one seed. The _ids
// fields come from the densely supervised backbone; everything else uses the
// plain one.
struct SeedResult {
    std::uint64_t seed = 0;
    double backbone_only = 0.0;
    double backbone_only_ids = 0.0;
    double fc_aggregate = 0.0;
    double pgcn_fixed = 0.0;
    double pgcn_global = 0.0;
    double pgcn_adaptive = 0.0;
    double pgcn_ids = 0.0;
    double posture = 0.0;
    double fusion = 0.0;
    double coverage = 0.0;      // fresh probe heads on the plain backbone
    double coverage_ids = 0.0;  // same probes on the supervised backbone
};

struct AblationReport {
    std::vector<SeedResult> seeds;

    double mean_backbone_only = 0.0;
    double mean_backbone_only_ids = 0.0;
    double mean_fc_aggregate = 0.0;
    double mean_pgcn_fixed = 0.0;
    double mean_pgcn_global = 0.0;
    double mean_pgcn_adaptive = 0.0;
    double mean_pgcn_ids = 0.0;
    double mean_posture = 0.0;
    double mean_fusion = 0.0;
    double mean_coverage = 0.0;
    double mean_coverage_ids = 0.0;

    int fusion_wins = 0;  // seeds where fusion >= the graph stream alone
    double chance = 0.0;

    // directional checks; gaps in accuracy points (0..1 scale)
    bool aggregation_ordering = false;  // backbone < fc < pgcn, gaps > 0.02
    bool adaptivity_ordering = false;   // fixed < global < adaptive, gaps > 0.02
    bool supervision_ordering = false;  // pgcn_ids >= pgcn and coverage_ids > coverage
    bool fusion_ordering = false;       // fusion wins >= 4/5, >= max stream - 0.005,
                                        // chance < posture < pgcn

    bool all_ok() const {
        return aggregation_ordering && adaptivity_ordering && supervision_ordering && fusion_ordering;
    }
    std::string summary() const;
};

// Runs the full suite; writes per-seed CSV and a text summary to out_dir when
// non-empty. Deterministic given the config.
AblationReport run_ablation(const AblationConfig& config, const std::string& out_dir, std::ostream* log);

}  // namespace pgcn
