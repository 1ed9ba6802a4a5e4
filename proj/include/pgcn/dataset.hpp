#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "pgcn/config.hpp"
#include "pgcn/receptive_field.hpp"
#include "pgcn/tensor.hpp"

namespace pgcn {

// Desk-scale synthetic action dataset: clips render moving joint markers on
// structured background noise; pose sequences are the generator's exact joint
// tracks plus visibility dropout. Classes fall into three rule families:
//   appearance_only        - class-specific global background pattern
//   single_part_motion     - one designated joint follows a class trajectory
//   joint_pair_correlation - a designated joint pair oscillates in or out of
//                            phase; the per-joint marginals are identical
//                            across the paired classes, so the label is
//                            decidable only from the pair relation.
struct SyntheticSpec {
    std::int64_t classes = 12;
    std::int64_t joints = 15;
    std::int64_t frames = 20;  // source frames before augmentation
    std::int64_t height = 64;
    std::int64_t width = 64;
    double noise = 0.05;
    double appearance_amp = 0.35;
    double motion_amp = 14.0;
    double motion_period = 16.0;
    double marker_peak = 1.0;
    double drift = 0.04;       // per-joint linear drift bound, px/frame
    double pose_noise = 2.0;   // pose localization error bound, px
    double visibility_dropout = 0.01;
    std::int64_t train_per_class = 6;
    std::int64_t val_per_class = 8;

    enum class Rule { appearance_only, single_part_motion, joint_pair_correlation };
    Rule rule_for_class(std::int64_t label) const;

    // designated joints; pairs sit far apart in the body tree
    std::int64_t motion_joint(std::int64_t label) const;
    std::pair<std::int64_t, std::int64_t> correlated_pair(std::int64_t label) const;

    static SyntheticSpec from_config(KVConfig& cfg);
    void validate() const;
};

struct Sample {
    Tensor clip;  // [3, frames, H, W]
    PoseSequence pose;
    std::int64_t label = 0;
};

// Pure function of (spec, seed, split, index); split 0 = train, 1 = val.
Sample synth_sample(const SyntheticSpec& spec, std::uint64_t seed, int split, std::int64_t index);

struct SynthDataset {
    SyntheticSpec spec;
    std::uint64_t seed = 0;

    std::int64_t train_size() const { return spec.classes * spec.train_per_class; }
    std::int64_t val_size() const { return spec.classes * spec.val_per_class; }
    Sample train_sample(std::int64_t i) const { return synth_sample(spec, seed, 0, i); }
    Sample val_sample(std::int64_t i) const { return synth_sample(spec, seed, 1, i); }
};

SynthDataset synth_dataset(const SyntheticSpec& spec, std::uint64_t seed);

// Writes every sample (pose text file, clip in checkpoint tensor format) plus
// a labels.csv index to dir.
void export_dataset(const SynthDataset& dataset, const std::string& dir);

struct AugmentParams {
    std::int64_t sample_frames = 20;
    std::int64_t crop_frames = 16;
    std::int64_t crop_height = 56;
    std::int64_t crop_width = 56;
    double perturb_frac = 0.01;  // joint perturbation as a fraction of the image extent
};

// Training-time processing: random temporal sample + contiguous crop, random
// spatial crop (applied identically to clip and pose), joint perturbation
// within +-perturb_frac of the extent. Throws when the clip is too short.
std::pair<Tensor, PoseSequence> augment(const Tensor& clip, const PoseSequence& pose,
                                        const AugmentParams& params, Rng& rng);

// Test-time processing: uniform temporal sample, center temporal and spatial
// crops, no perturbation.
std::pair<Tensor, PoseSequence> test_process(const Tensor& clip, const PoseSequence& pose,
                                             const AugmentParams& params);

// Velocity correlation between two joints' trajectories; the pair-relation
// statistic behind the correlation classes.
double pair_velocity_correlation(const PoseSequence& pose, std::int64_t j1, std::int64_t j2);

}  // namespace pgcn
