#include "pgcn/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <stdexcept>

#include "pgcn/checkpoint.hpp"

namespace pgcn {

SyntheticSpec::Rule SyntheticSpec::rule_for_class(std::int64_t label) const {
    const std::int64_t third = classes / 3;
    if (label < third) return Rule::appearance_only;
    if (label < 2 * third) return Rule::single_part_motion;
    return Rule::joint_pair_correlation;
}

std::int64_t SyntheticSpec::motion_joint(std::int64_t label) const {
    const std::int64_t third = classes / 3;
    const std::int64_t m = label - third;  // index within the motion family
    return (m / 2 == 0) ? joints - 4 : joints - 1;
}

std::pair<std::int64_t, std::int64_t> SyntheticSpec::correlated_pair(std::int64_t label) const {
    const std::int64_t c = label - 2 * (classes / 3);
    if (c / 2 == 0) return {joints - 4, joints - 3};
    return {joints - 2, joints - 1};
}

SyntheticSpec SyntheticSpec::from_config(KVConfig& cfg) {
    SyntheticSpec spec;
    spec.classes = cfg.get_int("classes", spec.classes);
    spec.joints = cfg.get_int("joints", spec.joints);
    spec.frames = cfg.get_int("frames", spec.frames);
    spec.height = cfg.get_int("height", spec.height);
    spec.width = cfg.get_int("width", spec.width);
    spec.noise = cfg.get_double("noise", spec.noise);
    spec.appearance_amp = cfg.get_double("appearance_amp", spec.appearance_amp);
    spec.motion_amp = cfg.get_double("motion_amp", spec.motion_amp);
    spec.motion_period = cfg.get_double("motion_period", spec.motion_period);
    spec.marker_peak = cfg.get_double("marker_peak", spec.marker_peak);
    spec.drift = cfg.get_double("drift", spec.drift);
    spec.pose_noise = cfg.get_double("pose_noise", spec.pose_noise);
    spec.visibility_dropout = cfg.get_double("visibility_dropout", spec.visibility_dropout);
    spec.train_per_class = cfg.get_int("train_per_class", spec.train_per_class);
    spec.val_per_class = cfg.get_int("val_per_class", spec.val_per_class);
    spec.validate();
    return spec;
}

void SyntheticSpec::validate() const {
    if (classes < 3 || classes % 3 != 0) {
        throw std::invalid_argument("synthetic spec: class count must be a positive multiple of 3");
    }
    if (joints < 4) throw std::invalid_argument("synthetic spec: need at least 4 joints");
    if (frames < 2 || height < 16 || width < 16) {
        throw std::invalid_argument("synthetic spec: extents too small");
    }
}

namespace {

constexpr double kTau = 6.283185307179586;

// canonical 15-joint layout on a 64x64 canvas (x, y), y pointing down
const double kBody15[15][2] = {
    {32, 24},  // neck
    {32, 34},  // belly
    {32, 17},  // face
    {25, 24},  // rshoulder
    {39, 24},  // lshoulder
    {27, 36},  // rhip
    {37, 36},  // lhip
    {20, 31},  // relbow
    {44, 31},  // lelbow
    {26, 45},  // rknee
    {38, 45},  // lknee
    {24, 38},  // rwrist
    {40, 38},  // lwrist
    {26, 48},  // rankle
    {38, 48},  // lankle
};

void base_positions(const SyntheticSpec& spec, std::vector<double>& bx, std::vector<double>& by) {
    bx.resize(static_cast<std::size_t>(spec.joints));
    by.resize(static_cast<std::size_t>(spec.joints));
    const double sx = static_cast<double>(spec.width) / 64.0;
    const double sy = static_cast<double>(spec.height) / 64.0;
    if (spec.joints == 15) {
        for (std::int64_t j = 0; j < 15; ++j) {
            bx[static_cast<std::size_t>(j)] = kBody15[j][0] * sx;
            by[static_cast<std::size_t>(j)] = kBody15[j][1] * sy;
        }
        return;
    }
    // fallback: joints on a circle around the canvas center
    for (std::int64_t j = 0; j < spec.joints; ++j) {
        const double angle = kTau * static_cast<double>(j) / static_cast<double>(spec.joints);
        bx[static_cast<std::size_t>(j)] = (32.0 + 16.0 * std::cos(angle)) * sx;
        by[static_cast<std::size_t>(j)] = (32.0 + 16.0 * std::sin(angle)) * sy;
    }
}

}  // namespace

Sample synth_sample(const SyntheticSpec& spec, std::uint64_t seed, int split, std::int64_t index) {
    spec.validate();
    Rng rng(mix64(mix64(seed ^ (0x5350ULL + static_cast<std::uint64_t>(split))) ^
                  static_cast<std::uint64_t>(index)));
    Sample sample;
    sample.label = index % spec.classes;
    const std::int64_t T = spec.frames, H = spec.height, W = spec.width, J = spec.joints;
    const auto rule = spec.rule_for_class(sample.label);

    // --- joint trajectories -------------------------------------------------
    std::vector<double> bx, by;
    base_positions(spec, bx, by);
    const double gx = rng.uniform(-2.0, 2.0), gy = rng.uniform(-2.0, 2.0);
    std::vector<double> jx(static_cast<std::size_t>(J)), jy(static_cast<std::size_t>(J));
    std::vector<double> vx(static_cast<std::size_t>(J)), vy(static_cast<std::size_t>(J));
    for (std::int64_t j = 0; j < J; ++j) {
        jx[static_cast<std::size_t>(j)] = rng.uniform(-1.0, 1.0);
        jy[static_cast<std::size_t>(j)] = rng.uniform(-1.0, 1.0);
        vx[static_cast<std::size_t>(j)] = rng.uniform(-spec.drift, spec.drift);
        vy[static_cast<std::size_t>(j)] = rng.uniform(-spec.drift, spec.drift);
    }
    const double phase = rng.uniform(0.0, kTau);
    const double omega = kTau / spec.motion_period;

    std::vector<double> px(static_cast<std::size_t>(T * J)), py(static_cast<std::size_t>(T * J));
    for (std::int64_t t = 0; t < T; ++t) {
        for (std::int64_t j = 0; j < J; ++j) {
            double x = bx[static_cast<std::size_t>(j)] + gx + jx[static_cast<std::size_t>(j)] +
                       vx[static_cast<std::size_t>(j)] * static_cast<double>(t);
            double y = by[static_cast<std::size_t>(j)] + gy + jy[static_cast<std::size_t>(j)] +
                       vy[static_cast<std::size_t>(j)] * static_cast<double>(t);
            if (rule == SyntheticSpec::Rule::single_part_motion && j == spec.motion_joint(sample.label)) {
                const std::int64_t m = sample.label - spec.classes / 3;
                // the paired classes on the same joint differ by frequency, which
                // survives translation and cropping where an axis split would not
                const double w = (m % 2 == 0) ? omega : 2.0 * omega;
                x += spec.motion_amp * std::sin(w * static_cast<double>(t) + phase);
            }
            if (rule == SyntheticSpec::Rule::joint_pair_correlation) {
                const auto [a, b] = spec.correlated_pair(sample.label);
                const std::int64_t c = sample.label - 2 * (spec.classes / 3);
                const bool anti = (c % 2 == 1);
                // pair oscillation runs along x: the designated pairs sit in the
                // horizontal middle of the canvas, so excursions survive cropping
                if (j == a) x += spec.motion_amp * std::sin(omega * static_cast<double>(t) + phase);
                if (j == b) {
                    x += spec.motion_amp *
                         std::sin(omega * static_cast<double>(t) + phase + (anti ? kTau / 2.0 : 0.0));
                }
            }
            x = std::clamp(x, 1.0, static_cast<double>(W) - 2.0);
            y = std::clamp(y, 1.0, static_cast<double>(H) - 2.0);
            px[static_cast<std::size_t>(t * J + j)] = x;
            py[static_cast<std::size_t>(t * J + j)] = y;
        }
    }

    // --- pose: estimator-style tracks (localization error + dropout) ---------
    // the rendered markers stay at the exact positions; only the reported
    // coordinates are perturbed, like an imperfect upstream pose estimator
    sample.pose.frames = T;
    sample.pose.joints = J;
    sample.pose.height = static_cast<double>(H);
    sample.pose.width = static_cast<double>(W);
    sample.pose.entries.assign(static_cast<std::size_t>(T * J), {});
    for (std::int64_t t = 0; t < T; ++t) {
        for (std::int64_t j = 0; j < J; ++j) {
            auto& e = sample.pose.at(t, j);
            e.x = std::clamp(px[static_cast<std::size_t>(t * J + j)] +
                                 rng.uniform(-spec.pose_noise, spec.pose_noise),
                             0.0, static_cast<double>(W) - 1.0);
            e.y = std::clamp(py[static_cast<std::size_t>(t * J + j)] +
                                 rng.uniform(-spec.pose_noise, spec.pose_noise),
                             0.0, static_cast<double>(H) - 1.0);
            e.visible = !rng.bernoulli(spec.visibility_dropout);
        }
    }

    // --- rendering -----------------------------------------------------------
    sample.clip = Tensor(Shape{3, T, H, W});
    double* clip = sample.clip.data().data();

    // class-specific background direction for appearance classes
    double pat_dx = 0.0, pat_dy = 0.0;
    if (rule == SyntheticSpec::Rule::appearance_only) {
        const double angle = kTau * static_cast<double>(sample.label) / static_cast<double>(spec.classes / 3);
        pat_dx = std::cos(angle);
        pat_dy = std::sin(angle);
    }
    // two mid-frequency background waves shared by all classes; their
    // wavelength (~16-32 px) makes locally pooled patches position-dependent,
    // while the global average stays near zero
    double wf[2][3], wp[2];
    for (int w = 0; w < 2; ++w) {
        wf[w][0] = rng.uniform(2.0, 4.0) / static_cast<double>(W);
        wf[w][1] = rng.uniform(2.0, 4.0) / static_cast<double>(H);
        wf[w][2] = rng.uniform(-0.08, 0.08);
        wp[w] = rng.uniform(0.0, kTau);
    }

    for (std::int64_t t = 0; t < T; ++t) {
        for (std::int64_t y = 0; y < H; ++y) {
            for (std::int64_t x = 0; x < W; ++x) {
                const double u = static_cast<double>(x) / static_cast<double>(W) - 0.5;
                const double v = static_cast<double>(y) / static_cast<double>(H) - 0.5;
                double bg = spec.appearance_amp * 2.0 * (pat_dx * u + pat_dy * v);
                for (int w = 0; w < 2; ++w) {
                    bg += 0.25 * std::sin(kTau * (wf[w][0] * static_cast<double>(x) +
                                                  wf[w][1] * static_cast<double>(y)) +
                                          wf[w][2] * static_cast<double>(t) + wp[w]);
                }
                const std::int64_t base = (t * H + y) * W + x;
                for (int c = 0; c < 3; ++c) {
                    clip[c * T * H * W + base] = bg + spec.noise * rng.normal();
                }
            }
        }
    }
    // joint markers: tinted Gaussian blobs stamped around each position
    const double sigma = 2.0;
    for (std::int64_t t = 0; t < T; ++t) {
        for (std::int64_t j = 0; j < J; ++j) {
            const double cx = px[static_cast<std::size_t>(t * J + j)];
            const double cy = py[static_cast<std::size_t>(t * J + j)];
            double tint[3];
            for (int c = 0; c < 3; ++c) {
                tint[c] = 0.6 + 0.4 * std::cos(2.1 * static_cast<double>(j) + 2.09 * static_cast<double>(c));
            }
            const std::int64_t x0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(cx) - 3);
            const std::int64_t x1 = std::min(W - 1, static_cast<std::int64_t>(cx) + 5);
            const std::int64_t y0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(cy) - 3);
            const std::int64_t y1 = std::min(H - 1, static_cast<std::int64_t>(cy) + 5);
            for (std::int64_t y = y0; y <= y1; ++y) {
                for (std::int64_t x = x0; x <= x1; ++x) {
                    const double d2 = (static_cast<double>(x) - cx) * (static_cast<double>(x) - cx) +
                                      (static_cast<double>(y) - cy) * (static_cast<double>(y) - cy);
                    const double g = spec.marker_peak * std::exp(-d2 / (2.0 * sigma * sigma));
                    const std::int64_t base = (t * H + y) * W + x;
                    for (int c = 0; c < 3; ++c) clip[c * T * H * W + base] += tint[c] * g;
                }
            }
        }
    }
    return sample;
}

SynthDataset synth_dataset(const SyntheticSpec& spec, std::uint64_t seed) {
    spec.validate();
    return SynthDataset{spec, seed};
}

void export_dataset(const SynthDataset& dataset, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    std::ofstream labels(dir + "/labels.csv");
    labels << "split,index,label,pose_file,clip_file\n";
    auto dump = [&](const char* split, std::int64_t n, auto getter) {
        for (std::int64_t i = 0; i < n; ++i) {
            Sample s = getter(i);
            const std::string stem = std::string(split) + "_" + std::to_string(i);
            write_pose_file(dir + "/" + stem + ".pose", s.pose);
            save_checkpoint(dir + "/" + stem + ".clip", {{"clip", s.clip}});
            labels << split << "," << i << "," << s.label << "," << stem << ".pose," << stem << ".clip\n";
        }
    };
    dump("train", dataset.train_size(), [&](std::int64_t i) { return dataset.train_sample(i); });
    dump("val", dataset.val_size(), [&](std::int64_t i) { return dataset.val_sample(i); });
}

std::pair<Tensor, PoseSequence> augment(const Tensor& clip, const PoseSequence& pose,
                                        const AugmentParams& params, Rng& rng) {
    const std::int64_t T = clip.shape()[1], H = clip.shape()[2], W = clip.shape()[3];
    if (pose.frames != T) throw std::invalid_argument("augment: clip/pose frame count mismatch");
    if (T < params.sample_frames || params.sample_frames < params.crop_frames) {
        throw std::invalid_argument("augment: clip too short for sample " +
                                    std::to_string(params.sample_frames) + " / crop " +
                                    std::to_string(params.crop_frames));
    }
    if (H < params.crop_height || W < params.crop_width) {
        throw std::invalid_argument("augment: clip smaller than the spatial crop");
    }

    // random sorted distinct frame subset, then a contiguous temporal crop
    std::vector<std::int64_t> frames;
    if (params.sample_frames == T) {
        frames.resize(static_cast<std::size_t>(T));
        for (std::int64_t i = 0; i < T; ++i) frames[static_cast<std::size_t>(i)] = i;
    } else {
        std::set<std::int64_t> picked;
        while (static_cast<std::int64_t>(picked.size()) < params.sample_frames) picked.insert(rng.uniform_int(T));
        frames.assign(picked.begin(), picked.end());
    }
    const std::int64_t start = rng.uniform_int(params.sample_frames - params.crop_frames + 1);
    frames = std::vector<std::int64_t>(frames.begin() + start, frames.begin() + start + params.crop_frames);

    const std::int64_t oy = rng.uniform_int(H - params.crop_height + 1);
    const std::int64_t ox = rng.uniform_int(W - params.crop_width + 1);

    const std::int64_t Tc = params.crop_frames, Hc = params.crop_height, Wc = params.crop_width;
    Tensor out(Shape{3, Tc, Hc, Wc});
    for (int c = 0; c < 3; ++c) {
        for (std::int64_t t = 0; t < Tc; ++t) {
            const std::int64_t ts = frames[static_cast<std::size_t>(t)];
            for (std::int64_t y = 0; y < Hc; ++y) {
                const double* src = clip.data().data() + ((c * T + ts) * H + (y + oy)) * W + ox;
                double* dst = out.data().data() + ((c * Tc + t) * Hc + y) * Wc;
                std::copy(src, src + Wc, dst);
            }
        }
    }

    PoseSequence pout;
    pout.frames = Tc;
    pout.joints = pose.joints;
    pout.height = static_cast<double>(Hc);
    pout.width = static_cast<double>(Wc);
    pout.entries.assign(static_cast<std::size_t>(Tc * pose.joints), {});
    const double bx = params.perturb_frac * static_cast<double>(Wc);
    const double by = params.perturb_frac * static_cast<double>(Hc);
    for (std::int64_t t = 0; t < Tc; ++t) {
        const std::int64_t ts = frames[static_cast<std::size_t>(t)];
        for (std::int64_t j = 0; j < pose.joints; ++j) {
            const auto& e = pose.at(ts, j);
            auto& o = pout.at(t, j);
            if (!e.visible) continue;
            double x = e.x - static_cast<double>(ox) + rng.uniform(-bx, bx);
            double y = e.y - static_cast<double>(oy) + rng.uniform(-by, by);
            if (x < 0.0 || x >= static_cast<double>(Wc) || y < 0.0 || y >= static_cast<double>(Hc)) {
                continue;  // joint left the crop: treat as missing
            }
            o = PoseSequence::Joint{x, y, true};
        }
    }
    return {std::move(out), std::move(pout)};
}

std::pair<Tensor, PoseSequence> test_process(const Tensor& clip, const PoseSequence& pose,
                                             const AugmentParams& params) {
    const std::int64_t T = clip.shape()[1], H = clip.shape()[2], W = clip.shape()[3];
    if (T < params.sample_frames) throw std::invalid_argument("test_process: clip too short");
    // uniform temporal sample, then center crops
    std::vector<std::int64_t> frames(static_cast<std::size_t>(params.sample_frames));
    for (std::int64_t i = 0; i < params.sample_frames; ++i) {
        frames[static_cast<std::size_t>(i)] = i * T / params.sample_frames;
    }
    const std::int64_t start = (params.sample_frames - params.crop_frames) / 2;
    frames = std::vector<std::int64_t>(frames.begin() + start, frames.begin() + start + params.crop_frames);
    const std::int64_t oy = (H - params.crop_height) / 2;
    const std::int64_t ox = (W - params.crop_width) / 2;

    const std::int64_t Tc = params.crop_frames, Hc = params.crop_height, Wc = params.crop_width;
    Tensor out(Shape{3, Tc, Hc, Wc});
    for (int c = 0; c < 3; ++c) {
        for (std::int64_t t = 0; t < Tc; ++t) {
            const std::int64_t ts = frames[static_cast<std::size_t>(t)];
            for (std::int64_t y = 0; y < Hc; ++y) {
                const double* src = clip.data().data() + ((c * T + ts) * H + (y + oy)) * W + ox;
                double* dst = out.data().data() + ((c * Tc + t) * Hc + y) * Wc;
                std::copy(src, src + Wc, dst);
            }
        }
    }
    PoseSequence pout;
    pout.frames = Tc;
    pout.joints = pose.joints;
    pout.height = static_cast<double>(Hc);
    pout.width = static_cast<double>(Wc);
    pout.entries.assign(static_cast<std::size_t>(Tc * pose.joints), {});
    for (std::int64_t t = 0; t < Tc; ++t) {
        const std::int64_t ts = frames[static_cast<std::size_t>(t)];
        for (std::int64_t j = 0; j < pose.joints; ++j) {
            const auto& e = pose.at(ts, j);
            if (!e.visible) continue;
            const double x = e.x - static_cast<double>(ox);
            const double y = e.y - static_cast<double>(oy);
            if (x < 0.0 || x >= static_cast<double>(Wc) || y < 0.0 || y >= static_cast<double>(Hc)) continue;
            pout.at(t, j) = PoseSequence::Joint{x, y, true};
        }
    }
    return {std::move(out), std::move(pout)};
}

double pair_velocity_correlation(const PoseSequence& pose, std::int64_t j1, std::int64_t j2) {
    std::vector<double> v1, v2;
    for (std::int64_t t = 0; t + 1 < pose.frames; ++t) {
        v1.push_back(pose.at(t + 1, j1).x - pose.at(t, j1).x);
        v2.push_back(pose.at(t + 1, j2).x - pose.at(t, j2).x);
    }
    double m1 = 0.0, m2 = 0.0;
    for (std::size_t i = 0; i < v1.size(); ++i) { m1 += v1[i]; m2 += v2[i]; }
    m1 /= static_cast<double>(v1.size());
    m2 /= static_cast<double>(v2.size());
    double num = 0.0, d1 = 0.0, d2 = 0.0;
    for (std::size_t i = 0; i < v1.size(); ++i) {
        num += (v1[i] - m1) * (v2[i] - m2);
        d1 += (v1[i] - m1) * (v1[i] - m1);
        d2 += (v2[i] - m2) * (v2[i] - m2);
    }
    const double denom = std::sqrt(d1 * d2);
    return denom > 1e-12 ? num / denom : 0.0;
}

}  // namespace pgcn
