#include "pgcn/agcn.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace pgcn {

std::string adapt_mode_name(AdaptMode mode) {
    switch (mode) {
        case AdaptMode::fixed: return "fixed";
        case AdaptMode::global_only: return "global_only";
        case AdaptMode::adaptive: return "adaptive";
    }
    return "?";
}

AdaptMode adapt_mode_from_name(const std::string& name) {
    if (name == "fixed") return AdaptMode::fixed;
    if (name == "global_only") return AdaptMode::global_only;
    if (name == "adaptive") return AdaptMode::adaptive;
    throw std::invalid_argument("unknown adapt mode: " + name);
}

AGCNStackConfig AGCNStackConfig::default_desk(std::int64_t in_channels, std::int64_t classes,
                                              std::int64_t joints, AdaptMode mode) {
    AGCNStackConfig cfg;
    cfg.in_channels = in_channels;
    cfg.classes = classes;
    cfg.joints = joints;
    cfg.mode = mode;
    cfg.layers = {
        AGCNLayerConfig{in_channels, 64, 0, 3, 1},
        AGCNLayerConfig{64, 64, 0, 3, 1},
        AGCNLayerConfig{64, 128, 0, 3, 2},
    };
    return cfg;
}

Tensor adaptive_adjacency(Tape* tape, const Tensor& f_in, const AGCNLayer& layer,
                          const Tensor& base_adjacency, int k, AdaptMode mode) {
    if (mode == AdaptMode::fixed) return base_adjacency;
    const Tensor& b = layer.global_graph[static_cast<std::size_t>(k)];
    if (mode == AdaptMode::global_only) return b;
    // individual graph: embed, flatten channel+time into the similarity axis,
    // tanh-bound the JxJ product
    const std::int64_t C = f_in.shape()[0], T = f_in.shape()[1], J = f_in.shape()[2];
    Tensor flat = reshape(tape, f_in, {C, T * J});
    const Tensor& wt = layer.embed_theta[static_cast<std::size_t>(k)];
    const Tensor& wp = layer.embed_phi[static_cast<std::size_t>(k)];
    const std::int64_t Ce = wt.shape()[0];
    Tensor et = reshape(tape, matmul(tape, wt, flat), {Ce * T, J});
    Tensor ep = reshape(tape, matmul(tape, wp, flat), {Ce * T, J});
    // mean (not sum) over the contraction axis, so similarities stay in the
    // responsive region of tanh regardless of embedding width or clip length
    Tensor sim = scale(tape, matmul(tape, transpose2d(tape, et), ep),
                       1.0 / static_cast<double>(Ce * T));
    Tensor ck = tanh_op(tape, sim);
    return add(tape, b, mul(tape, layer.alpha, ck));
}

Tensor spatial_graph_conv(Tape* tape, const Tensor& f_in,
                          const std::array<Tensor, kSubsetCount>& weights, const Tensor& bias,
                          const std::array<Tensor, kSubsetCount>& adjacencies) {
    if (f_in.rank() != 3) throw std::invalid_argument("spatial_graph_conv: f_in must be [C,T,J]");
    const std::int64_t C = f_in.shape()[0], T = f_in.shape()[1], J = f_in.shape()[2];
    const std::int64_t Cout = weights[0].shape()[0];
    Tensor out;
    for (int k = 0; k < kSubsetCount; ++k) {
        const Tensor& a = adjacencies[static_cast<std::size_t>(k)];
        if (a.rank() != 2 || a.shape()[0] != J || a.shape()[1] != J) {
            throw std::invalid_argument("spatial_graph_conv: adjacency " + shape_str(a.shape()) +
                                        " for J=" + std::to_string(J));
        }
        // f_in A_k: fold (C,T) so the joint axis is the matmul row space
        Tensor gathered = matmul(tape, reshape(tape, f_in, {C * T, J}), a);
        // W_k (.): fold (T,J) so channels are the matmul column space
        Tensor mixed = matmul(tape, weights[static_cast<std::size_t>(k)], reshape(tape, gathered, {C, T * J}));
        out = (k == 0) ? mixed : add(tape, out, mixed);
    }
    out = add_channel_bias(tape, out, bias);
    return reshape(tape, out, {Cout, T, J});
}

Tensor temporal_conv(Tape* tape, const Tensor& f, const Tensor& kernel, const Tensor& bias,
                     std::int64_t stride) {
    if (f.rank() != 3) throw std::invalid_argument("temporal_conv: input must be [C,T,J]");
    if (kernel.rank() != 3) throw std::invalid_argument("temporal_conv: kernel must be [C2,C1,K_t]");
    const std::int64_t C1 = f.shape()[0], T = f.shape()[1], J = f.shape()[2];
    const std::int64_t C2 = kernel.shape()[0], Kt = kernel.shape()[2];
    if (kernel.shape()[1] != C1) throw std::invalid_argument("temporal_conv: channel mismatch");
    if (Kt % 2 == 0) throw std::invalid_argument("temporal_conv: K_t must be odd");
    if (stride != 1 && stride != 2) throw std::invalid_argument("temporal_conv: stride must be 1 or 2");
    const std::int64_t pad = (Kt - 1) / 2;
    const std::int64_t To = (T + 2 * pad - Kt) / stride + 1;

    Tensor out(Shape{C2, To, J});
    const double* pf = f.data().data();
    const double* pk = kernel.data().data();
    double* po = out.data().data();
    for (std::int64_t c2 = 0; c2 < C2; ++c2) {
        for (std::int64_t c1 = 0; c1 < C1; ++c1) {
            const double* fc = pf + c1 * T * J;
            const double* kc = pk + (c2 * C1 + c1) * Kt;
            for (std::int64_t dt = 0; dt < Kt; ++dt) {
                const double kv = kc[dt];
                if (kv == 0.0) continue;
                for (std::int64_t to = 0; to < To; ++to) {
                    const std::int64_t ti = to * stride - pad + dt;
                    if (ti < 0 || ti >= T) continue;
                    const double* frow = fc + ti * J;
                    double* orow = po + (c2 * To + to) * J;
                    for (std::int64_t j = 0; j < J; ++j) orow[j] += kv * frow[j];
                }
            }
        }
    }
    if (tape) {
        Tensor cf = f, ck = kernel, co = out;
        tape->record("temporal_conv", [cf, ck, co, stride, pad]() mutable {
            const std::int64_t C1 = cf.shape()[0], T = cf.shape()[1], J = cf.shape()[2];
            const std::int64_t C2 = ck.shape()[0], Kt = ck.shape()[2];
            const std::int64_t To = co.shape()[1];
            const double* pf = cf.data().data();
            const double* pk = ck.data().data();
            const double* g = co.grad().data();
            double* gf = cf.grad().data();
            double* gk = ck.grad().data();
            for (std::int64_t c2 = 0; c2 < C2; ++c2) {
                for (std::int64_t c1 = 0; c1 < C1; ++c1) {
                    const double* fc = pf + c1 * T * J;
                    double* gfc = gf + c1 * T * J;
                    for (std::int64_t dt = 0; dt < Kt; ++dt) {
                        const double kv = pk[(c2 * C1 + c1) * Kt + dt];
                        double kacc = 0.0;
                        for (std::int64_t to = 0; to < To; ++to) {
                            const std::int64_t ti = to * stride - pad + dt;
                            if (ti < 0 || ti >= T) continue;
                            const double* grow = g + (c2 * To + to) * J;
                            const double* frow = fc + ti * J;
                            double* gfrow = gfc + ti * J;
                            for (std::int64_t j = 0; j < J; ++j) {
                                kacc += grow[j] * frow[j];
                                gfrow[j] += grow[j] * kv;
                            }
                        }
                        gk[(c2 * C1 + c1) * Kt + dt] += kacc;
                    }
                }
            }
        });
    }
    return add_channel_bias(tape, out, bias);
}

AGCNStack::AGCNStack(AGCNStackConfig config, const SubsetAdjacency& base, Rng& rng)
    : config_(std::move(config)) {
    if (base.joints != config_.joints) {
        throw std::invalid_argument("AGCNStack: base adjacency joints " + std::to_string(base.joints) +
                                    " != configured " + std::to_string(config_.joints));
    }
    const std::int64_t J = config_.joints;
    for (int k = 0; k < kSubsetCount; ++k) {
        base_[static_cast<std::size_t>(k)] =
            Tensor::from_data({J, J}, base.matrices[static_cast<std::size_t>(k)]);
    }
    std::int64_t prev = config_.in_channels;
    for (auto lc : config_.layers) {
        if (lc.in_channels != prev) throw std::invalid_argument("AGCNStack: layer channel mismatch");
        if (lc.embed_channels <= 0) lc.embed_channels = std::max<std::int64_t>(4, lc.in_channels / 4);
        AGCNLayer layer;
        layer.cfg = lc;
        // rectifier-preserving scale: the three subset branches sum, so each
        // branch carries a third of the target variance
        const double wb = std::sqrt(2.0 / static_cast<double>(lc.in_channels));
        const double eb = 1.0 / std::sqrt(static_cast<double>(lc.in_channels));
        for (int k = 0; k < kSubsetCount; ++k) {
            layer.weights[static_cast<std::size_t>(k)] =
                Tensor::uniform({lc.out_channels, lc.in_channels}, rng, -wb, wb, true);
            // global graph starts exactly equal to the body-based graph
            layer.global_graph[static_cast<std::size_t>(k)] =
                Tensor::from_data({J, J}, base.matrices[static_cast<std::size_t>(k)], true);
            layer.embed_theta[static_cast<std::size_t>(k)] =
                Tensor::uniform({lc.embed_channels, lc.in_channels}, rng, -eb, eb, true);
            layer.embed_phi[static_cast<std::size_t>(k)] =
                Tensor::uniform({lc.embed_channels, lc.in_channels}, rng, -eb, eb, true);
        }
        layer.spatial_bias = Tensor(Shape{lc.out_channels}, 0.0, true);
        layer.alpha = Tensor::scalar(0.0, true);
        const double tb = std::sqrt(6.0 / static_cast<double>(lc.out_channels * lc.temporal_kernel));
        layer.temporal_kernel =
            Tensor::uniform({lc.out_channels, lc.out_channels, lc.temporal_kernel}, rng, -tb, tb, true);
        layer.temporal_bias = Tensor(Shape{lc.out_channels}, 0.0, true);
        layers_.push_back(std::move(layer));
        prev = lc.out_channels;
    }
    const double cb = 1.0 / std::sqrt(static_cast<double>(prev));
    classifier_w_ = Tensor::uniform({config_.classes, prev}, rng, -cb, cb, true);
    classifier_b_ = Tensor(Shape{config_.classes}, 0.0, true);
}

StreamOutput AGCNStack::forward(Tape* tape, const Tensor& parts) const {
    if (parts.rank() != 3 || parts.shape()[0] != config_.in_channels || parts.shape()[2] != config_.joints) {
        throw std::invalid_argument("AGCNStack::forward: parts " + shape_str(parts.shape()) + " expected [" +
                                    std::to_string(config_.in_channels) + ",T," + std::to_string(config_.joints) +
                                    "]");
    }
    StreamOutput out;
    Tensor x = parts;
    for (const auto& layer : layers_) {
        std::array<Tensor, kSubsetCount> adjacencies;
        std::array<std::vector<double>, kSubsetCount> snapshot;
        for (int k = 0; k < kSubsetCount; ++k) {
            adjacencies[static_cast<std::size_t>(k)] =
                adaptive_adjacency(tape, x, layer, base_[static_cast<std::size_t>(k)], k, config_.mode);
            snapshot[static_cast<std::size_t>(k)] = adjacencies[static_cast<std::size_t>(k)].data();
        }
        out.adjacencies.push_back(std::move(snapshot));
        x = relu(tape, spatial_graph_conv(tape, x, layer.weights, layer.spatial_bias, adjacencies));
        x = relu(tape, temporal_conv(tape, x, layer.temporal_kernel, layer.temporal_bias,
                                     layer.cfg.temporal_stride));
    }
    Tensor pooled = mean_over_trailing(tape, x);
    out.logits = affine_vec(tape, classifier_w_, classifier_b_, pooled);
    return out;
}

NamedParams AGCNStack::parameters() const {
    NamedParams params;
    const char* subset_names[kSubsetCount] = {"parent", "self", "child"};
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const auto& layer = layers_[i];
        const std::string prefix = "agcn.layer" + std::to_string(i) + ".";
        for (int k = 0; k < kSubsetCount; ++k) {
            const std::string sk = subset_names[k];
            params.emplace_back(prefix + "w." + sk, layer.weights[static_cast<std::size_t>(k)]);
            params.emplace_back(prefix + "B." + sk, layer.global_graph[static_cast<std::size_t>(k)]);
            params.emplace_back(prefix + "theta." + sk, layer.embed_theta[static_cast<std::size_t>(k)]);
            params.emplace_back(prefix + "phi." + sk, layer.embed_phi[static_cast<std::size_t>(k)]);
        }
        params.emplace_back(prefix + "spatial_bias", layer.spatial_bias);
        params.emplace_back(prefix + "alpha", layer.alpha);
        params.emplace_back(prefix + "temporal_kernel", layer.temporal_kernel);
        params.emplace_back(prefix + "temporal_bias", layer.temporal_bias);
    }
    params.emplace_back("agcn.classifier.weight", classifier_w_);
    params.emplace_back("agcn.classifier.bias", classifier_b_);
    return params;
}

NamedParams AGCNStack::trainable_parameters() const {
    NamedParams all = parameters();
    NamedParams out;
    for (auto& [name, t] : all) {
        const bool is_graph = name.find(".B.") != std::string::npos;
        const bool is_embed = name.find(".theta.") != std::string::npos || name.find(".phi.") != std::string::npos;
        const bool is_alpha = name.find(".alpha") != std::string::npos;
        if (config_.mode == AdaptMode::fixed && (is_graph || is_embed || is_alpha)) continue;
        if (config_.mode == AdaptMode::global_only && (is_embed || is_alpha)) continue;
        out.emplace_back(name, t);
    }
    return out;
}

Tensor posture_features(const PoseSequence& pose) {
    const std::int64_t T = pose.frames, Jr = pose.joints;
    const std::int64_t J = Jr + 1;
    Tensor out(Shape{3, T, J});
    for (std::int64_t t = 0; t < T; ++t) {
        double mx = 0.0, my = 0.0, mv = 0.0;
        std::int64_t visible = 0;
        for (std::int64_t j = 0; j < Jr; ++j) {
            const auto& e = pose.at(t, j);
            if (!e.visible) continue;
            mx += e.x / pose.width - 0.5;
            my += e.y / pose.height - 0.5;
            mv += 1.0;
            ++visible;
        }
        if (visible > 0) {
            mx /= static_cast<double>(visible);
            my /= static_cast<double>(visible);
            out.at({0, t, Jr}) = mx;
            out.at({1, t, Jr}) = my;
            out.at({2, t, Jr}) = mv / static_cast<double>(visible);
        }
        // joints are expressed relative to the per-frame body centroid; the
        // appended root node keeps the absolute centroid as global context
        for (std::int64_t j = 0; j < Jr; ++j) {
            const auto& e = pose.at(t, j);
            if (!e.visible) continue;
            out.at({0, t, j}) = e.x / pose.width - 0.5 - mx;
            out.at({1, t, j}) = e.y / pose.height - 0.5 - my;
            out.at({2, t, j}) = 1.0;
        }
    }
    return out;
}

StreamOutput posture_stream(Tape* tape, const PoseSequence& pose, const AGCNStack& stack) {
    return stack.forward(tape, posture_features(pose));
}

void export_adjacencies(const std::string& dir, const std::string& prefix, const StreamOutput& out) {
    std::filesystem::create_directories(dir);
    const char* subset_names[kSubsetCount] = {"parent", "self", "child"};
    for (std::size_t layer = 0; layer < out.adjacencies.size(); ++layer) {
        for (int k = 0; k < kSubsetCount; ++k) {
            const auto& m = out.adjacencies[layer][static_cast<std::size_t>(k)];
            const auto J = static_cast<std::int64_t>(std::llround(std::sqrt(static_cast<double>(m.size()))));
            std::ofstream f(dir + "/" + prefix + "_layer" + std::to_string(layer) + "_" + subset_names[k] +
                            ".txt");
            f.precision(17);
            for (std::int64_t x = 0; x < J; ++x) {
                for (std::int64_t y = 0; y < J; ++y) {
                    if (y) f << " ";
                    f << m[static_cast<std::size_t>(x * J + y)];
                }
                f << "\n";
            }
        }
    }
}

FCAggregate::FCAggregate(std::int64_t in_features, std::int64_t classes, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_features));
    w_ = Tensor::uniform({classes, in_features}, rng, -bound, bound, true);
    b_ = Tensor(Shape{classes}, 0.0, true);
}

Tensor FCAggregate::forward(Tape* tape, const Tensor& parts) const {
    Tensor flat = reshape(tape, parts, {parts.size()});
    return affine_vec(tape, w_, b_, flat);
}

NamedParams FCAggregate::parameters() const {
    return {{"fc.weight", w_}, {"fc.bias", b_}};
}

}  // namespace pgcn
