#include "pgcn/backbone.hpp"

#include <cmath>
#include <stdexcept>

namespace pgcn {

BackboneConfig BackboneConfig::default_desk(std::int64_t classes) {
    BackboneConfig cfg;
    cfg.input_extents = {16, 56, 56};
    cfg.input_channels = 3;
    cfg.classes = classes;
    cfg.layers = {
        ConvLayerSpec{3, 16, {3, 7, 7}, {2, 2, 2}, {1, 3, 3}, true},
        ConvLayerSpec{16, 32, {3, 3, 3}, {2, 2, 2}, {1, 1, 1}, true},
        ConvLayerSpec{32, 32, {3, 3, 3}, {1, 2, 2}, {1, 1, 1}, true},
    };
    return cfg;
}

LayerChain BackboneConfig::chain() const {
    LayerChain chain;
    chain.input_extents = input_extents;
    for (const auto& layer : layers) {
        chain.layers.push_back(Layer3d{layer.kernel, layer.stride, layer.padding});
    }
    return chain;
}

std::array<std::int64_t, 3> BackboneConfig::volume_extents() const {
    return chain().output_extents();
}

std::int64_t BackboneConfig::volume_channels() const {
    if (layers.empty()) throw std::invalid_argument("backbone config has no layers");
    return layers.back().out_channels;
}

std::int64_t BackboneConfig::head_count() const {
    const auto e = volume_extents();
    return e[0] * e[1] * e[2];
}

void BackboneConfig::validate() const {
    if (layers.empty()) throw std::invalid_argument("backbone config has no layers");
    if (layers.front().in_channels != input_channels) {
        throw std::invalid_argument("backbone config: first layer channels do not match input");
    }
    for (std::size_t i = 1; i < layers.size(); ++i) {
        if (layers[i].in_channels != layers[i - 1].out_channels) {
            throw std::invalid_argument("backbone config: channel mismatch at layer " + std::to_string(i));
        }
    }
    const auto e = volume_extents();  // also validates positivity
    if (e[0] < 3 || e[1] < 3 || e[2] < 3) {
        throw std::invalid_argument("backbone config: final volume extents must be >= 3 for cube pooling, got " +
                                    std::to_string(e[0]) + "x" + std::to_string(e[1]) + "x" + std::to_string(e[2]));
    }
}

Backbone::Backbone(BackboneConfig config, Rng& rng) : config_(std::move(config)) {
    config_.validate();
    chain_ = config_.chain();
    for (const auto& layer : config_.layers) {
        const std::int64_t fan_in = layer.in_channels * layer.kernel[0] * layer.kernel[1] * layer.kernel[2];
        // rectifier-preserving uniform bound: keeps activation variance level
        // across the stack instead of decaying by ~1/6 per layer
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
        kernels_.push_back(Tensor::uniform(
            {layer.out_channels, layer.in_channels, layer.kernel[0], layer.kernel[1], layer.kernel[2]}, rng,
            -bound, bound, true));
        biases_.push_back(Tensor(Shape{layer.out_channels}, 0.0, true));
    }
    const std::int64_t C = config_.volume_channels();
    const double cbound = 1.0 / std::sqrt(static_cast<double>(C));
    scene_w_ = Tensor::uniform({config_.classes, C}, rng, -cbound, cbound, true);
    scene_b_ = Tensor(Shape{config_.classes}, 0.0, true);
    const std::int64_t L = config_.head_count();
    heads_w_ = Tensor::uniform({L, config_.classes, C}, rng, -cbound, cbound, true);
    heads_b_ = Tensor(Shape{L, config_.classes}, 0.0, true);
}

Tensor Backbone::forward(Tape* tape, const Tensor& clip) const {
    if (clip.rank() != 4 || clip.shape()[0] != config_.input_channels ||
        clip.shape()[1] != config_.input_extents[0] || clip.shape()[2] != config_.input_extents[1] ||
        clip.shape()[3] != config_.input_extents[2]) {
        throw std::invalid_argument("backbone_forward: clip " + shape_str(clip.shape()) +
                                    " does not match configured input extents");
    }
    Tensor x = clip;
    for (std::size_t i = 0; i < config_.layers.size(); ++i) {
        const auto& layer = config_.layers[i];
        x = conv3d(tape, x, kernels_[i], layer.stride, layer.padding);
        x = add_channel_bias(tape, x, biases_[i]);
        if (layer.rectify) x = relu(tape, x);
    }
    return x;
}

Tensor Backbone::scene_logits(Tape* tape, const Tensor& volume) const {
    Tensor pooled = mean_over_trailing(tape, volume);
    return affine_vec(tape, scene_w_, scene_b_, pooled);
}

Tensor Backbone::heads_logits(Tape* tape, const Tensor& volume) const {
    return dense_heads_forward(tape, volume, heads_w_, heads_b_);
}

Tensor Backbone::ids_loss(Tape* tape, const Tensor& volume, std::int64_t label) const {
    Tensor logits = heads_logits(tape, volume);
    std::vector<std::int64_t> labels(static_cast<std::size_t>(logits.shape()[0]), label);
    return softmax_cross_entropy(tape, logits, labels);
}

NamedParams Backbone::conv_parameters() const {
    NamedParams params;
    for (std::size_t i = 0; i < kernels_.size(); ++i) {
        params.emplace_back("backbone.conv" + std::to_string(i) + ".kernel", kernels_[i]);
        params.emplace_back("backbone.conv" + std::to_string(i) + ".bias", biases_[i]);
    }
    params.emplace_back("backbone.scene.weight", scene_w_);
    params.emplace_back("backbone.scene.bias", scene_b_);
    return params;
}

NamedParams Backbone::head_parameters() const {
    return {{"backbone.heads.weight", heads_w_}, {"backbone.heads.bias", heads_b_}};
}

NamedParams Backbone::parameters() const {
    NamedParams params = conv_parameters();
    for (auto& p : head_parameters()) params.push_back(std::move(p));
    return params;
}

}  // namespace pgcn
