#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "pgcn/receptive_field.hpp"
#include "pgcn/tensor.hpp"

namespace pgcn {

struct ConvLayerSpec {
    std::int64_t in_channels = 0;
    std::int64_t out_channels = 0;
    std::array<std::int64_t, 3> kernel{};
    std::array<std::int64_t, 3> stride{};
    std::array<std::int64_t, 3> padding{};
    bool rectify = true;
};

struct BackboneConfig {
    std::vector<ConvLayerSpec> layers;
    std::array<std::int64_t, 3> input_extents{};  // (T, H, W)
    std::int64_t input_channels = 3;
    std::int64_t classes = 12;

    // 3 -> 16 -> 32 -> 32 channels over a 16x56x56 clip, final volume 32x4x7x7.
    static BackboneConfig default_desk(std::int64_t classes);

    LayerChain chain() const;
    std::array<std::int64_t, 3> volume_extents() const;
    std::int64_t volume_channels() const;
    std::int64_t head_count() const;
    void validate() const;
};

// Small trainable 3D conv stack: produces the feature volume, the
// global-average-pooled scene score, and the per-location dense-head loss.
class Backbone {
public:
    Backbone(BackboneConfig config, Rng& rng);

    // clip [C_in, T, H, W] -> volume [C, T', H', W']
    Tensor forward(Tape* tape, const Tensor& clip) const;

    // volume -> logits [classes], via global average pooling + affine map
    Tensor scene_logits(Tape* tape, const Tensor& volume) const;

    // per-location head logits [L, classes]
    Tensor heads_logits(Tape* tape, const Tensor& volume) const;

    // mean over locations of the per-head cross-entropy
    Tensor ids_loss(Tape* tape, const Tensor& volume, std::int64_t label) const;

    const BackboneConfig& config() const { return config_; }
    const LayerChain& chain() const { return chain_; }

    NamedParams parameters() const;        // all parameters
    NamedParams conv_parameters() const;   // conv + scene classifier (no heads)
    NamedParams head_parameters() const;

private:
    BackboneConfig config_;
    LayerChain chain_;
    std::vector<Tensor> kernels_;
    std::vector<Tensor> biases_;
    Tensor scene_w_, scene_b_;
    Tensor heads_w_, heads_b_;
};

}  // namespace pgcn
