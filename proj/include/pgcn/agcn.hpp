#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "pgcn/receptive_field.hpp"
#include "pgcn/skeleton.hpp"
#include "pgcn/tensor.hpp"

namespace pgcn {

// Which adjacency the spatial graph convolution uses:
//   fixed        - the normalized body-graph matrices only
//   global_only  - learnable global graph B_k, mixing scalar frozen at 0
//   adaptive     - B_k plus the feature-similarity individual graph C_k
enum class AdaptMode { fixed, global_only, adaptive };

std::string adapt_mode_name(AdaptMode mode);
AdaptMode adapt_mode_from_name(const std::string& name);

struct AGCNLayerConfig {
    std::int64_t in_channels = 0;
    std::int64_t out_channels = 0;
    std::int64_t embed_channels = 0;  // 0: max(4, in/4)
    std::int64_t temporal_kernel = 3;  // odd
    std::int64_t temporal_stride = 1;
};

struct AGCNLayer {
    AGCNLayerConfig cfg;
    std::array<Tensor, kSubsetCount> weights;       // W_k [out, in]
    Tensor spatial_bias;                            // [out]
    std::array<Tensor, kSubsetCount> global_graph;  // B_k [J, J], initialized to the body graph
    std::array<Tensor, kSubsetCount> embed_theta;   // [Ce, in]
    std::array<Tensor, kSubsetCount> embed_phi;     // [Ce, in]
    Tensor alpha;                                   // learnable mixing scalar, initialized to 0
    Tensor temporal_kernel;                         // [out, out, K_t]
    Tensor temporal_bias;                           // [out]
};

struct AGCNStackConfig {
    std::int64_t in_channels = 0;
    std::int64_t classes = 0;
    std::int64_t joints = 0;
    AdaptMode mode = AdaptMode::adaptive;
    std::vector<AGCNLayerConfig> layers;

    // 3 layers, channels in -> 64 -> 64 -> 128, K_t = 3, temporal stride 2 on
    // the last layer.
    static AGCNStackConfig default_desk(std::int64_t in_channels, std::int64_t classes, std::int64_t joints,
                                        AdaptMode mode = AdaptMode::adaptive);
};

struct StreamOutput {
    Tensor logits;  // [classes]
    // learned adjacency values per layer and subset (JxJ, row-major)
    std::vector<std::array<std::vector<double>, kSubsetCount>> adjacencies;
};

// A_k for subset k: body graph (fixed), B_k (global_only), or B_k + alpha*C_k
// with C_k = tanh of the embedded feature similarity (adaptive).
Tensor adaptive_adjacency(Tape* tape, const Tensor& f_in, const AGCNLayer& layer,
                          const Tensor& base_adjacency, int k, AdaptMode mode);

// f_in [C_in,T,J] -> [C_out,T,J]: sum over subsets of W_k (f_in A_k) + bias.
Tensor spatial_graph_conv(Tape* tape, const Tensor& f_in,
                          const std::array<Tensor, kSubsetCount>& weights, const Tensor& bias,
                          const std::array<Tensor, kSubsetCount>& adjacencies);

// f [C1,T,J], kernel [C2,C1,K_t] with K_t odd, padding (K_t-1)/2 over time;
// joints never mix.
Tensor temporal_conv(Tape* tape, const Tensor& f, const Tensor& kernel, const Tensor& bias,
                     std::int64_t stride);

class AGCNStack {
public:
    AGCNStack(AGCNStackConfig config, const SubsetAdjacency& base, Rng& rng);

    // parts [C_in, T, J] -> logits + learned adjacency snapshots
    StreamOutput forward(Tape* tape, const Tensor& parts) const;

    NamedParams parameters() const;            // everything, for checkpointing
    NamedParams trainable_parameters() const;  // filtered by the adapt mode

    AdaptMode mode() const { return config_.mode; }
    void set_mode(AdaptMode mode) { config_.mode = mode; }
    const AGCNStackConfig& config() const { return config_; }
    AGCNLayer& layer(std::size_t i) { return layers_[i]; }
    const Tensor& base_adjacency(int k) const { return base_[static_cast<std::size_t>(k)]; }

private:
    AGCNStackConfig config_;
    std::array<Tensor, kSubsetCount> base_;  // normalized body-graph matrices (constant)
    std::vector<AGCNLayer> layers_;
    Tensor classifier_w_, classifier_b_;
};

// Coordinate-only stream input: per joint (x/W - 0.5, y/H - 0.5, visible),
// invisible joints all-zero, virtual root = mean over visible joints.
Tensor posture_features(const PoseSequence& pose);

StreamOutput posture_stream(Tape* tape, const PoseSequence& pose, const AGCNStack& stack);

// Text dump of learned adjacencies, one file per layer/subset under dir.
void export_adjacencies(const std::string& dir, const std::string& prefix, const StreamOutput& out);

// The single-affine-layer baseline over flattened body-part features.
class FCAggregate {
public:
    FCAggregate(std::int64_t in_features, std::int64_t classes, Rng& rng);
    Tensor forward(Tape* tape, const Tensor& parts) const;
    NamedParams parameters() const;

private:
    Tensor w_, b_;
};

}  // namespace pgcn
