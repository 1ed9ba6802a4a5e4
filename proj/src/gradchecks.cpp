#include "pgcn/gradchecks.hpp"

#include <stdexcept>

#include "pgcn/agcn.hpp"
#include "pgcn/backbone.hpp"
#include "pgcn/receptive_field.hpp"
#include "pgcn/train.hpp"

namespace pgcn {

namespace {

// reduce an arbitrary tensor to a scalar so every op can feed backward()
Tensor scalarize(Tape& tape, const Tensor& x) {
    return mean_over_trailing(&tape, reshape(&tape, x, {1, x.size()}));
}

GradCheckResult check(const std::function<Tensor(Tape&)>& loss_fn, const NamedParams& params,
                      std::uint64_t seed, std::int64_t coords = 50) {
    return finite_difference_check(loss_fn, params, kGradCheckEps, seed, coords);
}

void randomize_biases(NamedParams& params, Rng& rng) {
    for (auto& [name, t] : params) {
        if (name.find("bias") == std::string::npos && name.find(".b") == std::string::npos &&
            name.find("alpha") == std::string::npos) {
            continue;
        }
        for (auto& v : t.data()) v = rng.uniform(-0.3, 0.3);
    }
}

GradCheckResult check_elementwise(std::uint64_t seed) {
    Rng rng(mix64(seed ^ 0x01));
    NamedParams params = {{"a", Tensor::uniform({3, 4}, rng, -1, 1, true)},
                          {"b", Tensor::uniform({3, 4}, rng, -1, 1, true)},
                          {"s", Tensor::uniform({1}, rng, 0.2, 1.0, true)}};
    auto loss = [&](Tape& tape) {
        const Tensor &a = params[0].second, &b = params[1].second, &s = params[2].second;
        Tensor x = mul(&tape, add(&tape, a, b), tanh_op(&tape, a));
        x = add(&tape, x, mul(&tape, s, b));
        x = relu(&tape, add_scalar(&tape, scale(&tape, x, 1.3), 0.17));
        return scalarize(tape, x);
    };
    return check(loss, params, seed);
}

GradCheckResult check_matmul(std::uint64_t seed) {
    Rng rng(mix64(seed ^ 0x02));
    NamedParams params = {{"a", Tensor::uniform({3, 4}, rng, -1, 1, true)},
                          {"b", Tensor::uniform({4, 5}, rng, -1, 1, true)}};
    auto loss = [&](Tape& tape) {
        Tensor c = matmul(&tape, params[0].second, params[1].second);  // [3,5]
        Tensor d = matmul(&tape, transpose2d(&tape, c), c);            // [5,5]
        return scalarize(tape, tanh_op(&tape, reshape(&tape, d, {5, 5, 1})));
    };
    return check(loss, params, seed);
}

GradCheckResult check_conv3d(std::uint64_t seed) {
    Rng rng(mix64(seed ^ 0x03));
    NamedParams params = {{"input", Tensor::uniform({2, 4, 6, 6}, rng, -1, 1, true)},
                          {"kernels", Tensor::uniform({3, 2, 3, 3, 3}, rng, -0.5, 0.5, true)},
                          {"bias", Tensor::uniform({3}, rng, -0.2, 0.2, true)}};
    auto loss = [&](Tape& tape) {
        Tensor y = conv3d(&tape, params[0].second, params[1].second, {2, 2, 2}, {1, 1, 1});
        y = relu(&tape, add_channel_bias(&tape, y, params[2].second));
        return scalarize(tape, y);
    };
    return check(loss, params, seed);
}

GradCheckResult check_pool(std::uint64_t seed) {
    Rng rng(mix64(seed ^ 0x04));
    NamedParams params = {{"x", Tensor::uniform({3, 4, 5, 5}, rng, -1, 1, true)}};
    auto loss = [&](Tape& tape) {
        Tensor a = max_pool_cube(&tape, params[0].second, {1, 2, 2}, 1);
        Tensor b = max_pool_cube(&tape, params[0].second, {3, 0, 4}, 1);  // border-clipped window
        return scalarize(tape, add(&tape, a, b));
    };
    return check(loss, params, seed);
}

GradCheckResult check_softmax(std::uint64_t seed) {
    Rng rng(mix64(seed ^ 0x05));
    NamedParams params = {{"logits", Tensor::uniform({4, 6}, rng, -2, 2, true)}};
    std::vector<std::int64_t> labels;
    for (int i = 0; i < 4; ++i) labels.push_back(rng.uniform_int(6));
    auto loss = [&](Tape& tape) { return softmax_cross_entropy(&tape, params[0].second, labels); };
    return check(loss, params, seed);
}

GradCheckResult check_gap(std::uint64_t seed) {
    Rng rng(mix64(seed ^ 0x06));
    NamedParams params = {{"x", Tensor::uniform({3, 2, 4}, rng, -1, 1, true)},
                          {"w", Tensor::uniform({5, 3}, rng, -1, 1, true)},
                          {"b", Tensor::uniform({5}, rng, -0.3, 0.3, true)}};
    const std::int64_t label = static_cast<std::int64_t>(rng.uniform_int(5));
    auto loss = [&](Tape& tape) {
        Tensor pooled = mean_over_trailing(&tape, params[0].second);
        Tensor logits = affine_vec(&tape, params[1].second, params[2].second, pooled);
        return softmax_cross_entropy(&tape, reshape(&tape, logits, {1, 5}), {label});
    };
    return check(loss, params, seed);
}

GradCheckResult check_heads(std::uint64_t seed) {
    Rng rng(mix64(seed ^ 0x07));
    NamedParams params = {{"volume", Tensor::uniform({3, 2, 2, 2}, rng, -1, 1, true)},
                          {"w", Tensor::uniform({8, 4, 3}, rng, -0.6, 0.6, true)},
                          {"b", Tensor::uniform({8, 4}, rng, -0.2, 0.2, true)}};
    const std::int64_t label = static_cast<std::int64_t>(rng.uniform_int(4));
    auto loss = [&](Tape& tape) {
        Tensor logits = dense_heads_forward(&tape, params[0].second, params[1].second, params[2].second);
        return softmax_cross_entropy(&tape, logits, std::vector<std::int64_t>(8, label));
    };
    return check(loss, params, seed);
}

GradCheckResult check_graphconv(std::uint64_t seed) {
    Rng rng(mix64(seed ^ 0x08));
    NamedParams params;
    std::array<Tensor, kSubsetCount> weights, adj;
    for (int k = 0; k < kSubsetCount; ++k) {
        weights[static_cast<std::size_t>(k)] = Tensor::uniform({4, 3}, rng, -1, 1, true);
        adj[static_cast<std::size_t>(k)] = Tensor::uniform({5, 5}, rng, -0.5, 0.5, true);
        params.emplace_back("w" + std::to_string(k), weights[static_cast<std::size_t>(k)]);
        params.emplace_back("adj" + std::to_string(k), adj[static_cast<std::size_t>(k)]);
    }
    Tensor bias = Tensor::uniform({4}, rng, -0.2, 0.2, true);
    Tensor f_in = Tensor::uniform({3, 2, 5}, rng, -1, 1, true);
    params.emplace_back("bias", bias);
    params.emplace_back("f_in", f_in);
    auto loss = [&](Tape& tape) {
        return scalarize(tape, spatial_graph_conv(&tape, f_in, weights, bias, adj));
    };
    return check(loss, params, seed);
}

GradCheckResult check_temporalconv(std::uint64_t seed) {
    Rng rng(mix64(seed ^ 0x09));
    NamedParams params = {{"f", Tensor::uniform({3, 6, 4}, rng, -1, 1, true)},
                          {"kernel", Tensor::uniform({2, 3, 3}, rng, -0.6, 0.6, true)},
                          {"bias", Tensor::uniform({2}, rng, -0.2, 0.2, true)}};
    auto loss = [&](Tape& tape) {
        Tensor y = temporal_conv(&tape, params[0].second, params[1].second, params[2].second, 2);
        return scalarize(tape, y);
    };
    return check(loss, params, seed);
}

GradCheckResult check_bodyparts(std::uint64_t seed) {
    Rng rng(mix64(seed ^ 0x0a));
    LayerChain chain;
    chain.input_extents = {6, 12, 12};
    chain.layers = {Layer3d{{3, 3, 3}, {2, 3, 3}, {1, 1, 1}}};
    const auto out = chain.output_extents();
    NamedParams params = {
        {"volume", Tensor::uniform({3, out[0], out[1], out[2]}, rng, -1, 1, true)}};
    PoseSequence pose;
    pose.frames = 6;
    pose.joints = 5;
    pose.height = 12;
    pose.width = 12;
    pose.entries.resize(static_cast<std::size_t>(pose.frames * pose.joints));
    for (auto& e : pose.entries) {
        e.x = rng.uniform(0.0, 12.0);
        e.y = rng.uniform(0.0, 12.0);
        e.visible = rng.uniform() > 0.2;
    }
    const auto align = frame_alignment(chain);
    auto loss = [&](Tape& tape) {
        return scalarize(tape, pool_body_parts(&tape, params[0].second, chain, pose, align));
    };
    return check(loss, params, seed);
}

GradCheckResult check_stack(std::uint64_t seed) {
    Rng rng(mix64(seed ^ 0x0b));
    const SkeletonTree tree = build_graph(skeleton_preset("sub15"));
    const SubsetAdjacency adjacency = adjacency_matrices(tree, partition_subsets(tree));
    AGCNStackConfig cfg;
    cfg.in_channels = 3;
    cfg.classes = 3;
    cfg.joints = tree.nodes;
    cfg.mode = AdaptMode::adaptive;
    cfg.layers = {AGCNLayerConfig{3, 4, 0, 3, 1}, AGCNLayerConfig{4, 5, 0, 3, 2}};
    AGCNStack stack(cfg, adjacency, rng);
    NamedParams params = stack.trainable_parameters();
    // Perturb alpha off 0 so the individual-graph path carries gradient, and
    // all biases off 0 so no relu input sits exactly on the kink (the zero
    // inits otherwise put pre-activations of all-zero windows exactly at 0,
    // where central differences measure the two-sided average slope instead
    // of the one-sided derivative).
    randomize_biases(params, rng);
    Tensor parts = Tensor::uniform({3, 4, tree.nodes}, rng, -1, 1, true);
    params.emplace_back("parts", parts);
    const std::int64_t label = static_cast<std::int64_t>(rng.uniform_int(3));
    auto loss = [&](Tape& tape) {
        Tensor logits = stack.forward(&tape, parts).logits;
        return softmax_cross_entropy(&tape, reshape(&tape, logits, {1, 3}), {label});
    };
    return check(loss, params, seed, 12);
}

GradCheckResult check_full(std::uint64_t seed) {
    Rng rng(mix64(seed ^ 0x0c));
    ModelConfig cfg;
    cfg.classes = 3;
    cfg.skeleton = "sub15";
    cfg.backbone.input_extents = {6, 12, 12};
    cfg.backbone.input_channels = 3;
    cfg.backbone.classes = 3;
    cfg.backbone.layers = {ConvLayerSpec{3, 4, {3, 3, 3}, {2, 2, 2}, {1, 1, 1}, true},
                           ConvLayerSpec{4, 4, {3, 3, 3}, {1, 2, 2}, {1, 1, 1}, true}};
    cfg.human.in_channels = 4;
    cfg.human.classes = 3;
    cfg.human.joints = 16;
    cfg.human.mode = AdaptMode::adaptive;
    cfg.human.layers = {AGCNLayerConfig{4, 5, 0, 3, 1}, AGCNLayerConfig{5, 6, 0, 3, 2}};
    cfg.posture = cfg.human;
    cfg.posture.in_channels = 3;
    cfg.posture.layers[0].in_channels = 3;
    PGCNModel model(cfg, rng);
    NamedParams params = model.parameters();
    randomize_biases(params, rng);  // keep relu inputs off the exact kink

    // two random samples
    struct Sample {
        Tensor clip;
        PoseSequence pose;
        std::int64_t label;
    };
    std::vector<Sample> batch;
    for (int i = 0; i < 2; ++i) {
        Sample s;
        s.clip = Tensor::uniform({3, 6, 12, 12}, rng, -1, 1, false);
        s.pose.frames = 6;
        s.pose.joints = 15;
        s.pose.height = 12;
        s.pose.width = 12;
        s.pose.entries.resize(static_cast<std::size_t>(6 * 15));
        for (auto& e : s.pose.entries) {
            e.x = rng.uniform(0.0, 12.0);
            e.y = rng.uniform(0.0, 12.0);
            e.visible = rng.uniform() > 0.15;
        }
        s.label = static_cast<std::int64_t>(rng.uniform_int(3));
        batch.push_back(std::move(s));
    }

    auto loss_fn = [&](Tape& tape) {
        Tensor total = Tensor::scalar(0.0);
        for (const auto& s : batch) {
            Tensor volume = model.backbone().forward(&tape, s.clip);
            Tensor scene = model.backbone().scene_logits(&tape, volume);
            Tensor parts = model.body_parts(&tape, volume, s.pose);
            Tensor human = model.human().forward(&tape, parts).logits;
            Tensor post = posture_stream(&tape, s.pose, model.posture()).logits;
            Tensor flat = model.fc().forward(&tape, parts);
            Tensor loss = softmax_cross_entropy(&tape, reshape(&tape, scene, {1, 3}), {s.label});
            loss = add(&tape, loss, model.backbone().ids_loss(&tape, volume, s.label));
            loss = add(&tape, loss, softmax_cross_entropy(&tape, reshape(&tape, human, {1, 3}), {s.label}));
            loss = add(&tape, loss, softmax_cross_entropy(&tape, reshape(&tape, post, {1, 3}), {s.label}));
            loss = add(&tape, loss, softmax_cross_entropy(&tape, reshape(&tape, flat, {1, 3}), {s.label}));
            total = add(&tape, total, loss);
        }
        return total;
    };
    return check(loss_fn, params, seed, 8);
}

struct CheckEntry {
    const char* name;
    GradCheckResult (*fn)(std::uint64_t);
};

constexpr CheckEntry kChecks[] = {
    {"elementwise", check_elementwise}, {"matmul", check_matmul},
    {"conv3d", check_conv3d},           {"pool", check_pool},
    {"softmax", check_softmax},         {"gap", check_gap},
    {"heads", check_heads},             {"graphconv", check_graphconv},
    {"temporalconv", check_temporalconv}, {"bodyparts", check_bodyparts},
    {"stack", check_stack},             {"full", check_full},
};

}  // namespace

std::vector<std::string> gradcheck_names() {
    std::vector<std::string> names;
    for (const auto& e : kChecks) names.emplace_back(e.name);
    return names;
}

std::vector<std::pair<std::string, GradCheckResult>> run_gradchecks(const std::string& which,
                                                                    std::uint64_t seed) {
    std::vector<std::pair<std::string, GradCheckResult>> results;
    bool found = false;
    for (const auto& e : kChecks) {
        if (which != "all" && which != e.name) continue;
        found = true;
        results.emplace_back(e.name, e.fn(seed));
    }
    if (!found) throw std::invalid_argument("unknown gradcheck: " + which);
    return results;
}

}  // namespace pgcn
