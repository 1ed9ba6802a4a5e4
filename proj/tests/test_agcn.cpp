#include <cmath>
#include <cstdio>
#include <filesystem>

#include "doctest.h"
#include "oracles.hpp"
#include "pgcn/agcn.hpp"

using namespace pgcn;

namespace {

SubsetAdjacency sub15_adjacency() {
    const SkeletonTree tree = build_graph(skeleton_preset("sub15"));
    return adjacency_matrices(tree, partition_subsets(tree));
}

}  // namespace

TEST_CASE("mode names round trip") {
    for (auto m : {AdaptMode::fixed, AdaptMode::global_only, AdaptMode::adaptive}) {
        CHECK(adapt_mode_from_name(adapt_mode_name(m)) == m);
    }
    CHECK_THROWS_AS(adapt_mode_from_name("turbo"), std::invalid_argument);
}

TEST_CASE("similarity graph: hand-computed two-joint case") {
    // one channel, one frame, identity embeddings: the similarity matrix is the
    // outer product of the joint features, squashed by tanh
    AGCNLayer layer;
    layer.embed_theta[0] = Tensor::from_data({1, 1}, {1.0});
    layer.embed_phi[0] = Tensor::from_data({1, 1}, {1.0});
    layer.alpha = Tensor::scalar(1.0);
    layer.global_graph[0] = Tensor(Shape{2, 2});  // zero, so A = C
    Tensor f_in = Tensor::from_data({1, 1, 2}, {1.0, 2.0});
    Tensor base(Shape{2, 2});
    Tensor a = adaptive_adjacency(nullptr, f_in, layer, base, 0, AdaptMode::adaptive);
    CHECK(a.at({0, 0}) == doctest::Approx(0.76159).epsilon(1e-4));
    CHECK(a.at({0, 1}) == doctest::Approx(0.96403).epsilon(1e-4));
    CHECK(a.at({1, 0}) == doctest::Approx(0.96403).epsilon(1e-4));
    CHECK(a.at({1, 1}) == doctest::Approx(0.99933).epsilon(1e-4));
}

TEST_CASE("similarity entries are tanh-bounded") {
    Rng rng(51);
    AGCNLayer layer;
    layer.embed_theta[0] = Tensor::uniform({2, 3}, rng, -0.6, 0.6);
    layer.embed_phi[0] = Tensor::uniform({2, 3}, rng, -0.6, 0.6);
    layer.alpha = Tensor::scalar(1.0);
    layer.global_graph[0] = Tensor(Shape{5, 5});
    Tensor base(Shape{5, 5});

    // moderate similarities stay strictly inside the open interval
    Tensor f_in = Tensor::uniform({3, 4, 5}, rng, -1, 1);
    Tensor a = adaptive_adjacency(nullptr, f_in, layer, base, 0, AdaptMode::adaptive);
    for (double v : a.data()) {
        CHECK(v > -1.0);
        CHECK(v < 1.0);
    }

    // huge similarities saturate in floating point but never escape [-1, 1]
    Tensor f_big = Tensor::uniform({3, 4, 5}, rng, -100, 100);
    Tensor ab = adaptive_adjacency(nullptr, f_big, layer, base, 0, AdaptMode::adaptive);
    for (double v : ab.data()) {
        CHECK(v >= -1.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("adjacency selection per mode; zero alpha reproduces the global graph bitwise") {
    Rng rng(52);
    AGCNLayer layer;
    for (int k = 0; k < kSubsetCount; ++k) {
        layer.global_graph[static_cast<std::size_t>(k)] = Tensor::uniform({4, 4}, rng, -1, 1);
        layer.embed_theta[static_cast<std::size_t>(k)] = Tensor::uniform({2, 3}, rng, -1, 1);
        layer.embed_phi[static_cast<std::size_t>(k)] = Tensor::uniform({2, 3}, rng, -1, 1);
    }
    layer.alpha = Tensor::scalar(0.0);
    Tensor f_in = Tensor::uniform({3, 2, 4}, rng, -1, 1);
    Tensor base = Tensor::uniform({4, 4}, rng, -1, 1);

    Tensor fixed = adaptive_adjacency(nullptr, f_in, layer, base, 1, AdaptMode::fixed);
    CHECK(fixed.data() == base.data());
    Tensor global = adaptive_adjacency(nullptr, f_in, layer, base, 1, AdaptMode::global_only);
    CHECK(global.data() == layer.global_graph[1].data());
    Tensor adaptive = adaptive_adjacency(nullptr, f_in, layer, base, 1, AdaptMode::adaptive);
    CHECK(adaptive.data() == layer.global_graph[1].data());  // exact, not approximate
}

TEST_CASE("spatial convolution: identity configuration") {
    Rng rng(53);
    const std::int64_t C = 2, T = 3, J = 4;
    std::array<Tensor, kSubsetCount> weights, adj;
    for (int k = 0; k < kSubsetCount; ++k) {
        weights[static_cast<std::size_t>(k)] = Tensor(Shape{C, C});
        adj[static_cast<std::size_t>(k)] = Tensor(Shape{J, J});
    }
    for (std::int64_t i = 0; i < C; ++i) weights[1].at({i, i}) = 1.0;
    for (std::int64_t i = 0; i < J; ++i) adj[1].at({i, i}) = 1.0;
    Tensor bias(Shape{C});
    Tensor f_in = Tensor::uniform({C, T, J}, rng, -1, 1);
    Tensor out = spatial_graph_conv(nullptr, f_in, weights, bias, adj);
    CHECK(out.data() == f_in.data());
}

TEST_CASE("spatial convolution: two-joint parent pass") {
    // parent-subset adjacency of the chain 0 -> 1: only the child receives,
    // and it receives the root's feature
    SkeletonTree tree;
    tree.nodes = 2;
    tree.parent = {-1, 0};
    tree.children = {{1}, {}};
    tree.names = {"root", "child"};
    SubsetAdjacency adj = adjacency_matrices(tree, partition_subsets(tree));
    CHECK(adj.at(0, 0, 1) == 1.0);

    std::array<Tensor, kSubsetCount> weights, adj_t;
    for (int k = 0; k < kSubsetCount; ++k) {
        weights[static_cast<std::size_t>(k)] = Tensor(Shape{1, 1});
        adj_t[static_cast<std::size_t>(k)] = Tensor::from_data({2, 2}, adj.matrices[static_cast<std::size_t>(k)]);
    }
    weights[0].at({0, 0}) = 1.0;  // only the parent subset mixes
    Tensor f_in = Tensor::from_data({1, 1, 2}, {1.0, 2.0});
    Tensor out = spatial_graph_conv(nullptr, f_in, weights, Tensor(Shape{1}), adj_t);
    CHECK(out.data() == std::vector<double>{0.0, 1.0});
}

TEST_CASE("spatial convolution: permutation consistency") {
    Rng rng(54);
    SkeletonSpec spec = oracles::random_skeleton(rng, 7);
    SkeletonTree tree = build_graph(spec);
    SubsetAdjacency adj = adjacency_matrices(tree, partition_subsets(tree));
    const std::int64_t J = tree.nodes, C = 3, Co = 4, T = 2;

    // random permutation of the node labels
    std::vector<std::int64_t> perm(static_cast<std::size_t>(J));
    for (std::int64_t i = 0; i < J; ++i) perm[static_cast<std::size_t>(i)] = i;
    for (std::int64_t i = J - 1; i > 0; --i) {
        std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(rng.uniform_int(i + 1))]);
    }

    std::array<Tensor, kSubsetCount> weights, adj_t, adj_p;
    for (int k = 0; k < kSubsetCount; ++k) {
        weights[static_cast<std::size_t>(k)] = Tensor::uniform({Co, C}, rng, -1, 1);
        adj_t[static_cast<std::size_t>(k)] = Tensor::from_data({J, J}, adj.matrices[static_cast<std::size_t>(k)]);
        Tensor conj(Shape{J, J});
        for (std::int64_t x = 0; x < J; ++x)
            for (std::int64_t y = 0; y < J; ++y)
                conj.at({perm[static_cast<std::size_t>(x)], perm[static_cast<std::size_t>(y)]}) =
                    adj.at(k, x, y);
        adj_p[static_cast<std::size_t>(k)] = conj;
    }
    Tensor f_in = Tensor::uniform({C, T, J}, rng, -1, 1);
    Tensor f_perm(Shape{C, T, J});
    for (std::int64_t c = 0; c < C; ++c)
        for (std::int64_t t = 0; t < T; ++t)
            for (std::int64_t j = 0; j < J; ++j)
                f_perm.at({c, t, perm[static_cast<std::size_t>(j)]}) = f_in.at({c, t, j});

    Tensor bias(Shape{Co});
    Tensor out = spatial_graph_conv(nullptr, f_in, weights, bias, adj_t);
    Tensor out_p = spatial_graph_conv(nullptr, f_perm, weights, bias, adj_p);
    for (std::int64_t c = 0; c < Co; ++c)
        for (std::int64_t t = 0; t < T; ++t)
            for (std::int64_t j = 0; j < J; ++j)
                CHECK(out_p.at({c, t, perm[static_cast<std::size_t>(j)]}) ==
                      doctest::Approx(out.at({c, t, j})).epsilon(1e-10));
}

TEST_CASE("temporal convolution") {
    Rng rng(55);
    const std::int64_t C = 3, T = 6, J = 4;
    Tensor f = Tensor::uniform({C, T, J}, rng, -1, 1);

    SUBCASE("K_t = 1 identity kernel") {
        Tensor id(Shape{C, C, 1});
        for (std::int64_t c = 0; c < C; ++c) id.at({c, c, 0}) = 1.0;
        Tensor out = temporal_conv(nullptr, f, id, Tensor(Shape{C}), 1);
        CHECK(out.data() == f.data());
    }

    SUBCASE("averaging kernel on constant input keeps interior frames constant") {
        Tensor constant(Shape{1, T, J}, 2.0);
        Tensor avg(Shape{1, 1, 3}, 1.0 / 3.0);
        Tensor out = temporal_conv(nullptr, constant, avg, Tensor(Shape{1}), 1);
        for (std::int64_t t = 1; t < T - 1; ++t)
            for (std::int64_t j = 0; j < J; ++j)
                CHECK(out.at({0, t, j}) == doctest::Approx(2.0).epsilon(1e-14));
        // padded border frames see one zero frame
        CHECK(out.at({0, 0, 0}) == doctest::Approx(4.0 / 3.0).epsilon(1e-14));
    }

    SUBCASE("agrees with conv3d on a reshaped volume") {
        const std::int64_t C2 = 2, Kt = 3;
        Tensor kernel = Tensor::uniform({C2, C, Kt}, rng, -1, 1);
        Tensor bias = Tensor::uniform({C2}, rng, -0.5, 0.5);
        for (std::int64_t stride : {std::int64_t{1}, std::int64_t{2}}) {
            Tensor got = temporal_conv(nullptr, f, kernel, bias, stride);
            Tensor as_volume = reshape(nullptr, f, {C, T, 1, J});
            Tensor k5 = reshape(nullptr, kernel, {C2, C, Kt, 1, 1});
            Tensor conv = conv3d(nullptr, as_volume, k5, {stride, 1, 1}, {(Kt - 1) / 2, 0, 0});
            conv = add_channel_bias(nullptr, conv, bias);
            Tensor want = reshape(nullptr, conv, got.shape());
            REQUIRE(got.shape() == want.shape());
            for (std::int64_t i = 0; i < got.size(); ++i)
                CHECK(std::abs(got.data()[i] - want.data()[i]) < 1e-12);
        }
    }

    SUBCASE("rejects even kernels and odd strides") {
        Tensor k_even(Shape{C, C, 2});
        CHECK_THROWS_AS(temporal_conv(nullptr, f, k_even, Tensor(Shape{C}), 1), std::invalid_argument);
        Tensor k_ok(Shape{C, C, 3});
        CHECK_THROWS_AS(temporal_conv(nullptr, f, k_ok, Tensor(Shape{C}), 3), std::invalid_argument);
    }
}

TEST_CASE("stack: zero input with zero biases gives zero logits") {
    Rng rng(56);
    AGCNStackConfig cfg;
    cfg.in_channels = 3;
    cfg.classes = 5;
    cfg.joints = 16;
    cfg.mode = AdaptMode::adaptive;
    cfg.layers = {AGCNLayerConfig{3, 4, 0, 3, 1}, AGCNLayerConfig{4, 6, 0, 3, 2}};
    AGCNStack stack(cfg, sub15_adjacency(), rng);
    Tensor zero(Shape{3, 4, 16});
    StreamOutput out = stack.forward(nullptr, zero);
    CHECK(out.logits.data() == std::vector<double>(5, 0.0));
    CHECK(out.adjacencies.size() == 2);
}

TEST_CASE("stack: alpha = 0 makes adaptive and global_only bit-identical") {
    AGCNStackConfig cfg;
    cfg.in_channels = 3;
    cfg.classes = 4;
    cfg.joints = 16;
    cfg.layers = {AGCNLayerConfig{3, 4, 0, 3, 1}, AGCNLayerConfig{4, 4, 0, 3, 2}};

    cfg.mode = AdaptMode::adaptive;
    Rng rng_a(mix64(99));
    AGCNStack adaptive(cfg, sub15_adjacency(), rng_a);
    cfg.mode = AdaptMode::global_only;
    Rng rng_b(mix64(99));
    AGCNStack global(cfg, sub15_adjacency(), rng_b);

    Rng rng_x(57);
    Tensor parts = Tensor::uniform({3, 4, 16}, rng_x, -1, 1);
    StreamOutput oa = adaptive.forward(nullptr, parts);
    StreamOutput og = global.forward(nullptr, parts);
    CHECK(oa.logits.data() == og.logits.data());
    for (std::size_t l = 0; l < oa.adjacencies.size(); ++l)
        for (int k = 0; k < kSubsetCount; ++k)
            CHECK(oa.adjacencies[l][static_cast<std::size_t>(k)] ==
                  og.adjacencies[l][static_cast<std::size_t>(k)]);

    // at initialization the global graph equals the body graph exactly
    for (int k = 0; k < kSubsetCount; ++k) {
        CHECK(og.adjacencies[0][static_cast<std::size_t>(k)] ==
              sub15_adjacency().matrices[static_cast<std::size_t>(k)]);
    }
}

TEST_CASE("trainable parameter filtering per mode") {
    Rng rng(58);
    AGCNStackConfig cfg;
    cfg.in_channels = 3;
    cfg.classes = 4;
    cfg.joints = 16;
    cfg.layers = {AGCNLayerConfig{3, 4, 0, 3, 1}};
    cfg.mode = AdaptMode::fixed;
    AGCNStack stack(cfg, sub15_adjacency(), rng);
    for (const auto& [name, t] : stack.trainable_parameters()) {
        CHECK(name.find(".B.") == std::string::npos);
        CHECK(name.find("theta") == std::string::npos);
        CHECK(name.find("alpha") == std::string::npos);
    }
    stack.set_mode(AdaptMode::global_only);
    bool has_graph = false, has_embed = false;
    for (const auto& [name, t] : stack.trainable_parameters()) {
        has_graph = has_graph || name.find(".B.") != std::string::npos;
        has_embed = has_embed || name.find("theta") != std::string::npos;
    }
    CHECK(has_graph);
    CHECK(!has_embed);
    CHECK(stack.trainable_parameters().size() < stack.parameters().size());
}

TEST_CASE("posture features") {
    PoseSequence pose;
    pose.frames = 2;
    pose.joints = 3;
    pose.height = 10;
    pose.width = 20;
    pose.entries.assign(6, {});
    pose.at(0, 0) = {20.0 * 0.75, 10.0 * 0.25, true};
    pose.at(0, 2) = {20.0 * 0.25, 10.0 * 0.75, true};
    Tensor f = posture_features(pose);
    CHECK(f.shape() == Shape{3, 2, 4});
    CHECK(f.at({0, 0, 0}) == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(f.at({1, 0, 0}) == doctest::Approx(-0.25).epsilon(1e-12));
    CHECK(f.at({2, 0, 0}) == 1.0);
    // invisible joint: all-zero column
    CHECK(f.at({0, 0, 1}) == 0.0);
    CHECK(f.at({2, 0, 1}) == 0.0);
    // virtual root averages the visible joints only
    CHECK(f.at({0, 0, 3}) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(f.at({2, 0, 3}) == 1.0);
    // fully invisible frame stays zero everywhere, root included
    for (std::int64_t j = 0; j < 4; ++j)
        for (std::int64_t c = 0; c < 3; ++c) CHECK(f.at({c, 1, j}) == 0.0);
}

TEST_CASE("adjacency export writes one file per layer and subset") {
    Rng rng(59);
    AGCNStackConfig cfg;
    cfg.in_channels = 3;
    cfg.classes = 4;
    cfg.joints = 16;
    cfg.layers = {AGCNLayerConfig{3, 4, 0, 3, 1}, AGCNLayerConfig{4, 4, 0, 3, 2}};
    AGCNStack stack(cfg, sub15_adjacency(), rng);
    Tensor parts = Tensor::uniform({3, 4, 16}, rng, -1, 1);
    StreamOutput out = stack.forward(nullptr, parts);
    const std::string dir = "adj_export_test";
    export_adjacencies(dir, "human", out);
    for (int l = 0; l < 2; ++l) {
        for (const char* s : {"parent", "self", "child"}) {
            CHECK(std::filesystem::exists(dir + "/human_layer" + std::to_string(l) + "_" + s + ".txt"));
        }
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("flat aggregation baseline is a single affine map") {
    Rng rng(60);
    FCAggregate fc(24, 5, rng);
    Tensor parts = Tensor::uniform({2, 3, 4}, rng, -1, 1);
    Tensor logits = fc.forward(nullptr, parts);
    CHECK(logits.shape() == Shape{5});
    NamedParams params = fc.parameters();
    REQUIRE(params.size() == 2);
    Tensor w = params[0].second, b = params[1].second;
    for (std::int64_t k = 0; k < 5; ++k) {
        double want = b.at({k});
        for (std::int64_t i = 0; i < 24; ++i) want += w.at({k, i}) * parts.data()[static_cast<std::size_t>(i)];
        CHECK(logits.at({k}) == doctest::Approx(want).epsilon(1e-12));
    }
}
