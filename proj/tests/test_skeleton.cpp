#include <cmath>
#include <cstdio>
#include <string>

#include "doctest.h"
#include "oracles.hpp"
#include "pgcn/skeleton.hpp"
#include "pgcn/agcn.hpp"

using namespace pgcn;

TEST_CASE("presets and virtual root") {
    SkeletonSpec sub15 = skeleton_preset("sub15");
    CHECK(sub15.joint_count() == 15);
    SkeletonTree tree = build_graph(sub15);
    CHECK(tree.nodes == 16);
    CHECK(tree.root() == 15);
    CHECK(tree.real_joints() == 15);
    CHECK(tree.parent[static_cast<std::size_t>(tree.root())] == -1);
    // every real joint reaches the virtual root by parent links
    for (std::int64_t j = 0; j < 15; ++j) {
        std::int64_t cur = j, hops = 0;
        while (cur != tree.root()) {
            cur = tree.parent[static_cast<std::size_t>(cur)];
            REQUIRE(++hops <= 16);
        }
    }
    CHECK(skeleton_preset("ntu25").joint_count() == 25);
    CHECK_THROWS_AS(skeleton_preset("nope"), std::invalid_argument);
}

TEST_CASE("partition: parent/self/child membership") {
    SkeletonSpec chain;
    chain.joints = {"a", "b", "c"};
    chain.parent = {-1, 0, 1};
    SkeletonTree tree = build_graph(chain);  // a<-b<-c plus root adopting a
    SubsetPartition part = partition_subsets(tree);
    const auto& par = part.subsets[0];
    const auto& self = part.subsets[1];
    const auto& child = part.subsets[2];
    for (std::int64_t v = 0; v < tree.nodes; ++v) {
        CHECK(self[static_cast<std::size_t>(v)] == std::vector<std::int64_t>{v});
    }
    CHECK(par[0] == std::vector<std::int64_t>{3});  // a's parent is the virtual root
    CHECK(par[1] == std::vector<std::int64_t>{0});
    CHECK(par[3].empty());                          // the root has no parent subset
    CHECK(child[3] == std::vector<std::int64_t>{0});
    CHECK(child[2].empty());                        // leaf
}

TEST_CASE("adjacency columns: normalization and star weights") {
    SkeletonSpec star;
    star.joints = {"hub", "s1", "s2", "s3"};
    star.parent = {-1, 0, 0, 0};
    SkeletonTree tree = build_graph(star);
    SubsetAdjacency adj = adjacency_matrices(tree, partition_subsets(tree));
    const std::int64_t J = tree.nodes;
    REQUIRE(J == 5);

    // hub's child column: 1/3 on each spoke
    for (std::int64_t x = 1; x <= 3; ++x) {
        CHECK(adj.at(2, x, 0) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    }
    // self matrix is the identity
    for (std::int64_t x = 0; x < J; ++x)
        for (std::int64_t y = 0; y < J; ++y)
            CHECK(adj.at(1, x, y) == ((x == y) ? 1.0 : 0.0));

    // each column sums to exactly 0 (empty subset) or 1
    for (int k = 0; k < kSubsetCount; ++k) {
        for (std::int64_t y = 0; y < J; ++y) {
            double s = 0.0;
            for (std::int64_t x = 0; x < J; ++x) s += adj.at(k, x, y);
            CHECK((std::abs(s) < 1e-15 || std::abs(s - 1.0) < 1e-15));
        }
    }
}

TEST_CASE("adjacency support matches the tree exactly") {
    Rng rng(21);
    for (int trial = 0; trial < 10; ++trial) {
        SkeletonSpec spec = oracles::random_skeleton(rng, 2 + rng.uniform_int(12));
        SkeletonTree tree = build_graph(spec);
        SubsetAdjacency adj = adjacency_matrices(tree, partition_subsets(tree));
        for (std::int64_t x = 0; x < tree.nodes; ++x) {
            for (std::int64_t y = 0; y < tree.nodes; ++y) {
                CHECK((adj.at(0, x, y) != 0.0) ==
                      (tree.parent[static_cast<std::size_t>(y)] == x));
                CHECK((adj.at(1, x, y) != 0.0) == (x == y));
                CHECK((adj.at(2, x, y) != 0.0) ==
                      (tree.parent[static_cast<std::size_t>(x)] == y));
            }
        }
    }
}

TEST_CASE("matrix form equals explicit neighbor iteration on random trees") {
    Rng rng(22);
    for (int trial = 0; trial < 20; ++trial) {
        SkeletonSpec spec = oracles::random_skeleton(rng, 2 + rng.uniform_int(10));
        SkeletonTree tree = build_graph(spec);
        SubsetAdjacency adj = adjacency_matrices(tree, partition_subsets(tree));
        const std::int64_t J = tree.nodes, C = 3, Co = 4, T = 2;
        std::array<Tensor, kSubsetCount> weights, adj_t;
        for (int k = 0; k < kSubsetCount; ++k) {
            weights[static_cast<std::size_t>(k)] = Tensor::uniform({Co, C}, rng, -1, 1);
            adj_t[static_cast<std::size_t>(k)] =
                Tensor::from_data({J, J}, adj.matrices[static_cast<std::size_t>(k)]);
        }
        Tensor f_in = Tensor::uniform({C, T, J}, rng, -1, 1);
        Tensor zero_bias(Shape{Co});
        Tensor got = spatial_graph_conv(nullptr, f_in, weights, zero_bias, adj_t);
        Tensor want = oracles::neighbor_conv_loops(tree, f_in, weights);
        REQUIRE(got.shape() == want.shape());
        for (std::int64_t i = 0; i < got.size(); ++i) {
            CHECK(std::abs(got.data()[i] - want.data()[i]) < 1e-12);
        }
    }
}

TEST_CASE("malformed skeletons are rejected with the offending joints") {
    SkeletonSpec cyc;
    cyc.joints = {"p", "q", "r"};
    cyc.parent = {1, 2, 0};
    CHECK_THROWS_WITH_AS(build_graph(cyc), doctest::Contains("cyclic"), std::invalid_argument);
    SkeletonSpec selfp;
    selfp.joints = {"solo"};
    selfp.parent = {0};
    CHECK_THROWS_WITH_AS(build_graph(selfp), doctest::Contains("solo"), std::invalid_argument);
    SkeletonSpec oob;
    oob.joints = {"a", "b"};
    oob.parent = {-1, 7};
    CHECK_THROWS_AS(build_graph(oob), std::invalid_argument);
}

TEST_CASE("skeleton file round trip") {
    SkeletonSpec spec = skeleton_preset("sub15");
    const std::string path = "skeleton_roundtrip.txt";
    save_skeleton_file(path, spec);
    SkeletonSpec back = load_skeleton_file(path);
    CHECK(back.joints == spec.joints);
    CHECK(back.parent == spec.parent);
    std::remove(path.c_str());
}
