#include <cmath>
#include <cstdio>
#include <fstream>

#include "doctest.h"
#include "pgcn/receptive_field.hpp"
#include "pgcn/rng.hpp"

using namespace pgcn;

namespace {

LayerChain h_axis_chain(std::int64_t extent, std::vector<std::array<std::int64_t, 3>> khp) {
    // Chain acting on one interesting axis (H); T and W stay trivial.
    LayerChain chain;
    chain.input_extents = {1, extent, extent};
    for (const auto& [k, s, p] : khp) {
        chain.layers.push_back(Layer3d{{1, k, k}, {1, s, s}, {0, p, p}});
    }
    return chain;
}

// independent nearest-center decision over the enumerated oracle centers
std::int64_t nearest_index(const std::vector<double>& centers, double coord) {
    std::int64_t best = 0;
    double best_d = std::abs(coord - centers[0]);
    for (std::size_t i = 1; i < centers.size(); ++i) {
        const double d = std::abs(coord - centers[i]);
        if (d < best_d - 1e-12 || std::abs(d - best_d) <= 1e-12) {  // ties go to the larger index
            best = static_cast<std::int64_t>(i);
            best_d = d;
        }
    }
    return best;
}

}  // namespace

TEST_CASE("identity chain maps coordinates to themselves") {
    LayerChain chain = h_axis_chain(9, {{1, 1, 0}});
    CHECK(chain.output_extents() == std::array<std::int64_t, 3>{1, 9, 9});
    for (double x : {0.0, 3.0, 8.0}) {
        CHECK(map_coordinate(chain, {0.0, x, x})[1] == static_cast<std::int64_t>(x));
    }
}

TEST_CASE("two-layer stride-4 chain: pixel 100 lands on index 25") {
    LayerChain chain = h_axis_chain(224, {{7, 2, 3}, {3, 2, 1}});
    CHECK(chain.output_extents()[1] == 56);
    CHECK(map_coordinate(chain, {0.0, 100.0, 100.0})[1] == 25);
    CHECK(map_coordinate(chain, {0.0, 100.0, 100.0})[2] == 25);
}

TEST_CASE("k3 s2 p0 centers and mappings") {
    LayerChain chain = h_axis_chain(7, {{3, 2, 0}});
    auto centers = oracle_receptive_centers(chain);
    CHECK(centers[1] == std::vector<double>{1.0, 3.0, 5.0});
    CHECK(map_coordinate(chain, {0.0, 5.0, 5.0})[1] == 2);
    CHECK(map_coordinate(chain, {0.0, 0.0, 0.0})[1] == 0);
    // coordinate 2.0 is equidistant from centers 1 and 3: ties round up
    CHECK(map_coordinate(chain, {0.0, 2.0, 2.0})[1] == 1);
}

TEST_CASE("even kernel gives fractional centers") {
    LayerChain chain = h_axis_chain(4, {{2, 2, 0}});
    auto centers = oracle_receptive_centers(chain);
    CHECK(centers[1] == std::vector<double>{0.5, 2.5});
}

TEST_CASE("random chains agree with the enumeration oracle") {
    Rng rng(31);
    for (int trial = 0; trial < 40; ++trial) {
        LayerChain chain;
        chain.input_extents = {4 + rng.uniform_int(30), 8 + rng.uniform_int(60),
                               8 + rng.uniform_int(60)};
        const int depth = 1 + static_cast<int>(rng.uniform_int(4));
        bool ok = true;
        for (int l = 0; l < depth; ++l) {
            Layer3d layer;
            for (int a = 0; a < 3; ++a) {
                layer.kernel[static_cast<std::size_t>(a)] = 1 + rng.uniform_int(7);
                layer.stride[static_cast<std::size_t>(a)] = 1 + rng.uniform_int(3);
                layer.padding[static_cast<std::size_t>(a)] = rng.uniform_int(4);
            }
            chain.layers.push_back(layer);
        }
        try {
            chain.validate();
        } catch (const std::exception&) {
            ok = false;  // degenerate draw (non-positive extent); skip
        }
        if (!ok) continue;
        auto centers = oracle_receptive_centers(chain);
        for (int probe = 0; probe < 30; ++probe) {
            std::array<double, 3> coord;
            for (int a = 0; a < 3; ++a) {
                coord[static_cast<std::size_t>(a)] =
                    rng.uniform(0.0, static_cast<double>(chain.input_extents[static_cast<std::size_t>(a)]) - 1e-9);
            }
            auto got = map_coordinate(chain, coord);
            for (int a = 0; a < 3; ++a) {
                CHECK(got[static_cast<std::size_t>(a)] ==
                      nearest_index(centers[static_cast<std::size_t>(a)], coord[static_cast<std::size_t>(a)]));
            }
        }
    }
}

TEST_CASE("out-of-range coordinates throw") {
    LayerChain chain = h_axis_chain(7, {{3, 2, 0}});
    CHECK_THROWS_AS(map_coordinate(chain, {0.0, -0.5, 0.0}), std::out_of_range);
    CHECK_THROWS_AS(map_coordinate(chain, {0.0, 0.0, 7.0}), std::out_of_range);
}

TEST_CASE("pose files: round trip and malformed input") {
    PoseSequence pose;
    pose.frames = 2;
    pose.joints = 3;
    pose.height = 10;
    pose.width = 12;
    pose.entries.resize(6);
    Rng rng(32);
    for (auto& e : pose.entries) {
        e.x = rng.uniform(0.0, 12.0);
        e.y = rng.uniform(0.0, 10.0);
        e.visible = rng.bernoulli(0.7);
    }
    pose.at(1, 2).visible = false;
    pose.at(1, 2).x = -100.0;  // invisible joints may carry junk coordinates
    const std::string path = "pose_roundtrip.txt";
    write_pose_file(path, pose);
    PoseSequence back = read_pose_file(path);
    CHECK(back.frames == 2);
    CHECK(back.joints == 3);
    CHECK(back.height == 10.0);
    CHECK(back.width == 12.0);
    for (std::int64_t f = 0; f < 2; ++f) {
        for (std::int64_t j = 0; j < 3; ++j) {
            CHECK(back.at(f, j).visible == pose.at(f, j).visible);
            if (pose.at(f, j).visible) {
                CHECK(back.at(f, j).x == doctest::Approx(pose.at(f, j).x).epsilon(1e-12));
                CHECK(back.at(f, j).y == doctest::Approx(pose.at(f, j).y).epsilon(1e-12));
            }
        }
    }
    std::remove(path.c_str());

    {
        std::ofstream bad("pose_bad.txt");
        bad << "2 1 10 10\n0 0 1.0 2.0 1\nnot a pose line\n";
    }
    CHECK_THROWS_WITH_AS(read_pose_file("pose_bad.txt"), doctest::Contains("3"), std::runtime_error);
    std::remove("pose_bad.txt");

    {
        std::ofstream oob("pose_oob.txt");
        oob << "1 1 10 10\n0 0 99.0 2.0 1\n";  // visible joint outside the image
    }
    CHECK_THROWS_AS(read_pose_file("pose_oob.txt"), std::runtime_error);
    std::remove("pose_oob.txt");

    {
        std::ofstream badj("pose_badjoint.txt");
        badj << "1 2 10 10\n0 0 1.0 2.0 1\n0 5 1.0 2.0 1\n";  // joint index out of range
    }
    CHECK_THROWS_AS(read_pose_file("pose_badjoint.txt"), std::runtime_error);
    std::remove("pose_badjoint.txt");
}

TEST_CASE("chain file round trip") {
    LayerChain chain;
    chain.input_extents = {16, 56, 56};
    chain.layers = {Layer3d{{3, 5, 5}, {1, 2, 2}, {1, 2, 2}}, Layer3d{{3, 3, 3}, {2, 2, 2}, {1, 1, 1}}};
    const std::string path = "chain_roundtrip.txt";
    write_chain_file(path, chain);
    LayerChain back = read_chain_file(path);
    CHECK(back.input_extents == chain.input_extents);
    REQUIRE(back.layers.size() == chain.layers.size());
    for (std::size_t l = 0; l < chain.layers.size(); ++l) {
        CHECK(back.layers[l].kernel == chain.layers[l].kernel);
        CHECK(back.layers[l].stride == chain.layers[l].stride);
        CHECK(back.layers[l].padding == chain.layers[l].padding);
    }
    std::remove(path.c_str());
}

TEST_CASE("frame alignment is monotone and in range") {
    LayerChain chain;
    chain.input_extents = {16, 56, 56};
    chain.layers = {Layer3d{{3, 3, 3}, {2, 2, 2}, {1, 1, 1}}, Layer3d{{3, 3, 3}, {2, 2, 2}, {1, 1, 1}}};
    auto align = frame_alignment(chain);
    CHECK(static_cast<std::int64_t>(align.size()) == chain.output_extents()[0]);
    std::int64_t prev = -1;
    for (std::int64_t f : align) {
        CHECK(f >= 0);
        CHECK(f < 16);
        CHECK(f >= prev);
        prev = f;
    }
}

TEST_CASE("body-part pooling") {
    LayerChain chain;
    chain.input_extents = {6, 12, 12};
    chain.layers = {Layer3d{{3, 3, 3}, {2, 3, 3}, {1, 1, 1}}};
    const auto out = chain.output_extents();
    const auto align = frame_alignment(chain);
    const std::int64_t J = 4;

    SUBCASE("all-invisible pose yields the zero tensor") {
        Rng rng(33);
        Tensor volume = Tensor::uniform({3, out[0], out[1], out[2]}, rng, -1, 1);
        PoseSequence pose;
        pose.frames = 6;
        pose.joints = J;
        pose.height = 12;
        pose.width = 12;
        pose.entries.assign(static_cast<std::size_t>(6 * J), {});
        Tensor parts = pool_body_parts(nullptr, volume, chain, pose, align);
        CHECK(parts.shape() == Shape{3, out[0], J + 1});
        for (double v : parts.data()) CHECK(v == 0.0);
    }

    SUBCASE("constant volume pools to the constant; root averages in the zeros") {
        Tensor volume(Shape{2, out[0], out[1], out[2]}, 3.5);
        PoseSequence pose;
        pose.frames = 6;
        pose.joints = J;
        pose.height = 12;
        pose.width = 12;
        pose.entries.assign(static_cast<std::size_t>(6 * J), {});
        for (std::int64_t f = 0; f < 6; ++f) {
            for (std::int64_t j = 0; j < J; ++j) {
                if (j == 2) continue;  // joint 2 stays invisible
                pose.at(f, j) = {6.0, 6.0, true};
            }
        }
        Tensor parts = pool_body_parts(nullptr, volume, chain, pose, align);
        for (std::int64_t c = 0; c < 2; ++c) {
            for (std::int64_t t = 0; t < out[0]; ++t) {
                CHECK(parts.at({c, t, 0}) == 3.5);
                CHECK(parts.at({c, t, 2}) == 0.0);
                // root column: mean over the real-joint columns, zeros included
                CHECK(parts.at({c, t, J}) == doctest::Approx(3.5 * 3.0 / 4.0).epsilon(1e-15));
            }
        }
    }

    SUBCASE("single joint: exhaustive cube scan at the mapped location") {
        Rng rng(34);
        Tensor volume = Tensor::uniform({2, out[0], out[1], out[2]}, rng, -1, 1);
        PoseSequence pose;
        pose.frames = 6;
        pose.joints = 1;
        pose.height = 12;
        pose.width = 12;
        pose.entries.assign(6, {});
        for (std::int64_t f = 0; f < 6; ++f) pose.at(f, 0) = {rng.uniform(0.0, 11.9), rng.uniform(0.0, 11.9), true};
        Tensor parts = pool_body_parts(nullptr, volume, chain, pose, align);
        for (std::int64_t t = 0; t < out[0]; ++t) {
            const auto& joint = pose.at(align[static_cast<std::size_t>(t)], 0);
            // map_coordinate takes (t, y, x)
            auto loc = map_coordinate(chain, {static_cast<double>(align[static_cast<std::size_t>(t)]),
                                              joint.y, joint.x});
            for (std::int64_t c = 0; c < 2; ++c) {
                double want = -1e300;
                for (std::int64_t dt = -1; dt <= 1; ++dt)
                    for (std::int64_t dh = -1; dh <= 1; ++dh)
                        for (std::int64_t dw = -1; dw <= 1; ++dw) {
                            const std::int64_t tt = loc[0] + dt, hh = loc[1] + dh, ww = loc[2] + dw;
                            if (tt < 0 || tt >= out[0] || hh < 0 || hh >= out[1] || ww < 0 ||
                                ww >= out[2])
                                continue;
                            want = std::max(want, volume.at({c, tt, hh, ww}));
                        }
                CHECK(parts.at({c, t, 0}) == want);
            }
        }
    }

    SUBCASE("volume extents must match the chain") {
        Tensor wrong(Shape{2, out[0] + 1, out[1], out[2]});
        PoseSequence pose;
        pose.frames = 6;
        pose.joints = 1;
        pose.height = 12;
        pose.width = 12;
        pose.entries.assign(6, {});
        CHECK_THROWS_AS(pool_body_parts(nullptr, wrong, chain, pose, align), std::invalid_argument);
    }
}
