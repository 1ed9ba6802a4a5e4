#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace pgcn {

// Real joints and their parent links. Parent -1 marks a forest root; a virtual
// gravity-center root is appended by build_graph and adopts all forest roots.
struct SkeletonSpec {
    std::vector<std::string> joints;
    std::vector<std::int64_t> parent;

    std::int64_t joint_count() const { return static_cast<std::int64_t>(joints.size()); }
};

SkeletonSpec load_skeleton_file(const std::string& path);
void save_skeleton_file(const std::string& path, const SkeletonSpec& spec);

// Named presets: "sub15" (15-joint body layout) and "ntu25" (25-joint layout).
SkeletonSpec skeleton_preset(const std::string& name);

// Rooted tree over J = real joints + 1 nodes; the virtual root is index J-1.
struct SkeletonTree {
    std::int64_t nodes = 0;
    std::vector<std::int64_t> parent;  // parent[root] == -1
    std::vector<std::vector<std::int64_t>> children;
    std::vector<std::string> names;

    std::int64_t root() const { return nodes - 1; }
    std::int64_t real_joints() const { return nodes - 1; }
};

SkeletonTree build_graph(const SkeletonSpec& spec);

enum class SubsetTag : int { parent = 0, self = 1, child = 2 };
inline constexpr int kSubsetCount = 3;

// For each node, its 1-distance neighborhood split into parent/self/child.
struct SubsetPartition {
    // subsets[k][node] = member node indices of subset k at that node
    std::array<std::vector<std::vector<std::int64_t>>, kSubsetCount> subsets;
};

SubsetPartition partition_subsets(const SkeletonTree& tree);

// K_s column-normalized JxJ matrices; entry (x,y) of matrix k is
// 1/|S_k(y)| when node x belongs to subset k of node y. Columns of empty
// subsets are all-zero. Row-major storage.
struct SubsetAdjacency {
    std::int64_t joints = 0;
    std::array<std::vector<double>, kSubsetCount> matrices;

    double at(int k, std::int64_t x, std::int64_t y) const {
        return matrices[static_cast<std::size_t>(k)][static_cast<std::size_t>(x * joints + y)];
    }
};

SubsetAdjacency adjacency_matrices(const SkeletonTree& tree, const SubsetPartition& partition);

}  // namespace pgcn
