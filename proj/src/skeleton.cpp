#include "pgcn/skeleton.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace pgcn {

SkeletonSpec load_skeleton_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open skeleton file: " + path);
    SkeletonSpec spec;
    std::string line;
    std::int64_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        std::int64_t index, parent;
        std::string name;
        if (!(ss >> index >> name >> parent)) {
            throw std::runtime_error(path + ": malformed skeleton line " + std::to_string(line_no));
        }
        if (index != spec.joint_count()) {
            throw std::runtime_error(path + ": line " + std::to_string(line_no) +
                                     ": joint indices must be consecutive from 0");
        }
        spec.joints.push_back(name);
        spec.parent.push_back(parent);
    }
    if (spec.joints.empty()) throw std::runtime_error(path + ": empty skeleton file");
    return spec;
}

void save_skeleton_file(const std::string& path, const SkeletonSpec& spec) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write skeleton file: " + path);
    for (std::int64_t i = 0; i < spec.joint_count(); ++i) {
        out << i << " " << spec.joints[static_cast<std::size_t>(i)] << " "
            << spec.parent[static_cast<std::size_t>(i)] << "\n";
    }
}

SkeletonSpec skeleton_preset(const std::string& name) {
    SkeletonSpec spec;
    if (name == "sub15") {
        spec.joints = {"neck",       "belly",  "face",   "rshoulder", "lshoulder",
                       "rhip",       "lhip",   "relbow", "lelbow",    "rknee",
                       "lknee",      "rwrist", "lwrist", "rankle",    "lankle"};
        spec.parent = {1, -1, 0, 0, 0, 1, 1, 3, 4, 5, 6, 7, 8, 9, 10};
        return spec;
    }
    if (name == "ntu25") {
        spec.joints = {"spine_base", "spine_mid",  "neck",       "head",        "lshoulder",
                       "lelbow",     "lwrist",     "lhand",      "rshoulder",   "relbow",
                       "rwrist",     "rhand",      "lhip",       "lknee",       "lankle",
                       "lfoot",      "rhip",       "rknee",      "rankle",      "rfoot",
                       "spine",      "lhand_tip",  "lthumb",     "rhand_tip",   "rthumb"};
        spec.parent = {-1, 0, 20, 2, 20, 4, 5, 6, 20, 8, 9, 10, 0, 12, 13, 14, 0, 16, 17, 18, 1, 7, 7, 11, 11};
        return spec;
    }
    throw std::invalid_argument("unknown skeleton preset: " + name + " (available: sub15, ntu25)");
}

SkeletonTree build_graph(const SkeletonSpec& spec) {
    const std::int64_t n = spec.joint_count();
    if (static_cast<std::int64_t>(spec.parent.size()) != n) {
        throw std::invalid_argument("skeleton spec: joint/parent count mismatch");
    }
    for (std::int64_t i = 0; i < n; ++i) {
        const std::int64_t p = spec.parent[static_cast<std::size_t>(i)];
        if (p == i) throw std::invalid_argument("joint " + spec.joints[static_cast<std::size_t>(i)] + " is its own parent");
        if (p < -1 || p >= n) {
            throw std::invalid_argument("joint " + spec.joints[static_cast<std::size_t>(i)] +
                                        " has out-of-range parent " + std::to_string(p));
        }
    }
    // cycle detection by walking parent links; a walk longer than n nodes is a cycle
    for (std::int64_t start = 0; start < n; ++start) {
        std::vector<std::int64_t> trail;
        std::int64_t cur = start;
        while (cur != -1) {
            trail.push_back(cur);
            if (static_cast<std::int64_t>(trail.size()) > n) {
                std::ostringstream os;
                os << "cyclic parent links:";
                for (std::size_t i = trail.size() - static_cast<std::size_t>(n); i < trail.size(); ++i) {
                    os << " " << spec.joints[static_cast<std::size_t>(trail[i])];
                }
                throw std::invalid_argument(os.str());
            }
            cur = spec.parent[static_cast<std::size_t>(cur)];
        }
    }

    SkeletonTree tree;
    tree.nodes = n + 1;
    tree.parent.assign(static_cast<std::size_t>(tree.nodes), -1);
    tree.children.assign(static_cast<std::size_t>(tree.nodes), {});
    tree.names = spec.joints;
    tree.names.push_back("root");
    const std::int64_t root = n;
    for (std::int64_t i = 0; i < n; ++i) {
        const std::int64_t p = spec.parent[static_cast<std::size_t>(i)];
        tree.parent[static_cast<std::size_t>(i)] = (p == -1) ? root : p;
        tree.children[static_cast<std::size_t>((p == -1) ? root : p)].push_back(i);
    }
    return tree;
}

SubsetPartition partition_subsets(const SkeletonTree& tree) {
    SubsetPartition part;
    for (auto& s : part.subsets) s.assign(static_cast<std::size_t>(tree.nodes), {});
    for (std::int64_t v = 0; v < tree.nodes; ++v) {
        const std::int64_t p = tree.parent[static_cast<std::size_t>(v)];
        if (p != -1) part.subsets[static_cast<std::size_t>(SubsetTag::parent)][static_cast<std::size_t>(v)].push_back(p);
        part.subsets[static_cast<std::size_t>(SubsetTag::self)][static_cast<std::size_t>(v)].push_back(v);
        part.subsets[static_cast<std::size_t>(SubsetTag::child)][static_cast<std::size_t>(v)] =
            tree.children[static_cast<std::size_t>(v)];
    }
    return part;
}

SubsetAdjacency adjacency_matrices(const SkeletonTree& tree, const SubsetPartition& partition) {
    SubsetAdjacency adj;
    adj.joints = tree.nodes;
    const std::int64_t J = tree.nodes;
    for (int k = 0; k < kSubsetCount; ++k) {
        auto& m = adj.matrices[static_cast<std::size_t>(k)];
        m.assign(static_cast<std::size_t>(J * J), 0.0);
        for (std::int64_t y = 0; y < J; ++y) {
            const auto& members = partition.subsets[static_cast<std::size_t>(k)][static_cast<std::size_t>(y)];
            if (members.empty()) continue;  // empty subset contributes an all-zero column
            const double w = 1.0 / static_cast<double>(members.size());
            for (std::int64_t x : members) m[static_cast<std::size_t>(x * J + y)] = w;
        }
    }
    return adj;
}

}  // namespace pgcn
