#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "pgcn/tensor.hpp"

namespace pgcn {

struct Layer3d {
    std::array<std::int64_t, 3> kernel;   // (k_t, k_h, k_w)
    std::array<std::int64_t, 3> stride;
    std::array<std::int64_t, 3> padding;
};

// Ordered 3D layer descriptors plus the input extents they act on. Drives the
// coordinate mapping between video space and feature-map space.
struct LayerChain {
    std::vector<Layer3d> layers;
    std::array<std::int64_t, 3> input_extents;  // (T, H, W)

    struct AxisMap {
        double jump = 1.0;    // input-space spacing between adjacent output indices
        double center = 0.0;  // input-space center of output index 0
        std::int64_t extent = 0;
    };

    AxisMap axis_map(int axis) const;                 // throws on non-positive extents
    std::array<std::int64_t, 3> output_extents() const;
    void validate() const;
};

// Nearest receptive-field-center index per axis, round-half-up, clamped to the
// valid index range. Throws std::out_of_range when coord lies outside the
// input extents (callers treat the joint as missing).
std::array<std::int64_t, 3> map_coordinate(const LayerChain& chain, std::array<double, 3> coord);

// Independent oracle: per axis, the exact input-space receptive-field center
// of every output index, found by explicitly enumerating window placements
// layer by layer (no closed-form arithmetic shared with map_coordinate).
std::array<std::vector<double>, 3> oracle_receptive_centers(const LayerChain& chain);

// Per-frame joint coordinates in pixels with visibility flags.
struct PoseSequence {
    std::int64_t frames = 0;
    std::int64_t joints = 0;
    double height = 0.0;
    double width = 0.0;

    struct Joint {
        double x = 0.0;
        double y = 0.0;
        bool visible = false;
    };
    std::vector<Joint> entries;  // frames x joints, row-major

    Joint& at(std::int64_t frame, std::int64_t joint) {
        return entries[static_cast<std::size_t>(frame * joints + joint)];
    }
    const Joint& at(std::int64_t frame, std::int64_t joint) const {
        return entries[static_cast<std::size_t>(frame * joints + joint)];
    }
};

// Line-oriented pose file: header "T J H W", then T*J lines
// "frame joint x y visible". Malformed input aborts with the line number;
// visible joints must lie inside the image.
PoseSequence read_pose_file(const std::string& path);
void write_pose_file(const std::string& path, const PoseSequence& pose);

// Chain description file: first non-comment line "T H W" (input extents),
// then one line per layer "kt kh kw st sh sw pt ph pw". '#' starts a comment.
LayerChain read_chain_file(const std::string& path);
void write_chain_file(const std::string& path, const LayerChain& chain);

// For each feature-map time index, the source video frame whose pose is used,
// via nearest-receptive-center alignment on the temporal axis.
std::vector<std::int64_t> frame_alignment(const LayerChain& chain);

// volume [C,T',H',W'] (must match the chain's output extents); returns
// [C, T', J+1]: per retained time index and real joint, cube-max-pooled
// features at the mapped location; invisible or out-of-range joints yield
// all-zero columns; the appended virtual-root column is the mean over the
// real-joint columns (zeros included).
Tensor pool_body_parts(Tape* tape, const Tensor& volume, const LayerChain& chain,
                       const PoseSequence& pose, const std::vector<std::int64_t>& frame_for_tindex,
                       std::int64_t radius = 1);

}  // namespace pgcn
