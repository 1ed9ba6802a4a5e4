#include "pgcn/receptive_field.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace pgcn {

LayerChain::AxisMap LayerChain::axis_map(int axis) const {
    AxisMap m;
    m.extent = input_extents[static_cast<std::size_t>(axis)];
    if (m.extent <= 0) throw std::invalid_argument("layer chain: non-positive input extent");
    for (const auto& layer : layers) {
        const std::int64_t k = layer.kernel[static_cast<std::size_t>(axis)];
        const std::int64_t s = layer.stride[static_cast<std::size_t>(axis)];
        const std::int64_t p = layer.padding[static_cast<std::size_t>(axis)];
        if (k < 1 || s < 1 || p < 0) throw std::invalid_argument("layer chain: invalid kernel/stride/padding");
        // guard the subtraction: truncating division would round a negative
        // numerator toward zero and report a bogus one-element output
        if (m.extent + 2 * p < k) throw std::invalid_argument("layer chain: kernel exceeds padded extent");
        const std::int64_t out = (m.extent + 2 * p - k) / s + 1;
        if (out < 1) throw std::invalid_argument("layer chain: non-positive output extent");
        m.center += (static_cast<double>(k - 1) / 2.0 - static_cast<double>(p)) * m.jump;
        m.jump *= static_cast<double>(s);
        m.extent = out;
    }
    return m;
}

std::array<std::int64_t, 3> LayerChain::output_extents() const {
    return {axis_map(0).extent, axis_map(1).extent, axis_map(2).extent};
}

void LayerChain::validate() const {
    (void)output_extents();
}

std::array<std::int64_t, 3> map_coordinate(const LayerChain& chain, std::array<double, 3> coord) {
    std::array<std::int64_t, 3> out{};
    for (int axis = 0; axis < 3; ++axis) {
        const double c = coord[static_cast<std::size_t>(axis)];
        const double extent = static_cast<double>(chain.input_extents[static_cast<std::size_t>(axis)]);
        if (c < 0.0 || c >= extent) {
            throw std::out_of_range("coordinate " + std::to_string(c) + " outside input extent [0," +
                                    std::to_string(extent) + ") on axis " + std::to_string(axis));
        }
        const auto m = chain.axis_map(axis);
        // round-half-up to the nearest receptive-field center
        std::int64_t idx = static_cast<std::int64_t>(std::floor((c - m.center) / m.jump + 0.5));
        if (idx < 0) idx = 0;
        if (idx >= m.extent) idx = m.extent - 1;
        out[static_cast<std::size_t>(axis)] = idx;
    }
    return out;
}

std::array<std::vector<double>, 3> oracle_receptive_centers(const LayerChain& chain) {
    std::array<std::vector<double>, 3> result;
    for (int axis = 0; axis < 3; ++axis) {
        std::vector<double> pos(static_cast<std::size_t>(chain.input_extents[static_cast<std::size_t>(axis)]));
        for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = static_cast<double>(i);
        double spacing = 1.0;
        for (const auto& layer : chain.layers) {
            const std::int64_t k = layer.kernel[static_cast<std::size_t>(axis)];
            const std::int64_t s = layer.stride[static_cast<std::size_t>(axis)];
            const std::int64_t p = layer.padding[static_cast<std::size_t>(axis)];
            // explicit padded position list; pad entries extrapolate the grid
            std::vector<double> padded;
            padded.reserve(pos.size() + 2 * static_cast<std::size_t>(p));
            for (std::int64_t i = p; i >= 1; --i) padded.push_back(pos.front() - static_cast<double>(i) * spacing);
            padded.insert(padded.end(), pos.begin(), pos.end());
            for (std::int64_t i = 1; i <= p; ++i) padded.push_back(pos.back() + static_cast<double>(i) * spacing);
            std::vector<double> next;
            for (std::size_t start = 0; start + static_cast<std::size_t>(k) <= padded.size();
                 start += static_cast<std::size_t>(s)) {
                double acc = 0.0;
                for (std::int64_t d = 0; d < k; ++d) acc += padded[start + static_cast<std::size_t>(d)];
                next.push_back(acc / static_cast<double>(k));
            }
            if (next.empty()) throw std::invalid_argument("oracle_receptive_centers: empty output");
            pos = std::move(next);
            spacing *= static_cast<double>(s);
        }
        result[static_cast<std::size_t>(axis)] = std::move(pos);
    }
    return result;
}

PoseSequence read_pose_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open pose file: " + path);
    std::string line;
    std::int64_t line_no = 0;
    if (!std::getline(in, line)) throw std::runtime_error(path + ": empty pose file");
    ++line_no;
    PoseSequence pose;
    {
        std::istringstream ss(line);
        if (!(ss >> pose.frames >> pose.joints >> pose.height >> pose.width) || pose.frames < 1 ||
            pose.joints < 1 || pose.height <= 0 || pose.width <= 0) {
            throw std::runtime_error(path + ": malformed header at line 1");
        }
    }
    pose.entries.assign(static_cast<std::size_t>(pose.frames * pose.joints), {});
    std::vector<bool> seen(pose.entries.size(), false);
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::int64_t frame, joint;
        double x, y;
        int visible;
        if (!(ss >> frame >> joint >> x >> y >> visible) || (visible != 0 && visible != 1)) {
            throw std::runtime_error(path + ": malformed pose line " + std::to_string(line_no));
        }
        if (frame < 0 || frame >= pose.frames || joint < 0 || joint >= pose.joints) {
            throw std::runtime_error(path + ": frame/joint index out of range at line " + std::to_string(line_no));
        }
        if (visible == 1 && (x < 0.0 || x >= pose.width || y < 0.0 || y >= pose.height)) {
            throw std::runtime_error(path + ": visible joint " + std::to_string(joint) +
                                     " outside image bounds at line " + std::to_string(line_no));
        }
        const std::size_t idx = static_cast<std::size_t>(frame * pose.joints + joint);
        if (seen[idx]) {
            throw std::runtime_error(path + ": duplicate entry for frame " + std::to_string(frame) +
                                     " joint " + std::to_string(joint) + " at line " + std::to_string(line_no));
        }
        seen[idx] = true;
        pose.entries[idx] = PoseSequence::Joint{x, y, visible == 1};
    }
    for (std::size_t i = 0; i < seen.size(); ++i) {
        if (!seen[i]) {
            throw std::runtime_error(path + ": missing entry for frame " +
                                     std::to_string(static_cast<std::int64_t>(i) / pose.joints) + " joint " +
                                     std::to_string(static_cast<std::int64_t>(i) % pose.joints));
        }
    }
    return pose;
}

void write_pose_file(const std::string& path, const PoseSequence& pose) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write pose file: " + path);
    out.precision(17);
    out << pose.frames << " " << pose.joints << " " << pose.height << " " << pose.width << "\n";
    for (std::int64_t f = 0; f < pose.frames; ++f) {
        for (std::int64_t j = 0; j < pose.joints; ++j) {
            const auto& e = pose.at(f, j);
            out << f << " " << j << " " << e.x << " " << e.y << " " << (e.visible ? 1 : 0) << "\n";
        }
    }
}

std::vector<std::int64_t> frame_alignment(const LayerChain& chain) {
    const auto m = chain.axis_map(0);
    const std::int64_t frames = chain.input_extents[0];
    std::vector<std::int64_t> frame_for_tindex(static_cast<std::size_t>(m.extent));
    for (std::int64_t t = 0; t < m.extent; ++t) {
        const double center = m.center + static_cast<double>(t) * m.jump;
        std::int64_t f = static_cast<std::int64_t>(std::floor(center + 0.5));
        if (f < 0) f = 0;
        if (f >= frames) f = frames - 1;
        frame_for_tindex[static_cast<std::size_t>(t)] = f;
    }
    return frame_for_tindex;
}

Tensor pool_body_parts(Tape* tape, const Tensor& volume, const LayerChain& chain,
                       const PoseSequence& pose, const std::vector<std::int64_t>& frame_for_tindex,
                       std::int64_t radius) {
    const auto extents = chain.output_extents();
    if (volume.rank() != 4 || volume.shape()[1] != extents[0] || volume.shape()[2] != extents[1] ||
        volume.shape()[3] != extents[2]) {
        throw std::invalid_argument("pool_body_parts: volume " + shape_str(volume.shape()) +
                                    " does not match chain output " + std::to_string(extents[0]) + "x" +
                                    std::to_string(extents[1]) + "x" + std::to_string(extents[2]));
    }
    const std::int64_t Tg = extents[0];
    if (static_cast<std::int64_t>(frame_for_tindex.size()) != Tg) {
        throw std::invalid_argument("pool_body_parts: frame alignment length mismatch");
    }
    const std::int64_t C = volume.shape()[0];
    const std::int64_t Jr = pose.joints;

    std::vector<Tensor> columns;
    columns.reserve(static_cast<std::size_t>(Tg * (Jr + 1)));
    for (std::int64_t t = 0; t < Tg; ++t) {
        const std::int64_t frame = frame_for_tindex[static_cast<std::size_t>(t)];
        std::vector<Tensor> frame_cols;
        frame_cols.reserve(static_cast<std::size_t>(Jr));
        for (std::int64_t j = 0; j < Jr; ++j) {
            const auto& joint = pose.at(frame, j);
            bool pooled = false;
            if (joint.visible) {
                try {
                    const auto idx = map_coordinate(chain, {static_cast<double>(frame), joint.y, joint.x});
                    frame_cols.push_back(max_pool_cube(tape, volume, idx, radius));
                    pooled = true;
                } catch (const std::out_of_range&) {
                    // joint outside the mapped volume: fall through to zero padding
                }
            }
            if (!pooled) frame_cols.push_back(Tensor(Shape{C}));
        }
        // virtual root: mean over the real-joint columns (zeros count)
        Tensor root = frame_cols[0];
        for (std::int64_t j = 1; j < Jr; ++j) root = add(tape, root, frame_cols[static_cast<std::size_t>(j)]);
        root = scale(tape, root, 1.0 / static_cast<double>(Jr));
        for (auto& col : frame_cols) columns.push_back(std::move(col));
        columns.push_back(std::move(root));
    }
    return assemble_columns(tape, columns, Tg, Jr + 1);
}

LayerChain read_chain_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open chain file: " + path);
    LayerChain chain;
    std::string line;
    std::int64_t line_no = 0;
    bool have_extents = false;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        std::istringstream ss(line);
        std::vector<std::int64_t> vals;
        std::int64_t v;
        while (ss >> v) vals.push_back(v);
        if (!ss.eof()) {
            throw std::runtime_error(path + ":" + std::to_string(line_no) + ": non-integer token");
        }
        if (vals.empty()) continue;
        if (!have_extents) {
            if (vals.size() != 3) {
                throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                         ": expected 3 input extents (T H W)");
            }
            chain.input_extents = {vals[0], vals[1], vals[2]};
            have_extents = true;
        } else {
            if (vals.size() != 9) {
                throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                         ": expected 9 layer values (kernel stride padding per axis)");
            }
            chain.layers.push_back(Layer3d{{vals[0], vals[1], vals[2]},
                                           {vals[3], vals[4], vals[5]},
                                           {vals[6], vals[7], vals[8]}});
        }
    }
    if (!have_extents) throw std::runtime_error(path + ": empty chain file");
    chain.validate();
    return chain;
}

void write_chain_file(const std::string& path, const LayerChain& chain) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write chain file: " + path);
    out << chain.input_extents[0] << " " << chain.input_extents[1] << " " << chain.input_extents[2] << "\n";
    for (const auto& l : chain.layers) {
        out << l.kernel[0] << " " << l.kernel[1] << " " << l.kernel[2] << "  " << l.stride[0] << " "
            << l.stride[1] << " " << l.stride[2] << "  " << l.padding[0] << " " << l.padding[1] << " "
            << l.padding[2] << "\n";
    }
    if (!out) throw std::runtime_error("write failure on chain file: " + path);
}

}  // namespace pgcn
