#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <array>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "pgcn/agcn.hpp"
#include "pgcn/backbone.hpp"
#include "pgcn/dataset.hpp"
#include "pgcn/gradchecks.hpp"
#include "pgcn/train.hpp"

namespace py = pybind11;
using namespace pgcn;

namespace {

Tensor tensor_from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& arr) {
    Shape shape;
    for (py::ssize_t i = 0; i < arr.ndim(); ++i) shape.push_back(arr.shape(i));
    std::vector<double> data(arr.data(), arr.data() + arr.size());
    return Tensor::from_data(std::move(shape), std::move(data));
}

py::array_t<double> array_from_tensor(const Tensor& t) {
    std::vector<py::ssize_t> shape;
    for (auto e : t.shape()) shape.push_back(static_cast<py::ssize_t>(e));
    py::array_t<double> arr(shape);
    std::copy(t.data().begin(), t.data().end(), arr.mutable_data());
    return arr;
}

using PyArray = py::array_t<double, py::array::c_style | py::array::forcecast>;
using Triple = std::array<std::int64_t, 3>;

LayerChain chain_from_py(const Triple& input_extents,
                         const std::vector<std::array<Triple, 3>>& layers) {
    LayerChain chain;
    chain.input_extents = input_extents;
    for (const auto& l : layers) chain.layers.push_back(Layer3d{l[0], l[1], l[2]});
    chain.validate();
    return chain;
}

}  // namespace

PYBIND11_MODULE(_pgcn, m) {
    m.doc() = "pose-graph action recognition core operations";

    m.def("matmul", [](const PyArray& a, const PyArray& b) {
        return array_from_tensor(matmul(nullptr, tensor_from_array(a), tensor_from_array(b)));
    });

    m.def(
        "elementwise",
        [](const std::string& op, const PyArray& a, py::object b, double s) {
            Tensor ta = tensor_from_array(a);
            if (b.is_none()) return array_from_tensor(elementwise(nullptr, op, ta, nullptr, s));
            Tensor tb = tensor_from_array(b.cast<PyArray>());
            return array_from_tensor(elementwise(nullptr, op, ta, &tb, s));
        },
        py::arg("op"), py::arg("a"), py::arg("b") = py::none(), py::arg("s") = 0.0);

    m.def("conv3d", [](const PyArray& input, const PyArray& kernels, const Triple& stride,
                       const Triple& padding) {
        return array_from_tensor(
            conv3d(nullptr, tensor_from_array(input), tensor_from_array(kernels), stride, padding));
    });

    m.def("max_pool_cube", [](const PyArray& x, const Triple& center, std::int64_t radius) {
        return array_from_tensor(max_pool_cube(nullptr, tensor_from_array(x), center, radius));
    }, py::arg("x"), py::arg("center"), py::arg("radius") = 1);

    m.def("map_coordinate",
          [](const Triple& input_extents, const std::vector<std::array<Triple, 3>>& layers,
             const std::array<double, 3>& coord) {
              return map_coordinate(chain_from_py(input_extents, layers), coord);
          });

    m.def("receptive_centers",
          [](const Triple& input_extents, const std::vector<std::array<Triple, 3>>& layers) {
              const auto centers = oracle_receptive_centers(chain_from_py(input_extents, layers));
              return std::vector<std::vector<double>>{centers[0], centers[1], centers[2]};
          });

    m.def("skeleton_joints", [](const std::string& preset) {
        return build_graph(skeleton_preset(preset)).names;
    });

    m.def("adjacency", [](const std::string& preset) {
        const SkeletonTree tree = build_graph(skeleton_preset(preset));
        const SubsetAdjacency adj = adjacency_matrices(tree, partition_subsets(tree));
        std::vector<py::array_t<double>> out;
        for (int k = 0; k < kSubsetCount; ++k) {
            py::array_t<double> a({tree.nodes, tree.nodes});
            std::copy(adj.matrices[static_cast<std::size_t>(k)].begin(),
                      adj.matrices[static_cast<std::size_t>(k)].end(), a.mutable_data());
            out.push_back(std::move(a));
        }
        return out;
    });

    m.def(
        "synth_sample",
        [](std::uint64_t seed, int split, std::int64_t index, std::int64_t classes) {
            SyntheticSpec spec;
            spec.classes = classes;
            Sample s = synth_sample(spec, seed, split, index);
            py::array_t<double> pose({s.pose.frames, s.pose.joints, static_cast<std::int64_t>(3)});
            auto* p = pose.mutable_data();
            for (const auto& e : s.pose.entries) {
                *p++ = e.x;
                *p++ = e.y;
                *p++ = e.visible ? 1.0 : 0.0;
            }
            py::dict out;
            out["clip"] = array_from_tensor(s.clip);
            out["pose"] = pose;
            out["label"] = s.label;
            return out;
        },
        py::arg("seed"), py::arg("split"), py::arg("index"), py::arg("classes") = 12);

    m.def("fuse_scores",
          [](const std::vector<std::vector<double>>& streams, const std::vector<double>& weights) {
              return fuse_scores(streams, weights);
          },
          py::arg("streams"), py::arg("weights") = std::vector<double>{});

    m.def(
        "gradcheck",
        [](const std::string& which, std::uint64_t seed) {
            py::list out;
            for (const auto& [name, r] : run_gradchecks(which, seed)) {
                py::dict d;
                d["name"] = name;
                d["max_rel_error"] = r.max_rel_error;
                d["passed"] = r.passed(kGradCheckTol);
                out.append(std::move(d));
            }
            return out;
        },
        py::arg("which") = "all", py::arg("seed") = 0);

    m.attr("gradcheck_tolerance") = kGradCheckTol;
}
