#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "pgcn/rng.hpp"

namespace pgcn {

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major 64-bit-real tensor. Copies share storage (handle semantics);
// use clone() for a deep copy.
class Tensor {
public:
    Tensor();
    explicit Tensor(Shape shape, double fill = 0.0, bool requires_grad = false);

    static Tensor scalar(double value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor uniform(Shape shape, Rng& rng, double lo, double hi, bool requires_grad = false);

    const Shape& shape() const { return impl_->shape; }
    std::int64_t size() const { return static_cast<std::int64_t>(impl_->data.size()); }
    std::int64_t rank() const { return static_cast<std::int64_t>(impl_->shape.size()); }
    bool is_scalar() const { return size() == 1; }

    std::vector<double>& data() { return impl_->data; }
    const std::vector<double>& data() const { return impl_->data; }

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool v);

    bool has_grad() const { return !impl_->grad.empty(); }
    // Lazily allocated zero buffer of the tensor's shape.
    std::vector<double>& grad();
    const std::vector<double>& grad() const;
    void zero_grad();

    double item() const;  // scalar tensors only

    double& at(std::initializer_list<std::int64_t> idx);
    double at(std::initializer_list<std::int64_t> idx) const;

    Tensor clone() const;
    bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

private:
    struct Impl {
        Shape shape;
        std::vector<double> data;
        mutable std::vector<double> grad;
        bool requires_grad = false;
    };
    std::shared_ptr<Impl> impl_;
};

using NamedParams = std::vector<std::pair<std::string, Tensor>>;

// Operation log: each recorded entry carries the adjoint closure for one
// forward op. backward() replays the closures in reverse order.
class Tape {
public:
    void record(std::string op_tag, std::function<void()> backward_fn);

    // Seeds loss.grad with 1 and replays all adjoints in reverse.
    void backward(Tensor& loss);

    void clear();
    std::size_t size() const { return entries_.size(); }
    std::vector<std::string> op_tags() const;
    std::size_t replayed_count() const { return replayed_; }

private:
    struct Entry {
        std::string tag;
        std::function<void()> fn;
    };
    std::vector<Entry> entries_;
    std::size_t replayed_ = 0;
};

// ---- differentiable operations -------------------------------------------
// All ops take an optional tape; pass nullptr for inference-only evaluation.
// Broadcasting is restricted to identical shapes or a one-element tensor
// against any tensor.

Tensor add(Tape* tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape* tape, const Tensor& a, const Tensor& b);
Tensor add_scalar(Tape* tape, const Tensor& a, double s);
Tensor scale(Tape* tape, const Tensor& a, double s);
Tensor tanh_op(Tape* tape, const Tensor& a);
Tensor relu(Tape* tape, const Tensor& a);

// String-tag dispatcher mirroring the elementwise family above.
Tensor elementwise(Tape* tape, const std::string& op_tag, const Tensor& a,
                   const Tensor* b = nullptr, double s = 0.0);

Tensor matmul(Tape* tape, const Tensor& a, const Tensor& b);  // rank-2 only
Tensor transpose2d(Tape* tape, const Tensor& a);
Tensor reshape(Tape* tape, const Tensor& a, Shape new_shape);

// input [C_in,T,H,W], kernels [C_out,C_in,kt,kh,kw]
Tensor conv3d(Tape* tape, const Tensor& input, const Tensor& kernels,
              std::array<std::int64_t, 3> stride, std::array<std::int64_t, 3> padding);

// x [C,...], bias [C]: adds bias[c] across all trailing positions of channel c.
Tensor add_channel_bias(Tape* tape, const Tensor& x, const Tensor& bias);

// x [C,T,H,W] -> [C]: per-channel max over the cube window around center,
// clipped at the volume borders. Ties route the gradient to the first maximum
// in row-major order. Throws if the center lies outside the volume.
Tensor max_pool_cube(Tape* tape, const Tensor& x, std::array<std::int64_t, 3> center,
                     std::int64_t radius = 1);

// logits [N,classes], labels[i] in [0,classes). Mean over N of -log softmax.
Tensor softmax_cross_entropy(Tape* tape, const Tensor& logits,
                             const std::vector<std::int64_t>& labels);

// x [C, ...] -> [C]: mean over all trailing axes (global average pooling).
Tensor mean_over_trailing(Tape* tape, const Tensor& x);

// volume [C,T,H,W], weights [L,K,C], bias [L,K] with L == T*H*W: unshared
// per-location affine heads; row l of the output is head l applied to the
// C-vector at location l.
Tensor dense_heads_forward(Tape* tape, const Tensor& volume, const Tensor& weights,
                           const Tensor& bias);

// columns: L tensors of shape [C]; assembles [C, T, J] with L == T*J,
// column l = (t, j) in row-major order over (T, J).
Tensor assemble_columns(Tape* tape, const std::vector<Tensor>& columns,
                        std::int64_t t_extent, std::int64_t j_extent);

// W [K,C], b [K], x [C] -> [K]
Tensor affine_vec(Tape* tape, const Tensor& w, const Tensor& b, const Tensor& x);

// Non-differentiable helpers.
std::vector<double> softmax_values(const std::vector<double>& logits);
std::int64_t argmax(const std::vector<double>& values);

// ---- finite-difference gradient checking ----------------------------------

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::string worst_param;
    std::int64_t coords_checked = 0;
    bool nonfinite_loss = false;
    std::string message;

    bool passed(double tol) const { return !nonfinite_loss && max_rel_error < tol; }
};

// Compares analytic gradients of loss_fn w.r.t. each named parameter against
// central differences on a random subsample of coordinates.
GradCheckResult finite_difference_check(const std::function<Tensor(Tape&)>& loss_fn,
                                        const NamedParams& params, double eps,
                                        std::uint64_t seed,
                                        std::int64_t coords_per_param = 50);

}  // namespace pgcn
