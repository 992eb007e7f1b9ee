#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace hsicl::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape) noexcept;
std::string shape_str(const Shape& shape);

/// Dense row-major array of doubles.
struct Tensor {
    Shape shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(Shape s, double fill = 0.0) : shape(std::move(s)), data(numel(shape), fill) {}
    Tensor(Shape s, std::vector<double> values);

    std::size_t size() const noexcept { return data.size(); }
    std::size_t dim(std::size_t i) const { return shape.at(i); }
    std::size_t rank() const noexcept { return shape.size(); }

    bool operator==(const Tensor&) const = default;
};

struct Node;
using BackwardFn = std::function<void(Node&)>;

/// A vertex of the recorded computation. Leaves are inputs and parameters;
/// interior nodes keep their parents alive until the graph is dropped.
struct Node {
    Tensor value;
    Tensor grad;  // empty until first accumulated
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    BackwardFn backward;

    bool is_leaf() const noexcept { return !backward; }
    /// Gradient slot, allocated (zero) on first use.
    Tensor& grad_slot();
};

/// Handle to a node. Copies share the node.
class Var {
public:
    Var() = default;
    explicit Var(Tensor value, bool requires_grad = false);
    explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    const Tensor& value() const { return node_->value; }
    Tensor& mutable_value() { return node_->value; }
    const Shape& shape() const { return node_->value.shape; }
    bool requires_grad() const { return node_->requires_grad; }

    /// Accumulated gradient; a zero tensor of the value's shape if none yet.
    Tensor grad() const;
    bool has_grad() const { return !node_->grad.data.empty(); }
    void zero_grad() { node_->grad = Tensor(); }

    /// Value of a single-element tensor.
    double item() const;

    const std::shared_ptr<Node>& node() const { return node_; }
    bool valid() const noexcept { return static_cast<bool>(node_); }

private:
    std::shared_ptr<Node> node_;
};

inline Var constant(Tensor t) { return Var(std::move(t), false); }
inline Var parameter(Tensor t) { return Var(std::move(t), true); }

/// While alive, ops record no graph (inference). Not nested across threads.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

/// Records an op. The backward function reads `self.grad` and accumulates
/// into `self.parents[i]->grad_slot()` for parents that require grad.
/// When no parent requires grad, nothing is recorded.
Var make_op(Tensor value, std::vector<Var> parents, BackwardFn backward);

/// Reverse sweep from a scalar. Leaf gradients accumulate across calls;
/// interior gradients are reset at the start of each call.
void backward(const Var& loss);

// ---- elementwise / reductions ------------------------------------------------

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
Var sum(const Var& a);
Var mean(const Var& a);
Var relu(const Var& a);
Var reshape(const Var& a, Shape shape);

// ---- linear algebra -----------------------------------------------------------

/// x [B x in], w [out x in], b [out] -> [B x out].
Var linear(const Var& x, const Var& w, const Var& b);
/// [M x K] * [K x N].
Var matmul(const Var& a, const Var& b);
/// Batched [B x M x K] * [B x K x N].
Var bmm(const Var& a, const Var& b);
/// Swaps the last two axes of a rank-2 or rank-3 tensor.
Var transpose_last(const Var& a);
/// Softmax over the last axis.
Var softmax_last(const Var& a);
/// Each row of a [R x d] matrix divided by its l2 norm. Zero rows throw.
Var normalize_rows(const Var& a);

// ---- 3D convolutional layers ----------------------------------------------------

using Dims3 = std::array<std::size_t, 3>;

/// x [B, C, D, H, W], w [O, C, kd, kh, kw], b [O]; zero padding `pad`,
/// unit stride. Output [B, O, D + 2pd - kd + 1, ...].
Var conv3d(const Var& x, const Var& w, const Var& b, Dims3 pad);
/// Non-overlapping max pooling with stride == window. Trailing remainders
/// are dropped.
Var maxpool3d(const Var& x, Dims3 window);
/// [B, C, D, H, W] -> [B, H*W, C*D]: one token per spatial position.
Var spatial_tokens(const Var& x);

}  // namespace hsicl::ad
