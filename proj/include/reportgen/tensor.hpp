#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "reportgen/errors.hpp"

namespace reportgen {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t extent : shape) n *= extent;
    return n;
}

inline std::string shape_to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

namespace detail {

// One vertex of the computation graph. Leaves (parameters, inputs) have no
// backward function; interior nodes capture their parents inside `backward`.
struct TensorNode {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // lazily allocated; same length as value
    // Receives the node itself so the closure never owns it (no shared_ptr
    // cycle): inputs are captured, the output is passed in.
    std::function<void(TensorNode&)> backward;
    bool requires_grad = false;

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

}  // namespace detail

/// Dense row-major tensor of 64-bit reals. Copying a Tensor copies the
/// handle, not the buffer; ops return fresh tensors. Gradients live on the
/// shared node and are populated by Tape::backward.
class Tensor {
public:
    Tensor() : node_(std::make_shared<detail::TensorNode>()) {}

    explicit Tensor(Shape shape, double fill = 0.0)
        : node_(std::make_shared<detail::TensorNode>()) {
        node_->shape = std::move(shape);
        node_->value.assign(numel(node_->shape), fill);
    }

    Tensor(Shape shape, std::vector<double> data)
        : node_(std::make_shared<detail::TensorNode>()) {
        if (numel(shape) != data.size())
            throw DimensionError("tensor data length " + std::to_string(data.size()) +
                                 " does not match shape " + shape_to_string(shape));
        node_->shape = std::move(shape);
        node_->value = std::move(data);
    }

    static Tensor scalar(double v) { return Tensor(Shape{1}, std::vector<double>{v}); }

    const Shape& shape() const { return node_->shape; }
    std::size_t size() const { return node_->value.size(); }
    std::size_t extent(std::size_t axis) const { return node_->shape.at(axis); }

    std::span<const double> values() const { return node_->value; }
    std::span<double> values() { return node_->value; }

    double operator[](std::size_t i) const { return node_->value[i]; }
    double& operator[](std::size_t i) { return node_->value[i]; }

    // Scalar access; contract error when the tensor is not a single value.
    double item() const {
        if (size() != 1)
            throw ContractError("item() called on non-scalar tensor " + shape_to_string(shape()));
        return node_->value[0];
    }

    bool requires_grad() const { return node_->requires_grad; }
    Tensor& set_requires_grad(bool flag) {
        node_->requires_grad = flag;
        return *this;
    }

    bool has_grad() const { return node_->grad.size() == node_->value.size(); }
    std::span<const double> grad() const { return node_->grad; }
    std::span<double> grad_mutable() {
        node_->ensure_grad();
        return node_->grad;
    }
    void zero_grad() { node_->grad.assign(node_->value.size(), 0.0); }

    std::shared_ptr<detail::TensorNode> node() const { return node_; }

private:
    explicit Tensor(std::shared_ptr<detail::TensorNode> node) : node_(std::move(node)) {}
    std::shared_ptr<detail::TensorNode> node_;

    friend class Tape;
    friend Tensor wrap_node(std::shared_ptr<detail::TensorNode>);
};

inline Tensor wrap_node(std::shared_ptr<detail::TensorNode> node) {
    return Tensor(std::move(node));
}

/// Reverse-mode tape. Constructing one makes it the active recorder for the
/// current thread; ops that touch a grad-requiring tensor append their node.
/// Append order is a topological order by construction, so backward is a
/// single reverse sweep that visits each node exactly once.
class Tape {
public:
    Tape() {
        if (active_ != nullptr)
            throw ContractError("a tape is already active on this thread");
        active_ = this;
    }
    ~Tape() { active_ = nullptr; }

    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape* active() { return active_; }

    void record(std::shared_ptr<detail::TensorNode> node) { order_.push_back(std::move(node)); }

    std::size_t node_count() const { return order_.size(); }

    // Seeds d(loss)=1 and propagates to every reachable leaf. Leaf gradients
    // accumulate; callers zero them between steps.
    void backward(const Tensor& loss) {
        if (loss.size() != 1)
            throw ContractError("backward() requires a scalar loss, got " +
                                shape_to_string(loss.shape()));
        auto loss_node = loss.node();
        if (!loss_node->requires_grad)
            throw ContractError("backward() called on a tensor with no recorded graph");
        for (auto& node : order_) node->grad.assign(node->value.size(), 0.0);
        loss_node->ensure_grad();
        loss_node->grad[0] = 1.0;
        for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
            if ((*it)->backward) (*it)->backward(**it);
        }
    }

private:
    std::vector<std::shared_ptr<detail::TensorNode>> order_;
    inline static thread_local Tape* active_ = nullptr;
};

namespace detail {

// Builds the result tensor of an op: computes nothing itself, just wires the
// value buffer and (when a tape is live and an input needs gradients) records
// the node with its backward closure.
inline Tensor make_op_result(Shape shape, std::vector<double> value, bool any_input_grad,
                             std::function<void(TensorNode&)> backward_fn) {
    auto node = std::make_shared<TensorNode>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    Tape* tape = Tape::active();
    if (tape != nullptr && any_input_grad) {
        node->requires_grad = true;
        node->backward = std::move(backward_fn);
        tape->record(node);
    }
    return wrap_node(std::move(node));
}

}  // namespace detail

}  // namespace reportgen
