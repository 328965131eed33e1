#pragma once

// Dense float64 tensors with a reverse-mode autodiff record.
//
// A Tensor is a shared handle: copies alias the same storage and graph node.
// Leaves created with requires_grad accumulate gradients across backward()
// calls until zero_grad() is called; intermediate nodes are recomputed on
// every backward pass.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace longshort {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

enum class OpKind {
    leaf,
    matmul,
    add,
    sub,
    mul,
    scale,
    exp,
    log,
    sqrt,
    power,
    reciprocal,
    mean,
    sum_axis,
    row_log_softmax,
    masked_fill,
    concat,
    slice,
    transpose,
    // Not in the minimal set but needed to express a transformer without
    // implicit broadcasting.
    reshape,
    add_row,
    mul_row,
    gelu,
    layer_norm,
    gather_rows,
    pick,
};

std::string_view op_name(OpKind kind);

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

namespace detail {
struct Node;
}

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, double value);
    static Tensor from(Shape shape, std::vector<double> values);
    static Tensor scalar(double value);
    /// Leaf that records gradients.
    static Tensor parameter(Shape shape, std::vector<double> values);

    [[nodiscard]] bool defined() const noexcept { return static_cast<bool>(node_); }
    [[nodiscard]] const Shape& shape() const;
    [[nodiscard]] std::size_t dim(std::size_t axis) const;
    [[nodiscard]] std::size_t rank() const { return shape().size(); }
    [[nodiscard]] std::size_t numel() const;

    [[nodiscard]] std::span<const double> data() const;
    /// Writable view; only leaves may be mutated in place.
    [[nodiscard]] std::span<double> mutable_data();
    [[nodiscard]] double item() const;

    [[nodiscard]] bool requires_grad() const;
    Tensor& set_requires_grad(bool on);
    [[nodiscard]] bool has_grad() const;
    [[nodiscard]] std::span<const double> grad() const;
    void zero_grad();

    [[nodiscard]] OpKind kind() const;
    [[nodiscard]] std::size_t parent_count() const;

    /// Fresh leaf holding a copy of the data and no graph.
    [[nodiscard]] Tensor detach() const;

    [[nodiscard]] bool same_node(const Tensor& other) const noexcept { return node_ == other.node_; }

private:
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
    std::shared_ptr<detail::Node> node_;

    friend struct TensorAccess;
};

/// Back-propagates from a scalar root. Gradients accumulate into leaves.
void backward(const Tensor& root);

[[nodiscard]] bool grad_enabled() noexcept;

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

}  // namespace longshort
