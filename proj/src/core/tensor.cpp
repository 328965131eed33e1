#include "longshort/core/tensor.hpp"

#include <algorithm>
#include <functional>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "node.hpp"

namespace longshort {

namespace {

thread_local bool g_grad_enabled = true;

void check_shape(const Shape& shape) {
    if (shape.empty()) {
        throw ShapeError("tensor shape must have at least one dimension");
    }
    for (auto d : shape) {
        if (d == 0) {
            throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
        }
    }
}

const detail::Node& deref(const std::shared_ptr<detail::Node>& node) {
    if (!node) {
        throw std::logic_error("use of an undefined tensor");
    }
    return *node;
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        out << (i ? "," : "") << shape[i];
    }
    out << ']';
    return out.str();
}

std::string_view op_name(OpKind kind) {
    switch (kind) {
        case OpKind::leaf: return "leaf";
        case OpKind::matmul: return "matmul";
        case OpKind::add: return "add";
        case OpKind::sub: return "sub";
        case OpKind::mul: return "mul";
        case OpKind::scale: return "scale";
        case OpKind::exp: return "exp";
        case OpKind::log: return "log";
        case OpKind::sqrt: return "sqrt";
        case OpKind::power: return "power";
        case OpKind::reciprocal: return "reciprocal";
        case OpKind::mean: return "mean";
        case OpKind::sum_axis: return "sum_axis";
        case OpKind::row_log_softmax: return "row_log_softmax";
        case OpKind::masked_fill: return "masked_fill";
        case OpKind::concat: return "concat";
        case OpKind::slice: return "slice";
        case OpKind::transpose: return "transpose";
        case OpKind::reshape: return "reshape";
        case OpKind::add_row: return "add_row";
        case OpKind::mul_row: return "mul_row";
        case OpKind::gelu: return "gelu";
        case OpKind::layer_norm: return "layer_norm";
        case OpKind::gather_rows: return "gather_rows";
        case OpKind::pick: return "pick";
    }
    return "unknown";
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
    check_shape(shape);
    auto node = std::make_shared<detail::Node>();
    node->data.assign(shape_numel(shape), value);
    node->shape = std::move(shape);
    return Tensor(std::move(node));
}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
    check_shape(shape);
    if (values.size() != shape_numel(shape)) {
        throw ShapeError("tensor data length " + std::to_string(values.size()) +
                         " does not match shape " + shape_str(shape));
    }
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->data = std::move(values);
    return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value) { return from({1}, {value}); }

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
    Tensor t = from(std::move(shape), std::move(values));
    t.node_->requires_grad = true;
    return t;
}

const Shape& Tensor::shape() const { return deref(node_).shape; }

std::size_t Tensor::dim(std::size_t axis) const {
    const auto& s = shape();
    if (axis >= s.size()) {
        throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(s));
    }
    return s[axis];
}

std::size_t Tensor::numel() const { return deref(node_).data.size(); }

std::span<const double> Tensor::data() const { return deref(node_).data; }

std::span<double> Tensor::mutable_data() {
    deref(node_);
    if (node_->kind != OpKind::leaf) {
        throw std::logic_error("only leaf tensors may be mutated in place");
    }
    return node_->data;
}

double Tensor::item() const {
    const auto& n = deref(node_);
    if (n.data.size() != 1) {
        throw ShapeError("item() needs a one-element tensor, got shape " + shape_str(n.shape));
    }
    return n.data[0];
}

bool Tensor::requires_grad() const { return deref(node_).requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
    deref(node_);
    if (node_->kind != OpKind::leaf) {
        throw std::logic_error("requires_grad can only be toggled on leaves");
    }
    node_->requires_grad = on;
    return *this;
}

bool Tensor::has_grad() const {
    const auto& n = deref(node_);
    return n.grad.size() == n.data.size();
}

std::span<const double> Tensor::grad() const { return deref(node_).grad; }

void Tensor::zero_grad() {
    deref(node_);
    std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

OpKind Tensor::kind() const { return deref(node_).kind; }

std::size_t Tensor::parent_count() const { return deref(node_).parents.size(); }

Tensor Tensor::detach() const { return from(shape(), deref(node_).data); }

void backward(const Tensor& root) {
    const auto& root_node = TensorAccess::node(root);
    if (!root_node) {
        throw std::logic_error("backward() on an undefined tensor");
    }
    if (root_node->data.size() != 1) {
        throw ShapeError("backward() needs a scalar root, got shape " + shape_str(root_node->shape));
    }
    if (!root_node->requires_grad) {
        return;
    }

    // Iterative post-order DFS; reversed it is a topological order.
    std::vector<detail::Node*> order;
    std::unordered_set<const detail::Node*> seen;
    std::vector<std::pair<detail::Node*, std::size_t>> stack{{root_node.get(), 0}};
    seen.insert(root_node.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            detail::Node* parent = node->parents[next++].get();
            if (parent->requires_grad && seen.insert(parent).second) {
                stack.emplace_back(parent, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (auto* node : order) {
        if (node->kind != OpKind::leaf) {
            node->grad.assign(node->data.size(), 0.0);
        }
    }
    root_node->ensure_grad();
    root_node->grad[0] += 1.0;

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node* node = *it;
        if (node->kind != OpKind::leaf && node->backward) {
            node->backward(*node);
        }
    }
}

bool grad_enabled() noexcept { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }

NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

}  // namespace longshort
