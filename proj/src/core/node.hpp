#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "longshort/core/tensor.hpp"

namespace longshort {
namespace detail {

struct Node {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until first written
    bool requires_grad = false;
    OpKind kind = OpKind::leaf;
    std::vector<std::shared_ptr<Node>> parents;
    // Reads self.grad and accumulates into parents' grads.
    std::function<void(Node& self)> backward;

    std::vector<double>& ensure_grad() {
        if (grad.size() != data.size()) {
            grad.assign(data.size(), 0.0);
        }
        return grad;
    }
};

}  // namespace detail

struct TensorAccess {
    static const std::shared_ptr<detail::Node>& node(const Tensor& t) { return t.node_; }
    static Tensor wrap(std::shared_ptr<detail::Node> node) { return Tensor(std::move(node)); }
};

}  // namespace longshort
