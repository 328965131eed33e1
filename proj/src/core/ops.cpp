#include "longshort/core/ops.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "node.hpp"

namespace longshort {

namespace {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;
using BackwardFn = std::function<void(Node&)>;

const NodePtr& node_of(const Tensor& t) {
    const auto& n = TensorAccess::node(t);
    if (!n) {
        throw std::logic_error("operation on an undefined tensor");
    }
    return n;
}

[[noreturn]] void shape_mismatch(OpKind kind, const Shape& a, const Shape& b) {
    throw ShapeError(std::string(op_name(kind)) + ": shape mismatch " + shape_str(a) + " vs " +
                     shape_str(b));
}

Tensor make_result(OpKind kind, Shape shape, std::vector<double> data, std::vector<NodePtr> parents,
                   BackwardFn backward) {
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->kind = kind;
    const bool track = grad_enabled() && std::any_of(parents.begin(), parents.end(),
                                                     [](const NodePtr& p) { return p->requires_grad; });
    if (track) {
        node->requires_grad = true;
        node->parents = std::move(parents);
        node->backward = std::move(backward);
    }
    return TensorAccess::wrap(std::move(node));
}

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const double* a,
          const double* b, double beta, double* c) {
    const auto lda = static_cast<blasint>(trans_a ? m : k);
    const auto ldb = static_cast<blasint>(trans_b ? k : n);
    cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans,
                static_cast<blasint>(m), static_cast<blasint>(n), static_cast<blasint>(k), 1.0, a, lda, b,
                ldb, beta, c, static_cast<blasint>(n));
}

// Product of dimensions before and after `axis`.
std::pair<std::size_t, std::size_t> outer_inner(const Shape& shape, std::size_t axis) {
    std::size_t outer = 1;
    std::size_t inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
    return {outer, inner};
}

template <class F, class D>
Tensor unary(OpKind kind, const Tensor& a, F forward, D derivative) {
    const auto& pa = node_of(a);
    std::vector<double> out(pa->data.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = forward(pa->data[i]);
    return make_result(kind, pa->shape, std::move(out), {pa}, [derivative](Node& self) {
        Node& p = *self.parents[0];
        auto& g = p.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
            g[i] += self.grad[i] * derivative(p.data[i], self.data[i]);
        }
    });
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    const auto& pa = node_of(a);
    const auto& pb = node_of(b);
    const Shape& sa = pa->shape;
    const Shape& sb = pb->shape;
    std::size_t batch = 1;
    if (sa.size() == 2 && sb.size() == 2) {
        if (sa[1] != sb[0]) shape_mismatch(OpKind::matmul, sa, sb);
    } else if (sa.size() == 3 && sb.size() == 3) {
        if (sa[0] != sb[0] || sa[2] != sb[1]) shape_mismatch(OpKind::matmul, sa, sb);
        batch = sa[0];
    } else {
        shape_mismatch(OpKind::matmul, sa, sb);
    }
    const std::size_t m = sa[sa.size() - 2];
    const std::size_t k = sa.back();
    const std::size_t n = sb.back();
    Shape out_shape = sa.size() == 2 ? Shape{m, n} : Shape{batch, m, n};
    std::vector<double> out(batch * m * n);
    for (std::size_t s = 0; s < batch; ++s) {
        gemm(false, false, m, n, k, pa->data.data() + s * m * k, pb->data.data() + s * k * n, 0.0,
             out.data() + s * m * n);
    }
    return make_result(OpKind::matmul, std::move(out_shape), std::move(out), {pa, pb},
                       [batch, m, n, k](Node& self) {
                           Node& x = *self.parents[0];
                           Node& y = *self.parents[1];
                           for (std::size_t s = 0; s < batch; ++s) {
                               const double* g = self.grad.data() + s * m * n;
                               if (x.requires_grad) {
                                   gemm(false, true, m, k, n, g, y.data.data() + s * k * n, 1.0,
                                        x.ensure_grad().data() + s * m * k);
                               }
                               if (y.requires_grad) {
                                   gemm(true, false, k, n, m, x.data.data() + s * m * k, g, 1.0,
                                        y.ensure_grad().data() + s * k * n);
                               }
                           }
                       });
}

Tensor add(const Tensor& a, const Tensor& b) {
    const auto& pa = node_of(a);
    const auto& pb = node_of(b);
    if (pa->shape != pb->shape) shape_mismatch(OpKind::add, pa->shape, pb->shape);
    std::vector<double> out(pa->data.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa->data[i] + pb->data[i];
    return make_result(OpKind::add, pa->shape, std::move(out), {pa, pb}, [](Node& self) {
        for (auto& parent : self.parents) {
            if (!parent->requires_grad) continue;
            auto& g = parent->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    const auto& pa = node_of(a);
    const auto& pb = node_of(b);
    if (pa->shape != pb->shape) shape_mismatch(OpKind::sub, pa->shape, pb->shape);
    std::vector<double> out(pa->data.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa->data[i] - pb->data[i];
    return make_result(OpKind::sub, pa->shape, std::move(out), {pa, pb}, [](Node& self) {
        const double sign[2] = {1.0, -1.0};
        for (std::size_t p = 0; p < 2; ++p) {
            Node& parent = *self.parents[p];
            if (!parent.requires_grad) continue;
            auto& g = parent.ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign[p] * self.grad[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    const auto& pa = node_of(a);
    const auto& pb = node_of(b);
    const bool a_scalar = pa->data.size() == 1 && pb->data.size() != 1;
    const bool b_scalar = pb->data.size() == 1 && pa->data.size() != 1;
    if (!a_scalar && !b_scalar && pa->shape != pb->shape) shape_mismatch(OpKind::mul, pa->shape, pb->shape);
    const Shape& out_shape = a_scalar ? pb->shape : pa->shape;
    const std::size_t n = shape_numel(out_shape);
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = pa->data[a_scalar ? 0 : i] * pb->data[b_scalar ? 0 : i];
    }
    return make_result(OpKind::mul, out_shape, std::move(out), {pa, pb}, [a_scalar, b_scalar](Node& self) {
        Node& x = *self.parents[0];
        Node& y = *self.parents[1];
        const std::size_t n = self.grad.size();
        if (x.requires_grad) {
            auto& g = x.ensure_grad();
            for (std::size_t i = 0; i < n; ++i) g[a_scalar ? 0 : i] += self.grad[i] * y.data[b_scalar ? 0 : i];
        }
        if (y.requires_grad) {
            auto& g = y.ensure_grad();
            for (std::size_t i = 0; i < n; ++i) g[b_scalar ? 0 : i] += self.grad[i] * x.data[a_scalar ? 0 : i];
        }
    });
}

Tensor scale(const Tensor& a, double factor) {
    return unary(
        OpKind::scale, a, [factor](double x) { return factor * x; },
        [factor](double, double) { return factor; });
}

Tensor exp(const Tensor& a) {
    return unary(
        OpKind::exp, a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
    for (double x : node_of(a)->data) {
        if (x < 0.0) throw DomainError("log: negative input " + std::to_string(x));
    }
    return unary(
        OpKind::log, a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor sqrt(const Tensor& a) {
    for (double x : node_of(a)->data) {
        if (x < 0.0) throw DomainError("sqrt: negative input " + std::to_string(x));
    }
    return unary(
        OpKind::sqrt, a, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

Tensor power(const Tensor& a, double exponent) {
    if (exponent != std::floor(exponent)) {
        for (double x : node_of(a)->data) {
            if (x < 0.0) throw DomainError("power: negative base with non-integer exponent");
        }
    }
    return unary(
        OpKind::power, a, [exponent](double x) { return std::pow(x, exponent); },
        [exponent](double x, double) { return exponent * std::pow(x, exponent - 1.0); });
}

Tensor reciprocal(const Tensor& a) {
    return unary(
        OpKind::reciprocal, a, [](double x) { return 1.0 / x; }, [](double x, double) { return -1.0 / (x * x); });
}

Tensor mean(const Tensor& a) {
    const auto& pa = node_of(a);
    double total = 0.0;
    for (double x : pa->data) total += x;
    const double n = static_cast<double>(pa->data.size());
    return make_result(OpKind::mean, {1}, {total / n}, {pa}, [n](Node& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (auto& v : g) v += self.grad[0] / n;
    });
}

Tensor sum_axis(const Tensor& a, std::size_t axis) {
    const auto& pa = node_of(a);
    if (axis >= pa->shape.size()) {
        throw ShapeError("sum_axis: axis " + std::to_string(axis) + " out of range for " + shape_str(pa->shape));
    }
    const auto [outer, inner] = outer_inner(pa->shape, axis);
    const std::size_t len = pa->shape[axis];
    Shape out_shape = pa->shape;
    out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
    if (out_shape.empty()) out_shape = {1};
    std::vector<double> out(outer * inner, 0.0);
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t j = 0; j < len; ++j)
            for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += pa->data[(o * len + j) * inner + i];
    return make_result(OpKind::sum_axis, std::move(out_shape), std::move(out), {pa},
                       [outer = outer, inner = inner, len](Node& self) {
                           auto& g = self.parents[0]->ensure_grad();
                           for (std::size_t o = 0; o < outer; ++o)
                               for (std::size_t j = 0; j < len; ++j)
                                   for (std::size_t i = 0; i < inner; ++i)
                                       g[(o * len + j) * inner + i] += self.grad[o * inner + i];
                       });
}

Tensor sum(const Tensor& a) { return sum_axis(reshape(a, {a.numel()}), 0); }

Tensor row_log_softmax(const Tensor& a) {
    const auto& pa = node_of(a);
    const std::size_t cols = pa->shape.back();
    const std::size_t rows = pa->data.size() / cols;
    std::vector<double> out(pa->data.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = pa->data.data() + r * cols;
        double* y = out.data() + r * cols;
        const double top = *std::max_element(x, x + cols);
        double acc = 0.0;
        for (std::size_t c = 0; c < cols; ++c) acc += std::exp(x[c] - top);
        const double lse = top + std::log(acc);
        for (std::size_t c = 0; c < cols; ++c) y[c] = x[c] - lse;
    }
    return make_result(OpKind::row_log_softmax, pa->shape, std::move(out), {pa}, [rows, cols](Node& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
            const double* gy = self.grad.data() + r * cols;
            const double* y = self.data.data() + r * cols;
            double total = 0.0;
            for (std::size_t c = 0; c < cols; ++c) total += gy[c];
            for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += gy[c] - std::exp(y[c]) * total;
        }
    });
}

Tensor masked_fill(const Tensor& a, std::vector<std::uint8_t> mask, double value) {
    const auto& pa = node_of(a);
    if (mask.size() != pa->data.size()) {
        throw ShapeError("masked_fill: mask has " + std::to_string(mask.size()) + " entries, tensor shape " +
                         shape_str(pa->shape));
    }
    std::vector<double> out(pa->data);
    for (std::size_t i = 0; i < out.size(); ++i)
        if (mask[i]) out[i] = value;
    return make_result(OpKind::masked_fill, pa->shape, std::move(out), {pa}, [mask = std::move(mask)](Node& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i)
            if (!mask[i]) g[i] += self.grad[i];
    });
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    std::vector<NodePtr> nodes;
    nodes.reserve(parts.size());
    for (const auto& p : parts) nodes.push_back(node_of(p));
    const Shape& first = nodes[0]->shape;
    if (axis >= first.size()) throw ShapeError("concat: axis out of range for " + shape_str(first));
    Shape out_shape = first;
    out_shape[axis] = 0;
    std::vector<std::size_t> widths;
    for (const auto& n : nodes) {
        if (n->shape.size() != first.size()) shape_mismatch(OpKind::concat, first, n->shape);
        for (std::size_t d = 0; d < first.size(); ++d)
            if (d != axis && n->shape[d] != first[d]) shape_mismatch(OpKind::concat, first, n->shape);
        out_shape[axis] += n->shape[axis];
    }
    const auto [outer, inner] = outer_inner(first, axis);
    for (const auto& n : nodes) widths.push_back(n->shape[axis] * inner);
    const std::size_t row = out_shape[axis] * inner;
    std::vector<double> out(outer * row);
    for (std::size_t o = 0; o < outer; ++o) {
        std::size_t offset = 0;
        for (std::size_t p = 0; p < nodes.size(); ++p) {
            std::copy_n(nodes[p]->data.data() + o * widths[p], widths[p], out.data() + o * row + offset);
            offset += widths[p];
        }
    }
    return make_result(OpKind::concat, std::move(out_shape), std::move(out), std::move(nodes),
                       [outer = outer, row, widths](Node& self) {
                           std::size_t offset = 0;
                           for (std::size_t p = 0; p < self.parents.size(); ++p) {
                               Node& parent = *self.parents[p];
                               if (parent.requires_grad) {
                                   auto& g = parent.ensure_grad();
                                   for (std::size_t o = 0; o < outer; ++o)
                                       for (std::size_t i = 0; i < widths[p]; ++i)
                                           g[o * widths[p] + i] += self.grad[o * row + offset + i];
                               }
                               offset += widths[p];
                           }
                       });
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end) {
    const auto& pa = node_of(a);
    if (axis >= pa->shape.size() || begin >= end || end > pa->shape[axis]) {
        throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) + ") on axis " +
                         std::to_string(axis) + " invalid for shape " + shape_str(pa->shape));
    }
    const auto [outer, inner] = outer_inner(pa->shape, axis);
    const std::size_t src_row = pa->shape[axis] * inner;
    const std::size_t width = (end - begin) * inner;
    const std::size_t start = begin * inner;
    Shape out_shape = pa->shape;
    out_shape[axis] = end - begin;
    std::vector<double> out(outer * width);
    for (std::size_t o = 0; o < outer; ++o)
        std::copy_n(pa->data.data() + o * src_row + start, width, out.data() + o * width);
    return make_result(OpKind::slice, std::move(out_shape), std::move(out), {pa},
                       [outer = outer, src_row, width, start](Node& self) {
                           auto& g = self.parents[0]->ensure_grad();
                           for (std::size_t o = 0; o < outer; ++o)
                               for (std::size_t i = 0; i < width; ++i)
                                   g[o * src_row + start + i] += self.grad[o * width + i];
                       });
}

Tensor transpose(const Tensor& a) {
    const auto& pa = node_of(a);
    const Shape& s = pa->shape;
    if (s.size() < 2) throw ShapeError("transpose: needs rank >= 2, got " + shape_str(s));
    const std::size_t rows = s[s.size() - 2];
    const std::size_t cols = s.back();
    const std::size_t batch = pa->data.size() / (rows * cols);
    Shape out_shape = s;
    std::swap(out_shape[s.size() - 2], out_shape[s.size() - 1]);
    std::vector<double> out(pa->data.size());
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c)
                out[b * rows * cols + c * rows + r] = pa->data[b * rows * cols + r * cols + c];
    return make_result(OpKind::transpose, std::move(out_shape), std::move(out), {pa},
                       [batch, rows, cols](Node& self) {
                           auto& g = self.parents[0]->ensure_grad();
                           for (std::size_t b = 0; b < batch; ++b)
                               for (std::size_t r = 0; r < rows; ++r)
                                   for (std::size_t c = 0; c < cols; ++c)
                                       g[b * rows * cols + r * cols + c] += self.grad[b * rows * cols + c * rows + r];
                       });
}

Tensor reshape(const Tensor& a, Shape shape) {
    const auto& pa = node_of(a);
    if (shape.empty() || shape_numel(shape) != pa->data.size()) shape_mismatch(OpKind::reshape, pa->shape, shape);
    return make_result(OpKind::reshape, std::move(shape), pa->data, {pa}, [](Node& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

Tensor add_row(const Tensor& a, const Tensor& row) {
    const auto& pa = node_of(a);
    const auto& pr = node_of(row);
    const std::size_t cols = pa->shape.back();
    if (pr->shape.size() != 1 || pr->shape[0] != cols) shape_mismatch(OpKind::add_row, pa->shape, pr->shape);
    std::vector<double> out(pa->data);
    for (std::size_t base = 0; base < out.size(); base += cols)
        for (std::size_t c = 0; c < cols; ++c) out[base + c] += pr->data[c];
    return make_result(OpKind::add_row, pa->shape, std::move(out), {pa, pr}, [cols](Node& self) {
        Node& x = *self.parents[0];
        Node& r = *self.parents[1];
        if (x.requires_grad) {
            auto& g = x.ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (r.requires_grad) {
            auto& g = r.ensure_grad();
            for (std::size_t base = 0; base < self.grad.size(); base += cols)
                for (std::size_t c = 0; c < cols; ++c) g[c] += self.grad[base + c];
        }
    });
}

Tensor mul_row(const Tensor& a, const Tensor& row) {
    const auto& pa = node_of(a);
    const auto& pr = node_of(row);
    const std::size_t cols = pa->shape.back();
    if (pr->shape.size() != 1 || pr->shape[0] != cols) shape_mismatch(OpKind::mul_row, pa->shape, pr->shape);
    std::vector<double> out(pa->data);
    for (std::size_t base = 0; base < out.size(); base += cols)
        for (std::size_t c = 0; c < cols; ++c) out[base + c] *= pr->data[c];
    return make_result(OpKind::mul_row, pa->shape, std::move(out), {pa, pr}, [cols](Node& self) {
        Node& x = *self.parents[0];
        Node& r = *self.parents[1];
        if (x.requires_grad) {
            auto& g = x.ensure_grad();
            for (std::size_t base = 0; base < g.size(); base += cols)
                for (std::size_t c = 0; c < cols; ++c) g[base + c] += self.grad[base + c] * r.data[c];
        }
        if (r.requires_grad) {
            auto& g = r.ensure_grad();
            for (std::size_t base = 0; base < self.grad.size(); base += cols)
                for (std::size_t c = 0; c < cols; ++c) g[c] += self.grad[base + c] * x.data[base + c];
        }
    });
}

Tensor gelu(const Tensor& a) {
    constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
    constexpr double k = 0.044715;
    return unary(
        OpKind::gelu, a,
        [](double x) { return 0.5 * x * (1.0 + std::tanh(c * (x + k * x * x * x))); },
        [](double x, double) {
            const double t = std::tanh(c * (x + k * x * x * x));
            return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * c * (1.0 + 3.0 * k * x * x);
        });
}

Tensor layer_norm(const Tensor& a, double eps) {
    const auto& pa = node_of(a);
    const std::size_t cols = pa->shape.back();
    const std::size_t rows = pa->data.size() / cols;
    std::vector<double> out(pa->data.size());
    std::vector<double> inv_std(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = pa->data.data() + r * cols;
        double mu = 0.0;
        for (std::size_t c = 0; c < cols; ++c) mu += x[c];
        mu /= static_cast<double>(cols);
        double var = 0.0;
        for (std::size_t c = 0; c < cols; ++c) var += (x[c] - mu) * (x[c] - mu);
        var /= static_cast<double>(cols);
        inv_std[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = (x[c] - mu) * inv_std[r];
    }
    return make_result(OpKind::layer_norm, pa->shape, std::move(out), {pa},
                       [rows, cols, inv_std = std::move(inv_std)](Node& self) {
                           auto& g = self.parents[0]->ensure_grad();
                           const double n = static_cast<double>(cols);
                           for (std::size_t r = 0; r < rows; ++r) {
                               const double* gy = self.grad.data() + r * cols;
                               const double* y = self.data.data() + r * cols;
                               double mean_g = 0.0;
                               double mean_gy = 0.0;
                               for (std::size_t c = 0; c < cols; ++c) {
                                   mean_g += gy[c];
                                   mean_gy += gy[c] * y[c];
                               }
                               mean_g /= n;
                               mean_gy /= n;
                               for (std::size_t c = 0; c < cols; ++c)
                                   g[r * cols + c] += inv_std[r] * (gy[c] - mean_g - y[c] * mean_gy);
                           }
                       });
}

Tensor gather_rows(const Tensor& table, std::vector<std::size_t> ids) {
    const auto& pt = node_of(table);
    if (pt->shape.size() != 2) throw ShapeError("gather_rows: table must be rank 2, got " + shape_str(pt->shape));
    if (ids.empty()) throw ShapeError("gather_rows: no ids");
    const std::size_t vocab = pt->shape[0];
    const std::size_t width = pt->shape[1];
    std::vector<double> out(ids.size() * width);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] >= vocab) {
            throw ShapeError("gather_rows: id " + std::to_string(ids[i]) + " out of range for table " +
                             shape_str(pt->shape));
        }
        std::copy_n(pt->data.data() + ids[i] * width, width, out.data() + i * width);
    }
    Shape out_shape{ids.size(), width};
    return make_result(OpKind::gather_rows, std::move(out_shape), std::move(out), {pt},
                       [width, ids = std::move(ids)](Node& self) {
                           auto& g = self.parents[0]->ensure_grad();
                           for (std::size_t i = 0; i < ids.size(); ++i)
                               for (std::size_t c = 0; c < width; ++c) g[ids[i] * width + c] += self.grad[i * width + c];
                       });
}

Tensor pick(const Tensor& a, std::vector<std::size_t> ids) {
    const auto& pa = node_of(a);
    const std::size_t cols = pa->shape.back();
    const std::size_t rows = pa->data.size() / cols;
    if (pa->shape.size() < 2 || ids.size() != rows) {
        throw ShapeError("pick: " + std::to_string(ids.size()) + " ids for shape " + shape_str(pa->shape));
    }
    std::vector<double> out(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        if (ids[r] >= cols) throw ShapeError("pick: id " + std::to_string(ids[r]) + " out of range");
        out[r] = pa->data[r * cols + ids[r]];
    }
    return make_result(OpKind::pick, {rows}, std::move(out), {pa}, [cols, ids = std::move(ids)](Node& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t r = 0; r < ids.size(); ++r) g[r * cols + ids[r]] += self.grad[r];
    });
}

Tensor apply(OpKind kind, const std::vector<Tensor>& inputs, const OpArgs& args) {
    auto need = [&](std::size_t n) {
        if (inputs.size() != n) {
            throw std::invalid_argument(std::string(op_name(kind)) + ": expected " + std::to_string(n) +
                                        " inputs, got " + std::to_string(inputs.size()));
        }
    };
    switch (kind) {
        case OpKind::leaf: throw std::invalid_argument("apply: leaf is not an operation");
        case OpKind::matmul: need(2); return matmul(inputs[0], inputs[1]);
        case OpKind::add: need(2); return add(inputs[0], inputs[1]);
        case OpKind::sub: need(2); return sub(inputs[0], inputs[1]);
        case OpKind::mul: need(2); return mul(inputs[0], inputs[1]);
        case OpKind::scale: need(1); return scale(inputs[0], args.scalar);
        case OpKind::exp: need(1); return exp(inputs[0]);
        case OpKind::log: need(1); return log(inputs[0]);
        case OpKind::sqrt: need(1); return sqrt(inputs[0]);
        case OpKind::power: need(1); return power(inputs[0], args.scalar);
        case OpKind::reciprocal: need(1); return reciprocal(inputs[0]);
        case OpKind::mean: need(1); return mean(inputs[0]);
        case OpKind::sum_axis: need(1); return sum_axis(inputs[0], args.axis);
        case OpKind::row_log_softmax: need(1); return row_log_softmax(inputs[0]);
        case OpKind::masked_fill: need(1); return masked_fill(inputs[0], args.mask, args.scalar);
        case OpKind::concat: return concat(inputs, args.axis);
        case OpKind::slice: need(1); return slice(inputs[0], args.axis, args.begin, args.end);
        case OpKind::transpose: need(1); return transpose(inputs[0]);
        case OpKind::reshape: need(1); return reshape(inputs[0], args.shape);
        case OpKind::add_row: need(2); return add_row(inputs[0], inputs[1]);
        case OpKind::mul_row: need(2); return mul_row(inputs[0], inputs[1]);
        case OpKind::gelu: need(1); return gelu(inputs[0]);
        case OpKind::layer_norm: need(1); return layer_norm(inputs[0], args.scalar > 0.0 ? args.scalar : 1e-5);
        case OpKind::gather_rows: need(1); return gather_rows(inputs[0], args.indices);
        case OpKind::pick: need(1); return pick(inputs[0], args.indices);
    }
    throw std::invalid_argument("apply: unknown op kind");
}

}  // namespace longshort
