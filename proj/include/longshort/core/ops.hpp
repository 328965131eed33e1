#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "longshort/core/tensor.hpp"

namespace longshort {

/// Non-tensor operands for apply(). Which fields matter depends on the kind.
struct OpArgs {
    double scalar = 0.0;                ///< scale factor, exponent, fill value or epsilon
    std::size_t axis = 0;               ///< sum_axis, concat, slice
    std::size_t begin = 0;              ///< slice
    std::size_t end = 0;                ///< slice
    std::vector<std::size_t> indices;   ///< gather_rows, pick
    std::vector<std::uint8_t> mask;     ///< masked_fill; nonzero entries are filled
    Shape shape;                        ///< reshape
};

/// Generic entry point; the typed helpers below forward here.
Tensor apply(OpKind kind, const std::vector<Tensor>& inputs, const OpArgs& args = {});

/// [m,k]x[k,n] or batched [b,m,k]x[b,k,n].
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
/// Elementwise; either side may be a one-element tensor.
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor power(const Tensor& a, double exponent);
Tensor reciprocal(const Tensor& a);
/// Mean of all elements, shape [1].
Tensor mean(const Tensor& a);
/// Removes `axis`; a rank-1 input reduces to shape [1].
Tensor sum_axis(const Tensor& a, std::size_t axis);
Tensor sum(const Tensor& a);
/// Log-softmax over the last dimension.
Tensor row_log_softmax(const Tensor& a);
Tensor masked_fill(const Tensor& a, std::vector<std::uint8_t> mask, double value);
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end);
/// Swaps the last two dimensions.
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);
/// Adds a vector of length shape.back() to every row.
Tensor add_row(const Tensor& a, const Tensor& row);
/// Multiplies every row elementwise by a vector of length shape.back().
Tensor mul_row(const Tensor& a, const Tensor& row);
/// tanh approximation.
Tensor gelu(const Tensor& a);
/// Normalizes each row of the last dimension to zero mean, unit variance.
Tensor layer_norm(const Tensor& a, double eps = 1e-5);
/// Rows of a [V,d] table selected by ids, shape [n,d].
Tensor gather_rows(const Tensor& table, std::vector<std::size_t> ids);
/// One entry per row of an [n,V] tensor, shape [n].
Tensor pick(const Tensor& a, std::vector<std::size_t> ids);

}  // namespace longshort
