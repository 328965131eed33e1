#pragma once

#include <boost/math/distributions/chi_squared.hpp>
#include <functional>
#include <map>
#include <vector>

#include "longshort/core/ops.hpp"
#include "longshort/core/rng.hpp"

namespace testutil {

using namespace longshort;

inline std::vector<double> normals(Rng& rng, std::size_t n, double sd = 1.0) {
    std::vector<double> out(n);
    for (auto& v : out) v = rng.normal(0.0, sd);
    return out;
}

inline std::vector<double> positives(Rng& rng, std::size_t n) {
    std::vector<double> out(n);
    for (auto& v : out) v = 0.5 + 2.0 * rng.uniform();
    return out;
}

/// Upper-tail p-value of Pearson's chi-square against a uniform distribution over the observed keys.
template <class Key>
double chi_square_pvalue(const std::map<Key, int>& counts, int total, std::size_t categories = 0) {
    const std::size_t k = categories ? categories : counts.size();
    const double expected = static_cast<double>(total) / static_cast<double>(k);
    double stat = 0.0;
    std::size_t seen = 0;
    for (const auto& [key, c] : counts) {
        stat += (c - expected) * (c - expected) / expected;
        ++seen;
    }
    stat += static_cast<double>(k - seen) * expected;
    boost::math::chi_squared dist(static_cast<double>(k - 1));
    return boost::math::cdf(boost::math::complement(dist, stat));
}

struct GradCase {
    std::function<Tensor()> objective;
    std::vector<Tensor> params;
};

/// Contracts an op output against fixed random weights so every output coordinate matters.
inline Tensor contract(const Tensor& out, const Tensor& weights) { return sum(mul(out, weights)); }

inline std::map<OpKind, std::function<GradCase(Rng&)>> op_cases() {
    std::map<OpKind, std::function<GradCase(Rng&)>> cases;
    auto unary = [](OpKind kind, Shape shape, bool positive, OpArgs args = {}) {
        return [kind, shape, positive, args](Rng& rng) {
            const std::size_t n = shape_numel(shape);
            Tensor x = Tensor::parameter(shape, positive ? positives(rng, n) : normals(rng, n));
            NoGradGuard guard;
            const Tensor probe = longshort::apply(kind, std::vector<Tensor>{x.detach()}, args);
            const Tensor w = Tensor::from(probe.shape(), normals(rng, probe.numel()));
            return GradCase{[=] { return contract(longshort::apply(kind, std::vector<Tensor>{x}, args), w); }, {x}};
        };
    };
    auto binary = [](OpKind kind, Shape sa, Shape sb) {
        return [kind, sa, sb](Rng& rng) {
            Tensor a = Tensor::parameter(sa, normals(rng, shape_numel(sa)));
            Tensor b = Tensor::parameter(sb, normals(rng, shape_numel(sb)));
            NoGradGuard guard;
            const Tensor probe = longshort::apply(kind, std::vector<Tensor>{a.detach(), b.detach()});
            const Tensor w = Tensor::from(probe.shape(), normals(rng, probe.numel()));
            return GradCase{[=] { return contract(longshort::apply(kind, std::vector<Tensor>{a, b}), w); }, {a, b}};
        };
    };

    cases[OpKind::matmul] = [binary](Rng& rng) {
        // Alternate plain and batched shapes.
        return rng.bit() ? binary(OpKind::matmul, {3, 4}, {4, 2})(rng) : binary(OpKind::matmul, {2, 3, 4}, {2, 4, 2})(rng);
    };
    cases[OpKind::add] = binary(OpKind::add, {2, 3}, {2, 3});
    cases[OpKind::sub] = binary(OpKind::sub, {2, 3}, {2, 3});
    cases[OpKind::mul] = [binary](Rng& rng) {
        return rng.bit() ? binary(OpKind::mul, {2, 3}, {2, 3})(rng) : binary(OpKind::mul, {1}, {2, 3})(rng);
    };
    cases[OpKind::scale] = unary(OpKind::scale, {2, 3}, false, OpArgs{.scalar = -1.7});
    cases[OpKind::exp] = unary(OpKind::exp, {2, 3}, false);
    cases[OpKind::log] = unary(OpKind::log, {2, 3}, true);
    cases[OpKind::sqrt] = unary(OpKind::sqrt, {2, 3}, true);
    cases[OpKind::power] = unary(OpKind::power, {2, 3}, true, OpArgs{.scalar = 2.5});
    cases[OpKind::reciprocal] = unary(OpKind::reciprocal, {2, 3}, true);
    cases[OpKind::mean] = unary(OpKind::mean, {2, 3}, false);
    cases[OpKind::sum_axis] = [unary](Rng& rng) {
        const std::size_t axis = static_cast<std::size_t>(rng.uniform_int(0, 2));
        return unary(OpKind::sum_axis, {2, 3, 4}, false, OpArgs{.axis = axis})(rng);
    };
    cases[OpKind::row_log_softmax] = unary(OpKind::row_log_softmax, {3, 5}, false);
    cases[OpKind::masked_fill] = [unary](Rng& rng) {
        std::vector<std::uint8_t> mask(6);
        for (auto& m : mask) m = rng.bit();
        return unary(OpKind::masked_fill, {2, 3}, false, OpArgs{.scalar = -3.0, .mask = mask})(rng);
    };
    cases[OpKind::concat] = [](Rng& rng) {
        const std::size_t axis = static_cast<std::size_t>(rng.uniform_int(0, 1));
        Tensor a = Tensor::parameter({2, 3}, normals(rng, 6));
        Tensor b = Tensor::parameter({2, 3}, normals(rng, 6));
        const Shape out = axis == 0 ? Shape{4, 3} : Shape{2, 6};
        const Tensor w = Tensor::from(out, normals(rng, 12));
        return GradCase{[=] { return contract(concat(std::vector<Tensor>{a, b}, axis), w); }, {a, b}};
    };
    cases[OpKind::slice] = unary(OpKind::slice, {3, 5}, false, OpArgs{.axis = 1, .begin = 1, .end = 4});
    cases[OpKind::transpose] = unary(OpKind::transpose, {2, 3, 4}, false);
    cases[OpKind::reshape] = unary(OpKind::reshape, {2, 3}, false, OpArgs{.shape = {3, 2}});
    cases[OpKind::add_row] = binary(OpKind::add_row, {3, 4}, {4});
    cases[OpKind::mul_row] = binary(OpKind::mul_row, {3, 4}, {4});
    cases[OpKind::gelu] = unary(OpKind::gelu, {2, 4}, false);
    cases[OpKind::layer_norm] = unary(OpKind::layer_norm, {3, 5}, false, OpArgs{.scalar = 1e-5});
    cases[OpKind::gather_rows] = unary(OpKind::gather_rows, {4, 3}, false, OpArgs{.indices = {2, 0, 2, 3}});
    cases[OpKind::pick] = unary(OpKind::pick, {3, 4}, false, OpArgs{.indices = {1, 3, 0}});
    return cases;
}

}  // namespace testutil
