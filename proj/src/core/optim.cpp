#include "longshort/core/optim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace longshort {

void adam_step(std::vector<NamedParam>& params, AdamState& state, const AdamConfig& cfg) {
    if (!(cfg.lr > 0.0)) throw std::invalid_argument("adam_step: lr must be positive");
    for (const auto& p : params) {
        if (!p.tensor.has_grad()) throw std::invalid_argument("adam_step: missing grad for parameter '" + p.name + "'");
    }
    ++state.step;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (auto& p : params) {
        auto& m = state.m[p.name];
        auto& v = state.v[p.name];
        const std::size_t n = p.tensor.numel();
        if (m.size() != n) {
            m.assign(n, 0.0);
            v.assign(n, 0.0);
        }
        auto g = p.tensor.grad();
        auto x = p.tensor.mutable_data();
        for (std::size_t i = 0; i < n; ++i) {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            x[i] -= cfg.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.eps);
        }
    }
}

void zero_grads(std::vector<NamedParam>& params) {
    for (auto& p : params) p.tensor.zero_grad();
}

double grad_check(const std::function<Tensor()>& f, std::vector<Tensor> params, double step) {
    if (!(step > 0.0)) throw std::invalid_argument("grad_check: step must be positive");
    auto eval = [&] {
        NoGradGuard guard;
        const double y = f().item();
        if (!std::isfinite(y)) throw std::domain_error("grad_check: objective is not finite");
        return y;
    };
    for (auto& p : params) p.zero_grad();
    const Tensor root = f();
    if (!std::isfinite(root.item())) throw std::domain_error("grad_check: objective is not finite");
    backward(root);

    double worst = 0.0;
    for (auto& p : params) {
        const std::vector<double> analytic = p.has_grad() ? std::vector<double>(p.grad().begin(), p.grad().end())
                                                          : std::vector<double>(p.numel(), 0.0);
        auto x = p.mutable_data();
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double saved = x[i];
            x[i] = saved + step;
            const double up = eval();
            x[i] = saved - step;
            const double down = eval();
            x[i] = saved;
            const double numeric = (up - down) / (2.0 * step);
            worst = std::max(worst, std::abs(analytic[i] - numeric) / (std::abs(numeric) + 1e-12));
        }
    }
    return worst;
}

}  // namespace longshort
