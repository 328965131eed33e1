#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "longshort/core/tensor.hpp"

namespace longshort {

struct NamedParam {
    std::string name;
    Tensor tensor;
};

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Moment accumulators keyed by parameter name.
struct AdamState {
    std::map<std::string, std::vector<double>> m;
    std::map<std::string, std::vector<double>> v;
    long step = 0;
};

/// One bias-corrected Adam update in place. Every parameter must carry a grad.
void adam_step(std::vector<NamedParam>& params, AdamState& state, const AdamConfig& cfg);

void zero_grads(std::vector<NamedParam>& params);

/// Max over coordinates of |analytic - central difference| / (|central difference| + 1e-12).
/// `f` must rebuild its graph from the current parameter values on every call.
double grad_check(const std::function<Tensor()>& f, std::vector<Tensor> params, double step = 1e-5);

}  // namespace longshort
