#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "docdpm/autograd.hpp"
#include "docdpm/rng.hpp"

namespace testutil {

// Central-difference gradient check. make_loss must rebuild the graph from
// the given parameter nodes on every call; returns the worst relative error
// across all parameter coordinates.
template <typename MakeLoss>
double grad_check(const std::vector<docdpm::Var<double>>& params, MakeLoss make_loss,
                  double eps = 1e-5) {
    for (const auto& p : params) p->grad = docdpm::Tensor<double>(p->value.shape());
    auto loss = make_loss();
    docdpm::backward(loss);
    double worst = 0.0;
    for (const auto& p : params) {
        p->ensure_grad();
        for (std::int64_t i = 0; i < p->value.numel(); ++i) {
            double orig = p->value[i];
            p->value[i] = orig + eps;
            double lp = docdpm::val(make_loss())[0];
            p->value[i] = orig - eps;
            double lm = docdpm::val(make_loss())[0];
            p->value[i] = orig;
            double fd = (lp - lm) / (2.0 * eps);
            double g = p->grad[i];
            double re = std::abs(g - fd) / std::max({std::abs(g), std::abs(fd), 1e-6});
            worst = std::max(worst, re);
        }
    }
    return worst;
}

inline docdpm::Var<double> random_param(docdpm::Rng& rng, std::vector<int> shape,
                                        double scl = 1.0) {
    auto t = rng.normal_tensor<double>(shape);
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] *= scl;
    return docdpm::parameter(std::move(t));
}

}  // namespace testutil
